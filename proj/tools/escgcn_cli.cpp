#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "escgcn/data.hpp"
#include "escgcn/depgraph.hpp"
#include "escgcn/model.hpp"
#include "escgcn/synthetic.hpp"
#include "escgcn/train.hpp"

namespace {

using namespace escgcn;

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct CommonOpts {
  std::string config_path;
  std::string train_path, dev_path, test_path;
  std::string vectors_path;
  std::string synthetic_path;
  std::string checkpoint_path;
  std::string ablate;
  std::string export_attention;
  std::optional<unsigned long long> seed;
  std::optional<int> k;
};

ModelConfig build_config(const CommonOpts& opts) {
  ModelConfig cfg = opts.config_path.empty()
                        ? ModelConfig{}
                        : ModelConfig::parse_file(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.k) cfg.prune_k = *opts.k;
  if (!opts.ablate.empty()) cfg.apply_ablation(opts.ablate);
  cfg.validate();
  return cfg;
}

/// Synthetic corpora for train/dev: the dev split reuses the generator
/// settings with a shifted seed and half the instances.
std::pair<Corpus, Corpus> synthetic_split(const std::string& path) {
  SyntheticConfig syn = SyntheticConfig::parse_file(path);
  Corpus train = generate_synthetic(syn);
  SyntheticConfig dev_cfg = syn;
  dev_cfg.seed = syn.seed + 1;
  dev_cfg.n_instances = std::max(1, syn.n_instances / 2);
  return {std::move(train), generate_synthetic(dev_cfg)};
}

Corpus load_single(const std::string& corpus_path,
                   const std::string& synthetic_path, const char* what) {
  if (!corpus_path.empty()) return parse_corpus(corpus_path);
  if (!synthetic_path.empty())
    return generate_synthetic(SyntheticConfig::parse_file(synthetic_path));
  throw ConfigError(std::string("no input corpus given for ") + what +
                    " (use --test or --synthetic-config)");
}

int cmd_train(const CommonOpts& opts) {
  ModelConfig cfg = build_config(opts);
  Corpus train, dev;
  if (!opts.train_path.empty() && !opts.dev_path.empty()) {
    train = parse_corpus(opts.train_path);
    dev = parse_corpus(opts.dev_path);
  } else if (!opts.synthetic_path.empty()) {
    std::tie(train, dev) = synthetic_split(opts.synthetic_path);
  } else {
    throw ConfigError(
        "train needs --train and --dev, or --synthetic-config");
  }

  Vocab vocab = Vocab::build({&train, &dev}, cfg.negative_label);
  Rng rng(cfg.seed);
  Model model(cfg, vocab, rng);
  if (!opts.vectors_path.empty()) {
    PretrainedCoverage cov =
        load_pretrained(opts.vectors_path, vocab, model.word_table(), rng);
    std::cout << "vectors: " << cov.found << "/" << cov.vocab_words
              << " vocabulary words covered\n";
  }

  TrainResult result = train_model(model, train, dev, rng, &std::cout);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "best epoch=%d dev_f1=%.6f\n",
                result.best_epoch, result.best_metric);
  std::cout << buf;
  if (result.clamp_hits > 0)
    std::cerr << "warning: probability floor hit " << result.clamp_hits
              << " times\n";
  if (!opts.checkpoint_path.empty())
    save_checkpoint(opts.checkpoint_path, model, rng, result.best_epoch,
                    result.best_metric);
  return kOk;
}

int cmd_eval(const CommonOpts& opts) {
  if (opts.checkpoint_path.empty())
    throw ConfigError("eval needs --checkpoint");
  Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  Corpus test = load_single(opts.test_path, opts.synthetic_path, "eval");
  EvalReport report = evaluate_model(*ckpt.model, test, ckpt.rng);
  std::cout << format_report(report);
  return kOk;
}

int cmd_predict(const CommonOpts& opts) {
  if (opts.checkpoint_path.empty())
    throw ConfigError("predict needs --checkpoint");
  Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  Corpus test = load_single(opts.test_path, opts.synthetic_path, "predict");

  const bool export_attn = !opts.export_attention.empty();
  std::vector<double> probs;
  std::vector<TensorPtr> alphas;
  std::vector<std::vector<TensorPtr>> heads;
  std::vector<int> pred =
      predict_labels(*ckpt.model, test, ckpt.rng, &probs, &alphas,
                     export_attn ? &heads : nullptr);

  char buf[64];
  for (size_t i = 0; i < test.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", probs[i]);
    std::cout << test.instances[i].id << "\t"
              << ckpt.vocab.relations[pred[i]] << "\t" << buf << "\n";
  }

  if (export_attn) {
    std::filesystem::create_directories(opts.export_attention);
    for (size_t i = 0; i < test.size(); ++i) {
      std::ofstream out(opts.export_attention + "/" + test.instances[i].id +
                        ".txt");
      if (!out)
        throw DataError("cannot write attention export for instance " +
                        test.instances[i].id);
      for (size_t h = 0; h < heads[i].size(); ++h) {
        out << "head " << h << "\n";
        const Tensor& m = *heads[i][h];
        for (int r = 0; r < m.rows(); ++r) {
          for (int c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.9f", m.at(r, c));
            out << (c ? " " : "") << buf;
          }
          out << "\n";
        }
      }
      if (alphas[i]) {
        out << "alpha\n";
        for (int r = 0; r < alphas[i]->size(); ++r) {
          std::snprintf(buf, sizeof(buf), "%.9f", alphas[i]->data[r]);
          out << (r ? " " : "") << buf;
        }
        out << "\n";
      }
    }
  }
  return kOk;
}

int cmd_graph_dump(const CommonOpts& opts) {
  Corpus corpus = load_single(opts.test_path, opts.synthetic_path, "graph dump");
  const int k = opts.k ? *opts.k : 1;
  for (const Instance& inst : corpus.instances) {
    DepTree tree(inst.head);
    PrunedGraph pg = prune(tree, inst.spans(), k);
    NormAdjacency adj = adjacency(pg, inst.n());
    std::cout << "# id=" << inst.id << "\n" << dump_graph(pg, adj);
  }
  return kOk;
}

int cmd_gradcheck(const CommonOpts& opts) {
  const unsigned long long seed = opts.seed ? *opts.seed : 1;
  GradcheckResult result = model_gradient_check(20, seed, &std::cout);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max_rel_err=%.3e\n", result.max_rel_err);
  std::cout << buf;
  if (!(result.max_rel_err < 1e-4)) {
    std::cerr << "gradient check failed\n";
    return kNumeric;
  }
  return kOk;
}

int cmd_datasize(const CommonOpts& opts, const std::string& fractions_arg) {
  ModelConfig cfg = build_config(opts);
  Corpus train, dev;
  if (!opts.train_path.empty() && !opts.dev_path.empty()) {
    train = parse_corpus(opts.train_path);
    dev = parse_corpus(opts.dev_path);
  } else if (!opts.synthetic_path.empty()) {
    std::tie(train, dev) = synthetic_split(opts.synthetic_path);
  } else {
    throw ConfigError(
        "datasize needs --train and --dev, or --synthetic-config");
  }

  std::vector<double> fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  if (!fractions_arg.empty()) {
    fractions.clear();
    std::stringstream ss(fractions_arg);
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        fractions.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw ConfigError("bad fraction: " + part);
      }
      if (fractions.back() <= 0.0 || fractions.back() > 1.0)
        throw ConfigError("fractions must be in (0, 1]: " + part);
    }
  }
  data_size_study(cfg, train, dev, fractions, &std::cout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relation extraction over pruned dependency graphs"};
  app.require_subcommand(1);
  CommonOpts opts;
  std::string fractions_arg;

  auto add_common = [&opts](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "model config (key=value)");
    cmd->add_option("--train", opts.train_path, "training corpus");
    cmd->add_option("--dev", opts.dev_path, "development corpus");
    cmd->add_option("--test", opts.test_path, "test corpus");
    cmd->add_option("--vectors", opts.vectors_path, "pretrained word vectors");
    cmd->add_option("--synthetic-config", opts.synthetic_path,
                    "synthetic corpus generator config");
    cmd->add_option("--checkpoint", opts.checkpoint_path, "checkpoint file");
    cmd->add_option("--seed", opts.seed, "session seed override");
    cmd->add_option("--k", opts.k, "pruning distance (-1 = full tree)");
    cmd->add_option("--ablate", opts.ablate, "comma-separated ablation flags");
    cmd->add_option("--export-attention", opts.export_attention,
                    "directory for attention matrix export");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* predict_cmd = app.add_subcommand("predict", "label a corpus");
  CLI::App* graph_cmd = app.add_subcommand("graph", "dependency graph tools");
  CLI::App* dump_cmd = graph_cmd->add_subcommand("dump", "print pruned graphs");
  graph_cmd->require_subcommand(1);
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  CLI::App* datasize_cmd =
      app.add_subcommand("datasize", "training-set size study");
  datasize_cmd->add_option("--fractions", fractions_arg,
                           "comma-separated training fractions");
  for (CLI::App* cmd :
       {train_cmd, eval_cmd, predict_cmd, dump_cmd, gradcheck_cmd, datasize_cmd})
    add_common(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(opts);
    if (*eval_cmd) return cmd_eval(opts);
    if (*predict_cmd) return cmd_predict(opts);
    if (*graph_cmd) return cmd_graph_dump(opts);
    if (*gradcheck_cmd) return cmd_gradcheck(opts);
    if (*datasize_cmd) return cmd_datasize(opts, fractions_arg);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "internal shape error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
