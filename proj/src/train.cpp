#include "escgcn/train.hpp"

#include "escgcn/gradcheck.hpp"
#include "escgcn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace escgcn {

namespace {

int negative_id(const Vocab& vocab) {
  auto it = vocab.relation_map.find(vocab.negative_label);
  return it == vocab.relation_map.end() ? -1 : it->second;
}

/// Minibatches of up to batch_size instances; a trailing singleton is folded
/// into the previous batch so batch normalization always sees >= 2 rows.
std::vector<std::vector<const Instance*>> make_batches(
    const Corpus& corpus, const std::vector<int>& order, int batch_size) {
  std::vector<std::vector<const Instance*>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const Instance*> batch;
    for (size_t j = i; j < order.size() && j < i + batch_size; ++j)
      batch.push_back(&corpus.instances[order[j]]);
    batches.push_back(std::move(batch));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

std::vector<int> identity_order(size_t n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

std::vector<int> gold_ids(const Corpus& corpus, const Vocab& vocab) {
  std::vector<int> gold;
  std::vector<std::string> unknown;
  for (const Instance& inst : corpus.instances) {
    auto it = vocab.relation_map.find(inst.relation);
    if (it == vocab.relation_map.end()) {
      unknown.push_back(inst.relation);
      gold.push_back(-1);
    } else {
      gold.push_back(it->second);
    }
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    unknown.erase(std::unique(unknown.begin(), unknown.end()), unknown.end());
    std::string msg = "corpus labels unknown to the model:";
    for (const auto& u : unknown) msg += " " + u;
    throw DataError(msg);
  }
  return gold;
}

struct ParamSnapshot {
  std::vector<std::vector<double>> data;
  std::vector<double> bn1_mean, bn1_var, bn2_mean, bn2_var;

  static ParamSnapshot capture(Model& model) {
    ParamSnapshot s;
    for (const Param& p : model.params()) s.data.push_back(p.tensor->data);
    s.bn1_mean = model.bn1().running_mean;
    s.bn1_var = model.bn1().running_var;
    s.bn2_mean = model.bn2().running_mean;
    s.bn2_var = model.bn2().running_var;
    return s;
  }

  void restore(Model& model) const {
    auto& params = model.params();
    for (size_t i = 0; i < params.size(); ++i) params[i].tensor->data = data[i];
    model.bn1().running_mean = bn1_mean;
    model.bn1().running_var = bn1_var;
    model.bn2().running_mean = bn2_mean;
    model.bn2().running_var = bn2_var;
  }
};

std::string format_log_line(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "epoch=%d loss=%.6f dev_f1=%.6f lr=%.6f",
                e.epoch, e.loss, e.dev_f1, e.lr);
  return buf;
}

double max_abs_grad(Model& model) {
  double m = 0.0;
  for (const Param& p : model.params())
    for (double g : p.tensor->grad) m = std::max(m, std::fabs(g));
  return m;
}

}  // namespace

std::vector<int> predict_labels(Model& model, const Corpus& corpus, Rng& rng,
                                std::vector<double>* out_probs,
                                std::vector<TensorPtr>* out_alpha,
                                std::vector<std::vector<TensorPtr>>* out_heads) {
  std::vector<int> pred;
  const auto order = identity_order(corpus.size());
  const bool collect = out_heads != nullptr;
  for (const auto& batch :
       make_batches(corpus, order, model.config().batch_size)) {
    Tape tape;
    auto results = model.forward(tape, batch, false, rng, collect);
    for (auto& r : results) {
      pred.push_back(r.pred);
      if (out_probs) out_probs->push_back(r.probs->data[r.pred]);
      if (out_alpha) out_alpha->push_back(r.alpha);
      if (out_heads) out_heads->push_back(std::move(r.attn_heads));
    }
  }
  return pred;
}

TrainResult train_model(Model& model, const Corpus& train, const Corpus& dev,
                        Rng& rng, std::ostream* log) {
  const ModelConfig& cfg = model.config();
  const std::vector<int> train_gold = gold_ids(train, model.vocab());
  const std::vector<int> dev_gold = gold_ids(dev, model.vocab());
  const int neg = negative_id(model.vocab());

  TrainResult result;
  ParamSnapshot best = ParamSnapshot::capture(model);
  Rng best_rng = rng;
  double best_metric = -1.0;
  int best_epoch = 0;

  std::vector<int> order = identity_order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.decay, epoch - 1);
    std::shuffle(order.begin(), order.end(), rng);
    const auto batches = make_batches(train, order, cfg.batch_size);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (const auto& batch : batches) {
      ++batch_index;
      Tape tape;
      model.zero_grads();
      TensorPtr loss =
          model.loss(tape, batch, true, rng, &result.clamp_hits, nullptr);
      const double value = loss->data[0];
      tape.backward(loss);
      const double norm = model.clip_gradients(cfg.grad_clip);
      if (!std::isfinite(value) || !std::isfinite(norm))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batch_index) +
                           " (loss=" + std::to_string(value) + ", max|grad|=" +
                           std::to_string(max_abs_grad(model)) + ")");
      model.sgd_step(lr);
      loss_sum += value;
    }

    std::vector<int> dev_pred = predict_labels(model, dev, rng);
    const double dev_f1 = micro_scores(dev_pred, dev_gold, neg).f1;

    EpochLog entry{epoch, loss_sum / static_cast<double>(batches.size()),
                   dev_f1, lr};
    if (log) *log << format_log_line(entry) << "\n";
    result.log.push_back(entry);

    if (dev_f1 > best_metric) {
      best_metric = dev_f1;
      best_epoch = epoch;
      best = ParamSnapshot::capture(model);
      best_rng = rng;
    }
    if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) break;
  }

  best.restore(model);
  rng = best_rng;
  result.best_epoch = best_epoch;
  result.best_metric = best_metric < 0.0 ? 0.0 : best_metric;
  return result;
}

int entity_distance(const Instance& inst) {
  return std::abs(inst.subj.first - inst.obj.first);
}

namespace {

struct Bucket {
  std::string name;
  int lo, hi;  // (lo, hi]; hi < 0 = unbounded
  std::vector<int> pred, gold;
};

std::vector<BucketRow> bucket_rows(std::vector<Bucket>& buckets, int neg) {
  std::vector<BucketRow> rows;
  for (auto& b : buckets) {
    BucketRow row;
    row.bucket = b.name;
    row.count = static_cast<int>(b.gold.size());
    row.scores = micro_scores(b.pred, b.gold, neg);
    rows.push_back(row);
  }
  return rows;
}

void fill(std::vector<Bucket>& buckets, int value, int pred, int gold) {
  for (auto& b : buckets) {
    if (value > b.lo && (b.hi < 0 || value <= b.hi)) {
      b.pred.push_back(pred);
      b.gold.push_back(gold);
      return;
    }
  }
}

}  // namespace

EvalReport evaluate_model(Model& model, const Corpus& corpus, Rng& rng) {
  const std::vector<int> gold = gold_ids(corpus, model.vocab());
  const int neg = negative_id(model.vocab());
  const std::vector<int> pred = predict_labels(model, corpus, rng);

  EvalReport report;
  report.micro = micro_scores(pred, gold, neg);
  report.macro =
      macro_scores(pred, gold, neg, model.vocab().n_relations());

  std::vector<Bucket> by_len{{"(0,25]", 0, 25, {}, {}},
                             {"(25,50]", 25, 50, {}, {}},
                             {"(50,inf]", 50, -1, {}, {}}};
  std::vector<Bucket> by_dist{{"(0,10]", 0, 10, {}, {}},
                              {"(10,15]", 10, 15, {}, {}},
                              {"(15,20]", 15, 20, {}, {}},
                              {"(20,25]", 20, 25, {}, {}},
                              {"(25,30]", 25, 30, {}, {}},
                              {"(30,35]", 30, 35, {}, {}},
                              {"(35,inf]", 35, -1, {}, {}}};
  for (size_t i = 0; i < corpus.size(); ++i) {
    const Instance& inst = corpus.instances[i];
    fill(by_len, inst.n(), pred[i], gold[i]);
    fill(by_dist, entity_distance(inst), pred[i], gold[i]);
  }
  report.by_length = bucket_rows(by_len, neg);
  report.by_distance = bucket_rows(by_dist, neg);
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  char buf[160];
  auto line = [&](const char* tag, const std::string& bucket, int count,
                  const Scores& s) {
    std::snprintf(buf, sizeof(buf),
                  "%s bucket=%s n=%d p=%.4f r=%.4f f1=%.4f acc=%.4f\n", tag,
                  bucket.c_str(), count, s.precision, s.recall, s.f1,
                  s.accuracy);
    out << buf;
  };
  std::snprintf(buf, sizeof(buf),
                "overall micro p=%.4f r=%.4f f1=%.4f acc=%.4f\n",
                report.micro.precision, report.micro.recall, report.micro.f1,
                report.micro.accuracy);
  out << buf;
  std::snprintf(buf, sizeof(buf), "overall macro p=%.4f r=%.4f f1=%.4f\n",
                report.macro.precision, report.macro.recall, report.macro.f1);
  out << buf;
  for (const auto& r : report.by_length)
    line("length", r.bucket, r.count, r.scores);
  for (const auto& r : report.by_distance)
    line("distance", r.bucket, r.count, r.scores);
  return out.str();
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[] = "ESCGCN-CKPT";
constexpr uint32_t kVersion = 1;

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("truncated checkpoint");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
  const uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated checkpoint");
  return s;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  for (double x : v) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, 8);
    write_u64(out, bits);
  }
}

std::vector<double> read_doubles(std::istream& in) {
  const uint64_t n = read_u64(in);
  std::vector<double> v(n);
  for (uint64_t i = 0; i < n; ++i) {
    const uint64_t bits = read_u64(in);
    std::memcpy(&v[i], &bits, 8);
  }
  return v;
}

void write_strings(std::ostream& out, const std::vector<std::string>& v) {
  write_u64(out, v.size());
  for (const auto& s : v) write_str(out, s);
}

std::vector<std::string> read_strings(std::istream& in) {
  const uint64_t n = read_u64(in);
  std::vector<std::string> v;
  v.reserve(n);
  for (uint64_t i = 0; i < n; ++i) v.push_back(read_str(in));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const Rng& rng,
                     int epoch, double best_metric) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, kVersion);
  write_str(out, model.config().serialize());

  const Vocab& v = model.vocab();
  write_strings(out, v.words);
  write_strings(out, v.pos_tags);
  write_strings(out, v.ner_tags);
  write_strings(out, v.deprels);
  write_strings(out, v.relations);
  write_str(out, v.negative_label);

  write_u64(out, static_cast<uint64_t>(epoch));
  write_doubles(out, {best_metric});
  std::ostringstream rng_text;
  rng_text << rng;
  write_str(out, rng_text.str());

  write_u64(out, model.params().size());
  for (const Param& p : model.params()) {
    write_str(out, p.name);
    write_doubles(out, p.tensor->data);
  }
  write_doubles(out, model.bn1().running_mean);
  write_doubles(out, model.bn1().running_var);
  write_doubles(out, model.bn2().running_mean);
  write_doubles(out, model.bn2().running_var);
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(kMagic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  if (read_u64(in) != kVersion)
    throw DataError("unsupported checkpoint version in " + path);

  Checkpoint ckpt;
  ckpt.config = ModelConfig::parse(read_str(in));

  Vocab vocab;
  vocab.words = read_strings(in);
  vocab.pos_tags = read_strings(in);
  vocab.ner_tags = read_strings(in);
  vocab.deprels = read_strings(in);
  vocab.relations = read_strings(in);
  vocab.negative_label = read_str(in);
  for (size_t i = 0; i < vocab.words.size(); ++i)
    vocab.word_id[vocab.words[i]] = static_cast<int>(i);
  for (size_t i = 0; i < vocab.pos_tags.size(); ++i)
    vocab.pos_map[vocab.pos_tags[i]] = static_cast<int>(i);
  for (size_t i = 0; i < vocab.ner_tags.size(); ++i)
    vocab.ner_map[vocab.ner_tags[i]] = static_cast<int>(i);
  for (size_t i = 0; i < vocab.deprels.size(); ++i)
    vocab.deprel_map[vocab.deprels[i]] = static_cast<int>(i);
  for (size_t i = 0; i < vocab.relations.size(); ++i)
    vocab.relation_map[vocab.relations[i]] = static_cast<int>(i);
  ckpt.vocab = vocab;

  ckpt.epoch = static_cast<int>(read_u64(in));
  ckpt.best_metric = read_doubles(in)[0];
  std::istringstream rng_text(read_str(in));
  rng_text >> ckpt.rng;

  Rng init_rng(ckpt.config.seed);
  ckpt.model = std::make_unique<Model>(ckpt.config, vocab, init_rng);

  const uint64_t n_params = read_u64(in);
  if (n_params != ckpt.model->params().size())
    throw DataError("checkpoint parameter count mismatch in " + path);
  for (uint64_t i = 0; i < n_params; ++i) {
    const std::string name = read_str(in);
    std::vector<double> data = read_doubles(in);
    Param& p = ckpt.model->params()[i];
    if (p.name != name)
      throw DataError("checkpoint parameter order mismatch: expected " +
                      p.name + ", found " + name);
    if (data.size() != p.tensor->data.size())
      throw DataError("checkpoint parameter size mismatch for " + name);
    p.tensor->data = std::move(data);
  }
  ckpt.model->bn1().running_mean = read_doubles(in);
  ckpt.model->bn1().running_var = read_doubles(in);
  ckpt.model->bn2().running_mean = read_doubles(in);
  ckpt.model->bn2().running_var = read_doubles(in);
  return ckpt;
}

GradcheckResult model_gradient_check(int n_configs, unsigned long long seed,
                                     std::ostream* log) {
  GradcheckResult result;
  for (int c = 0; c < n_configs; ++c) {
    Rng meta(seed + static_cast<unsigned long long>(c) * 1000003ULL);
    auto pick = [&meta](int lo, int hi) {
      std::uniform_int_distribution<int> d(lo, hi);
      return d(meta);
    };

    ModelConfig cfg;
    cfg.d_word = pick(2, 4);
    cfg.d_ner = 2;
    cfg.d_pos = 2;
    cfg.d_p = 2;
    cfg.d_hidden = pick(2, 4);
    cfg.attn_heads = pick(1, 2);
    cfg.attn_size = cfg.attn_heads * pick(2, 3) + pick(0, 1);
    if (cfg.attn_size < cfg.attn_heads) cfg.attn_size = cfg.attn_heads;
    cfg.attn_clip = 2;
    cfg.gcn_size = pick(2, 4);
    cfg.ffnn_size = pick(2, 5);
    cfg.gcn_layers = pick(0, 2);
    const int ks[] = {0, 1, kFullTree};
    cfg.prune_k = ks[pick(0, 2)];
    cfg.dropout_p = 0.0;
    cfg.beta = 1e-3;
    cfg.batch_size = 2;
    cfg.seed = seed + c;
    // ablation flags: config 0 is the unablated model, the rest walk the
    // flag combinations
    const int bits = c == 0 ? 0 : pick(0, 63);
    cfg.no_residual_simplify = bits & 1;
    cfg.layer_norm_instead = bits & 2;
    cfg.no_entity_aware = bits & 4;
    cfg.no_self_attention = bits & 8;
    cfg.no_entity_pools_ffnn = bits & 16;
    cfg.no_bilstm = bits & 32;
    cfg.attention_on_bilstm = pick(0, 1) != 0;
    cfg.positions_in_input = pick(0, 1) != 0;

    SyntheticConfig syn;
    syn.n_relations = 2;
    syn.n_instances = 2;
    syn.filler_vocab = 4;
    syn.min_len = 5;
    syn.max_len = 6;
    syn.n_distractors = 0;
    syn.seed = seed + 31ULL * c;
    Corpus corpus = generate_synthetic(syn);

    Vocab vocab = Vocab::build({&corpus}, cfg.negative_label);
    Rng init_rng(cfg.seed);
    Model model(cfg, vocab, init_rng);

    std::vector<const Instance*> batch;
    for (const Instance& inst : corpus.instances) batch.push_back(&inst);

    std::vector<TensorPtr> tensors;
    for (const Param& p : model.params()) tensors.push_back(p.tensor);
    auto loss_fn = [&model, &batch](Tape& tape) {
      Rng rng(123);  // dropout is off; forward is deterministic
      return model.loss(tape, batch, true, rng);
    };
    Rng coord_rng(seed + 977ULL * c);
    const double err = check_gradients(tensors, loss_fn, 1e-5, 6, &coord_rng);
    result.max_rel_err = std::max(result.max_rel_err, err);
    ++result.configs;
    if (log) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "config=%d flags=%d max_rel_err=%.3e\n",
                    c, bits, err);
      *log << buf;
    }
  }
  return result;
}

std::vector<DataSizeRow> data_size_study(const ModelConfig& cfg,
                                         const Corpus& train,
                                         const Corpus& dev,
                                         const std::vector<double>& fractions,
                                         std::ostream* log) {
  // Nested subsamples: one fixed permutation, each fraction takes a prefix,
  // re-sorted so that fraction 1.0 is the corpus in its original order.
  Rng sample_rng(cfg.seed);
  std::vector<int> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), sample_rng);

  std::vector<DataSizeRow> rows;
  for (double f : fractions) {
    DataSizeRow row;
    row.fraction = f;
    const size_t take = static_cast<size_t>(
        std::min<double>(train.size(),
                         std::ceil(f * static_cast<double>(train.size()))));
    std::vector<int> chosen(perm.begin(), perm.begin() + take);
    std::sort(chosen.begin(), chosen.end());

    Corpus sub;
    for (int idx : chosen) sub.instances.push_back(train.instances[idx]);
    row.n_train = static_cast<int>(sub.size());

    Vocab full_vocab = Vocab::build({&train, &dev}, cfg.negative_label);
    bool missing = false;
    for (const auto& rel : full_vocab.relations) {
      if (rel == cfg.negative_label) continue;
      bool in_sub = false;
      for (const Instance& inst : sub.instances)
        if (inst.relation == rel) { in_sub = true; break; }
      if (!in_sub) { missing = true; break; }
    }
    if (missing) {
      row.skipped = true;
      if (log)
        *log << "fraction=" << f
             << " skipped: a relation label is missing from the subsample\n";
      rows.push_back(row);
      continue;
    }

    Rng rng(cfg.seed);
    Model model(cfg, full_vocab, rng);
    TrainResult tr = train_model(model, sub, dev, rng, nullptr);
    row.dev_f1 = tr.best_metric;
    if (log) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "fraction=%.2f n=%d dev_f1=%.6f\n", f,
                    row.n_train, row.dev_f1);
      *log << buf;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace escgcn
