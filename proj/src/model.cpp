#include "escgcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace escgcn {

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0)
      throw ConfigError(std::string(name) + " must be positive, got " +
                        std::to_string(v));
  };
  positive(d_word, "d_word");
  positive(d_ner, "d_ner");
  positive(d_pos, "d_pos");
  positive(d_p, "d_p");
  positive(d_hidden, "d_hidden");
  positive(attn_size, "attn_size");
  positive(attn_heads, "attn_heads");
  positive(attn_clip, "attn_clip");
  positive(gcn_size, "gcn_size");
  positive(ffnn_size, "ffnn_size");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  if (lstm_layers != 1)
    throw ConfigError("only lstm_layers=1 is supported");
  if (gcn_layers < 0) throw ConfigError("gcn_layers must be >= 0");
  if (attn_heads > attn_size)
    throw ConfigError("more attention heads than attention dimensions");
  if (prune_k < 0 && prune_k != kFullTree)
    throw ConfigError("prune_k must be >= 0 or -1 (full tree)");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ConfigError("dropout_p must be in [0,1)");
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  if (decay <= 0.0 || decay > 1.0)
    throw ConfigError("decay must be in (0,1]");
}

namespace {
bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("bad boolean value: " + v);
}
}  // namespace

void ModelConfig::apply_kv(const std::string& key, const std::string& value) {
  try {
    if (key == "d_word") d_word = std::stoi(value);
    else if (key == "d_ner") d_ner = std::stoi(value);
    else if (key == "d_pos") d_pos = std::stoi(value);
    else if (key == "d_p") d_p = std::stoi(value);
    else if (key == "d_hidden") d_hidden = std::stoi(value);
    else if (key == "attn_size") attn_size = std::stoi(value);
    else if (key == "attn_heads") attn_heads = std::stoi(value);
    else if (key == "attn_clip") attn_clip = std::stoi(value);
    else if (key == "gcn_size") gcn_size = std::stoi(value);
    else if (key == "ffnn_size") ffnn_size = std::stoi(value);
    else if (key == "lstm_layers") lstm_layers = std::stoi(value);
    else if (key == "gcn_layers") gcn_layers = std::stoi(value);
    else if (key == "prune_k")
      prune_k = (value == "FULL" || value == "full") ? kFullTree
                                                     : std::stoi(value);
    else if (key == "dropout_p") dropout_p = std::stod(value);
    else if (key == "beta") beta = std::stod(value);
    else if (key == "lr") lr = std::stod(value);
    else if (key == "decay") decay = std::stod(value);
    else if (key == "grad_clip") grad_clip = std::stod(value);
    else if (key == "epochs") epochs = std::stoi(value);
    else if (key == "batch_size") batch_size = std::stoi(value);
    else if (key == "patience") patience = std::stoi(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "no_residual_simplify") no_residual_simplify = parse_bool(value);
    else if (key == "layer_norm_instead") layer_norm_instead = parse_bool(value);
    else if (key == "no_entity_aware") no_entity_aware = parse_bool(value);
    else if (key == "no_self_attention") no_self_attention = parse_bool(value);
    else if (key == "no_entity_pools_ffnn") no_entity_pools_ffnn = parse_bool(value);
    else if (key == "no_bilstm") no_bilstm = parse_bool(value);
    else if (key == "attention_on_bilstm") attention_on_bilstm = parse_bool(value);
    else if (key == "positions_in_input") positions_in_input = parse_bool(value);
    else if (key == "mask_alpha_to_kept") mask_alpha_to_kept = parse_bool(value);
    else if (key == "negative_label") negative_label = value;
    else throw ConfigError("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
}

void ModelConfig::apply_ablation(const std::string& flag_list) {
  std::istringstream in(flag_list);
  std::string flag;
  while (std::getline(in, flag, ',')) {
    if (flag.empty()) continue;
    apply_kv(flag, "1");
  }
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' ||
                             line.back() == '\t'))
      line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line is not key=value: " + line);
    cfg.apply_kv(line.substr(0, eq), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "d_word=" << d_word << "\nd_ner=" << d_ner << "\nd_pos=" << d_pos
     << "\nd_p=" << d_p << "\nd_hidden=" << d_hidden << "\nattn_size="
     << attn_size << "\nattn_heads=" << attn_heads << "\nattn_clip="
     << attn_clip << "\ngcn_size=" << gcn_size << "\nffnn_size=" << ffnn_size
     << "\nlstm_layers=" << lstm_layers << "\ngcn_layers=" << gcn_layers
     << "\nprune_k=" << (prune_k == kFullTree ? std::string("FULL")
                                              : std::to_string(prune_k))
     << "\ndropout_p=" << dropout_p << "\nbeta=" << beta << "\nlr=" << lr
     << "\ndecay=" << decay << "\ngrad_clip=" << grad_clip << "\nepochs="
     << epochs << "\nbatch_size=" << batch_size << "\npatience=" << patience
     << "\nseed=" << seed
     << "\nno_residual_simplify=" << no_residual_simplify
     << "\nlayer_norm_instead=" << layer_norm_instead
     << "\nno_entity_aware=" << no_entity_aware
     << "\nno_self_attention=" << no_self_attention
     << "\nno_entity_pools_ffnn=" << no_entity_pools_ffnn
     << "\nno_bilstm=" << no_bilstm
     << "\nattention_on_bilstm=" << attention_on_bilstm
     << "\npositions_in_input=" << positions_in_input
     << "\nmask_alpha_to_kept=" << mask_alpha_to_kept
     << "\nnegative_label=" << negative_label << "\n";
  return os.str();
}

// ---- parameters -----------------------------------------------------------

TensorPtr Model::add_param(const std::string& name, std::vector<int> shape,
                           double init_range, bool decay, Rng& rng) {
  auto t = make_tensor(std::move(shape), true);
  std::uniform_real_distribution<double> unif(-init_range, init_range);
  for (double& v : t->data) v = unif(rng);
  params_.push_back({name, t, decay});
  return t;
}

TensorPtr Model::add_zero_param(const std::string& name,
                                std::vector<int> shape) {
  auto t = make_tensor(std::move(shape), true);
  params_.push_back({name, t, false});
  return t;
}

Model::Model(ModelConfig cfg, Vocab vocab, Rng& rng)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.validate();
  const int d_in = cfg_.d_input();
  const int d_model = cfg_.attention_on_bilstm ? 2 * cfg_.d_hidden : d_in;
  const int h = cfg_.d_hidden;
  const int d_a = cfg_.ffnn_size;

  auto fan = [](int f) { return 1.0 / std::sqrt(double(f)); };

  // embeddings
  word_table_ = make_tensor({vocab_.n_words(), cfg_.d_word}, true);
  random_embedding(word_table_, rng);
  params_.push_back({"embed.word", word_table_, false});
  ner_table_ = add_param("embed.ner",
                         {static_cast<int>(vocab_.ner_tags.size()), cfg_.d_ner},
                         0.1, false, rng);
  pos_table_ = add_param("embed.pos",
                         {static_cast<int>(vocab_.pos_tags.size()), cfg_.d_pos},
                         0.1, false, rng);
  position_table_ =
      add_param("embed.position", {kPositionRows, cfg_.d_p}, 0.1, false, rng);

  // attention: split attn_size over heads, remainder on the first heads
  attn_.d_model = d_model;
  attn_.d_attn = cfg_.attn_size;
  attn_.clip = cfg_.attn_clip;
  attn_.head_dims.assign(cfg_.attn_heads, cfg_.attn_size / cfg_.attn_heads);
  for (int a = 0; a < cfg_.attn_size % cfg_.attn_heads; ++a)
    ++attn_.head_dims[a];
  attn_.d_rel = attn_.head_dims[0];
  attn_.rel_table = add_param("attn.rel_table",
                              {2 * cfg_.attn_clip + 1, attn_.d_rel}, 0.1,
                              false, rng);
  for (int a = 0; a < cfg_.attn_heads; ++a) {
    const std::string pre = "attn.head" + std::to_string(a) + ".";
    const int dw = attn_.head_dims[a];
    attn_.wq.push_back(add_param(pre + "wq", {d_model, dw}, fan(d_model), true, rng));
    attn_.wk.push_back(add_param(pre + "wk", {d_model, dw}, fan(d_model), true, rng));
    attn_.wv.push_back(add_param(pre + "wv", {d_model, dw}, fan(d_model), true, rng));
    attn_.wr.push_back(add_param(pre + "wr", {d_model, attn_.d_rel},
                                 fan(d_model), true, rng));
  }
  attn_.wo = add_param("attn.wo", {cfg_.attn_size, cfg_.attn_size},
                       fan(cfg_.attn_size), true, rng);
  attn_.bo = add_zero_param("attn.bo", {cfg_.attn_size});
  if (d_model != cfg_.attn_size)
    attn_.w_res = add_param("attn.w_res", {d_model, cfg_.attn_size},
                            fan(d_model), true, rng);
  attn_.ff_w1 = add_param("attn.ff_w1", {cfg_.attn_size, cfg_.attn_size},
                          fan(cfg_.attn_size), true, rng);
  attn_.ff_b1 = add_zero_param("attn.ff_b1", {cfg_.attn_size});
  attn_.ff_w2 = add_param("attn.ff_w2", {cfg_.attn_size, cfg_.attn_size},
                          fan(cfg_.attn_size), true, rng);
  attn_.ff_b2 = add_zero_param("attn.ff_b2", {cfg_.attn_size});

  bn1_ = std::make_unique<BatchNorm>(cfg_.attn_size);
  bn2_ = std::make_unique<BatchNorm>(cfg_.attn_size);
  params_.push_back({"norm1.scale", bn1_->gamma, false});
  params_.push_back({"norm1.shift", bn1_->beta, false});
  params_.push_back({"norm2.scale", bn2_->gamma, false});
  params_.push_back({"norm2.shift", bn2_->beta, false});

  // encoder
  lstm_.hidden = h;
  auto make_dir = [&](const std::string& pre) {
    LstmDirection d;
    d.wx = add_param(pre + "wx", {d_in, 4 * h}, fan(d_in), true, rng);
    d.wh = add_param(pre + "wh", {4 * h, h}, fan(h), true, rng);
    d.b = add_zero_param(pre + "b", {4 * h});
    for (int i = h; i < 2 * h; ++i) d.b->data[i] = 1.0;  // forget-gate bias
    return d;
  };
  lstm_.fwd = make_dir("lstm.fwd.");
  lstm_.bwd = make_dir("lstm.bwd.");
  no_bilstm_proj_ =
      add_param("encoder.input_proj", {d_in, 2 * h}, fan(d_in), true, rng);
  for (int l = 0; l < cfg_.gcn_layers; ++l) {
    const int in_w = l == 0 ? 2 * h : cfg_.gcn_size;
    gcn_w_.push_back(add_param("gcn." + std::to_string(l) + ".w",
                               {in_w, cfg_.gcn_size}, fan(in_w), true, rng));
    gcn_b_.push_back(
        add_zero_param("gcn." + std::to_string(l) + ".b", {cfg_.gcn_size}));
  }
  const int d_gcn_out = cfg_.gcn_layers > 0 ? cfg_.gcn_size : 2 * h;

  // head
  head_.ws = add_param("head.ws", {cfg_.attn_size, d_a}, fan(cfg_.attn_size),
                       true, rng);
  head_.wg = add_param("head.wg", {d_a, d_gcn_out}, fan(d_gcn_out), true, rng);
  head_.wp = add_param("head.wp", {2 * cfg_.d_p, d_a}, fan(2 * cfg_.d_p),
                       true, rng);
  head_.v = add_param("head.v", {d_a}, fan(d_a), true, rng);
  head_.ff_w1 = add_param("head.ff_w1", {3 * d_gcn_out, cfg_.ffnn_size},
                          fan(3 * d_gcn_out), true, rng);
  head_.ff_b1 = add_zero_param("head.ff_b1", {cfg_.ffnn_size});
  head_.ff_w2 = add_param("head.ff_w2", {cfg_.ffnn_size, cfg_.ffnn_size},
                          fan(cfg_.ffnn_size), true, rng);
  head_.ff_b2 = add_zero_param("head.ff_b2", {cfg_.ffnn_size});
  const int cls_in = cfg_.no_entity_pools_ffnn ? d_gcn_out : cfg_.ffnn_size;
  head_.cls_w = add_param("head.cls_w", {cls_in, vocab_.n_relations()},
                          fan(cls_in), true, rng);
  head_.cls_b = add_zero_param("head.cls_b", {vocab_.n_relations()});
}

// ---- forward --------------------------------------------------------------

std::vector<ForwardResult> Model::forward(
    Tape& tape, const std::vector<const Instance*>& batch, bool training,
    Rng& rng, bool collect_attention) {
  const size_t b = batch.size();
  std::vector<TensorPtr> x(b), h(b);
  std::vector<PrunedGraph> pruned(b);
  std::vector<NormAdjacency> adj(b);
  std::vector<AttentionStage> stages(b);
  std::vector<ForwardResult> out(b);

  const bool use_attention = !cfg_.no_self_attention;

  for (size_t i = 0; i < b; ++i) {
    const Instance& inst = *batch[i];
    auto x0 = embed_token(tape, inst, vocab_, word_table_, ner_table_,
                          pos_table_);
    if (cfg_.positions_in_input)
      x0 = concat_cols(tape, {x0, position_embedding(tape, inst,
                                                     position_table_)});
    x[i] = dropout(tape, x0, cfg_.dropout_p, training, rng);

    DepTree tree(inst.head);
    pruned[i] = prune(tree, inst.spans(), cfg_.prune_k);
    adj[i] = adjacency(pruned[i], inst.n());

    h[i] = cfg_.no_bilstm ? matmul(tape, x[i], no_bilstm_proj_)
                          : bilstm(tape, x[i], lstm_);
    if (use_attention) {
      const TensorPtr& e = cfg_.attention_on_bilstm ? h[i] : x[i];
      stages[i] = attention_pre_norm(tape, e, attn_, collect_attention);
      out[i].attn_heads = std::move(stages[i].head_mats);
    }
  }

  // Normalization over the whole batch's token rows.
  std::vector<TensorPtr> s(b);
  if (use_attention) {
    auto normalize = [&](std::vector<TensorPtr> rows, BatchNorm& bn) {
      std::vector<TensorPtr> result(b);
      if (cfg_.layer_norm_instead) {
        for (size_t i = 0; i < b; ++i)
          result[i] = layer_norm(tape, rows[i], bn.gamma, bn.beta);
        return result;
      }
      auto joined = b == 1 ? rows[0] : concat_rows(tape, rows);
      auto normed = bn.forward(tape, joined, training);
      int off = 0;
      for (size_t i = 0; i < b; ++i) {
        const int n = rows[i]->rows();
        result[i] = b == 1 ? normed : slice_rows(tape, normed, off, off + n);
        off += n;
      }
      return result;
    };
    std::vector<TensorPtr> pre(b);
    for (size_t i = 0; i < b; ++i) pre[i] = stages[i].pre_norm;
    s = normalize(std::move(pre), *bn1_);
    if (cfg_.no_residual_simplify) {
      std::vector<TensorPtr> pre2(b);
      for (size_t i = 0; i < b; ++i)
        pre2[i] = attention_ff_sublayer(tape, s[i], attn_);
      s = normalize(std::move(pre2), *bn2_);
    }
  }

  for (size_t i = 0; i < b; ++i) {
    const Instance& inst = *batch[i];
    TensorPtr g = h[i];
    for (int l = 0; l < cfg_.gcn_layers; ++l)
      g = gcn_layer(tape, g, adj[i], gcn_w_[l], gcn_b_[l]);

    const auto kept = pruned[i].kept_mask0();
    auto g_sent = pool_sentence(tape, g, kept);

    TensorPtr g_hat;
    if (cfg_.no_entity_aware) {
      g_hat = g_sent;
    } else {
      auto pos = position_embedding(tape, inst, position_table_);
      out[i].alpha = entity_attention(
          tape, use_attention ? s[i] : nullptr, g_sent, pos, head_,
          cfg_.mask_alpha_to_kept ? kept : std::vector<char>{});
      g_hat = attention_pool(tape, out[i].alpha, g);
    }

    TensorPtr g_final;
    if (cfg_.no_entity_pools_ffnn) {
      g_final = g_hat;
    } else {
      auto g_s = pool_entity(tape, g, inst.subj);
      auto g_o = pool_entity(tape, g, inst.obj);
      g_final = fuse(tape, g_hat, g_s, g_o, head_);
    }
    g_final = dropout(tape, g_final, cfg_.dropout_p, training, rng);
    out[i].probs = classify(tape, g_final, head_);
    out[i].pred = static_cast<int>(
        std::max_element(out[i].probs->data.begin(),
                         out[i].probs->data.end()) -
        out[i].probs->data.begin());
  }
  return out;
}

TensorPtr Model::loss(Tape& tape, const std::vector<const Instance*>& batch,
                      bool training, Rng& rng, long* clamp_hits,
                      std::vector<ForwardResult>* results) {
  auto fw = forward(tape, batch, training, rng);
  TensorPtr total;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto li = nll(tape, fw[i].probs,
                  vocab_.relation_id(batch[i]->relation), clamp_hits);
    total = total ? add(tape, total, li) : li;
  }
  total = scale(tape, total, 1.0 / double(batch.size()));
  if (cfg_.beta > 0.0) {
    TensorPtr reg;
    for (const Param& p : params_) {
      if (!p.decay) continue;
      auto sq = sum_squares(tape, p.tensor);
      reg = reg ? add(tape, reg, sq) : sq;
    }
    if (reg) total = add(tape, total, scale(tape, reg, cfg_.beta));
  }
  if (results) *results = std::move(fw);
  return total;
}

void Model::zero_grads() {
  for (Param& p : params_) p.tensor->zero_grad();
}

double Model::clip_gradients(double max_norm) {
  double sq = 0.0;
  for (const Param& p : params_)
    for (double g : p.tensor->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Param& p : params_)
      for (double& g : p.tensor->grad) g *= s;
  }
  return norm;
}

void Model::sgd_step(double lr) {
  for (Param& p : params_)
    for (int i = 0; i < p.tensor->size(); ++i)
      p.tensor->data[i] -= lr * p.tensor->grad[i];
}

}  // namespace escgcn
