#pragma once

#include <map>
#include <string>
#include <vector>

#include "escgcn/attention.hpp"
#include "escgcn/data.hpp"
#include "escgcn/depgraph.hpp"
#include "escgcn/encoder.hpp"
#include "escgcn/head.hpp"
#include "escgcn/tensor.hpp"

namespace escgcn {

struct ModelConfig {
  // dimensions
  int d_word = 300;
  int d_ner = 30;
  int d_pos = 30;
  int d_p = 30;          // position embedding width (per entity)
  int d_hidden = 200;    // LSTM hidden per direction
  int attn_size = 130;
  int attn_heads = 3;
  int attn_clip = 10;    // relative-offset clip for the attention table
  int gcn_size = 200;
  int ffnn_size = 200;
  int lstm_layers = 1;   // L1
  int gcn_layers = 2;    // L2
  int prune_k = 1;       // kFullTree = full trees
  // optimization
  double dropout_p = 0.5;
  double beta = 1e-3;    // L2 coefficient
  double lr = 0.5;
  double decay = 0.9;    // per-epoch multiplicative lr decay
  double grad_clip = 5.0;
  int epochs = 100;
  int batch_size = 50;
  int patience = 10;     // early stop after this many epochs without dev
                         // improvement once training accuracy saturates; 0 = off
  unsigned long long seed = 1;
  // ablation flags (independent)
  bool no_residual_simplify = false;  // default two-connection residual block
  bool layer_norm_instead = false;    // layer norm replaces batch norm
  bool no_entity_aware = false;
  bool no_self_attention = false;
  bool no_entity_pools_ffnn = false;  // classifier directly on g_hat
  bool no_bilstm = false;
  // branch-input switches
  bool attention_on_bilstm = false;   // attention consumes BiLSTM output
  bool positions_in_input = false;    // concat p_i into x
  bool mask_alpha_to_kept = false;    // restrict entity attention to kept nodes
  std::string negative_label = "no_relation";

  int d_input() const {
    return d_word + d_ner + d_pos + (positions_in_input ? 2 * d_p : 0);
  }
  void validate() const;
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  static ModelConfig parse_file(const std::string& path);
  void apply_kv(const std::string& key, const std::string& value);
  void apply_ablation(const std::string& flag_list);  // comma-separated
};

/// Named learnable tensor; decay marks weight matrices covered by the L2 term.
struct Param {
  std::string name;
  TensorPtr tensor;
  bool decay = false;
};

class Model;

struct ForwardResult {
  TensorPtr probs;   // distribution over relations
  int pred = -1;
  TensorPtr alpha;   // entity-attention weights (null when ablated)
  std::vector<TensorPtr> attn_heads;  // post-softmax matrices when requested
};

class Model {
 public:
  Model(ModelConfig cfg, Vocab vocab, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  TensorPtr word_table() { return word_table_; }
  BatchNorm& bn1() { return *bn1_; }
  BatchNorm& bn2() { return *bn2_; }

  /// Forward over a batch. Batch normalization statistics are computed over
  /// the concatenated token rows of the whole batch.
  std::vector<ForwardResult> forward(Tape& tape,
                                     const std::vector<const Instance*>& batch,
                                     bool training, Rng& rng,
                                     bool collect_attention = false);

  /// Mean cross entropy over the batch plus the L2 term over weight matrices.
  TensorPtr loss(Tape& tape, const std::vector<const Instance*>& batch,
                 bool training, Rng& rng, long* clamp_hits = nullptr,
                 std::vector<ForwardResult>* results = nullptr);

  void zero_grads();
  /// Returns the pre-clip global norm.
  double clip_gradients(double max_norm);
  void sgd_step(double lr);

 private:
  TensorPtr add_param(const std::string& name, std::vector<int> shape,
                      double init_range, bool decay, Rng& rng);
  TensorPtr add_zero_param(const std::string& name, std::vector<int> shape);

  ModelConfig cfg_;
  Vocab vocab_;
  std::vector<Param> params_;

  TensorPtr word_table_, ner_table_, pos_table_, position_table_;
  AttentionParams attn_;
  LstmParams lstm_;
  TensorPtr no_bilstm_proj_;
  std::vector<TensorPtr> gcn_w_, gcn_b_;
  HeadParams head_;
  // Layer norm, when selected, reuses the same scale/shift parameters.
  std::unique_ptr<BatchNorm> bn1_, bn2_;
};

}  // namespace escgcn
