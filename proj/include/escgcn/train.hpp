#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "escgcn/metrics.hpp"
#include "escgcn/model.hpp"

namespace escgcn {

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double dev_f1 = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_metric = 0.0;
  long clamp_hits = 0;  // probability-floor events during training
};

/// SGD loop with per-epoch learning-rate decay, seeded shuffling, global-norm
/// gradient clipping and best-checkpoint retention. The best parameters (by
/// dev micro-F1) are restored into the model before returning. Log lines
/// ("epoch=<e> loss=<f> dev_f1=<f> lr=<f>") go to `log` when non-null.
TrainResult train_model(Model& model, const Corpus& train, const Corpus& dev,
                        Rng& rng, std::ostream* log);

/// Inference-mode predictions for a corpus; `out_probs` receives the gold
/// probability of each prediction (the argmax probability), `out_alpha` the
/// entity-attention vectors, `out_heads` the per-head attention matrices.
std::vector<int> predict_labels(Model& model, const Corpus& corpus, Rng& rng,
                                std::vector<double>* out_probs = nullptr,
                                std::vector<TensorPtr>* out_alpha = nullptr,
                                std::vector<std::vector<TensorPtr>>* out_heads = nullptr);

struct BucketRow {
  std::string bucket;
  int count = 0;
  Scores scores;
};

struct EvalReport {
  Scores micro;
  Scores macro;
  std::vector<BucketRow> by_length;
  std::vector<BucketRow> by_distance;
};

/// Distance between entities: gap between span starts, |subj.first - obj.first|.
int entity_distance(const Instance& inst);

EvalReport evaluate_model(Model& model, const Corpus& corpus, Rng& rng);
std::string format_report(const EvalReport& report);

struct Checkpoint {
  ModelConfig config;
  Vocab vocab;
  std::unique_ptr<Model> model;
  int epoch = 0;
  double best_metric = 0.0;
  Rng rng{1};
};

void save_checkpoint(const std::string& path, Model& model, const Rng& rng,
                     int epoch, double best_metric);
Checkpoint load_checkpoint(const std::string& path);

struct GradcheckResult {
  int configs = 0;
  double max_rel_err = 0.0;
};

/// Finite-difference check of the full model gradient on `n_configs` random
/// tiny configurations (<= 6 tokens, widths <= 8, random ablation flags).
GradcheckResult model_gradient_check(int n_configs, unsigned long long seed,
                                     std::ostream* log);

struct DataSizeRow {
  double fraction = 0.0;
  int n_train = 0;
  double dev_f1 = 0.0;
  bool skipped = false;  // a label was missing from the subsample
};

/// Trains one model per fraction on a nested (seeded) subsample of the
/// training corpus; fraction 1.0 reproduces a plain run with the same seed.
std::vector<DataSizeRow> data_size_study(const ModelConfig& cfg,
                                         const Corpus& train,
                                         const Corpus& dev,
                                         const std::vector<double>& fractions,
                                         std::ostream* log);

}  // namespace escgcn
