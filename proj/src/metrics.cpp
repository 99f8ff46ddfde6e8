#include "escgcn/metrics.hpp"

#include <stdexcept>

namespace escgcn {

namespace {

void check_lengths(const std::vector<int>& pred, const std::vector<int>& gold) {
  if (pred.size() != gold.size())
    throw std::invalid_argument("prediction/gold length mismatch: " +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(gold.size()));
}

double f1_of(double p, double r) {
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

Scores micro_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                    int negative_label) {
  check_lengths(pred, gold);
  long tp = 0, fp = 0, fn = 0, correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == gold[i]) ++correct;
    if (pred[i] != negative_label) {
      if (pred[i] == gold[i]) ++tp;
      else ++fp;
    }
    if (gold[i] != negative_label && pred[i] != gold[i]) ++fn;
  }
  Scores s;
  s.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  s.f1 = f1_of(s.precision, s.recall);
  s.accuracy = pred.empty() ? 0.0 : double(correct) / double(pred.size());
  return s;
}

Scores macro_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                    int negative_label, int n_labels) {
  check_lengths(pred, gold);
  std::vector<long> tp(n_labels, 0), fp(n_labels, 0), fn(n_labels, 0);
  std::vector<char> present(n_labels, 0);
  long correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == gold[i]) ++correct;
    if (gold[i] != negative_label) present[gold[i]] = 1;
    if (pred[i] != negative_label) present[pred[i]] = 1;
    if (pred[i] == gold[i]) {
      if (gold[i] != negative_label) ++tp[gold[i]];
    } else {
      if (pred[i] != negative_label) ++fp[pred[i]];
      if (gold[i] != negative_label) ++fn[gold[i]];
    }
  }
  double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
  int classes = 0;
  for (int c = 0; c < n_labels; ++c) {
    if (c == negative_label || !present[c]) continue;
    const double p = tp[c] + fp[c] > 0 ? double(tp[c]) / double(tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] > 0 ? double(tp[c]) / double(tp[c] + fn[c]) : 0.0;
    sum_p += p;
    sum_r += r;
    sum_f += f1_of(p, r);
    ++classes;
  }
  Scores s;
  if (classes > 0) {
    s.precision = sum_p / classes;
    s.recall = sum_r / classes;
    s.f1 = sum_f / classes;
  }
  s.accuracy = pred.empty() ? 0.0 : double(correct) / double(pred.size());
  return s;
}

}  // namespace escgcn
