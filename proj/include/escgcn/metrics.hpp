#pragma once

#include <string>
#include <vector>

namespace escgcn {

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

/// Micro-averaged P/R/F1 with pooled counts; the negative class never counts
/// as a true positive (TACRED convention). Accuracy is over all labels.
Scores micro_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                    int negative_label);

/// Mean of per-class F1 over positive classes (classes present in gold or
/// predictions, negative excluded).
Scores macro_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                    int negative_label, int n_labels);

}  // namespace escgcn
