#pragma once

#include <string>

#include "escgcn/data.hpp"
#include "escgcn/tensor.hpp"

namespace escgcn {

/// Synthetic relation-extraction corpus: the relation is a deterministic
/// function of a trigger token placed on (or at a controlled tree distance
/// from) the subject-object dependency path, surrounded by distractor
/// clauses.
struct SyntheticConfig {
  int n_relations = 3;
  int n_instances = 200;
  int filler_vocab = 60;   // filler word pool
  int min_len = 9;         // sentence length bounds (uniform)
  int max_len = 15;
  /// 0 = trigger on the dependency path (it is the root predicate);
  /// d > 0 = trigger hangs at tree distance d from the path, preceded
  /// linearly by a marker word at a random position.
  int trigger_distance = 0;
  /// Trigger-only distractors of other relations, attached at tree
  /// distance >= 2 from the path.
  int n_distractors = 1;
  /// When set, the relation is a function of the trigger AND the modifier
  /// word immediately before it; a decoy modifier appears elsewhere, so a
  /// bag of words does not determine the label.
  bool modifier_pairs = false;
  unsigned long long seed = 7;

  void validate() const;
  static SyntheticConfig parse_file(const std::string& path);
  void apply_kv(const std::string& key, const std::string& value);
};

Corpus generate_synthetic(const SyntheticConfig& cfg);

}  // namespace escgcn
