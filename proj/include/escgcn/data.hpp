#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "escgcn/depgraph.hpp"
#include "escgcn/tensor.hpp"

namespace escgcn {

/// One training/eval example. Annotation lists are index-aligned with tokens;
/// all token indices (heads, spans) are 1-based.
struct Instance {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<std::string> ner;
  std::vector<int> head;            // 0 = root
  std::vector<std::string> deprel;
  Span subj;
  Span obj;
  std::optional<Span> ent3;         // auxiliary entity for n-ary instances
  std::string relation;

  int n() const { return static_cast<int>(tokens.size()); }
  std::vector<Span> spans() const {
    std::vector<Span> s{subj, obj};
    if (ent3) s.push_back(*ent3);
    return s;
  }
  /// NER type of the subject (type of its first token).
  const std::string& subj_type() const { return ner[subj.first - 1]; }
  const std::string& obj_type() const { return ner[obj.first - 1]; }
};

struct Corpus {
  std::vector<Instance> instances;
  size_t size() const { return instances.size(); }
};

struct ParseError : DataError {
  ParseError(const std::string& origin, int line, const std::string& msg)
      : DataError(origin + ":" + std::to_string(line) + ": " + msg),
        line_number(line) {}
  int line_number;
};

/// Tab-separated block format, one sentence per block:
///   # id=<id> relation=<label> subj=<s1>-<s2> obj=<o1>-<o2> [ent3=<a>-<b>]
///   <index>\t<form>\t<pos>\t<ner>\t<head>\t<deprel>
///   ...
/// Blocks are separated by blank lines. A block with several head-0 tokens is
/// joined into one tree by attaching the later sentence roots to the first.
Corpus parse_corpus(const std::string& path);
Corpus parse_corpus_text(const std::string& text, const std::string& origin);
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const std::string& path, const Corpus& corpus);

/// Token/tag/label inventories. Word ids: 0 = padding, 1 = unknown, then one
/// masked-entity id per (role, NER type), then ordinary words.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> words;  // id -> surface (specials included)
  std::unordered_map<std::string, int> word_id;

  std::vector<std::string> pos_tags, ner_tags, deprels, relations;
  std::unordered_map<std::string, int> pos_map, ner_map, deprel_map,
      relation_map;
  std::string negative_label = "no_relation";

  static Vocab build(const std::vector<const Corpus*>& corpora,
                     const std::string& negative_label = "no_relation");

  int lookup_word(const std::string& w) const {
    auto it = word_id.find(w);
    return it == word_id.end() ? kUnk : it->second;
  }
  /// Masked-entity id for role "SUBJ"/"OBJ"/"ENT3" and an NER type.
  int mask_id(const std::string& role, const std::string& ner_type) const;
  int pos_id(const std::string& t) const;
  int ner_id(const std::string& t) const;
  int relation_id(const std::string& r) const;
  int n_words() const { return static_cast<int>(words.size()); }
  int n_relations() const { return static_cast<int>(relations.size()); }
};

/// Entity-masked word ids: subject span tokens become the subject mask id for
/// the subject's NER type, likewise object (and ent3); the rest are ordinary
/// lookups with unknown fallback.
std::vector<int> mask_entities(const Instance& inst, const Vocab& vocab);

/// Signed integer-log distance bucket of token i relative to span [s1, s2].
int binary_position(int i, int s1, int s2);

/// Buckets are clipped to [-kPositionClip, kPositionClip] before embedding.
inline constexpr int kPositionClip = 9;
inline constexpr int kPositionRows = 2 * kPositionClip + 1;

/// Clipped bucket shifted to a table row index in [0, kPositionRows).
int position_row(int bucket);

/// [n x 2 d_p]: per token, subject-relative and object-relative bucket
/// embeddings concatenated. table: [kPositionRows x d_p].
TensorPtr position_embedding(Tape& tape, const Instance& inst,
                             const TensorPtr& table);

/// [n x (d_word + d_ner + d_pos)] input representation rows.
TensorPtr embed_token(Tape& tape, const Instance& inst, const Vocab& vocab,
                      const TensorPtr& word_table, const TensorPtr& ner_table,
                      const TensorPtr& pos_table);

struct PretrainedCoverage {
  int found = 0;
  int vocab_words = 0;  // ordinary words considered (specials excluded)
};

/// Copies pretrained rows into table for in-vocab tokens; rows for missing
/// tokens are drawn uniform(-0.1, 0.1) from rng. Text format: one
/// whitespace-separated "token v1 ... vd" per line.
PretrainedCoverage load_pretrained(const std::string& path, const Vocab& vocab,
                                   const TensorPtr& table, Rng& rng);

/// Seeds every row (specials included, padding left zero) uniform(-0.1, 0.1).
void random_embedding(const TensorPtr& table, Rng& rng);

}  // namespace escgcn
