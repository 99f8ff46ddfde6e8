#include "escgcn/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace escgcn {

void SyntheticConfig::validate() const {
  if (n_relations < 2) throw ConfigError("need at least 2 relations");
  if (n_instances < 1) throw ConfigError("need at least 1 instance");
  if (filler_vocab < 4) throw ConfigError("filler_vocab too small");
  if (trigger_distance < 0) throw ConfigError("trigger_distance must be >= 0");
  if (n_distractors < 0) throw ConfigError("n_distractors must be >= 0");
  // subj + root + obj + anchors + trigger block + distractors + modifiers
  int structural = 3 + 2 + n_distractors;
  if (trigger_distance > 0) structural += 2 + std::max(0, trigger_distance - 2);
  if (modifier_pairs) structural += 2;
  if (min_len < structural || min_len > max_len)
    throw ConfigError("infeasible length constraints: need min_len >= " +
                      std::to_string(structural));
}

void SyntheticConfig::apply_kv(const std::string& key,
                               const std::string& value) {
  try {
    if (key == "n_relations") n_relations = std::stoi(value);
    else if (key == "n_instances") n_instances = std::stoi(value);
    else if (key == "filler_vocab") filler_vocab = std::stoi(value);
    else if (key == "min_len") min_len = std::stoi(value);
    else if (key == "max_len") max_len = std::stoi(value);
    else if (key == "trigger_distance") trigger_distance = std::stoi(value);
    else if (key == "n_distractors") n_distractors = std::stoi(value);
    else if (key == "modifier_pairs")
      modifier_pairs = value == "1" || value == "true";
    else if (key == "seed") seed = std::stoull(value);
    else throw ConfigError("unknown synthetic config key: " + key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
}

SyntheticConfig SyntheticConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synthetic config: " + path);
  SyntheticConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
      line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("synthetic config line is not key=value: " + line);
    cfg.apply_kv(line.substr(0, eq), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

namespace {

struct Tok {
  std::string word, pos, ner, deprel;
  int tid = -1;        // generation-time identity
  int head_tid = -2;   // -1 = sentence root; resolved to indices at the end
};

class Builder {
 public:
  explicit Builder(Rng& rng) : rng_(rng) {}

  int fresh_tid() { return next_tid_++; }

  Tok filler(int vocab, int head_tid) {
    std::uniform_int_distribution<int> pick(0, vocab - 1);
    return Tok{"w" + std::to_string(pick(rng_)), "NN", "O", "dep",
               fresh_tid(), head_tid};
  }

  int uniform(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng_);
  }

 private:
  Rng& rng_;
  int next_tid_ = 0;
};

}  // namespace

Corpus generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Corpus corpus;

  for (int k = 0; k < cfg.n_instances; ++k) {
    Builder b(rng);
    const int r_trigger = b.uniform(0, cfg.n_relations - 1);
    int relation = r_trigger;

    const int root_tid = b.fresh_tid();
    const int subj_tid = b.fresh_tid();
    const int obj_tid = b.fresh_tid();
    const bool off_path = cfg.trigger_distance > 0;

    Tok root{off_path ? "verb" + std::to_string(b.uniform(0, 2))
                      : "trig" + std::to_string(r_trigger),
             "VB", "O", "root", root_tid, -1};
    Tok subj{"subj" + std::to_string(b.uniform(0, 4)), "NNP", "PER", "nsubj",
             subj_tid, root_tid};
    Tok obj{"obj" + std::to_string(b.uniform(0, 4)), "NNP", "ORG", "dobj",
            obj_tid, root_tid};

    // Shallow anchor (tree distance 1 from the path) and a deep anchor
    // (distance 2) that distractor clauses hang from.
    Tok a1 = b.filler(cfg.filler_vocab, root_tid);
    Tok b1 = b.filler(cfg.filler_vocab, a1.tid);

    // Off-path trigger block: chain of fillers from the root, then the
    // trigger, preceded linearly by a marker word.
    std::vector<Tok> chain;
    std::vector<Tok> block;  // linearly contiguous (marker/modifier, trigger)
    if (off_path) {
      int parent = root_tid;
      if (cfg.trigger_distance >= 2) {
        parent = a1.tid;  // a1 is the first chain node
        for (int d = 2; d < cfg.trigger_distance; ++d) {
          Tok c = b.filler(cfg.filler_vocab, parent);
          parent = c.tid;
          chain.push_back(c);
        }
      }
      Tok trig{"trig" + std::to_string(r_trigger), "VB", "O", "dep",
               b.fresh_tid(), parent};
      if (cfg.modifier_pairs) {
        const int j = b.uniform(0, cfg.n_relations - 1);
        relation = (r_trigger + j) % cfg.n_relations;
        block.push_back(Tok{"mod" + std::to_string(j), "JJ", "O", "amod",
                            b.fresh_tid(), b1.tid});
      } else {
        block.push_back(Tok{"near", "IN", "O", "mark", b.fresh_tid(),
                            trig.tid});
      }
      block.push_back(trig);
    } else if (cfg.modifier_pairs) {
      const int j = b.uniform(0, cfg.n_relations - 1);
      relation = (r_trigger + j) % cfg.n_relations;
      block.push_back(Tok{"mod" + std::to_string(j), "JJ", "O", "amod",
                          b.fresh_tid(), b1.tid});
    }

    // Distractor triggers of other relations, tree distance 3 from the path.
    std::vector<Tok> noise;
    for (int d = 0; d < cfg.n_distractors; ++d) {
      int other = b.uniform(0, cfg.n_relations - 2);
      if (other >= r_trigger) ++other;
      noise.push_back(Tok{"trig" + std::to_string(other), "VB", "O", "dep",
                          b.fresh_tid(), b1.tid});
    }
    if (cfg.modifier_pairs)
      noise.push_back(Tok{"mod" + std::to_string(b.uniform(0, cfg.n_relations - 1)),
                          "JJ", "O", "amod", b.fresh_tid(), b1.tid});

    const int length = b.uniform(cfg.min_len, cfg.max_len);
    const int placed = 5 + static_cast<int>(chain.size() + block.size() +
                                            noise.size());
    int n_fill = std::max(0, length - placed);

    // Linear layout: [pre] subj [mid1 (+block when on-path)] root [mid2] obj
    // [suffix with a1, b1, chain, noise, off-path block].
    std::vector<Tok> pre, mid1, mid2, suffix;
    int pre_n = b.uniform(0, std::min(2, n_fill));
    n_fill -= pre_n;
    int mid1_n = b.uniform(0, std::min(2, n_fill));
    n_fill -= mid1_n;
    int mid2_n = b.uniform(0, std::min(2, n_fill));
    n_fill -= mid2_n;
    for (int i = 0; i < pre_n; ++i) pre.push_back(b.filler(cfg.filler_vocab, b1.tid));
    for (int i = 0; i < mid1_n; ++i) mid1.push_back(b.filler(cfg.filler_vocab, b1.tid));
    for (int i = 0; i < mid2_n; ++i) mid2.push_back(b.filler(cfg.filler_vocab, b1.tid));

    suffix.push_back(a1);
    suffix.push_back(b1);
    for (const Tok& c : chain) suffix.push_back(c);
    for (const Tok& t : noise) suffix.push_back(t);
    for (int i = 0; i < n_fill; ++i)
      suffix.push_back(b.filler(cfg.filler_vocab, b1.tid));
    std::shuffle(suffix.begin(), suffix.end(), rng);

    // The trigger block stays contiguous: on-path it sits right before the
    // root; off-path it is spliced into the prefix or the suffix.
    std::vector<Tok> sentence;
    auto extend = [&sentence](const std::vector<Tok>& v) {
      sentence.insert(sentence.end(), v.begin(), v.end());
    };
    if (off_path) {
      const bool in_pre = b.uniform(0, 3) == 0;  // mostly after the entities
      if (in_pre) {
        const int at = b.uniform(0, static_cast<int>(pre.size()));
        pre.insert(pre.begin() + at, block.begin(), block.end());
      } else {
        const int at = b.uniform(0, static_cast<int>(suffix.size()));
        suffix.insert(suffix.begin() + at, block.begin(), block.end());
      }
      extend(pre);
      sentence.push_back(subj);
      extend(mid1);
      sentence.push_back(root);
      extend(mid2);
      sentence.push_back(obj);
      extend(suffix);
    } else {
      extend(pre);
      sentence.push_back(subj);
      extend(mid1);
      extend(block);  // modifier immediately before the root trigger
      sentence.push_back(root);
      extend(mid2);
      sentence.push_back(obj);
      extend(suffix);
    }

    // Resolve tids to 1-based indices.
    std::vector<int> index_of(b.fresh_tid(), 0);
    for (size_t i = 0; i < sentence.size(); ++i)
      index_of[sentence[i].tid] = static_cast<int>(i) + 1;

    Instance inst;
    inst.id = "syn" + std::to_string(k);
    inst.relation = "rel" + std::to_string(relation);
    for (const Tok& t : sentence) {
      inst.tokens.push_back(t.word);
      inst.pos.push_back(t.pos);
      inst.ner.push_back(t.ner);
      inst.deprel.push_back(t.deprel);
      inst.head.push_back(t.head_tid < 0 ? 0 : index_of[t.head_tid]);
      if (t.tid == subj_tid) {
        const int i = static_cast<int>(inst.tokens.size());
        inst.subj = {i, i};
      }
      if (t.tid == obj_tid) {
        const int i = static_cast<int>(inst.tokens.size());
        inst.obj = {i, i};
      }
    }
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

}  // namespace escgcn
