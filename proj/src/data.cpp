#include "escgcn/data.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace escgcn {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

Span parse_span(const std::string& origin, int line, const std::string& text) {
  const auto dash = text.find('-');
  if (dash == std::string::npos)
    throw ParseError(origin, line, "span must be <first>-<last>: " + text);
  try {
    Span s{std::stoi(text.substr(0, dash)), std::stoi(text.substr(dash + 1))};
    return s;
  } catch (const std::exception&) {
    throw ParseError(origin, line, "bad span: " + text);
  }
}

void validate_instance(const std::string& origin, int header_line,
                       Instance& inst) {
  const int n = inst.n();
  if (n == 0) throw ParseError(origin, header_line, "empty sentence block");

  // Join multi-sentence blocks: later roots hang off the first root.
  int first_root = 0;
  for (int v = 1; v <= n; ++v) {
    if (inst.head[v - 1] == 0) {
      if (first_root == 0)
        first_root = v;
      else
        inst.head[v - 1] = first_root;
    }
  }
  try {
    DepTree tree(inst.head);  // validates acyclicity / connectivity
  } catch (const DataError& e) {
    throw ParseError(origin, header_line, e.what());
  }

  auto check_span = [&](const Span& s, const char* name) {
    if (s.first < 1 || s.last > n || s.first > s.last)
      throw ParseError(origin, header_line,
                       std::string(name) + " span " +
                           std::to_string(s.first) + "-" +
                           std::to_string(s.last) + " out of range 1.." +
                           std::to_string(n));
  };
  check_span(inst.subj, "subj");
  check_span(inst.obj, "obj");
  if (inst.ent3) check_span(*inst.ent3, "ent3");
  auto overlap = [](const Span& a, const Span& b) {
    return a.first <= b.last && b.first <= a.last;
  };
  if (overlap(inst.subj, inst.obj))
    throw ParseError(origin, header_line, "subj and obj spans overlap");
  if (inst.ent3 && (overlap(inst.subj, *inst.ent3) ||
                    overlap(inst.obj, *inst.ent3)))
    throw ParseError(origin, header_line, "ent3 span overlaps an entity span");
  if (inst.relation.empty())
    throw ParseError(origin, header_line, "missing relation label");
}

}  // namespace

Corpus parse_corpus_text(const std::string& text, const std::string& origin) {
  Corpus corpus;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  Instance inst;
  int header_line = 0;
  bool in_block = false;
  int expected_index = 1;

  auto flush = [&]() {
    if (!in_block) return;
    validate_instance(origin, header_line, inst);
    corpus.instances.push_back(std::move(inst));
    inst = Instance{};
    in_block = false;
    expected_index = 1;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      if (in_block)
        throw ParseError(origin, line_no, "header inside a sentence block");
      in_block = true;
      header_line = line_no;
      std::istringstream hs(line.substr(1));
      std::string field;
      bool have_subj = false, have_obj = false;
      while (hs >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos)
          throw ParseError(origin, line_no, "bad header field: " + field);
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "id") inst.id = val;
        else if (key == "relation") inst.relation = val;
        else if (key == "subj") { inst.subj = parse_span(origin, line_no, val); have_subj = true; }
        else if (key == "obj") { inst.obj = parse_span(origin, line_no, val); have_obj = true; }
        else if (key == "ent3") inst.ent3 = parse_span(origin, line_no, val);
        else throw ParseError(origin, line_no, "unknown header key: " + key);
      }
      if (!have_subj || !have_obj)
        throw ParseError(origin, line_no, "header needs subj= and obj= spans");
      continue;
    }
    if (!in_block)
      throw ParseError(origin, line_no, "token line before a '#' header");
    auto cols = split(line, '\t');
    if (cols.size() != 6)
      throw ParseError(origin, line_no,
                       "expected 6 tab-separated columns, got " +
                           std::to_string(cols.size()));
    int idx, head;
    try {
      idx = std::stoi(cols[0]);
      head = std::stoi(cols[4]);
    } catch (const std::exception&) {
      throw ParseError(origin, line_no, "non-numeric index or head");
    }
    if (idx != expected_index)
      throw ParseError(origin, line_no,
                       "token index " + std::to_string(idx) +
                           ", expected " + std::to_string(expected_index));
    ++expected_index;
    inst.tokens.push_back(cols[1]);
    inst.pos.push_back(cols[2]);
    inst.ner.push_back(cols[3]);
    inst.head.push_back(head);
    inst.deprel.push_back(cols[5]);
  }
  flush();
  return corpus;
}

Corpus parse_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus_text(buf.str(), path);
}

std::string serialize_corpus(const Corpus& corpus) {
  std::ostringstream os;
  for (const Instance& inst : corpus.instances) {
    os << "# id=" << inst.id << " relation=" << inst.relation << " subj="
       << inst.subj.first << "-" << inst.subj.last << " obj="
       << inst.obj.first << "-" << inst.obj.last;
    if (inst.ent3)
      os << " ent3=" << inst.ent3->first << "-" << inst.ent3->last;
    os << "\n";
    for (int i = 0; i < inst.n(); ++i)
      os << (i + 1) << "\t" << inst.tokens[i] << "\t" << inst.pos[i] << "\t"
         << inst.ner[i] << "\t" << inst.head[i] << "\t" << inst.deprel[i]
         << "\n";
    os << "\n";
  }
  return os.str();
}

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  out << serialize_corpus(corpus);
}

// ---- vocab ----------------------------------------------------------------

namespace {

std::string mask_token(const std::string& role, const std::string& ner_type) {
  return "NER-<" + role + ":" + ner_type + ">";
}

int intern(std::vector<std::string>& names,
           std::unordered_map<std::string, int>& map, const std::string& s) {
  auto it = map.find(s);
  if (it != map.end()) return it->second;
  const int id = static_cast<int>(names.size());
  names.push_back(s);
  map.emplace(s, id);
  return id;
}

}  // namespace

Vocab Vocab::build(const std::vector<const Corpus*>& corpora,
                   const std::string& negative_label) {
  Vocab v;
  v.negative_label = negative_label;
  v.words = {"<pad>", "<unk>"};
  v.word_id = {{"<pad>", kPad}, {"<unk>", kUnk}};

  // Mask ids first so they are disjoint from ordinary word ids by layout.
  for (const Corpus* c : corpora)
    for (const Instance& inst : c->instances) {
      intern(v.words, v.word_id, mask_token("SUBJ", inst.subj_type()));
      intern(v.words, v.word_id, mask_token("OBJ", inst.obj_type()));
      if (inst.ent3)
        intern(v.words, v.word_id,
               mask_token("ENT3", inst.ner[inst.ent3->first - 1]));
    }
  for (const Corpus* c : corpora)
    for (const Instance& inst : c->instances) {
      for (int i = 0; i < inst.n(); ++i) {
        const int pos1 = i + 1;
        const bool masked = inst.subj.contains(pos1) ||
                            inst.obj.contains(pos1) ||
                            (inst.ent3 && inst.ent3->contains(pos1));
        if (!masked) intern(v.words, v.word_id, inst.tokens[i]);
        intern(v.pos_tags, v.pos_map, inst.pos[i]);
        intern(v.ner_tags, v.ner_map, inst.ner[i]);
        intern(v.deprels, v.deprel_map, inst.deprel[i]);
      }
      intern(v.relations, v.relation_map, inst.relation);
    }
  // The negative label is always addressable even if absent from the data.
  intern(v.relations, v.relation_map, negative_label);
  return v;
}

int Vocab::mask_id(const std::string& role, const std::string& ner_type) const {
  auto it = word_id.find(mask_token(role, ner_type));
  if (it == word_id.end())
    throw DataError("no mask id for role " + role + " NER type " + ner_type);
  return it->second;
}

int Vocab::pos_id(const std::string& t) const {
  auto it = pos_map.find(t);
  if (it == pos_map.end()) throw DataError("unknown POS tag: " + t);
  return it->second;
}

int Vocab::ner_id(const std::string& t) const {
  auto it = ner_map.find(t);
  if (it == ner_map.end()) throw DataError("unknown NER tag: " + t);
  return it->second;
}

int Vocab::relation_id(const std::string& r) const {
  auto it = relation_map.find(r);
  if (it == relation_map.end()) throw DataError("unknown relation label: " + r);
  return it->second;
}

std::vector<int> mask_entities(const Instance& inst, const Vocab& vocab) {
  std::vector<int> ids(inst.n());
  const int subj_id = vocab.mask_id("SUBJ", inst.subj_type());
  const int obj_id = vocab.mask_id("OBJ", inst.obj_type());
  const int ent3_id =
      inst.ent3 ? vocab.mask_id("ENT3", inst.ner[inst.ent3->first - 1]) : -1;
  for (int i = 1; i <= inst.n(); ++i) {
    if (inst.subj.contains(i)) ids[i - 1] = subj_id;
    else if (inst.obj.contains(i)) ids[i - 1] = obj_id;
    else if (inst.ent3 && inst.ent3->contains(i)) ids[i - 1] = ent3_id;
    else ids[i - 1] = vocab.lookup_word(inst.tokens[i - 1]);
  }
  return ids;
}

// ---- position encoding ----------------------------------------------------

int binary_position(int i, int s1, int s2) {
  if (i < s1) {
    const unsigned d = static_cast<unsigned>(s1 - i);
    return -(std::bit_width(d) - 1) - 1;
  }
  if (i > s2) {
    const unsigned d = static_cast<unsigned>(i - s2);
    return (std::bit_width(d) - 1) + 1;
  }
  return 0;
}

int position_row(int bucket) {
  bucket = std::clamp(bucket, -kPositionClip, kPositionClip);
  return bucket + kPositionClip;
}

TensorPtr position_embedding(Tape& tape, const Instance& inst,
                             const TensorPtr& table) {
  if (table->rows() != kPositionRows)
    throw ShapeError("position table must have " +
                     std::to_string(kPositionRows) + " rows, got " +
                     shape_str(*table));
  std::vector<int> subj_rows(inst.n()), obj_rows(inst.n());
  for (int i = 1; i <= inst.n(); ++i) {
    subj_rows[i - 1] =
        position_row(binary_position(i, inst.subj.first, inst.subj.last));
    obj_rows[i - 1] =
        position_row(binary_position(i, inst.obj.first, inst.obj.last));
  }
  auto ps = gather_rows(tape, table, subj_rows);
  auto po = gather_rows(tape, table, obj_rows);
  return concat_cols(tape, {ps, po});
}

TensorPtr embed_token(Tape& tape, const Instance& inst, const Vocab& vocab,
                      const TensorPtr& word_table, const TensorPtr& ner_table,
                      const TensorPtr& pos_table) {
  std::vector<int> word_ids = mask_entities(inst, vocab);
  std::vector<int> ner_ids(inst.n()), pos_ids(inst.n());
  for (int i = 0; i < inst.n(); ++i) {
    ner_ids[i] = vocab.ner_id(inst.ner[i]);
    pos_ids[i] = vocab.pos_id(inst.pos[i]);
  }
  auto w = gather_rows(tape, word_table, word_ids);
  auto nr = gather_rows(tape, ner_table, ner_ids);
  auto ps = gather_rows(tape, pos_table, pos_ids);
  return concat_cols(tape, {w, nr, ps});
}

// ---- pretrained vectors ---------------------------------------------------

void random_embedding(const TensorPtr& table, Rng& rng) {
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  for (int r = 0; r < table->rows(); ++r) {
    if (r == Vocab::kPad) continue;
    for (int c = 0; c < table->cols(); ++c) table->at(r, c) = unif(rng);
  }
}

PretrainedCoverage load_pretrained(const std::string& path, const Vocab& vocab,
                                   const TensorPtr& table, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vector file: " + path);
  const int d = table->cols();
  random_embedding(table, rng);  // missing tokens keep their random rows

  PretrainedCoverage cov;
  for (int id = 0; id < vocab.n_words(); ++id) {
    const std::string& w = vocab.words[id];
    if (id == Vocab::kPad || id == Vocab::kUnk || w.rfind("NER-<", 0) == 0)
      continue;
    ++cov.vocab_words;
  }

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    auto it = vocab.word_id.find(token);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (static_cast<int>(vals.size()) != d)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": vector has " + std::to_string(vals.size()) +
                      " values, expected " + std::to_string(d));
    if (it == vocab.word_id.end() || it->second == Vocab::kPad ||
        it->second == Vocab::kUnk)
      continue;
    for (int c = 0; c < d; ++c) table->at(it->second, c) = vals[c];
    ++cov.found;
  }
  return cov;
}

}  // namespace escgcn
