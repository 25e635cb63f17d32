#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "anchornet/errors.hpp"
#include "anchornet/rng.hpp"

namespace anchornet {

// Lowercased whitespace tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct Document {
  int label = -1;
  std::vector<std::string> tokens;
  // Ground-truth span when the corpus is synthetic; -1 start means unknown.
  int plant_start = -1;
  int plant_len = 0;
};

// Token table with two reserved ids. Unknown tokens map to kUnk; short
// documents are padded with kPad.
struct Vocab {
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;

  std::vector<std::string> tokens{"<unk>", "<pad>"};
  std::unordered_map<std::string, int> index;

  size_t size() const { return tokens.size(); }

  int id(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
  }

  int add(const std::string& tok) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(tokens.size());
    tokens.push_back(tok);
    index.emplace(tok, id);
    return id;
  }
};

// Vocabulary from the training split only, insertion-ordered for determinism.
inline Vocab build_vocab(std::span<const Document> train, size_t min_count = 1) {
  std::unordered_map<std::string, size_t> counts;
  for (const Document& d : train)
    for (const std::string& t : d.tokens) ++counts[t];
  Vocab v;
  for (const Document& d : train)
    for (const std::string& t : d.tokens)
      if (counts[t] >= min_count && !v.index.count(t)) v.add(t);
  return v;
}

// Fixed-length id sequence: truncate past seq_len, pad the rest.
inline std::vector<int> encode(const Vocab& v, const Document& d, size_t seq_len) {
  std::vector<int> out(seq_len, Vocab::kPad);
  const size_t n = std::min(d.tokens.size(), seq_len);
  for (size_t i = 0; i < n; ++i) out[i] = v.id(d.tokens[i]);
  return out;
}

// One document per line: "label<TAB>text". Labels are non-negative ints.
inline std::vector<Document> parse_corpus(std::istream& in) {
  std::vector<Document> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "corpus line " + std::to_string(lineno);
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(where + ": missing tab after label");
    const std::string label_str = line.substr(0, tab);
    int label = 0;
    try {
      size_t used = 0;
      label = std::stoi(label_str, &used);
      if (used != label_str.size()) throw std::invalid_argument(label_str);
    } catch (const std::exception&) {
      throw DataError(where + ": bad label '" + label_str + "'");
    }
    if (label < 0) throw DataError(where + ": negative label");
    Document d;
    d.label = label;
    d.tokens = tokenize(line.substr(tab + 1));
    if (d.tokens.empty()) throw DataError(where + ": empty document");
    out.push_back(std::move(d));
  }
  if (out.empty()) throw DataError("corpus: no documents");
  return out;
}

inline std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  return parse_corpus(f);
}

inline void write_corpus(std::ostream& os, std::span<const Document> docs) {
  for (const Document& d : docs) {
    os << d.label << "\t";
    for (size_t i = 0; i < d.tokens.size(); ++i) os << (i ? " " : "") << d.tokens[i];
    os << "\n";
  }
}

// One token per line, in id order. The two reserved rows come first.
inline void write_vocab(std::ostream& os, const Vocab& v) {
  os << "anchornet-vocab v1\n";
  for (const std::string& t : v.tokens) os << t << "\n";
}

inline Vocab parse_vocab(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "anchornet-vocab v1")
    throw DataError("vocab: bad header");
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.size() < 2 || rows[0] != "<unk>" || rows[1] != "<pad>")
    throw DataError("vocab: reserved rows missing");
  Vocab v;
  for (size_t i = 2; i < rows.size(); ++i) {
    if (v.index.count(rows[i])) throw DataError("vocab: duplicate token '" + rows[i] + "'");
    v.add(rows[i]);
  }
  return v;
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  return parse_vocab(f);
}

struct SplitCorpus {
  std::vector<Document> train, val, test;
};

// Seeded shuffle, then contiguous train/val/test slices.
inline SplitCorpus split_corpus(std::vector<Document> docs, uint64_t seed,
                                double train_frac = 0.8, double val_frac = 0.1) {
  if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
    throw std::invalid_argument("split: fractions must satisfy 0 < train, 0 <= val, sum <= 1");
  Rng rng(seed);
  rng.shuffle(docs);
  const size_t n = docs.size();
  const size_t n_train = static_cast<size_t>(static_cast<double>(n) * train_frac);
  const size_t n_val = static_cast<size_t>(static_cast<double>(n) * val_frac);
  if (n_train == 0) throw DataError("split: empty training set");
  SplitCorpus out;
  out.train.assign(docs.begin(), docs.begin() + n_train);
  out.val.assign(docs.begin() + n_train, docs.begin() + n_train + n_val);
  out.test.assign(docs.begin() + n_train + n_val, docs.end());
  return out;
}

// Synthetic classification corpus where each document is filler tokens with
// one class-specific trigram planted at a random position. The filler and
// signature vocabularies are disjoint, so the trigram alone carries the label
// and a correct localizer must land on it.
struct SyntheticSpec {
  size_t num_classes = 4;
  size_t n_docs = 2500;
  size_t seq_len = 20;
  size_t filler_vocab = 200;
  uint64_t seed = 1;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("synthetic: num_classes must be >= 2");
    if (seq_len < 3) throw std::invalid_argument("synthetic: seq_len must fit a trigram");
    if (filler_vocab < 1) throw std::invalid_argument("synthetic: empty filler vocabulary");
    if (n_docs < num_classes) throw std::invalid_argument("synthetic: fewer docs than classes");
  }
};

inline std::vector<std::string> planted_trigram(size_t cls) {
  const std::string base = "sig" + std::to_string(cls);
  return {base + "a", base + "b", base + "c"};
}

inline std::vector<Document> make_planted_corpus(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Document> out;
  out.reserve(spec.n_docs);
  for (size_t i = 0; i < spec.n_docs; ++i) {
    const size_t cls = i % spec.num_classes;
    Document d;
    d.label = static_cast<int>(cls);
    d.tokens.resize(spec.seq_len);
    for (std::string& t : d.tokens)
      t = "w" + std::to_string(rng.uniform_int(0, static_cast<int64_t>(spec.filler_vocab) - 1));
    const int start = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(spec.seq_len) - 3));
    const auto tri = planted_trigram(cls);
    for (int k = 0; k < 3; ++k) d.tokens[static_cast<size_t>(start + k)] = tri[static_cast<size_t>(k)];
    d.plant_start = start;
    d.plant_len = 3;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace anchornet
