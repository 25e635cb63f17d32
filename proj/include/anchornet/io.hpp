#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "anchornet/errors.hpp"
#include "anchornet/flops.hpp"
#include "anchornet/localization.hpp"
#include "anchornet/model.hpp"
#include "anchornet/tensor.hpp"

namespace anchornet {

// ---------------------------------------------------------------------------
// Small parsing helpers shared by the text formats. Every failure is a
// DataError naming the line.

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline long long to_int(const std::string& s, const std::string& where) {
  try {
    size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad integer '" + s + "'");
  }
}

inline double to_double(const std::string& s, const std::string& where) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad number '" + s + "'");
  }
}

// "7", "7x7" or "1x59".
inline Size2 to_size(const std::string& s, const std::string& where) {
  const size_t x = s.find('x');
  if (x == std::string::npos) {
    const int v = static_cast<int>(to_int(s, where));
    return {v, v};
  }
  return {static_cast<int>(to_int(s.substr(0, x), where)),
          static_cast<int>(to_int(s.substr(x + 1), where))};
}

// key=value pairs from already-split tokens.
inline std::map<std::string, std::string> kv_pairs(const std::vector<std::string>& toks,
                                                   size_t from, const std::string& where) {
  std::map<std::string, std::string> out;
  for (size_t i = from; i < toks.size(); ++i) {
    const size_t eq = toks[i].find('=');
    if (eq == std::string::npos || eq == 0)
      throw DataError(where + ": expected key=value, got '" + toks[i] + "'");
    out[toks[i].substr(0, eq)] = toks[i].substr(eq + 1);
  }
  return out;
}

inline std::string need(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& where) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError(where + ": missing " + key + "=");
  return it->second;
}

inline void expect_header(std::istream& in, const std::string& magic) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input, expected '" + magic + "'");
  if (line != magic) throw DataError("bad header '" + line + "', expected '" + magic + "'");
}

inline bool skippable(const std::string& line) {
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) return c == '#';
  return true;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layer stacks: "anchornet-stack v1"
//   layer name=conv1 op=conv2d kernel=7x7 stride=2 padding=3 in=3 out=64
//   layer name=res2a.proj op=conv2d kernel=1 in=64 out=256 parallel=1

inline std::vector<StackLayer> parse_stack(std::istream& in) {
  detail::expect_header(in, "anchornet-stack v1");
  std::vector<StackLayer> out;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    const std::string where = "stack line " + std::to_string(lineno);
    const auto toks = detail::split_ws(line);
    if (toks[0] != "layer") throw DataError(where + ": expected 'layer'");
    const auto kv = detail::kv_pairs(toks, 1, where);
    StackLayer l;
    l.name = detail::need(kv, "name", where);
    const std::string op = detail::need(kv, "op", where);
    if (op == "conv2d")
      l.kind = OpKind::Conv2D;
    else if (op == "conv1d")
      l.kind = OpKind::Conv1D;
    else if (op == "fc")
      l.kind = OpKind::FC;
    else if (op == "maxpool")
      l.kind = OpKind::MaxPool;
    else if (op == "avgpool")
      l.kind = OpKind::AvgPool;
    else if (op == "gap")
      l.kind = OpKind::GlobalAvgPool;
    else if (op == "act")
      l.kind = OpKind::Act;
    else if (op == "softmax")
      l.kind = OpKind::Softmax;
    else
      throw DataError(where + ": unknown op '" + op + "'");
    if (kv.count("kernel")) l.kernel = detail::to_size(kv.at("kernel"), where);
    if (kv.count("stride")) l.stride = detail::to_size(kv.at("stride"), where);
    if (kv.count("padding")) l.padding = detail::to_size(kv.at("padding"), where);
    l.in_ch = detail::to_int(detail::need(kv, "in", where), where);
    l.out_ch = detail::to_int(detail::need(kv, "out", where), where);
    if (kv.count("groups")) l.groups = detail::to_int(kv.at("groups"), where);
    if (kv.count("parallel")) l.parallel = detail::to_int(kv.at("parallel"), where) != 0;
    try {
      l.validate();
    } catch (const std::invalid_argument& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(std::move(l));
  }
  if (out.empty()) throw DataError("stack: no layers");
  return out;
}

inline void write_stack(std::ostream& os, std::span<const StackLayer> stack) {
  os << "anchornet-stack v1\n";
  for (const StackLayer& l : stack) {
    os << "layer name=" << l.name << " op=" << op_name(l.kind);
    os << " kernel=" << l.kernel.h << "x" << l.kernel.w;
    os << " stride=" << l.stride.h << "x" << l.stride.w;
    os << " padding=" << l.padding.h << "x" << l.padding.w;
    os << " in=" << l.in_ch << " out=" << l.out_ch;
    if (l.groups != 1) os << " groups=" << l.groups;
    if (l.parallel) os << " parallel=1";
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Branch workload stats: "anchornet-stats v1"
//   full 224x224
//   upstream_flops 0
//   branch tag=b63 images=15050 mean_patches=5.6 patch=63x63

struct PipelineStats {
  Size2 full{0, 0};
  long long upstream_flops = 0;
  std::vector<BranchStats> branches;
};

inline PipelineStats parse_stats(std::istream& in) {
  detail::expect_header(in, "anchornet-stats v1");
  PipelineStats st;
  bool have_full = false;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    const std::string where = "stats line " + std::to_string(lineno);
    const auto toks = detail::split_ws(line);
    if (toks[0] == "full") {
      if (toks.size() != 2) throw DataError(where + ": expected 'full HxW'");
      st.full = detail::to_size(toks[1], where);
      have_full = true;
    } else if (toks[0] == "upstream_flops") {
      if (toks.size() != 2) throw DataError(where + ": expected 'upstream_flops N'");
      st.upstream_flops = detail::to_int(toks[1], where);
    } else if (toks[0] == "branch") {
      const auto kv = detail::kv_pairs(toks, 1, where);
      BranchStats b;
      b.tag = detail::need(kv, "tag", where);
      b.images = detail::to_int(detail::need(kv, "images", where), where);
      b.mean_patches = detail::to_double(detail::need(kv, "mean_patches", where), where);
      b.patch = detail::to_size(detail::need(kv, "patch", where), where);
      st.branches.push_back(std::move(b));
    } else {
      throw DataError(where + ": unknown directive '" + toks[0] + "'");
    }
  }
  if (!have_full) throw DataError("stats: missing 'full' line");
  if (st.branches.empty()) throw DataError("stats: no branches");
  return st;
}

// ---------------------------------------------------------------------------
// Heatmaps: "anchornet-heatmap v1"
//   branch 0 / class 2 / in 224x224 / rf 63x63 / jump 8x8 / shape 21x21
//   row v1 .. vW   (shape.h rows)

inline Heatmap parse_heatmap(std::istream& in) {
  detail::expect_header(in, "anchornet-heatmap v1");
  Heatmap hm;
  bool have_shape = false;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    const std::string where = "heatmap line " + std::to_string(lineno);
    const auto toks = detail::split_ws(line);
    if (toks[0] == "row") {
      if (!have_shape) throw DataError(where + ": row before shape");
      if (toks.size() != static_cast<size_t>(hm.shape.w) + 1)
        throw DataError(where + ": expected " + std::to_string(hm.shape.w) + " values, got " +
                        std::to_string(toks.size() - 1));
      for (size_t i = 1; i < toks.size(); ++i)
        hm.values.push_back(detail::to_double(toks[i], where));
      continue;
    }
    if (toks.size() != 2) throw DataError(where + ": expected 'key value'");
    if (toks[0] == "branch")
      hm.branch = static_cast<int>(detail::to_int(toks[1], where));
    else if (toks[0] == "class")
      hm.cls = static_cast<int>(detail::to_int(toks[1], where));
    else if (toks[0] == "in")
      hm.in_size = detail::to_size(toks[1], where);
    else if (toks[0] == "rf")
      hm.rf = detail::to_size(toks[1], where);
    else if (toks[0] == "jump")
      hm.jump = detail::to_size(toks[1], where);
    else if (toks[0] == "shape") {
      hm.shape = detail::to_size(toks[1], where);
      have_shape = true;
    } else {
      throw DataError(where + ": unknown key '" + toks[0] + "'");
    }
  }
  try {
    hm.validate();
  } catch (const std::exception& e) {
    throw DataError(std::string("heatmap: ") + e.what());
  }
  return hm;
}

inline void write_heatmap(std::ostream& os, const Heatmap& hm) {
  hm.validate();
  os << "anchornet-heatmap v1\n";
  os << "branch " << hm.branch << "\nclass " << hm.cls << "\n";
  os << "in " << hm.in_size.h << "x" << hm.in_size.w << "\n";
  os << "rf " << hm.rf.h << "x" << hm.rf.w << "\n";
  os << "jump " << hm.jump.h << "x" << hm.jump.w << "\n";
  os << "shape " << hm.shape.h << "x" << hm.shape.w << "\n";
  for (int r = 0; r < hm.shape.h; ++r) {
    os << "row";
    for (int c = 0; c < hm.shape.w; ++c) os << " " << detail::fmt(hm.at(r, c));
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Selected patches: "anchornet-patches v1"

inline void write_patches(std::ostream& os, const LipResult& res, Size2 in_size) {
  os << "anchornet-patches v1\n";
  os << "in " << in_size.h << "x" << in_size.w << "\n";
  os << "visited " << res.visited << " of " << res.budget << "\n";
  for (const AnchorPatch& p : res.patches) {
    os << "patch row=" << p.loc.row << " col=" << p.loc.col << " top=" << p.rect.top
       << " left=" << p.rect.left << " height=" << p.rect.height << " width=" << p.rect.width
       << " score=" << detail::fmt(p.score) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Per-document localization records: "anchornet-records v1"
//   record doc=0 label=1 gamma=1 theta=0 start=4 length=3 y=1 p=0.87

struct LocalizationRecord {
  long long doc = 0;
  int label = -1;    // gold label, -1 when unknown
  size_t gamma = 0;  // consensus class across branches
  size_t theta = 0;  // branch whose patch was taken
  int start = 0;     // token span of the patch
  int length = 0;
  size_t y = 0;  // downstream prediction on the patch
  double p = 0.0;
};

inline void write_records(std::ostream& os, std::span<const LocalizationRecord> recs) {
  os << "anchornet-records v1\n";
  for (const LocalizationRecord& r : recs) {
    os << "record doc=" << r.doc << " label=" << r.label << " gamma=" << r.gamma
       << " theta=" << r.theta << " start=" << r.start << " length=" << r.length << " y=" << r.y
       << " p=" << detail::fmt(r.p) << "\n";
  }
}

inline std::vector<LocalizationRecord> parse_records(std::istream& in) {
  detail::expect_header(in, "anchornet-records v1");
  std::vector<LocalizationRecord> out;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    const std::string where = "records line " + std::to_string(lineno);
    const auto toks = detail::split_ws(line);
    if (toks[0] != "record") throw DataError(where + ": expected 'record'");
    const auto kv = detail::kv_pairs(toks, 1, where);
    LocalizationRecord r;
    r.doc = detail::to_int(detail::need(kv, "doc", where), where);
    r.label = static_cast<int>(detail::to_int(detail::need(kv, "label", where), where));
    r.gamma = static_cast<size_t>(detail::to_int(detail::need(kv, "gamma", where), where));
    r.theta = static_cast<size_t>(detail::to_int(detail::need(kv, "theta", where), where));
    r.start = static_cast<int>(detail::to_int(detail::need(kv, "start", where), where));
    r.length = static_cast<int>(detail::to_int(detail::need(kv, "length", where), where));
    r.y = static_cast<size_t>(detail::to_int(detail::need(kv, "y", where), where));
    r.p = detail::to_double(detail::need(kv, "p", where), where);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model configuration text, also embedded in checkpoints.

inline std::string serialize_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "vocab_size=" << cfg.vocab_size << "\n";
  os << "embed_dim=" << cfg.embed_dim << "\n";
  os << "head_mid=" << cfg.head_mid << "\n";
  os << "head_out=" << cfg.head_out << "\n";
  os << "branch_filters=" << cfg.branch_filters << "\n";
  os << "attn_dim=" << cfg.attn_dim << "\n";
  os << "num_classes=" << cfg.num_classes << "\n";
  os << "seq_len=" << cfg.seq_len << "\n";
  os << "kernels=";
  for (size_t i = 0; i < cfg.kernels.size(); ++i) os << (i ? "," : "") << cfg.kernels[i];
  os << "\n";
  os << "aux_weight=" << detail::fmt(cfg.aux_weight) << "\n";
  return os.str();
}

inline ModelConfig parse_model_config_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    const std::string where = "model config line " + std::to_string(lineno);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "vocab_size")
      cfg.vocab_size = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "embed_dim")
      cfg.embed_dim = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "head_mid")
      cfg.head_mid = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "head_out")
      cfg.head_out = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "branch_filters")
      cfg.branch_filters = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "attn_dim")
      cfg.attn_dim = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "num_classes")
      cfg.num_classes = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "seq_len")
      cfg.seq_len = static_cast<size_t>(detail::to_int(val, where));
    else if (key == "kernels") {
      cfg.kernels.clear();
      std::istringstream ks(val);
      std::string item;
      while (std::getline(ks, item, ','))
        cfg.kernels.push_back(static_cast<int>(detail::to_int(item, where)));
    } else if (key == "aux_weight")
      cfg.aux_weight = detail::to_double(val, where);
    else
      throw DataError(where + ": unknown key '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Binary checkpoints. Little-endian, FNV-1a 64 checksum over everything
// before the trailing hash:
//   "ANCHCKPT" | u32 version | u32 len + config text | u32 len + meta text |
//   u32 n_tensors | { u16 len + name | u8 ndim | u64 dims... | f64 data... } |
//   u64 fnv1a

namespace detail {

constexpr char kCkptMagic[8] = {'A', 'N', 'C', 'H', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

inline uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct ByteWriter {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf += s;
  }
};

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  void need_bytes(size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint: truncated");
  }
  uint8_t u8() {
    need_bytes(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16() {
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(u8()) << (8 * i);
    return v;
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const uint32_t n = u32();
    need_bytes(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline std::string serialize_checkpoint(const Model& model,
                                        const std::map<std::string, std::string>& meta = {}) {
  detail::ByteWriter w;
  w.raw(detail::kCkptMagic, 8);
  w.u32(detail::kCkptVersion);
  w.text(serialize_model_config(model.config()));
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";
  w.text(meta_text);
  const auto params = model.params();
  w.u32(static_cast<uint32_t>(params.size()));
  for (const Param* p : params) {
    if (p->name.size() > 0xffff) throw DataError("checkpoint: parameter name too long");
    w.u16(static_cast<uint16_t>(p->name.size()));
    w.buf += p->name;
    w.u8(static_cast<uint8_t>(p->value.shape.size()));
    for (size_t d : p->value.shape) w.u64(d);
    for (double v : p->value.data) w.f64(v);
  }
  w.u64(detail::fnv1a(w.buf));
  return w.buf;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 + 4 + 8) throw DataError("checkpoint: truncated");
  if (std::memcmp(bytes.data(), detail::kCkptMagic, 8) != 0)
    throw DataError("checkpoint: bad magic");
  const std::string body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader tail(bytes);
  tail.pos = bytes.size() - 8;
  if (tail.u64() != detail::fnv1a(body)) throw DataError("checkpoint: checksum mismatch");
  detail::ByteReader r(body);
  r.pos = 8;
  const uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config = parse_model_config_text(r.text());
  const std::string meta_text = r.text();
  std::istringstream ms(meta_text);
  std::string line;
  while (std::getline(ms, line)) {
    const size_t eq = line.find('=');
    if (eq != std::string::npos) ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    const uint16_t name_len = r.u16();
    r.need_bytes(name_len);
    std::string name = body.substr(r.pos, name_len);
    r.pos += name_len;
    const uint8_t ndim = r.u8();
    std::vector<size_t> shape(ndim);
    for (uint8_t d = 0; d < ndim; ++d) shape[d] = static_cast<size_t>(r.u64());
    const size_t count = Tensor::count(shape);
    if (count > (1u << 28)) throw DataError("checkpoint: implausible tensor size");
    Tensor t(std::move(shape));
    for (size_t j = 0; j < count; ++j) t.data[j] = r.f64();
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != body.size()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model& model,
                            const std::map<std::string, std::string>& meta = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  const std::string bytes = serialize_checkpoint(model, meta);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

// Rebuilds a model from a checkpoint: construct at the stored config, then
// overwrite every parameter by name. The name sets must match exactly.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model m(ck.config, 0);
  std::vector<Param*> params = m.params();
  if (params.size() != ck.tensors.size())
    throw DataError("checkpoint: holds " + std::to_string(ck.tensors.size()) +
                    " tensors, model has " + std::to_string(params.size()));
  std::map<std::string, Param*> by_name;
  for (Param* p : params) by_name[p->name] = p;
  for (const auto& [name, tensor] : ck.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: unknown tensor '" + name + "'");
    if (it->second->value.shape != tensor.shape)
      throw DataError("checkpoint: tensor '" + name + "' has shape " + tensor.shape_str() +
                      ", model expects " + it->second->value.shape_str());
    if (!tensor.all_finite()) throw DataError("checkpoint: non-finite values in '" + name + "'");
    it->second->value = tensor;
    it->second->zero_grad();
  }
  return m;
}

}  // namespace anchornet
