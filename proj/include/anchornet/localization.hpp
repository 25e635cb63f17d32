#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "anchornet/errors.hpp"
#include "anchornet/model.hpp"
#include "anchornet/rf_calculus.hpp"

namespace anchornet {

// Score grid over the output locations of one branch, together with the
// geometry needed to map any cell back to its input patch.
struct Heatmap {
  int branch = -1;
  int cls = -1;
  Size2 in_size{0, 0};
  Size2 rf{1, 1};
  Size2 jump{1, 1};
  Size2 shape{0, 0};
  std::vector<double> values;  // row-major, shape.h * shape.w

  double at(int r, int c) const { return values[static_cast<size_t>(r) * shape.w + c]; }

  void validate() const {
    if (shape.h < 1 || shape.w < 1) throw std::invalid_argument("heatmap: empty grid");
    if (values.size() != static_cast<size_t>(shape.h) * shape.w)
      throw std::invalid_argument("heatmap: " + std::to_string(values.size()) +
                                  " values for grid " + std::to_string(shape.h) + "x" +
                                  std::to_string(shape.w));
    if (jump.h < 1 || jump.w < 1) throw std::invalid_argument("heatmap: jump must be >= 1");
    if (rf.h < 1 || rf.w < 1) throw std::invalid_argument("heatmap: rf must be >= 1");
    const long long bottom = static_cast<long long>(shape.h - 1) * jump.h + rf.h;
    const long long right = static_cast<long long>(shape.w - 1) * jump.w + rf.w;
    if (bottom > in_size.h || right > in_size.w)
      throw GeometryError("heatmap: grid maps outside the " + std::to_string(in_size.h) + "x" +
                          std::to_string(in_size.w) + " input");
    for (double v : values)
      if (!std::isfinite(v)) throw NumericalError("heatmap: non-finite score");
  }

  PatchRect rect_at(Loc loc) const {
    return {loc.row * jump.h, loc.col * jump.w, rf.h, rf.w};
  }
};

// Exact intersection-over-union of two pixel rectangles.
inline double iou(const PatchRect& a, const PatchRect& b) {
  if (a.height < 1 || a.width < 1 || b.height < 1 || b.width < 1)
    throw std::invalid_argument("iou: degenerate rectangle");
  const int top = std::max(a.top, b.top);
  const int left = std::max(a.left, b.left);
  const int bottom = std::min(a.top + a.height, b.top + b.height);
  const int right = std::min(a.left + a.width, b.left + b.width);
  const long long ih = std::max(0, bottom - top);
  const long long iw = std::max(0, right - left);
  const long long inter = ih * iw;
  const long long uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct LipParams {
  int max_patches = 1;   // K: hard cap on selected patches
  double overlap = 0.5;  // T: candidate admitted only if IoU < T against all members
  double visit_frac = 0.3;  // P: fraction of grid cells examined, highest first

  void validate() const {
    if (max_patches < 1) throw std::invalid_argument("lip: max_patches must be >= 1");
    if (!(overlap >= 0.0 && overlap <= 1.0))
      throw std::invalid_argument("lip: overlap threshold outside [0,1]");
    if (!(visit_frac >= 0.0 && visit_frac <= 1.0))
      throw std::invalid_argument("lip: visit fraction outside [0,1]");
  }
};

struct AnchorPatch {
  Loc loc;
  PatchRect rect;
  double score = 0.0;
};

struct LipResult {
  std::vector<AnchorPatch> patches;
  size_t visited = 0;  // cells examined, seed included
  size_t budget = 0;   // cells allowed by visit_frac
};

// Greedy low-overlap patch selection. Cells are ranked by score (ties in
// row-major order); the top cell seeds the set, and each further cell within
// the visit budget joins unless it overlaps an already-selected patch at
// IoU >= overlap. Stops at max_patches.
inline LipResult lip(const Heatmap& hm, const LipParams& p) {
  hm.validate();
  p.validate();
  const size_t n = hm.values.size();
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](uint32_t a, uint32_t b) { return hm.values[a] > hm.values[b]; });

  const double want = std::ceil(static_cast<double>(n) * p.visit_frac);
  const size_t budget = std::clamp<size_t>(static_cast<size_t>(want), 1, n);

  LipResult out;
  out.budget = budget;
  auto patch_at = [&](uint32_t flat) {
    Loc loc{static_cast<int>(flat) / hm.shape.w, static_cast<int>(flat) % hm.shape.w};
    return AnchorPatch{loc, hm.rect_at(loc), hm.values[flat]};
  };

  for (size_t i = 0; i < budget; ++i) {
    ++out.visited;
    AnchorPatch cand = patch_at(order[i]);
    bool ok = true;
    for (const AnchorPatch& m : out.patches) {
      if (!(iou(cand.rect, m.rect) < p.overlap)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      out.patches.push_back(cand);
      if (out.patches.size() == static_cast<size_t>(p.max_patches)) break;
    }
  }
  return out;
}

// Consensus class across branches: the label predicted by two or more branches
// wins; with no such agreement the single most confident branch decides. Ties
// fall to the lower label / lower branch index.
inline size_t decide_class(std::span<const BranchPrediction> preds) {
  if (preds.empty()) throw std::invalid_argument("decide_class: no predictions");
  size_t max_label = 0;
  for (const BranchPrediction& p : preds) max_label = std::max(max_label, p.label);
  std::vector<int> count(max_label + 1, 0);
  for (const BranchPrediction& p : preds) ++count[p.label];
  const int top = *std::max_element(count.begin(), count.end());
  if (top >= 2) {
    size_t best_label = 0;
    double best_conf = -1.0;
    for (size_t lbl = 0; lbl <= max_label; ++lbl) {
      if (count[lbl] != top) continue;
      double conf = -1.0;
      for (const BranchPrediction& p : preds)
        if (p.label == lbl) conf = std::max(conf, p.confidence);
      if (conf > best_conf) {
        best_conf = conf;
        best_label = lbl;
      }
    }
    return best_label;
  }
  size_t best = 0;
  for (size_t j = 1; j < preds.size(); ++j)
    if (preds[j].confidence > preds[best].confidence) best = j;
  return preds[best].label;
}

// Among the branches that voted for `label`, the most confident one (lowest
// index on ties). The label must come from decide_class on the same list.
inline size_t select_branch(std::span<const BranchPrediction> preds, size_t label) {
  size_t best = preds.size();
  for (size_t j = 0; j < preds.size(); ++j) {
    if (preds[j].label != label) continue;
    if (best == preds.size() || preds[j].confidence > preds[best].confidence) best = j;
  }
  if (best == preds.size())
    throw std::invalid_argument("select_branch: no branch predicted label " +
                                std::to_string(label));
  return best;
}

// Highest-scoring cell of the map (row-major on ties) as a patch.
inline AnchorPatch top_patch(const Heatmap& hm) {
  hm.validate();
  size_t best = 0;
  for (size_t i = 1; i < hm.values.size(); ++i)
    if (hm.values[i] > hm.values[best]) best = i;
  Loc loc{static_cast<int>(best) / hm.shape.w, static_cast<int>(best) % hm.shape.w};
  return {loc, hm.rect_at(loc), hm.values[best]};
}

// Exact union area of a patch set inside an image, by marking pixels.
inline long long covered_area(std::span<const AnchorPatch> patches, Size2 in_size) {
  if (in_size.h < 1 || in_size.w < 1) throw std::invalid_argument("covered_area: empty image");
  std::vector<uint8_t> mark(static_cast<size_t>(in_size.h) * in_size.w, 0);
  for (const AnchorPatch& p : patches) {
    const PatchRect& r = p.rect;
    if (r.top < 0 || r.left < 0 || r.top + r.height > in_size.h || r.left + r.width > in_size.w)
      throw GeometryError("covered_area: patch exits the image");
    for (int y = r.top; y < r.top + r.height; ++y)
      for (int x = r.left; x < r.left + r.width; ++x)
        mark[static_cast<size_t>(y) * in_size.w + x] = 1;
  }
  long long n = 0;
  for (uint8_t m : mark) n += m;
  return n;
}

// Row-major 2D grid of arbitrary cell type, for cropping and masking inputs.
template <typename T>
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<T> cells;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), cells(static_cast<size_t>(h_) * w_, fill) {
    if (h_ < 1 || w_ < 1) throw std::invalid_argument("grid: dimensions must be >= 1");
  }
  T& at(int r, int c) { return cells[static_cast<size_t>(r) * w + c]; }
  const T& at(int r, int c) const { return cells[static_cast<size_t>(r) * w + c]; }
};

template <typename T>
Grid<T> extract_patch(const Grid<T>& g, const PatchRect& r) {
  if (r.top < 0 || r.left < 0 || r.top + r.height > g.h || r.left + r.width > g.w)
    throw GeometryError("extract_patch: rectangle exits the grid");
  Grid<T> out(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) out.at(y, x) = g.at(r.top + y, r.left + x);
  return out;
}

template <typename T>
void mask_patch(Grid<T>& g, const PatchRect& r, T fill) {
  if (r.top < 0 || r.left < 0 || r.top + r.height > g.h || r.left + r.width > g.w)
    throw GeometryError("mask_patch: rectangle exits the grid");
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) g.at(r.top + y, r.left + x) = fill;
}

}  // namespace anchornet
