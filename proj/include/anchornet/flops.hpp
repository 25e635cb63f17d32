#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anchornet/errors.hpp"
#include "anchornet/rf_calculus.hpp"

namespace anchornet {

// Cost model: one multiply-accumulate counts as two flops; nonlinearities,
// pooling, and softmax count one flop per output element.
enum class OpKind { Conv2D, Conv1D, FC, MaxPool, AvgPool, GlobalAvgPool, Act, Softmax };

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Conv2D: return "conv2d";
    case OpKind::Conv1D: return "conv1d";
    case OpKind::FC: return "fc";
    case OpKind::MaxPool: return "maxpool";
    case OpKind::AvgPool: return "avgpool";
    case OpKind::GlobalAvgPool: return "gap";
    case OpKind::Act: return "act";
    case OpKind::Softmax: return "softmax";
  }
  return "?";
}

// One costed layer. `parallel` marks residual-style side paths (projection
// shortcuts): costed at the current spatial size but not advancing the chain.
struct StackLayer {
  std::string name;
  OpKind kind = OpKind::Conv2D;
  Size2 kernel{1, 1};
  Size2 stride{1, 1};
  Size2 padding{0, 0};
  long long in_ch = 1;
  long long out_ch = 1;
  long long groups = 1;
  bool parallel = false;

  void validate() const {
    if (kernel.h < 1 || kernel.w < 1 || stride.h < 1 || stride.w < 1)
      throw std::invalid_argument(name + ": kernel and stride must be >= 1");
    if (padding.h < 0 || padding.w < 0)
      throw std::invalid_argument(name + ": padding must be >= 0");
    if (in_ch < 1 || out_ch < 1 || groups < 1)
      throw std::invalid_argument(name + ": channels and groups must be >= 1");
    if (in_ch % groups != 0)
      throw std::invalid_argument(name + ": groups must divide input channels");
    const bool keeps_ch = kind == OpKind::MaxPool || kind == OpKind::AvgPool ||
                          kind == OpKind::GlobalAvgPool || kind == OpKind::Act ||
                          kind == OpKind::Softmax;
    if (keeps_ch && in_ch != out_ch)
      throw std::invalid_argument(name + ": op cannot change channel count");
  }
};

struct LayerCost {
  std::string name;
  OpKind kind = OpKind::Conv2D;
  Size2 out_size{0, 0};
  long long out_ch = 0;
  long long macs = 0;
  long long flops = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  Size2 in_size{0, 0};
  Size2 out_size{0, 0};
  long long total_macs = 0;
  long long total_flops = 0;
};

// Walks the stack at a concrete input size, costing every layer. Spatial
// chaining is geometric only; channel counts are taken from each layer.
inline CostReport model_flops(std::span<const StackLayer> stack, Size2 in_size) {
  if (stack.empty()) throw std::invalid_argument("model_flops: empty stack");
  if (in_size.h < 1 || in_size.w < 1) throw std::invalid_argument("model_flops: empty input");
  CostReport rep;
  rep.in_size = in_size;
  Size2 cur = in_size;
  for (const StackLayer& l : stack) {
    l.validate();
    LayerCost c;
    c.name = l.name;
    c.kind = l.kind;
    c.out_ch = l.out_ch;
    Size2 out = cur;
    switch (l.kind) {
      case OpKind::Conv2D:
      case OpKind::Conv1D:
      case OpKind::MaxPool:
      case OpKind::AvgPool:
        try {
          out.h = conv_out_dim(cur.h, l.kernel.h, l.stride.h, l.padding.h);
          out.w = conv_out_dim(cur.w, l.kernel.w, l.stride.w, l.padding.w);
        } catch (const GeometryError& e) {
          throw GeometryError(l.name + ": " + e.what());
        }
        break;
      case OpKind::GlobalAvgPool:
        out = {1, 1};
        break;
      case OpKind::FC:
        if (cur.h != 1 || cur.w != 1)
          throw GeometryError(l.name + ": fc expects 1x1 spatial input, got " +
                              std::to_string(cur.h) + "x" + std::to_string(cur.w));
        out = {1, 1};
        break;
      case OpKind::Act:
      case OpKind::Softmax:
        break;
    }
    c.out_size = out;
    const long long elems = static_cast<long long>(out.h) * out.w * l.out_ch;
    switch (l.kind) {
      case OpKind::Conv2D:
      case OpKind::Conv1D:
        c.macs = elems * (l.in_ch / l.groups) * l.kernel.h * l.kernel.w;
        c.flops = 2 * c.macs;
        break;
      case OpKind::FC:
        c.macs = l.in_ch * l.out_ch;
        c.flops = 2 * c.macs;
        break;
      case OpKind::MaxPool:
      case OpKind::AvgPool:
      case OpKind::GlobalAvgPool:
      case OpKind::Act:
      case OpKind::Softmax:
        c.macs = 0;
        c.flops = elems;
        break;
    }
    rep.layers.push_back(c);
    rep.total_macs += c.macs;
    rep.total_flops += c.flops;
    if (!l.parallel) cur = out;
  }
  rep.out_size = cur;
  return rep;
}

// Geometry view of the stack's serial trunk, for receptive-field analysis.
// Stops at the first layer with no fixed window (global pool or fc).
inline std::vector<LayerGeom> stack_geoms(std::span<const StackLayer> stack) {
  std::vector<LayerGeom> out;
  for (const StackLayer& l : stack) {
    if (l.parallel) continue;
    if (l.kind == OpKind::GlobalAvgPool || l.kind == OpKind::FC) break;
    if (l.kind == OpKind::Act || l.kind == OpKind::Softmax) continue;
    out.push_back(LayerGeom{l.kernel, l.stride, l.padding});
  }
  if (out.empty()) throw std::invalid_argument("stack_geoms: no windowed layers");
  return out;
}

// Workload observed for one branch of the patch pipeline: how many images it
// handled, the mean patches per image, and the patch size it feeds downstream.
struct BranchStats {
  std::string tag;
  long long images = 0;
  double mean_patches = 0.0;
  Size2 patch{0, 0};
};

struct BranchRatio {
  std::string tag;
  long long images = 0;
  double mean_patches = 0.0;
  long long patch_flops = 0;
  double ratio = 0.0;
};

struct RatioReport {
  long long full_flops = 0;
  long long upstream_flops = 0;
  std::vector<BranchRatio> branches;
  double overall = 0.0;
};

// Patch-pipeline cost relative to full-input cost, per branch and overall.
// ratio_j = (upstream + mean_patches_j * flops(patch_j)) / flops(full);
// overall is the image-count-weighted mean over branches.
inline RatioReport pipeline_ratio(std::span<const StackLayer> stack, Size2 full_in,
                                  std::span<const BranchStats> branches,
                                  long long upstream_flops = 0) {
  if (branches.empty()) throw std::invalid_argument("pipeline_ratio: no branches");
  if (upstream_flops < 0) throw std::invalid_argument("pipeline_ratio: upstream must be >= 0");
  RatioReport rep;
  rep.full_flops = model_flops(stack, full_in).total_flops;
  rep.upstream_flops = upstream_flops;
  long long total_images = 0;
  double weighted = 0.0;
  for (const BranchStats& b : branches) {
    if (b.images < 0) throw std::invalid_argument("pipeline_ratio: negative image count");
    if (b.mean_patches < 0.0)
      throw std::invalid_argument("pipeline_ratio: negative patch count");
    BranchRatio r;
    r.tag = b.tag;
    r.images = b.images;
    r.mean_patches = b.mean_patches;
    r.patch_flops = model_flops(stack, b.patch).total_flops;
    r.ratio = (static_cast<double>(upstream_flops) +
               b.mean_patches * static_cast<double>(r.patch_flops)) /
              static_cast<double>(rep.full_flops);
    weighted += static_cast<double>(b.images) * r.ratio;
    total_images += b.images;
    rep.branches.push_back(std::move(r));
  }
  if (total_images <= 0) throw std::invalid_argument("pipeline_ratio: no images");
  rep.overall = weighted / static_cast<double>(total_images);
  return rep;
}

}  // namespace anchornet
