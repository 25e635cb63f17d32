#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchornet/errors.hpp"

namespace anchornet {

struct Size2 {
  int h = 0;
  int w = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

struct Loc {
  int row = 0;
  int col = 0;
};

// Geometry of one convolution layer. 1D stacks keep the height dimension
// fixed at 1 and put the spatial extent in the width slot.
struct LayerGeom {
  Size2 kernel{1, 1};
  Size2 stride{1, 1};
  Size2 padding{0, 0};

  void validate() const {
    if (kernel.h < 1 || kernel.w < 1) throw std::invalid_argument("kernel must be >= 1");
    if (stride.h < 1 || stride.w < 1) throw std::invalid_argument("stride must be >= 1");
    if (padding.h < 0 || padding.w < 0) throw std::invalid_argument("padding must be >= 0");
  }
};

inline LayerGeom conv2d_geom(int k, int s, int p = 0) { return {{k, k}, {s, s}, {p, p}}; }
inline LayerGeom conv1d_geom(int k, int s = 1, int p = 0) { return {{1, k}, {1, s}, {0, p}}; }

// Accumulated geometry of a layer stack. `offset` is the input-space shift of
// the first output location's window; it stays 0 for zero-padding stacks.
struct RFSummary {
  Size2 rf{1, 1};
  Size2 jump{1, 1};
  Size2 offset{0, 0};
  int n_layers = 0;
  bool sized = false;
  Size2 in_size{0, 0};
  Size2 out_size{0, 0};
};

// A concrete input-space rectangle. 1D spans use top=0, height=1.
struct PatchRect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  friend bool operator==(const PatchRect&, const PatchRect&) = default;
  long long area() const { return static_cast<long long>(height) * width; }
};

// Output extent of one convolution along one dimension.
inline int conv_out_dim(int in, int kernel, int stride, int padding) {
  const int padded = in + 2 * padding;
  if (padded < kernel) {
    throw GeometryError("input extent " + std::to_string(in) + " (+2*" +
                        std::to_string(padding) + " padding) smaller than kernel " +
                        std::to_string(kernel));
  }
  return (padded - kernel) / stride + 1;
}

// rf' = rf + (k-1)*jump, jump' = jump*stride, offset' = offset + p*jump,
// folded over the stack in input->output order.
inline RFSummary compose(std::span<const LayerGeom> layers) {
  if (layers.empty()) throw std::invalid_argument("compose: empty layer stack");
  RFSummary s;
  for (const LayerGeom& l : layers) {
    l.validate();
    s.rf.h += (l.kernel.h - 1) * s.jump.h;
    s.rf.w += (l.kernel.w - 1) * s.jump.w;
    s.offset.h += l.padding.h * s.jump.h;
    s.offset.w += l.padding.w * s.jump.w;
    s.jump.h *= l.stride.h;
    s.jump.w *= l.stride.w;
    ++s.n_layers;
  }
  return s;
}

// Per-layer output sizes for a given input, matching the tables' IR column
// read top to bottom. Throws GeometryError naming the offending layer.
inline std::vector<Size2> layer_sizes(Size2 in_size, std::span<const LayerGeom> layers) {
  std::vector<Size2> sizes;
  sizes.reserve(layers.size());
  Size2 cur = in_size;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerGeom& l = layers[i];
    l.validate();
    try {
      cur.h = conv_out_dim(cur.h, l.kernel.h, l.stride.h, l.padding.h);
      cur.w = conv_out_dim(cur.w, l.kernel.w, l.stride.w, l.padding.w);
    } catch (const GeometryError& e) {
      throw GeometryError("layer " + std::to_string(i) + ": " + e.what());
    }
    sizes.push_back(cur);
  }
  return sizes;
}

inline Size2 output_size(Size2 in_size, std::span<const LayerGeom> layers) {
  if (layers.empty()) throw std::invalid_argument("output_size: empty layer stack");
  return layer_sizes(in_size, layers).back();
}

inline RFSummary compose(std::span<const LayerGeom> layers, Size2 in_size) {
  RFSummary s = compose(layers);
  s.sized = true;
  s.in_size = in_size;
  s.out_size = output_size(in_size, layers);
  return s;
}

// Number of mappable patches per dimension: floor((in - rf)/jump) + 1.
inline Size2 patch_grid(Size2 in_size, Size2 rf, Size2 jump) {
  if (in_size.h < rf.h || in_size.w < rf.w) {
    throw GeometryError("input " + std::to_string(in_size.h) + "x" + std::to_string(in_size.w) +
                        " smaller than receptive field " + std::to_string(rf.h) + "x" +
                        std::to_string(rf.w));
  }
  return {(in_size.h - rf.h) / jump.h + 1, (in_size.w - rf.w) / jump.w + 1};
}

// Exact patch behind one output location. Only zero-padding stacks qualify:
// any geometry whose windows can exit the input is refused, never clamped.
inline PatchRect map_location(Loc loc, const RFSummary& s) {
  if (!s.sized) throw std::invalid_argument("map_location: summary carries no input size");
  if (s.offset.h != 0 || s.offset.w != 0) {
    throw GeometryError("map_location: padded stack maps windows outside the input");
  }
  if (loc.row < 0 || loc.row >= s.out_size.h || loc.col < 0 || loc.col >= s.out_size.w) {
    throw std::invalid_argument("map_location: location (" + std::to_string(loc.row) + "," +
                                std::to_string(loc.col) + ") outside output grid " +
                                std::to_string(s.out_size.h) + "x" + std::to_string(s.out_size.w));
  }
  PatchRect r{loc.row * s.jump.h, loc.col * s.jump.w, s.rf.h, s.rf.w};
  if (r.top + r.height > s.in_size.h || r.left + r.width > s.in_size.w) {
    throw GeometryError("map_location: window exits the input bounds");
  }
  return r;
}

}  // namespace anchornet
