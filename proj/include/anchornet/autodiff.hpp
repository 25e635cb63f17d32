#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "anchornet/errors.hpp"
#include "anchornet/tensor.hpp"

namespace anchornet {

// A named trainable tensor. Gradients accumulate across backward passes until
// zero_grad, so per-example tapes can build up a batch gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.shape);
  }

  void zero_grad() {
    if (grad.shape != value.shape) grad = Tensor::zeros(value.shape);
    grad.fill(0.0);
  }
};

// Handle into a Tape's node list.
struct Var {
  uint32_t idx = UINT32_C(0xffffffff);
};

// Reverse-mode tape. Forward calls record a closure per node; backward replays
// them last to first. Every op validates shapes and rejects non-finite outputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Tensor& value(Var v) const { return nodes_[v.idx].value; }
  const Tensor& grad(Var v) const { return nodes_[v.idx].grad; }
  size_t size() const { return nodes_.size(); }

  Var leaf(Tensor t) {
    ensure_finite(t, "leaf");
    return push(std::move(t), nullptr, nullptr);
  }

  // Binds the node to `p` so backward adds the node's gradient into p.grad.
  Var param(Param& p) {
    ensure_finite(p.value, p.name.c_str());
    return push(p.value, nullptr, &p);
  }

  // out[t,e] = table[idx[t],e]. Backward scatter-adds into the table rows.
  Var gather_rows(Var table, std::span<const int> idx) {
    const Tensor& tb = val(table);
    need_rank(tb, 2, "gather_rows: table");
    const size_t rows = tb.dim(0), cols = tb.dim(1);
    for (int i : idx) {
      if (i < 0 || static_cast<size_t>(i) >= rows)
        throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                    " outside table of " + std::to_string(rows) + " rows");
    }
    Tensor out({idx.size(), cols});
    for (size_t t = 0; t < idx.size(); ++t)
      for (size_t e = 0; e < cols; ++e) out.at(t, e) = tb.at(static_cast<size_t>(idx[t]), e);
    std::vector<int> ix(idx.begin(), idx.end());
    const uint32_t ti = table.idx;
    return push(std::move(out), [ti, ix, cols](Tape& tp, const Tensor& g) {
      Tensor& gt = tp.nodes_[ti].grad;
      for (size_t t = 0; t < ix.size(); ++t)
        for (size_t e = 0; e < cols; ++e) gt.at(static_cast<size_t>(ix[t]), e) += g.at(t, e);
    });
  }

  // Valid cross-correlation, stride 1. x is [L,Ci], w is [k,Ci,Co], b is [Co];
  // out[t,co] = b[co] + sum_{d,ci} x[t+d,ci] * w[d,ci,co] with t in [0, L-k].
  Var conv1d(Var x, Var w, Var b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    need_rank(xv, 2, "conv1d: input");
    need_rank(wv, 3, "conv1d: weight");
    need_rank(bv, 1, "conv1d: bias");
    const size_t L = xv.dim(0), ci = xv.dim(1);
    const size_t k = wv.dim(0), co = wv.dim(2);
    if (wv.dim(1) != ci)
      throw std::invalid_argument("conv1d: weight expects " + std::to_string(wv.dim(1)) +
                                  " input channels, input has " + std::to_string(ci));
    if (bv.dim(0) != co) throw std::invalid_argument("conv1d: bias/channel mismatch");
    if (L < k)
      throw GeometryError("conv1d: input length " + std::to_string(L) + " shorter than kernel " +
                          std::to_string(k));
    const size_t lo = L - k + 1;
    Tensor out({lo, co});
    for (size_t t = 0; t < lo; ++t)
      for (size_t d = 0; d < k; ++d)
        for (size_t c = 0; c < ci; ++c) {
          const double xv_ = xv.at(t + d, c);
          for (size_t o = 0; o < co; ++o) out.at(t, o) += xv_ * wv.at(d, c, o);
        }
    for (size_t t = 0; t < lo; ++t)
      for (size_t o = 0; o < co; ++o) out.at(t, o) += bv.at(o);
    const uint32_t xi = x.idx, wi = w.idx, bi = b.idx;
    return push(std::move(out), [xi, wi, bi, lo, k, ci, co](Tape& tp, const Tensor& g) {
      const Tensor& xv = tp.nodes_[xi].value;
      const Tensor& wv = tp.nodes_[wi].value;
      Tensor& gx = tp.nodes_[xi].grad;
      Tensor& gw = tp.nodes_[wi].grad;
      Tensor& gb = tp.nodes_[bi].grad;
      for (size_t t = 0; t < lo; ++t)
        for (size_t o = 0; o < co; ++o) {
          const double go = g.at(t, o);
          gb.at(o) += go;
          for (size_t d = 0; d < k; ++d)
            for (size_t c = 0; c < ci; ++c) {
              gx.at(t + d, c) += go * wv.at(d, c, o);
              gw.at(d, c, o) += go * xv.at(t + d, c);
            }
        }
    });
  }

  Var relu(Var x) {
    Tensor out = val(x);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    const uint32_t xi = x.idx;
    return push(std::move(out), [xi](Tape& tp, const Tensor& g) {
      const Tensor& xv = tp.nodes_[xi].value;
      Tensor& gx = tp.nodes_[xi].grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (xv.at(i) > 0.0) gx.at(i) += g.at(i);
    });
  }

  // Max-subtracted softmax over a rank-1 tensor.
  Var softmax_vec(Var x) {
    const Tensor& xv = val(x);
    need_rank(xv, 1, "softmax_vec");
    Tensor out = xv;
    const double mx = *std::max_element(out.data.begin(), out.data.end());
    double sum = 0.0;
    for (double& v : out.data) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : out.data) v /= sum;
    const uint32_t xi = x.idx;
    const uint32_t self = static_cast<uint32_t>(nodes_.size());
    return push(std::move(out), [xi, self](Tape& tp, const Tensor& g) {
      const Tensor& p = tp.nodes_[self].value;
      Tensor& gx = tp.nodes_[xi].grad;
      double dot = 0.0;
      for (size_t i = 0; i < g.size(); ++i) dot += g.at(i) * p.at(i);
      for (size_t i = 0; i < g.size(); ++i) gx.at(i) += p.at(i) * (g.at(i) - dot);
    });
  }

  // -log(max(p[label], 1e-12)) on a probability vector.
  Var cross_entropy(Var probs, size_t label) {
    const Tensor& pv = val(probs);
    need_rank(pv, 1, "cross_entropy");
    if (label >= pv.dim(0))
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " outside " + std::to_string(pv.dim(0)) + " classes");
    const double floor = 1e-12;
    const double p = pv.at(label);
    Tensor out = Tensor::scalar(-std::log(std::max(p, floor)));
    const uint32_t pi = probs.idx;
    return push(std::move(out), [pi, label, floor](Tape& tp, const Tensor& g) {
      const Tensor& pv = tp.nodes_[pi].value;
      const double p = pv.at(label);
      if (p > floor) tp.nodes_[pi].grad.at(label) += -g.at(0) / p;
    });
  }

  // Mean over the spatial axis of [L,C] -> [C].
  Var spatial_mean(Var x) {
    const Tensor& xv = val(x);
    need_rank(xv, 2, "spatial_mean");
    const size_t L = xv.dim(0), C = xv.dim(1);
    Tensor out({C});
    for (size_t t = 0; t < L; ++t)
      for (size_t c = 0; c < C; ++c) out.at(c) += xv.at(t, c);
    for (size_t c = 0; c < C; ++c) out.at(c) /= static_cast<double>(L);
    const uint32_t xi = x.idx;
    return push(std::move(out), [xi, L, C](Tape& tp, const Tensor& g) {
      Tensor& gx = tp.nodes_[xi].grad;
      for (size_t t = 0; t < L; ++t)
        for (size_t c = 0; c < C; ++c) gx.at(t, c) += g.at(c) / static_cast<double>(L);
    });
  }

  // out[c] = sum_t x[t,c] * g[t] for x [L,C], weights [L].
  Var weighted_spatial_sum(Var x, Var weights) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(weights);
    need_rank(xv, 2, "weighted_spatial_sum: input");
    need_rank(wv, 1, "weighted_spatial_sum: weights");
    const size_t L = xv.dim(0), C = xv.dim(1);
    if (wv.dim(0) != L)
      throw std::invalid_argument("weighted_spatial_sum: " + std::to_string(wv.dim(0)) +
                                  " weights for " + std::to_string(L) + " positions");
    Tensor out({C});
    for (size_t t = 0; t < L; ++t)
      for (size_t c = 0; c < C; ++c) out.at(c) += xv.at(t, c) * wv.at(t);
    const uint32_t xi = x.idx, wi = weights.idx;
    return push(std::move(out), [xi, wi, L, C](Tape& tp, const Tensor& g) {
      const Tensor& xv = tp.nodes_[xi].value;
      const Tensor& wv = tp.nodes_[wi].value;
      Tensor& gx = tp.nodes_[xi].grad;
      Tensor& gw = tp.nodes_[wi].grad;
      for (size_t t = 0; t < L; ++t)
        for (size_t c = 0; c < C; ++c) {
          gx.at(t, c) += g.at(c) * wv.at(t);
          gw.at(t) += g.at(c) * xv.at(t, c);
        }
    });
  }

  // out[t] = sum_c x[t,c] * w[c] for x [L,C], weights [C].
  Var weighted_channel_sum(Var x, Var weights) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(weights);
    need_rank(xv, 2, "weighted_channel_sum: input");
    need_rank(wv, 1, "weighted_channel_sum: weights");
    const size_t L = xv.dim(0), C = xv.dim(1);
    if (wv.dim(0) != C)
      throw std::invalid_argument("weighted_channel_sum: " + std::to_string(wv.dim(0)) +
                                  " weights for " + std::to_string(C) + " channels");
    Tensor out({L});
    for (size_t t = 0; t < L; ++t)
      for (size_t c = 0; c < C; ++c) out.at(t) += xv.at(t, c) * wv.at(c);
    const uint32_t xi = x.idx, wi = weights.idx;
    return push(std::move(out), [xi, wi, L, C](Tape& tp, const Tensor& g) {
      const Tensor& xv = tp.nodes_[xi].value;
      const Tensor& wv = tp.nodes_[wi].value;
      Tensor& gx = tp.nodes_[xi].grad;
      Tensor& gw = tp.nodes_[wi].grad;
      for (size_t t = 0; t < L; ++t)
        for (size_t c = 0; c < C; ++c) {
          gx.at(t, c) += g.at(t) * wv.at(c);
          gw.at(c) += g.at(t) * xv.at(t, c);
        }
    });
  }

  // out[t,c] = x[t,c] * s[t]: one scale per row, broadcast across channels.
  Var scale_rows(Var x, Var s) {
    const Tensor& xv = val(x);
    const Tensor& sv = val(s);
    need_rank(xv, 2, "scale_rows: input");
    need_rank(sv, 1, "scale_rows: scales");
    const size_t L = xv.dim(0), C = xv.dim(1);
    if (sv.dim(0) != L)
      throw std::invalid_argument("scale_rows: " + std::to_string(sv.dim(0)) + " scales for " +
                                  std::to_string(L) + " rows");
    Tensor out({L, C});
    for (size_t t = 0; t < L; ++t)
      for (size_t c = 0; c < C; ++c) out.at(t, c) = xv.at(t, c) * sv.at(t);
    const uint32_t xi = x.idx, si = s.idx;
    return push(std::move(out), [xi, si, L, C](Tape& tp, const Tensor& g) {
      const Tensor& xv = tp.nodes_[xi].value;
      const Tensor& sv = tp.nodes_[si].value;
      Tensor& gx = tp.nodes_[xi].grad;
      Tensor& gs = tp.nodes_[si].grad;
      for (size_t t = 0; t < L; ++t)
        for (size_t c = 0; c < C; ++c) {
          gx.at(t, c) += g.at(t, c) * sv.at(t);
          gs.at(t) += g.at(t, c) * xv.at(t, c);
        }
    });
  }

  // out[o] = b[o] + sum_i x[i] * w[i,o].
  Var fc(Var x, Var w, Var b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    need_rank(xv, 1, "fc: input");
    need_rank(wv, 2, "fc: weight");
    need_rank(bv, 1, "fc: bias");
    const size_t ci = xv.dim(0), co = wv.dim(1);
    if (wv.dim(0) != ci)
      throw std::invalid_argument("fc: weight expects " + std::to_string(wv.dim(0)) +
                                  " inputs, got " + std::to_string(ci));
    if (bv.dim(0) != co) throw std::invalid_argument("fc: bias/output mismatch");
    Tensor out({co});
    for (size_t o = 0; o < co; ++o) {
      double acc = bv.at(o);
      for (size_t i = 0; i < ci; ++i) acc += xv.at(i) * wv.at(i, o);
      out.at(o) = acc;
    }
    const uint32_t xi = x.idx, wi = w.idx, bi = b.idx;
    return push(std::move(out), [xi, wi, bi, ci, co](Tape& tp, const Tensor& g) {
      const Tensor& xv = tp.nodes_[xi].value;
      const Tensor& wv = tp.nodes_[wi].value;
      Tensor& gx = tp.nodes_[xi].grad;
      Tensor& gw = tp.nodes_[wi].grad;
      Tensor& gb = tp.nodes_[bi].grad;
      for (size_t o = 0; o < co; ++o) {
        const double go = g.at(o);
        gb.at(o) += go;
        for (size_t i = 0; i < ci; ++i) {
          gx.at(i) += go * wv.at(i, o);
          gw.at(i, o) += go * xv.at(i);
        }
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
      throw std::invalid_argument("add: shape " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) += bv.at(i);
    const uint32_t ai = a.idx, bi = b.idx;
    return push(std::move(out), [ai, bi](Tape& tp, const Tensor& g) {
      Tensor& ga = tp.nodes_[ai].grad;
      Tensor& gb = tp.nodes_[bi].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga.at(i) += g.at(i);
        gb.at(i) += g.at(i);
      }
    });
  }

  Var scale(Var x, double k) {
    Tensor out = val(x);
    for (double& v : out.data) v *= k;
    const uint32_t xi = x.idx;
    return push(std::move(out), [xi, k](Tape& tp, const Tensor& g) {
      Tensor& gx = tp.nodes_[xi].grad;
      for (size_t i = 0; i < g.size(); ++i) gx.at(i) += k * g.at(i);
    });
  }

  Var reshape(Var x, std::vector<size_t> shape) {
    const Tensor& xv = val(x);
    if (Tensor::count(shape) != xv.size())
      throw std::invalid_argument("reshape: element count changed");
    Tensor out(std::move(shape), xv.data);
    const uint32_t xi = x.idx;
    return push(std::move(out), [xi](Tape& tp, const Tensor& g) {
      Tensor& gx = tp.nodes_[xi].grad;
      for (size_t i = 0; i < g.size(); ++i) gx.at(i) += g.at(i);
    });
  }

  // Seeds d(loss)/d(loss) = seed and sweeps the tape once, then adds each
  // bound node's gradient into its Param. Batch means pass seed = 1/n.
  void backward(Var loss, double seed = 1.0) {
    if (val(loss).size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got " +
                                  val(loss).shape_str());
    for (Node& n : nodes_) {
      n.grad = Tensor::zeros(n.value.shape);
    }
    nodes_[loss.idx].grad.at(0) = seed;
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
    }
    for (Node& n : nodes_) {
      if (!n.bound) continue;
      if (n.bound->grad.shape != n.bound->value.shape)
        n.bound->grad = Tensor::zeros(n.bound->value.shape);
      for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad.at(i) += n.grad.at(i);
      ensure_finite(n.bound->grad, n.bound->name.c_str());
    }
  }

 private:
  using BackFn = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    Tensor value;
    Tensor grad;
    BackFn back;
    Param* bound = nullptr;
  };

  const Tensor& val(Var v) const {
    if (v.idx >= nodes_.size()) throw std::invalid_argument("tape: dangling var");
    return nodes_[v.idx].value;
  }

  static void need_rank(const Tensor& t, size_t rank, const char* what) {
    if (t.shape.size() != rank)
      throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                  ", got shape " + t.shape_str());
  }

  Var push(Tensor value, BackFn back, Param* bound = nullptr) {
    ensure_finite(value, "tape op");
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), bound});
    return Var{static_cast<uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

}  // namespace anchornet
