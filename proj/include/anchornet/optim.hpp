#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "anchornet/autodiff.hpp"
#include "anchornet/rng.hpp"
#include "anchornet/tensor.hpp"

namespace anchornet {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// SGD with optional momentum and decoupled-from-nothing classic L2 decay:
// g' = grad + wd * value; buf = m * buf + g'; value -= lr * buf.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("sgd: lr must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
      throw std::invalid_argument("sgd: momentum must be in [0,1)");
    if (cfg.weight_decay < 0.0) throw std::invalid_argument("sgd: weight decay must be >= 0");
  }

  const SgdConfig& config() const { return cfg_; }

  void step(std::span<Param* const> params) {
    if (buffers_.empty()) {
      buffers_.reserve(params.size());
      for (Param* p : params) buffers_.push_back(Tensor::zeros(p->value.shape));
    }
    if (buffers_.size() != params.size())
      throw std::invalid_argument("sgd: parameter list changed between steps");
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Param& p = *params[pi];
      if (!p.grad.all_finite()) throw NumericalError("sgd: non-finite gradient in " + p.name);
      Tensor& buf = buffers_[pi];
      if (buf.shape != p.value.shape)
        throw std::invalid_argument("sgd: parameter shape changed between steps");
      for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad.at(i) + cfg_.weight_decay * p.value.at(i);
        if (cfg_.momentum != 0.0) {
          buf.at(i) = cfg_.momentum * buf.at(i) + g;
          p.value.at(i) -= cfg_.lr * buf.at(i);
        } else {
          p.value.at(i) -= cfg_.lr * g;
        }
      }
      ensure_finite(p.value, p.name.c_str());
    }
  }

 private:
  SgdConfig cfg_;
  std::vector<Tensor> buffers_;
};

// Builds the loss on a fresh tape. Called repeatedly with perturbed parameter
// values, so it must read current Param values each time.
using LossBuilder = std::function<Var(Tape&)>;

// Central finite differences against the tape's gradients. Returns the worst
// relative error over sampled coordinates: |fd - ad| / max(|fd|, |ad|, 1).
inline double grad_check(const LossBuilder& build, std::span<Param* const> params,
                         double epsilon, size_t max_coords_per_param = 24,
                         uint64_t seed = 12345) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw std::invalid_argument("grad_check: epsilon outside [1e-7, 1e-3]");
  for (Param* p : params) p->zero_grad();
  {
    Tape t;
    Var loss = build(t);
    t.backward(loss);
  }
  std::vector<Tensor> ad;
  ad.reserve(params.size());
  for (Param* p : params) ad.push_back(p->grad);

  auto eval = [&]() {
    Tape t;
    Var loss = build(t);
    return t.value(loss).at(0);
  };

  Rng rng(seed);
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    const size_t n = p.value.size();
    std::vector<size_t> coords;
    if (n <= max_coords_per_param) {
      for (size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (size_t i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1)));
    }
    for (size_t c : coords) {
      const double adv = ad[pi].at(c);
      auto probe = [&](double eps) {
        const double keep = p.value.at(c);
        p.value.at(c) = keep + eps;
        const double up = eval();
        p.value.at(c) = keep - eps;
        const double dn = eval();
        p.value.at(c) = keep;
        const double fd = (up - dn) / (2.0 * eps);
        return std::abs(fd - adv) / std::max({std::abs(fd), std::abs(adv), 1.0});
      };
      double rel = probe(epsilon);
      // A probe interval straddling a relu kink measures a mix of the two
      // slopes that no analytic gradient matches. Re-probing a disagreeing
      // coordinate at smaller steps separates from the kink; a genuinely wrong
      // gradient disagrees at every step.
      for (double e = epsilon / 8.0; rel > 1e-6 && e >= 1e-7; e /= 8.0)
        rel = std::min(rel, probe(e));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// x + eps * sign(grad), with sign(0) = 0. eps = 0 returns x unchanged.
inline Tensor fgsm_perturb(const Tensor& x, const Tensor& grad, double eps) {
  if (!x.same_shape(grad))
    throw std::invalid_argument("fgsm: input " + x.shape_str() + " vs gradient " +
                                grad.shape_str());
  if (eps < 0.0) throw std::invalid_argument("fgsm: eps must be >= 0");
  if (!grad.all_finite()) throw NumericalError("fgsm: non-finite gradient");
  if (eps == 0.0) return x;
  Tensor out = x;
  for (size_t i = 0; i < out.size(); ++i) {
    const double g = grad.at(i);
    if (g > 0.0)
      out.at(i) += eps;
    else if (g < 0.0)
      out.at(i) -= eps;
  }
  return out;
}

}  // namespace anchornet
