#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anchornet/autodiff.hpp"
#include "anchornet/rf_calculus.hpp"
#include "anchornet/rng.hpp"
#include "anchornet/tensor.hpp"

namespace anchornet {

// Multi-branch 1D conv text classifier: a shared two-layer 1x1 head over the
// embeddings, then one branch per kernel size. Each branch reweights its class
// map with a spatial attention vector before pooling, and exposes an auxiliary
// classifier on the attention channel summary.
struct ModelConfig {
  size_t vocab_size = 0;
  size_t embed_dim = 300;
  size_t head_mid = 32;
  size_t head_out = 64;
  size_t branch_filters = 128;
  size_t attn_dim = 64;
  size_t num_classes = 0;
  size_t seq_len = 59;
  std::vector<int> kernels = {3, 5, 7};
  double aux_weight = 0.1;

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("config: vocab_size must be >= 2");
    if (embed_dim < 1 || head_mid < 1 || head_out < 1 || branch_filters < 1 || attn_dim < 1)
      throw std::invalid_argument("config: layer widths must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
    if (kernels.empty()) throw std::invalid_argument("config: no branch kernels");
    for (int k : kernels) {
      if (k < 1) throw std::invalid_argument("config: kernel must be >= 1");
      if (static_cast<size_t>(k) > seq_len)
        throw std::invalid_argument("config: kernel " + std::to_string(k) +
                                    " longer than seq_len " + std::to_string(seq_len));
    }
    if (aux_weight < 0.0) throw std::invalid_argument("config: aux_weight must be >= 0");
  }

  size_t branch_out_len(size_t j) const { return seq_len - static_cast<size_t>(kernels[j]) + 1; }
};

// Tape handles for everything one branch produces. Names follow the dataflow:
// feat -> (f_tilde | x_attn -> gate -> g -> c_pre -> c -> s_pre -> s) -> f.
struct BranchVars {
  Var feat;         // [L_j, F] main conv + relu
  Var f_tilde;      // [L_j, num_classes] per-position class scores
  Var x_attn;       // [L_j, A] attention features
  Var g;            // [L_j] spatial gate, sums to 1
  Var c_pre;        // [A] gate-weighted channel summary
  Var c;            // [A] channel attention, sums to 1
  Var s_pre;        // [L_j] channel-weighted spatial scores
  Var s;            // [L_j] spatial attention, sums to 1
  Var f;            // [L_j, num_classes] attended class map
  Var logits;       // [num_classes]
  Var class_probs;  // [num_classes]
  Var aux_logits;   // [num_classes]
  Var aux_probs;    // [num_classes]
};

struct ForwardVars {
  Var embedded;  // [seq_len, embed_dim]
  Var head;      // [seq_len, head_out]
  std::vector<BranchVars> branches;
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    embedding_ = init_uniform(rng, "embedding", {cfg_.vocab_size, cfg_.embed_dim}, 0.1);
    head_w1_ = init_xavier(rng, "head.w1", {1, cfg_.embed_dim, cfg_.head_mid});
    head_b1_ = Param("head.b1", Tensor::zeros({cfg_.head_mid}));
    head_w2_ = init_xavier(rng, "head.w2", {1, cfg_.head_mid, cfg_.head_out});
    head_b2_ = Param("head.b2", Tensor::zeros({cfg_.head_out}));
    branches_.resize(cfg_.kernels.size());
    for (size_t j = 0; j < cfg_.kernels.size(); ++j) {
      const size_t k = static_cast<size_t>(cfg_.kernels[j]);
      const std::string p = "branch" + std::to_string(cfg_.kernels[j]);
      BranchParams& bp = branches_[j];
      bp.conv_w = init_xavier(rng, p + ".conv.w", {k, cfg_.head_out, cfg_.branch_filters});
      bp.conv_b = Param(p + ".conv.b", Tensor::zeros({cfg_.branch_filters}));
      bp.cls_w = init_xavier(rng, p + ".cls.w", {1, cfg_.branch_filters, cfg_.num_classes});
      bp.cls_b = Param(p + ".cls.b", Tensor::zeros({cfg_.num_classes}));
      bp.attn_w = init_xavier(rng, p + ".attn.w", {1, cfg_.branch_filters, cfg_.attn_dim});
      bp.attn_b = Param(p + ".attn.b", Tensor::zeros({cfg_.attn_dim}));
      bp.gate_w = init_xavier(rng, p + ".gate.w", {1, cfg_.attn_dim, 1});
      bp.gate_b = Param(p + ".gate.b", Tensor::zeros({1}));
      bp.aux_w = init_xavier(rng, p + ".aux.w", {cfg_.attn_dim, cfg_.num_classes});
      bp.aux_b = Param(p + ".aux.b", Tensor::zeros({cfg_.num_classes}));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  size_t n_branches() const { return cfg_.kernels.size(); }

  std::vector<Param*> params() {
    std::vector<Param*> out{&embedding_, &head_w1_, &head_b1_, &head_w2_, &head_b2_};
    for (BranchParams& bp : branches_) {
      for (Param* p : {&bp.conv_w, &bp.conv_b, &bp.cls_w, &bp.cls_b, &bp.attn_w, &bp.attn_b,
                       &bp.gate_w, &bp.gate_b, &bp.aux_w, &bp.aux_b})
        out.push_back(p);
    }
    return out;
  }

  std::vector<const Param*> params() const {
    return const_cast<Model*>(this)->params_const_view();
  }

  // Token ids -> embedded rows -> shared head -> all branches.
  ForwardVars forward(Tape& t, std::span<const int> tokens) {
    if (tokens.size() != cfg_.seq_len)
      throw std::invalid_argument("forward: expected " + std::to_string(cfg_.seq_len) +
                                  " tokens, got " + std::to_string(tokens.size()));
    Var emb = t.gather_rows(t.param(embedding_), tokens);
    return forward_from_embeddings(t, emb);
  }

  // Current embedding rows for a token sequence, detached from the tape.
  Tensor embed_tokens(std::span<const int> tokens) const {
    Tensor out({tokens.size(), cfg_.embed_dim});
    for (size_t t = 0; t < tokens.size(); ++t) {
      const int id = tokens[t];
      if (id < 0 || static_cast<size_t>(id) >= cfg_.vocab_size)
        throw std::invalid_argument("embed_tokens: token id " + std::to_string(id) +
                                    " outside vocabulary");
      for (size_t e = 0; e < cfg_.embed_dim; ++e)
        out.at(t, e) = embedding_.value.at(static_cast<size_t>(id), e);
    }
    return out;
  }

  // Entry point for gradient-vs-input work: the caller owns the embedding rows
  // (usually a leaf) and can read their gradient after backward.
  ForwardVars forward_from_embeddings(Tape& t, Var emb) {
    const Tensor& ev = t.value(emb);
    if (ev.shape != std::vector<size_t>{cfg_.seq_len, cfg_.embed_dim})
      throw std::invalid_argument("forward: embeddings must be [" + std::to_string(cfg_.seq_len) +
                                  "," + std::to_string(cfg_.embed_dim) + "], got " +
                                  ev.shape_str());
    ForwardVars fv;
    fv.embedded = emb;
    Var h = t.relu(t.conv1d(emb, t.param(head_w1_), t.param(head_b1_)));
    h = t.relu(t.conv1d(h, t.param(head_w2_), t.param(head_b2_)));
    fv.head = h;
    fv.branches.reserve(branches_.size());
    for (BranchParams& bp : branches_) fv.branches.push_back(run_branch(t, h, bp));
    return fv;
  }

  // Sum of per-branch class losses plus aux_weight times the auxiliary losses.
  Var total_loss(Tape& t, const ForwardVars& fv, size_t label) {
    Var loss = t.cross_entropy(fv.branches[0].class_probs, label);
    for (size_t j = 1; j < fv.branches.size(); ++j)
      loss = t.add(loss, t.cross_entropy(fv.branches[j].class_probs, label));
    if (cfg_.aux_weight > 0.0) {
      Var aux = t.cross_entropy(fv.branches[0].aux_probs, label);
      for (size_t j = 1; j < fv.branches.size(); ++j)
        aux = t.add(aux, t.cross_entropy(fv.branches[j].aux_probs, label));
      loss = t.add(loss, t.scale(aux, cfg_.aux_weight));
    }
    return loss;
  }

  // Geometry of embedding->head->branch j as a 1D layer stack. The 1x1 head
  // layers leave rf = k_j and jump = 1.
  std::vector<LayerGeom> branch_stack(size_t j) const {
    return {conv1d_geom(1), conv1d_geom(1), conv1d_geom(cfg_.kernels[j])};
  }

 private:
  struct BranchParams {
    Param conv_w, conv_b, cls_w, cls_b, attn_w, attn_b, gate_w, gate_b, aux_w, aux_b;
  };

  std::vector<const Param*> params_const_view() {
    std::vector<Param*> mut = params();
    return {mut.begin(), mut.end()};
  }

  static Param init_uniform(Rng& rng, std::string name, std::vector<size_t> shape, double bound) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return Param(std::move(name), std::move(t));
  }

  // Xavier bound from the weight's receptive fan: sqrt(6 / (fan_in + fan_out)).
  static Param init_xavier(Rng& rng, std::string name, std::vector<size_t> shape) {
    size_t fan_in, fan_out;
    if (shape.size() == 3) {
      fan_in = shape[0] * shape[1];
      fan_out = shape[0] * shape[2];
    } else {
      fan_in = shape[0];
      fan_out = shape[1];
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return init_uniform(rng, std::move(name), std::move(shape), bound);
  }

  BranchVars run_branch(Tape& t, Var head, BranchParams& bp) {
    BranchVars b;
    b.feat = t.relu(t.conv1d(head, t.param(bp.conv_w), t.param(bp.conv_b)));
    b.f_tilde = t.conv1d(b.feat, t.param(bp.cls_w), t.param(bp.cls_b));
    b.x_attn = t.conv1d(b.feat, t.param(bp.attn_w), t.param(bp.attn_b));
    const size_t lj = t.value(b.x_attn).dim(0);
    Var gate = t.conv1d(b.x_attn, t.param(bp.gate_w), t.param(bp.gate_b));
    b.g = t.softmax_vec(t.reshape(gate, {lj}));
    b.c_pre = t.weighted_spatial_sum(b.x_attn, b.g);
    b.c = t.softmax_vec(b.c_pre);
    b.s_pre = t.weighted_channel_sum(b.x_attn, b.c);
    b.s = t.softmax_vec(b.s_pre);
    b.f = t.scale_rows(b.f_tilde, b.s);
    b.logits = t.spatial_mean(b.f);
    b.class_probs = t.softmax_vec(b.logits);
    b.aux_logits = t.fc(b.c_pre, t.param(bp.aux_w), t.param(bp.aux_b));
    b.aux_probs = t.softmax_vec(b.aux_logits);
    return b;
  }

  ModelConfig cfg_;
  Param embedding_, head_w1_, head_b1_, head_w2_, head_b2_;
  std::vector<BranchParams> branches_;
};

// One branch's verdict on a document.
struct BranchPrediction {
  size_t label = 0;
  double confidence = 0.0;
};

inline BranchPrediction predict_from_probs(const Tensor& probs) {
  if (probs.shape.size() != 1 || probs.size() == 0)
    throw std::invalid_argument("predict: probabilities must be a non-empty vector");
  size_t best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs.at(i) > probs.at(best)) best = i;
  return {best, probs.at(best)};
}

// Per-position activation for one class: column `cls` of the attended map.
inline std::vector<double> class_activation_map(const Tensor& f, size_t cls) {
  if (f.shape.size() != 2) throw std::invalid_argument("activation map: expected [L,classes]");
  if (cls >= f.dim(1)) throw std::invalid_argument("activation map: class out of range");
  std::vector<double> out(f.dim(0));
  for (size_t t = 0; t < f.dim(0); ++t) out[t] = f.at(t, cls);
  return out;
}

}  // namespace anchornet
