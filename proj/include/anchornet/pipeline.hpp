#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "anchornet/corpus.hpp"
#include "anchornet/io.hpp"
#include "anchornet/localization.hpp"
#include "anchornet/model.hpp"
#include "anchornet/optim.hpp"
#include "anchornet/train.hpp"

namespace anchornet {

// One document pushed through branch prediction, consensus, branch selection,
// and span recovery on the winning branch's class activation map.
struct LocalizeOutcome {
  LocalizationRecord record;
  Heatmap heatmap;  // winning branch's activation map for the consensus class
};

inline LocalizeOutcome localize_document(Model& model, std::span<const int> ids, int gold_label,
                                         long long doc_index) {
  Tape t;
  ForwardVars fv = model.forward(t, ids);
  std::vector<BranchPrediction> preds;
  preds.reserve(fv.branches.size());
  for (const BranchVars& b : fv.branches)
    preds.push_back(predict_from_probs(t.value(b.class_probs)));
  const size_t gamma = decide_class(preds);
  const size_t theta = select_branch(preds, gamma);

  const ModelConfig& cfg = model.config();
  Heatmap hm;
  hm.branch = static_cast<int>(theta);
  hm.cls = static_cast<int>(gamma);
  hm.in_size = {1, static_cast<int>(cfg.seq_len)};
  hm.rf = {1, cfg.kernels[theta]};
  hm.jump = {1, 1};
  hm.shape = {1, static_cast<int>(cfg.branch_out_len(theta))};
  hm.values = class_activation_map(t.value(fv.branches[theta].f), gamma);

  const AnchorPatch top = top_patch(hm);
  LocalizationRecord rec;
  rec.doc = doc_index;
  rec.label = gold_label;
  rec.gamma = gamma;
  rec.theta = theta;
  rec.start = top.rect.left;
  rec.length = top.rect.width;
  rec.y = preds[theta].label;
  rec.p = preds[theta].confidence;
  return {std::move(rec), std::move(hm)};
}

inline std::vector<LocalizationRecord> localize_documents(Model& model,
                                                          std::span<const Document> docs,
                                                          const Vocab& vocab) {
  std::vector<LocalizationRecord> out;
  out.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    const std::vector<int> ids = encode(vocab, docs[i], model.config().seq_len);
    out.push_back(
        localize_document(model, ids, docs[i].label, static_cast<long long>(i)).record);
  }
  return out;
}

// Downstream consumer of a localized span: takes the span's token ids and
// returns class probabilities.
using PatchClassifier = std::function<std::vector<double>(std::span<const int>)>;

// Localization followed by downstream classification of each recovered span.
// The record's y/p are overwritten with the downstream verdict.
inline std::vector<LocalizationRecord> classify_patches(Model& model,
                                                        std::span<const Document> docs,
                                                        const Vocab& vocab,
                                                        const PatchClassifier& downstream) {
  if (!downstream) throw std::invalid_argument("classify_patches: no downstream classifier");
  std::vector<LocalizationRecord> out;
  out.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    const std::vector<int> ids = encode(vocab, docs[i], model.config().seq_len);
    LocalizeOutcome lo = localize_document(model, ids, docs[i].label, static_cast<long long>(i));
    std::span<const int> span_ids(ids.data() + lo.record.start,
                                  static_cast<size_t>(lo.record.length));
    const std::vector<double> probs = downstream(span_ids);
    if (probs.empty()) throw DataError("classify_patches: downstream returned no classes");
    Tensor pt({probs.size()}, probs);
    ensure_finite(pt, "downstream probabilities");
    const BranchPrediction bp = predict_from_probs(pt);
    lo.record.y = bp.label;
    lo.record.p = bp.confidence;
    out.push_back(lo.record);
  }
  return out;
}

// Classifies a span by padding it back to the model's sequence length and
// taking the consensus over branches.
inline PatchClassifier model_as_downstream(Model& model) {
  return [&model](std::span<const int> span_ids) {
    const ModelConfig& cfg = model.config();
    std::vector<int> padded(cfg.seq_len, Vocab::kPad);
    for (size_t i = 0; i < span_ids.size() && i < cfg.seq_len; ++i) padded[i] = span_ids[i];
    Tape t;
    ForwardVars fv = model.forward(t, padded);
    std::vector<BranchPrediction> preds;
    for (const BranchVars& b : fv.branches)
      preds.push_back(predict_from_probs(t.value(b.class_probs)));
    const size_t gamma = decide_class(preds);
    const size_t theta = select_branch(preds, gamma);
    const Tensor& probs = t.value(fv.branches[theta].class_probs);
    return std::vector<double>(probs.data.begin(), probs.data.end());
  };
}

// How the patch cap K is chosen when sweeping selection parameters.
enum class KPolicy {
  AreaQuotient,  // floor(input area / patch area), at least 1
  Fixed,
  Unlimited,  // every grid cell may become a patch
};

inline int k_for(const Heatmap& hm, KPolicy policy, int fixed_k) {
  switch (policy) {
    case KPolicy::AreaQuotient: {
      const long long full = static_cast<long long>(hm.in_size.h) * hm.in_size.w;
      const long long patch = static_cast<long long>(hm.rf.h) * hm.rf.w;
      return static_cast<int>(std::max<long long>(1, full / patch));
    }
    case KPolicy::Fixed:
      if (fixed_k < 1) throw std::invalid_argument("sweep: fixed K must be >= 1");
      return fixed_k;
    case KPolicy::Unlimited:
      return hm.shape.h * hm.shape.w;
  }
  throw std::invalid_argument("sweep: bad K policy");
}

struct SweepPoint {
  double overlap = 0.0;
  double visit_frac = 0.0;
  double mean_patches = 0.0;
  double mean_coverage = 0.0;  // fraction of input pixels under some patch
};

// Patch-selection statistics over a family of heatmaps for each
// (overlap, visit fraction) pair.
inline std::vector<SweepPoint> lip_sweep(std::span<const Heatmap> maps,
                                         std::span<const double> overlaps,
                                         std::span<const double> fracs, KPolicy policy,
                                         int fixed_k = 0) {
  if (maps.empty()) throw std::invalid_argument("sweep: no heatmaps");
  std::vector<SweepPoint> out;
  for (double t : overlaps) {
    for (double p : fracs) {
      SweepPoint pt;
      pt.overlap = t;
      pt.visit_frac = p;
      for (const Heatmap& hm : maps) {
        LipParams lp{k_for(hm, policy, fixed_k), t, p};
        const LipResult res = lip(hm, lp);
        pt.mean_patches += static_cast<double>(res.patches.size());
        const long long area = static_cast<long long>(hm.in_size.h) * hm.in_size.w;
        pt.mean_coverage +=
            static_cast<double>(covered_area(res.patches, hm.in_size)) / static_cast<double>(area);
      }
      pt.mean_patches /= static_cast<double>(maps.size());
      pt.mean_coverage /= static_cast<double>(maps.size());
      out.push_back(pt);
    }
  }
  return out;
}

struct FgsmReport {
  double eps = 0.0;
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
};

inline bool consensus_hit(const Tape& t, const ForwardVars& fv, size_t label) {
  std::vector<BranchPrediction> preds;
  preds.reserve(fv.branches.size());
  for (const BranchVars& b : fv.branches)
    preds.push_back(predict_from_probs(t.value(b.class_probs)));
  return decide_class(preds) == label;
}

// Single-step sign attack in embedding space: the loss gradient w.r.t. the
// embedded document decides the perturbation direction per coordinate.
inline FgsmReport fgsm_eval(Model& model, std::span<const Document> docs, const Vocab& vocab,
                            double eps) {
  if (docs.empty()) throw std::invalid_argument("fgsm: no documents");
  FgsmReport rep;
  rep.eps = eps;
  const size_t n_classes = model.config().num_classes;
  for (const Document& d : docs) {
    if (d.label < 0 || static_cast<size_t>(d.label) >= n_classes)
      throw DataError("fgsm: label outside model classes");
    const std::vector<int> ids = encode(vocab, d, model.config().seq_len);
    const size_t label = static_cast<size_t>(d.label);
    const Tensor emb = model.embed_tokens(ids);

    Tape t1;
    Var x1 = t1.leaf(emb);
    ForwardVars fv1 = model.forward_from_embeddings(t1, x1);
    Var loss1 = model.total_loss(t1, fv1, label);
    t1.backward(loss1);
    rep.clean_loss += t1.value(loss1).at(0);
    rep.clean_acc += consensus_hit(t1, fv1, label) ? 1.0 : 0.0;

    const Tensor adv = fgsm_perturb(emb, t1.grad(x1), eps);
    Tape t2;
    Var x2 = t2.leaf(adv);
    ForwardVars fv2 = model.forward_from_embeddings(t2, x2);
    Var loss2 = model.total_loss(t2, fv2, label);
    rep.adv_loss += t2.value(loss2).at(0);
    rep.adv_acc += consensus_hit(t2, fv2, label) ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(docs.size());
  rep.clean_loss /= n;
  rep.adv_loss /= n;
  rep.clean_acc /= n;
  rep.adv_acc /= n;
  return rep;
}

}  // namespace anchornet
