#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "anchornet/corpus.hpp"
#include "anchornet/localization.hpp"
#include "anchornet/model.hpp"
#include "anchornet/optim.hpp"

namespace anchornet {

struct TrainConfig {
  size_t epochs = 30;
  size_t batch_size = 16;
  double lr = 0.03;
  double momentum = 0.8;
  double weight_decay = 0.0;
  // Early stop once every branch reaches this validation accuracy; 0 disables.
  double target_val_acc = 0.0;
  uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (target_val_acc < 0.0 || target_val_acc > 1.0)
      throw std::invalid_argument("train: target_val_acc outside [0,1]");
  }
};

struct EvalResult {
  double consensus_acc = 0.0;
  std::vector<double> branch_acc;
};

// Validation pass: per-branch argmax accuracy plus the consensus accuracy
// under the cross-branch decision rule.
inline EvalResult evaluate(Model& model, std::span<const std::vector<int>> docs,
                           std::span<const int> labels) {
  if (docs.empty()) throw std::invalid_argument("evaluate: no documents");
  if (docs.size() != labels.size())
    throw std::invalid_argument("evaluate: document/label count mismatch");
  EvalResult out;
  out.branch_acc.assign(model.n_branches(), 0.0);
  size_t consensus_hits = 0;
  for (size_t i = 0; i < docs.size(); ++i) {
    Tape t;
    ForwardVars fv = model.forward(t, docs[i]);
    std::vector<BranchPrediction> preds;
    preds.reserve(fv.branches.size());
    for (size_t j = 0; j < fv.branches.size(); ++j) {
      preds.push_back(predict_from_probs(t.value(fv.branches[j].class_probs)));
      if (preds[j].label == static_cast<size_t>(labels[i])) out.branch_acc[j] += 1.0;
    }
    if (decide_class(preds) == static_cast<size_t>(labels[i])) ++consensus_hits;
  }
  for (double& a : out.branch_acc) a /= static_cast<double>(docs.size());
  out.consensus_acc = static_cast<double>(consensus_hits) / static_cast<double>(docs.size());
  return out;
}

struct EpochStats {
  size_t epoch = 0;
  double train_loss = 0.0;
  double val_consensus_acc = 0.0;
  std::vector<double> val_branch_acc;
};

struct TrainResult {
  std::vector<EpochStats> history;
  size_t best_epoch = 0;
  double best_min_branch_acc = 0.0;
  bool reached_target = false;
};

// Minibatch SGD over per-example tapes: each example's backward pass seeds
// 1/batch so the accumulated parameter gradient is the batch mean. Keeps the
// parameter snapshot from the best epoch (by worst-branch validation
// accuracy) and restores it at the end.
inline TrainResult train_model(Model& model, std::span<const Document> train_docs,
                               std::span<const Document> val_docs, const Vocab& vocab,
                               const TrainConfig& tc, std::ostream* log = nullptr) {
  tc.validate();
  if (train_docs.empty() || val_docs.empty())
    throw std::invalid_argument("train: empty train or validation split");
  const size_t seq_len = model.config().seq_len;
  const size_t n_classes = model.config().num_classes;

  auto encode_all = [&](std::span<const Document> docs, std::vector<std::vector<int>>& ids,
                        std::vector<int>& labels) {
    for (const Document& d : docs) {
      if (d.label < 0 || static_cast<size_t>(d.label) >= n_classes)
        throw DataError("train: label " + std::to_string(d.label) + " outside " +
                        std::to_string(n_classes) + " classes");
      ids.push_back(encode(vocab, d, seq_len));
      labels.push_back(d.label);
    }
  };
  std::vector<std::vector<int>> train_ids, val_ids;
  std::vector<int> train_labels, val_labels;
  encode_all(train_docs, train_ids, train_labels);
  encode_all(val_docs, val_ids, val_labels);

  Sgd opt({tc.lr, tc.momentum, tc.weight_decay});
  std::vector<Param*> params = model.params();

  TrainResult result;
  std::vector<Tensor> best_values;
  Rng shuffler(tc.seed);
  std::vector<size_t> order(train_ids.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    for (size_t at = 0; at < order.size(); at += tc.batch_size) {
      const size_t n = std::min(tc.batch_size, order.size() - at);
      for (Param* p : params) p->zero_grad();
      for (size_t b = 0; b < n; ++b) {
        const size_t i = order[at + b];
        Tape t;
        ForwardVars fv = model.forward(t, train_ids[i]);
        Var loss = model.total_loss(t, fv, static_cast<size_t>(train_labels[i]));
        loss_sum += t.value(loss).at(0);
        t.backward(loss, 1.0 / static_cast<double>(n));
      }
      opt.step(params);
    }

    EvalResult ev = evaluate(model, val_ids, val_labels);
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(train_ids.size());
    st.val_consensus_acc = ev.consensus_acc;
    st.val_branch_acc = ev.branch_acc;
    result.history.push_back(st);

    const double min_branch = *std::min_element(ev.branch_acc.begin(), ev.branch_acc.end());
    if (log) {
      *log << "epoch " << epoch << " train_loss " << st.train_loss << " val_acc "
           << ev.consensus_acc << " branch_acc";
      for (double a : ev.branch_acc) *log << " " << a;
      *log << "\n";
    }
    if (result.history.size() == 1 || min_branch > result.best_min_branch_acc) {
      result.best_min_branch_acc = min_branch;
      result.best_epoch = epoch;
      best_values.clear();
      for (Param* p : params) best_values.push_back(p->value);
    }
    if (tc.target_val_acc > 0.0 && min_branch >= tc.target_val_acc) {
      result.reached_target = true;
      break;
    }
  }

  if (!best_values.empty()) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  return result;
}

}  // namespace anchornet
