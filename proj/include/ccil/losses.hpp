#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccil/types.hpp"

namespace ccil {

enum class SoftmaxMode { sep, comb };

// Old/new head spans in slot space: old classes occupy columns [0, old_count),
// the current task's classes occupy [old_count, total). The spans are disjoint
// and cover the whole logit vector by construction.
struct LogitSpans {
  Index old_count = 0;
  Index total = 0;

  Index new_count() const { return total - old_count; }
  void check() const {
    if (old_count < 0 || total < old_count) {
      throw std::invalid_argument("LogitSpans: need 0 <= old_count <= total");
    }
  }
};

// Batch of logits plus the span annotation for the current step; rows are
// samples, columns are head slots.
template <class S>
struct LogitsSplit {
  Matrix<S> logits;
  LogitSpans spans;

  auto old_logits() const { return logits.leftCols(spans.old_count); }
  auto new_logits() const { return logits.rightCols(spans.new_count()); }
};

// Distillation weight and its fixed base constant. lambda >= lambda_base
// whenever old classes exist.
struct LossWeights {
  double lambda_base = 0.0;
  double lambda = 0.0;
};

namespace detail {

// Row-wise log-softmax over a dense block, max-shifted for stability.
template <class S, class Block>
Matrix<S> log_softmax_rows(const Block& x) {
  Matrix<S> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    S m = x.row(r).maxCoeff();
    Array<S> shifted = (x.row(r).transpose().array() - m);
    S lse = std::log(shifted.exp().sum());
    out.row(r) = (shifted - lse).matrix().transpose();
  }
  return out;
}

}  // namespace detail

// Cross-entropy with the softmax restricted to the new-class span: the
// intra-task classification loss for new-class mini-batches. Labels are head
// slots and must lie in the new span. The gradient (mean over the batch,
// w.r.t. all logits) is exactly zero on old-class columns, so old-class head
// weights receive no update from this loss.
template <class S>
S intra_task_ce(const LogitsSplit<S>& split, const std::vector<int>& labels,
                Matrix<S>* grad = nullptr) {
  split.spans.check();
  const Index b = split.logits.rows();
  const Index s = split.spans.old_count;
  const Index n = split.spans.new_count();
  if (static_cast<Index>(labels.size()) != b) {
    throw std::invalid_argument("intra_task_ce: one label per row required");
  }
  if (n <= 0) throw std::invalid_argument("intra_task_ce: empty new-class span");
  for (int y : labels) {
    if (y < s || y >= split.spans.total) {
      throw std::invalid_argument("intra_task_ce: label " + std::to_string(y) +
                                  " outside new span [" + std::to_string(s) + ", " +
                                  std::to_string(split.spans.total) + ")");
    }
  }
  Matrix<S> logp = detail::log_softmax_rows<S>(split.new_logits());
  S loss = S(0);
  for (Index r = 0; r < b; ++r) {
    loss -= logp(r, labels[static_cast<std::size_t>(r)] - s);
  }
  loss /= static_cast<S>(b);
  if (grad) {
    grad->setZero(b, split.spans.total);
    grad->rightCols(n) = logp.array().exp().matrix() / static_cast<S>(b);
    for (Index r = 0; r < b; ++r) {
      (*grad)(r, labels[static_cast<std::size_t>(r)]) -= S(1) / static_cast<S>(b);
    }
  }
  return loss;
}

// Soft-target variant (label smoothing, mixup): targets are distributions
// over the new span, one row per sample.
template <class S>
S intra_task_ce(const LogitsSplit<S>& split, const Matrix<S>& new_targets,
                Matrix<S>* grad = nullptr) {
  split.spans.check();
  const Index b = split.logits.rows();
  const Index n = split.spans.new_count();
  if (new_targets.rows() != b || new_targets.cols() != n) {
    throw std::invalid_argument("intra_task_ce: target shape must be batch x new_count");
  }
  Matrix<S> logp = detail::log_softmax_rows<S>(split.new_logits());
  S loss = -(new_targets.array() * logp.array()).sum() / static_cast<S>(b);
  if (grad) {
    grad->setZero(b, split.spans.total);
    grad->rightCols(n) =
        (logp.array().exp().matrix() - new_targets) / static_cast<S>(b);
  }
  return loss;
}

// Standard cross-entropy with the combined softmax over all seen classes:
// the inter-task loss on balanced exemplar mini-batches. Labels are any seen
// head slot.
template <class S>
S inter_task_ce(const LogitsSplit<S>& split, const std::vector<int>& labels,
                Matrix<S>* grad = nullptr) {
  split.spans.check();
  const Index b = split.logits.rows();
  const Index t = split.spans.total;
  if (static_cast<Index>(labels.size()) != b) {
    throw std::invalid_argument("inter_task_ce: one label per row required");
  }
  for (int y : labels) {
    if (y < 0 || y >= t) {
      throw std::invalid_argument("inter_task_ce: label " + std::to_string(y) +
                                  " not among the " + std::to_string(t) + " seen classes");
    }
  }
  Matrix<S> logp = detail::log_softmax_rows<S>(split.logits);
  S loss = S(0);
  for (Index r = 0; r < b; ++r) {
    loss -= logp(r, labels[static_cast<std::size_t>(r)]);
  }
  loss /= static_cast<S>(b);
  if (grad) {
    *grad = logp.array().exp().matrix() / static_cast<S>(b);
    for (Index r = 0; r < b; ++r) {
      (*grad)(r, labels[static_cast<std::size_t>(r)]) -= S(1) / static_cast<S>(b);
    }
  }
  return loss;
}

template <class S>
S inter_task_ce(const LogitsSplit<S>& split, const Matrix<S>& targets,
                Matrix<S>* grad = nullptr) {
  split.spans.check();
  const Index b = split.logits.rows();
  if (targets.rows() != b || targets.cols() != split.spans.total) {
    throw std::invalid_argument("inter_task_ce: target shape must be batch x total");
  }
  Matrix<S> logp = detail::log_softmax_rows<S>(split.logits);
  S loss = -(targets.array() * logp.array()).sum() / static_cast<S>(b);
  if (grad) {
    *grad = (logp.array().exp().matrix() - targets) / static_cast<S>(b);
  }
  return loss;
}

// Ablation baseline: combined softmax on new-class batches too. Same formula
// as inter_task_ce; a separate entry point because it replaces intra_task_ce
// at a different usage site.
template <class S>
S combined_softmax_ce(const LogitsSplit<S>& split, const std::vector<int>& labels,
                      Matrix<S>* grad = nullptr) {
  return inter_task_ce(split, labels, grad);
}

template <class S>
S combined_softmax_ce(const LogitsSplit<S>& split, const Matrix<S>& targets,
                      Matrix<S>* grad = nullptr) {
  return inter_task_ce(split, targets, grad);
}

// Knowledge distillation over the old-class span:
// KL( softmax(frozen/T) || softmax(current/T) ), mean over the batch.
// Both logit blocks cover the identical old-class span; the frozen side comes
// from the pre-step snapshot. An empty span (base task) gives 0. The gradient
// is w.r.t. the current old-class logits.
template <class S>
S kd_loss(const Matrix<S>& current_old, const Matrix<S>& frozen_old, S temperature,
          Matrix<S>* grad = nullptr) {
  if (current_old.rows() != frozen_old.rows() || current_old.cols() != frozen_old.cols()) {
    throw std::invalid_argument("kd_loss: current and frozen spans must match");
  }
  if (!(temperature > S(0))) {
    throw std::invalid_argument("kd_loss: temperature must be positive");
  }
  const Index b = current_old.rows();
  if (current_old.cols() == 0 || b == 0) {
    if (grad) grad->setZero(current_old.rows(), current_old.cols());
    return S(0);
  }
  Matrix<S> logp = detail::log_softmax_rows<S>((frozen_old / temperature).eval());
  Matrix<S> logq = detail::log_softmax_rows<S>((current_old / temperature).eval());
  Matrix<S> p = logp.array().exp().matrix();
  S loss = (p.array() * (logp - logq).array()).sum() / static_cast<S>(b);
  if (grad) {
    *grad = (logq.array().exp().matrix() - p) / (temperature * static_cast<S>(b));
  }
  return loss;
}

// lambda = lambda_base * ((C_n + C_o) / C_n)^(2/3): grows as old classes
// accumulate, shifting weight onto preserving previous knowledge.
inline double adaptive_lambda(int num_new, int num_old, double lambda_base) {
  if (num_new <= 0) throw std::invalid_argument("adaptive_lambda: need at least one new class");
  if (num_old < 0) throw std::invalid_argument("adaptive_lambda: negative old-class count");
  if (!(lambda_base > 0.0)) throw std::invalid_argument("adaptive_lambda: lambda_base must be positive");
  double ratio = static_cast<double>(num_new + num_old) / static_cast<double>(num_new);
  return lambda_base * std::pow(ratio, 2.0 / 3.0);
}

inline LossWeights make_loss_weights(int num_new, int num_old, double lambda_base) {
  return {lambda_base, adaptive_lambda(num_new, num_old, lambda_base)};
}

// L = (L_CE_X + L_CE_P) + lambda * (L_KD_X + L_KD_P).
template <class S>
S total_loss(S ce_x, S ce_p, S kd_x, S kd_p, S lambda) {
  return (ce_x + ce_p) + lambda * (kd_x + kd_p);
}

}  // namespace ccil
