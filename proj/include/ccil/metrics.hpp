#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccil/types.hpp"

namespace ccil {

// Per-step, per-task accuracies in percent. task_acc[i][j] is the accuracy of
// the model after step i on the test classes of task j (defined for j <= i);
// overall[i] covers the union of all classes seen by step i with equal
// per-sample weighting.
struct AccuracyMatrix {
  std::vector<std::vector<double>> task_acc;
  std::vector<double> overall;

  int num_steps() const { return static_cast<int>(overall.size()); }
  void validate() const {
    if (task_acc.size() != overall.size()) {
      throw std::invalid_argument("accuracy matrix: row count mismatch");
    }
    for (std::size_t i = 0; i < task_acc.size(); ++i) {
      if (task_acc[i].size() != i + 1) {
        throw std::invalid_argument("accuracy matrix: row " + std::to_string(i) +
                                    " must have " + std::to_string(i + 1) + " entries");
      }
      for (double a : task_acc[i]) {
        if (!(a >= 0.0 && a <= 100.0)) {
          throw std::invalid_argument("accuracy matrix: value outside [0, 100]");
        }
      }
    }
  }
};

struct MetricsReport {
  double avg_acc = 0.0;
  double forgetting = 0.0;
  std::optional<double> feature_retention;
  double ss_nll = 0.0;
  double ss_acc = 0.0;
  double ece = 0.0;
  std::optional<double> weight_norm_gap;
  std::vector<std::string> provenance;  // checkpoint ids the numbers derive from
};

// Mean of the N+1 per-step overall accuracies.
inline double average_incremental_accuracy(const AccuracyMatrix& matrix) {
  matrix.validate();
  if (matrix.overall.empty()) throw std::invalid_argument("average accuracy: empty matrix");
  double sum = 0.0;
  for (double a : matrix.overall) sum += a;
  return sum / static_cast<double>(matrix.overall.size());
}

// Drop on the first task: accuracy of the initial model minus accuracy of the
// final model, both on the first task's test classes.
inline double forgetting_rate(double acc_first_task_initial, double acc_first_task_final) {
  return acc_first_task_initial - acc_first_task_final;
}

inline double feature_retention_gap(double joint_model_accuracy, double frozen_feature_accuracy) {
  return joint_model_accuracy - frozen_feature_accuracy;
}

namespace detail {

// Index of the maximum logit; ties resolve to the lowest index so the
// secondary-softmax support is deterministic.
template <class S>
Index argmax_lowest(const RowVector<S>& row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

}  // namespace detail

// Secondary-superclass NLL of one prediction: softmax over the logits with
// the single maximum removed from the support, then -log of the probability
// mass inside the true label's superclass.
template <class S>
double ss_nll_single(const RowVector<S>& logits, int fine_label,
                     const std::vector<int>& fine_to_coarse) {
  if (logits.size() < 2) throw std::invalid_argument("ss_nll: need at least 2 logits");
  if (static_cast<Index>(fine_to_coarse.size()) < logits.size()) {
    throw std::invalid_argument("ss_nll: superclass map does not cover all classes");
  }
  Index drop = detail::argmax_lowest(logits);
  int target_super = fine_to_coarse[static_cast<std::size_t>(fine_label)];

  double max_rest = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < logits.size(); ++j) {
    if (j == drop) continue;
    max_rest = std::max(max_rest, static_cast<double>(logits(j)));
  }
  double denom = 0.0, in_super = 0.0;
  for (Index j = 0; j < logits.size(); ++j) {
    if (j == drop) continue;
    double e = std::exp(static_cast<double>(logits(j)) - max_rest);
    denom += e;
    if (fine_to_coarse[static_cast<std::size_t>(j)] == target_super) in_super += e;
  }
  // All secondary mass inside the superclass gives exactly 0. The opposite
  // extreme (a superclass whose only representative is the suppressed max)
  // has zero mass; it is floored so batch means stay finite.
  return -std::log(std::max(in_super, denom * 1e-12) / denom);
}

// Secondary-superclass prediction: argmax over the non-maximum logits mapped
// to its superclass; correct iff it matches the true label's superclass.
template <class S>
bool ss_correct_single(const RowVector<S>& logits, int fine_label,
                       const std::vector<int>& fine_to_coarse) {
  if (logits.size() < 2) throw std::invalid_argument("ss_acc: need at least 2 logits");
  Index drop = detail::argmax_lowest(logits);
  Index second = drop == 0 ? 1 : 0;
  for (Index j = 0; j < logits.size(); ++j) {
    if (j == drop) continue;
    if (logits(j) > logits(second)) second = j;
  }
  return fine_to_coarse[static_cast<std::size_t>(second)] ==
         fine_to_coarse[static_cast<std::size_t>(fine_label)];
}

// Batch means: per-sample SS-NLL averaged over rows; SS-Acc in percent.
template <class S>
double ss_nll(const Matrix<S>& logits, const std::vector<int>& fine_labels,
              const std::vector<int>& fine_to_coarse) {
  if (logits.rows() == 0) throw std::invalid_argument("ss_nll: empty batch");
  if (logits.rows() != static_cast<Index>(fine_labels.size())) {
    throw std::invalid_argument("ss_nll: one label per row required");
  }
  double sum = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    RowVector<S> row = logits.row(r);
    sum += ss_nll_single<S>(row, fine_labels[static_cast<std::size_t>(r)], fine_to_coarse);
  }
  return sum / static_cast<double>(logits.rows());
}

template <class S>
double ss_acc(const Matrix<S>& logits, const std::vector<int>& fine_labels,
              const std::vector<int>& fine_to_coarse) {
  if (logits.rows() == 0) throw std::invalid_argument("ss_acc: empty batch");
  if (logits.rows() != static_cast<Index>(fine_labels.size())) {
    throw std::invalid_argument("ss_acc: one label per row required");
  }
  double correct = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    RowVector<S> row = logits.row(r);
    if (ss_correct_single<S>(row, fine_labels[static_cast<std::size_t>(r)], fine_to_coarse)) {
      correct += 1.0;
    }
  }
  return 100.0 * correct / static_cast<double>(logits.rows());
}

// Standard binned expected calibration error over (max-probability, correct)
// pairs: equal-width bins on [0, 1], ECE = sum |bin|/n * |acc(bin) - conf(bin)|.
inline double ece(const std::vector<std::pair<double, bool>>& confidence_correct, int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  if (confidence_correct.empty()) throw std::invalid_argument("ece: empty input");
  std::vector<double> bin_conf(static_cast<std::size_t>(num_bins), 0.0);
  std::vector<double> bin_correct(static_cast<std::size_t>(num_bins), 0.0);
  std::vector<Index> bin_count(static_cast<std::size_t>(num_bins), 0);
  for (const auto& [conf, correct] : confidence_correct) {
    if (!(conf >= 0.0 && conf <= 1.0)) throw std::invalid_argument("ece: confidence outside [0, 1]");
    int b = std::min(static_cast<int>(conf * num_bins), num_bins - 1);
    bin_conf[static_cast<std::size_t>(b)] += conf;
    bin_correct[static_cast<std::size_t>(b)] += correct ? 1.0 : 0.0;
    ++bin_count[static_cast<std::size_t>(b)];
  }
  double n = static_cast<double>(confidence_correct.size());
  double total = 0.0;
  for (int b = 0; b < num_bins; ++b) {
    Index cnt = bin_count[static_cast<std::size_t>(b)];
    if (cnt == 0) continue;
    double acc = bin_correct[static_cast<std::size_t>(b)] / static_cast<double>(cnt);
    double conf = bin_conf[static_cast<std::size_t>(b)] / static_cast<double>(cnt);
    total += (static_cast<double>(cnt) / n) * std::abs(acc - conf);
  }
  return total;
}

struct ClassPair {
  int class_a = 0;
  int class_b = 0;
  bool similar = false;  // same superclass
};

// L2 distance between the two class feature means under model A divided by
// the same distance under model B (the baseline). Ratio < 1 means the classes
// moved closer relative to the baseline. feats_of(class) must give the
// feature rows of that class's samples under the respective model.
template <class FeatsA, class FeatsB>
std::vector<double> class_mean_distance_ratios(FeatsA&& feats_a, FeatsB&& feats_b,
                                               const std::vector<ClassPair>& pairs) {
  auto mean_of = [](const auto& feats) {
    if (feats.rows() == 0) throw std::invalid_argument("class_mean_distance_ratios: empty class");
    return feats.colwise().mean().eval();
  };
  std::vector<double> ratios;
  ratios.reserve(pairs.size());
  for (const auto& pair : pairs) {
    auto da = (mean_of(feats_a(pair.class_a)) - mean_of(feats_a(pair.class_b))).norm();
    auto db = (mean_of(feats_b(pair.class_a)) - mean_of(feats_b(pair.class_b))).norm();
    if (db == 0) throw std::invalid_argument("class_mean_distance_ratios: zero baseline distance");
    ratios.push_back(static_cast<double>(da) / static_cast<double>(db));
  }
  return ratios;
}

}  // namespace ccil
