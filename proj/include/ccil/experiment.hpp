#pragma once

#include <string>
#include <vector>

#include "ccil/config.hpp"
#include "ccil/metrics.hpp"
#include "ccil/model.hpp"

namespace ccil {

struct RunResult {
  AccuracyMatrix matrix;
  MetricsReport report;
  std::vector<double> lambdas;  // realized per incremental step, in order
  WeightNorms final_norms;      // old/new spans at the final step
  std::vector<int> class_order;
  std::string run_dir;  // empty when the run was not persisted
  std::vector<EpochLog> log;
};

// Executes the full protocol: base task, N incremental steps with the
// exemplar memory updated before each step's training, per-step evaluation of
// all seen classes, metric computation, and serialization (manifest,
// accuracy matrix, metrics report, memory dumps, checkpoints).
RunResult run_experiment(const ExperimentConfig& cfg);

// Re-derives the accuracy matrix and evaluation-only metrics from the stored
// checkpoints of a completed run.
RunResult recompute_metrics(const std::string& run_dir, const std::string& data_root_override = "");

}  // namespace ccil
