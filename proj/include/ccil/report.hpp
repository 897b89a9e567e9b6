#pragma once

#include <string>
#include <vector>

namespace ccil {

struct RenderSummary {
  int runs_found = 0;
  int groups = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> written;
};

// Scans a results tree for completed runs (manifest.json + metrics.json),
// aggregates multi-seed replicas of the same configuration into mean +/- std
// rows, and writes summary tables (markdown + csv) and SVG plots (accuracy
// curves, weight-norm bars, training-loss curves). Incomplete runs degrade to
// warnings, not errors.
RenderSummary render_report(const std::string& results_dir, const std::string& out_dir);

}  // namespace ccil
