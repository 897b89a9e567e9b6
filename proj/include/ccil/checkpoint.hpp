#pragma once

#include <string>

#include "ccil/config.hpp"
#include "ccil/model.hpp"

namespace ccil {

// Per-step checkpoint: model parameters plus head span metadata and the
// owning config fingerprint, loadable for metric recomputation.
struct CheckpointMeta {
  ExtractorSpec extractor;
  HeadMode head_mode = HeadMode::dot;
  double head_scale = 8.0;
  Index num_classes = 0;
  Index old_count = 0;
  std::uint64_t config_fingerprint = 0;
};

void save_checkpoint(const std::string& path, IncrementalClassifier<Scalar>& model,
                     const CheckpointMeta& meta);

IncrementalClassifier<Scalar> load_checkpoint(const std::string& path,
                                              CheckpointMeta* meta_out = nullptr);

}  // namespace ccil
