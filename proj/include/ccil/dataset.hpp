#pragma once

#include <string>
#include <vector>

#include "ccil/types.hpp"

namespace ccil {

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool valid() const { return channels > 0 && height > 0 && width > 0; }
  Index dim() const { return static_cast<Index>(channels) * height * width; }
};

// In-memory split: one sample per row. Image payloads are flattened CHW in
// [0, 1]; vector payloads are used as-is. Fine labels are dense 0..C-1;
// original label names live in class_names.
struct Dataset {
  MatX inputs;
  std::vector<int> fine_labels;
  std::vector<int> fine_to_coarse;  // empty when no coarse labeling exists
  int num_classes = 0;
  int num_superclasses = 0;
  ImageShape image;  // invalid() for plain vector payloads
  std::vector<std::string> class_names;

  Index size() const { return inputs.rows(); }
  bool has_coarse() const { return !fine_to_coarse.empty(); }
  int superclass_of(int fine) const { return fine_to_coarse.at(static_cast<std::size_t>(fine)); }
  std::vector<std::vector<Index>> indices_by_class() const;
  void validate() const;
};

struct DataSplits {
  Dataset train;
  Dataset test;
};

// CIFAR-100 binary layout: <root>/train.bin and <root>/test.bin, records of
// [coarse byte][fine byte][3072 RGB bytes]. Pixels are scaled to [0, 1].
DataSplits load_cifar100(const std::string& root);

// Seeded Gaussian-cluster benchmark with superclass structure: superclass
// centers on a sphere, class means offset from their center, isotropic noise.
// Runs the full incremental protocol in seconds on a CPU.
struct SyntheticSpec {
  int num_classes = 20;
  int num_superclasses = 5;
  int input_dim = 16;
  int train_per_class = 100;
  int test_per_class = 40;
  double superclass_radius = 2.0;
  double class_radius = 0.8;
  double noise_sigma = 0.3;
  // Fraction of train samples relabeled to a random same-superclass sibling;
  // keeps training gradients alive the way hard natural data does. The test
  // split stays clean.
  double label_noise = 0.0;
  std::uint64_t seed = 0;
};

DataSplits make_synthetic(const SyntheticSpec& spec);

}  // namespace ccil
