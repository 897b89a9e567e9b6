#include "ccil/dataset.hpp"

#include <fstream>
#include <stdexcept>

#include "ccil/rng.hpp"

namespace ccil {

std::vector<std::vector<Index>> Dataset::indices_by_class() const {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < size(); ++i) {
    by_class[static_cast<std::size_t>(fine_labels[static_cast<std::size_t>(i)])].push_back(i);
  }
  return by_class;
}

void Dataset::validate() const {
  if (inputs.rows() != static_cast<Index>(fine_labels.size())) {
    throw std::runtime_error("dataset: label count does not match sample count");
  }
  for (int y : fine_labels) {
    if (y < 0 || y >= num_classes) {
      throw std::runtime_error("dataset: fine label " + std::to_string(y) +
                               " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  if (has_coarse()) {
    if (static_cast<int>(fine_to_coarse.size()) != num_classes) {
      throw std::runtime_error("dataset: fine-to-coarse map must cover every class");
    }
    for (int c : fine_to_coarse) {
      if (c < 0 || c >= num_superclasses) {
        throw std::runtime_error("dataset: coarse label out of range");
      }
    }
  }
}

namespace {

constexpr int kCifarImageBytes = 3 * 32 * 32;

Dataset load_cifar100_split(const std::string& path, Index expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);

  Dataset out;
  out.num_classes = 100;
  out.num_superclasses = 20;
  out.image = {3, 32, 32};
  out.inputs.resize(expected, kCifarImageBytes);
  out.fine_labels.resize(static_cast<std::size_t>(expected));
  // Coarse labels are per-record in the file; the map is per fine class.
  // -1 marks "not yet seen"; consistency is checked while reading.
  out.fine_to_coarse.assign(100, -1);

  std::vector<unsigned char> record(2 + kCifarImageBytes);
  for (Index i = 0; i < expected; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (!in) throw std::runtime_error(path + ": truncated at record " + std::to_string(i));
    int coarse = record[0];
    int fine = record[1];
    if (fine < 0 || fine >= 100 || coarse < 0 || coarse >= 20) {
      throw std::runtime_error(path + ": bad label bytes at record " + std::to_string(i));
    }
    int& mapped = out.fine_to_coarse[static_cast<std::size_t>(fine)];
    if (mapped == -1) {
      mapped = coarse;
    } else if (mapped != coarse) {
      throw std::runtime_error(path + ": fine class " + std::to_string(fine) +
                               " maps to two superclasses");
    }
    out.fine_labels[static_cast<std::size_t>(i)] = fine;
    for (int b = 0; b < kCifarImageBytes; ++b) {
      out.inputs(i, b) = static_cast<Scalar>(record[static_cast<std::size_t>(2 + b)]) / Scalar(255);
    }
  }
  out.validate();
  return out;
}

}  // namespace

DataSplits load_cifar100(const std::string& root) {
  DataSplits splits;
  splits.train = load_cifar100_split(root + "/train.bin", 50000);
  splits.test = load_cifar100_split(root + "/test.bin", 10000);
  // Train and test must agree on the superclass partition.
  if (splits.train.fine_to_coarse != splits.test.fine_to_coarse) {
    throw std::runtime_error(root + ": train/test superclass maps disagree");
  }
  return splits;
}

namespace {

Dataset sample_split(const SyntheticSpec& spec, const MatX& means, int per_class, Rng& rng) {
  Dataset out;
  out.num_classes = spec.num_classes;
  out.num_superclasses = spec.num_superclasses;
  out.fine_to_coarse.resize(static_cast<std::size_t>(spec.num_classes));
  int per_super = spec.num_classes / spec.num_superclasses;
  for (int c = 0; c < spec.num_classes; ++c) {
    out.fine_to_coarse[static_cast<std::size_t>(c)] = c / per_super;
  }
  Index n = static_cast<Index>(spec.num_classes) * per_class;
  out.inputs.resize(n, spec.input_dim);
  out.fine_labels.resize(static_cast<std::size_t>(n));
  Index row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (int d = 0; d < spec.input_dim; ++d) {
        out.inputs(row, d) =
            means(c, d) + static_cast<Scalar>(spec.noise_sigma * rng.normal());
      }
      out.fine_labels[static_cast<std::size_t>(row)] = c;
    }
  }
  out.validate();
  return out;
}

}  // namespace

DataSplits make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes <= 0 || spec.num_superclasses <= 0 ||
      spec.num_classes % spec.num_superclasses != 0) {
    throw std::invalid_argument("synthetic: num_classes must be a positive multiple of num_superclasses");
  }
  Rng geom = derive_stream(spec.seed, "synthetic:geometry");

  auto random_direction = [&](int dim) {
    Vector<double> v(dim);
    for (int d = 0; d < dim; ++d) v(d) = geom.normal();
    double norm = v.norm();
    if (norm < 1e-12) norm = 1.0;
    return Vector<double>(v / norm);
  };

  MatX means(spec.num_classes, spec.input_dim);
  int per_super = spec.num_classes / spec.num_superclasses;
  for (int s = 0; s < spec.num_superclasses; ++s) {
    Vector<double> center = random_direction(spec.input_dim) * spec.superclass_radius;
    for (int k = 0; k < per_super; ++k) {
      Vector<double> offset = random_direction(spec.input_dim) * spec.class_radius;
      int c = s * per_super + k;
      for (int d = 0; d < spec.input_dim; ++d) {
        means(c, d) = static_cast<Scalar>(center(d) + offset(d));
      }
    }
  }

  Rng train_rng = derive_stream(spec.seed, "synthetic:train");
  Rng test_rng = derive_stream(spec.seed, "synthetic:test");
  DataSplits splits;
  splits.train = sample_split(spec, means, spec.train_per_class, train_rng);
  splits.test = sample_split(spec, means, spec.test_per_class, test_rng);
  if (spec.label_noise > 0.0) {
    if (spec.label_noise >= 1.0) throw std::invalid_argument("synthetic: label_noise must be < 1");
    Rng flip = derive_stream(spec.seed, "synthetic:label-noise");
    int per_super = spec.num_classes / spec.num_superclasses;
    for (auto& label : splits.train.fine_labels) {
      if (flip.next_double() >= spec.label_noise) continue;
      int base = (label / per_super) * per_super;
      int sibling = base + static_cast<int>(flip.uniform_int(static_cast<std::uint32_t>(per_super)));
      label = sibling;
    }
  }
  return splits;
}

}  // namespace ccil
