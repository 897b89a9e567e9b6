#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "ccil/rng.hpp"
#include "ccil/types.hpp"

namespace ccil {

// Per-class ordered exemplar lists under a global capacity K. Exemplars are
// sample indices into the source train split (raw inputs are replayed through
// the current model, not stored features). Each list is sorted ascending by
// distance of the exemplar's feature to the class feature mean at insertion
// time, so capacity trims always evict the farthest samples first.
struct ExemplarMemory {
  int capacity = 0;   // K
  int per_class = 0;  // m of the most recent update
  std::map<int, std::vector<Index>> sets;
  std::vector<std::string> warnings;

  Index total_stored() const {
    Index n = 0;
    for (const auto& [cls, list] : sets) n += static_cast<Index>(list.size());
    return n;
  }
  bool empty() const { return total_stored() == 0; }
  bool contains(int class_id) const { return sets.count(class_id) != 0; }
};

inline int exemplars_per_class(int capacity, int classes_seen) {
  if (classes_seen <= 0) throw std::invalid_argument("exemplars_per_class: no classes seen");
  return capacity / classes_seen;
}

// Algorithm: existing class sets keep their first m samples (prefix
// truncation, order preserved); for each new class, m samples are drawn
// uniformly at random (seeded), their feature mean is computed, and the
// picks are stored sorted ascending by Euclidean distance to that mean.
// Distance ties break on the original sample index.
//
// phi maps a batch of raw input rows to feature rows and must be the model
// trained on the previous classes.
template <class S, class FeatureFn>
ExemplarMemory update_exemplar_sets(const Matrix<S>& inputs,
                                    const std::vector<int>& new_class_ids,
                                    const std::vector<std::vector<Index>>& new_class_samples,
                                    const ExemplarMemory& memory, int m, FeatureFn&& phi,
                                    std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("update_exemplar_sets: m must be >= 1");
  if (new_class_ids.size() != new_class_samples.size()) {
    throw std::invalid_argument("update_exemplar_sets: class ids and sample lists differ");
  }

  ExemplarMemory out;
  out.capacity = memory.capacity;
  out.per_class = m;

  // Keep first m samples of every existing class.
  for (const auto& [cls, list] : memory.sets) {
    std::vector<Index> kept(list.begin(),
                            list.begin() + std::min<std::size_t>(list.size(), static_cast<std::size_t>(m)));
    out.sets[cls] = std::move(kept);
  }

  for (std::size_t i = 0; i < new_class_ids.size(); ++i) {
    int cls = new_class_ids[i];
    const std::vector<Index>& candidates = new_class_samples[i];
    if (candidates.empty()) {
      throw std::invalid_argument("update_exemplar_sets: class " + std::to_string(cls) +
                                  " has no samples");
    }
    std::vector<Index> pool = candidates;
    int take = m;
    if (static_cast<int>(pool.size()) < m) {
      out.warnings.push_back("class " + std::to_string(cls) + " has only " +
                             std::to_string(pool.size()) + " samples (< m=" + std::to_string(m) +
                             "); storing all");
      take = static_cast<int>(pool.size());
    }
    // Per-class stream so the draw does not depend on class visit order.
    Rng rng = derive_stream(seed, "exemplar-pick:class=" + std::to_string(cls));
    rng.shuffle(pool);
    std::vector<Index> picked(pool.begin(), pool.begin() + take);

    Matrix<S> batch(take, inputs.cols());
    for (int r = 0; r < take; ++r) batch.row(r) = inputs.row(picked[static_cast<std::size_t>(r)]);
    Matrix<S> feats = phi(batch);
    RowVector<S> mean = feats.colwise().mean();

    std::vector<std::pair<double, Index>> by_distance(static_cast<std::size_t>(take));
    for (int r = 0; r < take; ++r) {
      double d = static_cast<double>((feats.row(r) - mean).norm());
      by_distance[static_cast<std::size_t>(r)] = {d, picked[static_cast<std::size_t>(r)]};
    }
    std::sort(by_distance.begin(), by_distance.end());

    std::vector<Index>& stored = out.sets[cls];
    stored.reserve(by_distance.size());
    for (const auto& [d, idx] : by_distance) stored.push_back(idx);
  }
  return out;
}

// Mini-batch boundaries over n samples. A trailing remainder smaller than
// half a batch is folded into the previous batch: a near-empty tail batch
// would otherwise carry mean-reduced gradients many times stronger per
// sample than a full one.
inline std::vector<std::pair<Index, Index>> batch_ranges(Index n, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_ranges: batch_size must be >= 1");
  std::vector<std::pair<Index, Index>> out;
  for (Index start = 0; start < n; start += batch_size) {
    out.push_back({start, std::min(n, start + batch_size)});
  }
  if (out.size() > 1) {
    auto& last = out.back();
    if (last.second - last.first < (batch_size + 1) / 2) {
      out[out.size() - 2].second = last.second;
      out.pop_back();
    }
  }
  return out;
}

// Balanced replay over the union of all exemplar sets: one epoch visits every
// stored exemplar exactly once, in a seeded shuffled order. A batch size
// larger than the store yields a single smaller batch.
class ExemplarSampler {
 public:
  ExemplarSampler(const ExemplarMemory& memory, Index batch_size, std::uint64_t seed)
      : batch_size_(batch_size), rng_(derive_stream(seed, "exemplar-sampler")) {
    if (batch_size_ < 1) throw std::invalid_argument("sampler: batch_size must be >= 1");
    for (const auto& [cls, list] : memory.sets) {
      for (Index idx : list) entries_.push_back({idx, cls});
    }
    reshuffle();
  }

  Index total() const { return static_cast<Index>(entries_.size()); }
  Index epoch_batches() const {
    return static_cast<Index>(batch_ranges(total(), batch_size_).size());
  }

  // Fills one mini-batch; returns false when the epoch is exhausted.
  bool next(std::vector<Index>& sample_indices, std::vector<int>& class_ids) {
    sample_indices.clear();
    class_ids.clear();
    if (segment_ >= ranges_.size()) return false;
    auto [start, end] = ranges_[segment_++];
    for (Index i = start; i < end; ++i) {
      sample_indices.push_back(entries_[static_cast<std::size_t>(i)].first);
      class_ids.push_back(entries_[static_cast<std::size_t>(i)].second);
    }
    return true;
  }

  void reshuffle() {
    rng_.shuffle(entries_);
    ranges_ = batch_ranges(total(), batch_size_);
    segment_ = 0;
  }

 private:
  std::vector<std::pair<Index, int>> entries_;
  Index batch_size_;
  std::vector<std::pair<Index, Index>> ranges_;
  std::size_t segment_ = 0;
  Rng rng_;
};

}  // namespace ccil
