#pragma once

#include <cstdint>
#include <vector>

#include "ccil/dataset.hpp"

namespace ccil {

// Ordered partition of the class set into one base task plus num_tasks equal
// incremental tasks. class_order is the seeded shuffle; "slot" i is the head
// position of class_order[i], so tasks occupy contiguous slot ranges.
struct ClassTaskSchedule {
  std::vector<int> class_order;
  int base_count = 0;
  std::vector<int> task_sizes;  // incremental tasks only
  int num_tasks = 0;

  int total_classes() const { return static_cast<int>(class_order.size()); }
  int num_steps() const { return num_tasks + 1; }

  // Number of classes seen once step `step` is learned (t in slot space).
  int classes_through(int step) const;
  // Classes seen strictly before `step` (s in slot space).
  int classes_before(int step) const { return step == 0 ? 0 : classes_through(step - 1); }
  // Original class ids of one task, in slot order.
  std::vector<int> task_classes(int step) const;
  // Head slot of an original class id.
  int slot_of(int class_id) const;

  void check_step(int step) const;

 private:
  mutable std::vector<int> slot_cache_;
};

// Deterministic Fisher-Yates shuffle of 0..total_classes-1 under the pinned
// PCG32 stream, then base task of base_count classes and num_tasks equal
// incremental tasks in order.
ClassTaskSchedule build_schedule(int total_classes, int base_count, int num_tasks,
                                 std::uint64_t seed);

// Per-step data visibility: complete data only for the step's own classes.
struct TaskView {
  int step = 0;
  std::vector<int> new_class_ids;
  std::vector<int> old_class_ids;
  // Sample indices of the step's classes, aligned with new_class_ids.
  std::vector<std::vector<Index>> new_class_data;

  Index total_new_samples() const;
};

TaskView task_view(const ClassTaskSchedule& schedule, int step, const Dataset& data);

}  // namespace ccil
