#include "ccil/protocol.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

#include "ccil/rng.hpp"

namespace ccil {

int ClassTaskSchedule::classes_through(int step) const {
  check_step(step);
  int t = base_count;
  for (int i = 0; i < step; ++i) t += task_sizes[static_cast<std::size_t>(i)];
  return t;
}

std::vector<int> ClassTaskSchedule::task_classes(int step) const {
  check_step(step);
  int begin = classes_before(step);
  int end = classes_through(step);
  return std::vector<int>(class_order.begin() + begin, class_order.begin() + end);
}

int ClassTaskSchedule::slot_of(int class_id) const {
  if (slot_cache_.empty()) {
    slot_cache_.assign(class_order.size(), -1);
    for (std::size_t i = 0; i < class_order.size(); ++i) {
      slot_cache_[static_cast<std::size_t>(class_order[i])] = static_cast<int>(i);
    }
  }
  if (class_id < 0 || class_id >= total_classes()) {
    throw std::out_of_range("slot_of: unknown class id " + std::to_string(class_id));
  }
  return slot_cache_[static_cast<std::size_t>(class_id)];
}

void ClassTaskSchedule::check_step(int step) const {
  if (step < 0 || step > num_tasks) {
    throw std::out_of_range("step " + std::to_string(step) + " outside [0, " +
                            std::to_string(num_tasks) + "]");
  }
}

ClassTaskSchedule build_schedule(int total_classes, int base_count, int num_tasks,
                                 std::uint64_t seed) {
  if (total_classes <= 0 || base_count <= 0 || base_count > total_classes || num_tasks < 0) {
    throw std::invalid_argument("build_schedule: need 0 < base_count <= total_classes and num_tasks >= 0");
  }
  int remainder = total_classes - base_count;
  if (num_tasks == 0) {
    if (remainder != 0) {
      throw std::invalid_argument("build_schedule: " + std::to_string(remainder) +
                                  " classes left over with no incremental tasks");
    }
  } else if (remainder == 0) {
    throw std::invalid_argument("build_schedule: no classes left for " +
                                std::to_string(num_tasks) + " incremental tasks");
  } else if (remainder % num_tasks != 0) {
    throw std::invalid_argument(
        "build_schedule: cannot divide " + std::to_string(remainder) + " classes (" +
        std::to_string(total_classes) + " total minus " + std::to_string(base_count) +
        " base) equally over " + std::to_string(num_tasks) + " tasks");
  }

  ClassTaskSchedule schedule;
  schedule.class_order.resize(static_cast<std::size_t>(total_classes));
  std::iota(schedule.class_order.begin(), schedule.class_order.end(), 0);
  Rng rng = derive_stream(seed, "protocol:class-shuffle");
  rng.shuffle(schedule.class_order);
  schedule.base_count = base_count;
  schedule.num_tasks = num_tasks;
  if (num_tasks > 0) {
    schedule.task_sizes.assign(static_cast<std::size_t>(num_tasks), remainder / num_tasks);
  }
  return schedule;
}

Index TaskView::total_new_samples() const {
  Index n = 0;
  for (const auto& idx : new_class_data) n += static_cast<Index>(idx.size());
  return n;
}

TaskView task_view(const ClassTaskSchedule& schedule, int step, const Dataset& data) {
  schedule.check_step(step);
  TaskView view;
  view.step = step;
  view.new_class_ids = schedule.task_classes(step);
  int before = schedule.classes_before(step);
  view.old_class_ids.assign(schedule.class_order.begin(), schedule.class_order.begin() + before);

  auto by_class = data.indices_by_class();
  view.new_class_data.reserve(view.new_class_ids.size());
  for (int c : view.new_class_ids) {
    view.new_class_data.push_back(by_class.at(static_cast<std::size_t>(c)));
  }
  return view;
}

}  // namespace ccil
