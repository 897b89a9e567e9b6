#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccil/dataset.hpp"
#include "ccil/losses.hpp"
#include "ccil/memory.hpp"
#include "ccil/model.hpp"
#include "ccil/protocol.hpp"
#include "ccil/regularizers.hpp"
#include "ccil/rng.hpp"

namespace ccil {

enum class LrSchedule { cosine, step };

struct TrainConfig {
  int epochs_base = 120;
  int epochs_incremental = 240;
  double lr_base = 0.1;
  double lr_incremental = 0.01;  // the low-LR strategy: <= lr_base
  double lr_floor = 1e-4;
  LrSchedule schedule = LrSchedule::cosine;
  std::vector<int> milestones = {60, 90};  // step schedule, epochs
  double step_gamma = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index batch_size = 100;
  SoftmaxMode softmax_mode = SoftmaxMode::sep;
  bool kd_enabled = true;
  double kd_temperature = 1.0;
  double lambda_base = 5.0;
  bool adaptive_lambda_enabled = true;
  int snapshot_every = 0;  // base-task checkpoint cadence in epochs; 0 = off
};

struct SelfDistillConfig {
  int generations = 0;  // 0 disables self-distillation
  int epochs_per_generation = 70;
  double lr = 0.1;
  double lr_floor = 1e-3;
  double weight = 1.0;  // weight of the generation-teacher KL term
};

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::none;
  double ls_epsilon = 0.1;
  double mixup_alpha = 0.2;
  int cutout_size = 8;
  std::vector<AugmentationPolicy> pool = default_policy_pool();
};

struct PipelineConfig {
  bool baseline_augment = true;  // crop+flip on image datasets
  int crop_pad = 4;
  // Baseline train-time augmentation for plain vector datasets: additive
  // Gaussian input jitter (the crop/flip counterpart).
  double jitter_sigma = 0.0;
  std::vector<double> norm_mean;  // per channel; empty = no normalization
  std::vector<double> norm_std;
};

inline double lr_at_epoch(LrSchedule schedule, double lr0, double floor, int epoch,
                          int total_epochs, const std::vector<int>& milestones,
                          double step_gamma) {
  if (schedule == LrSchedule::cosine) {
    if (total_epochs <= 1) return lr0;
    double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return floor + 0.5 * (lr0 - floor) * (1.0 + std::cos(3.14159265358979323846 * t));
  }
  double lr = lr0;
  for (int m : milestones) {
    if (epoch >= m) lr *= step_gamma;
  }
  return std::max(lr, floor);
}

// SGD with momentum; velocity buffers follow the attached parameter set and
// are rebuilt at step boundaries (head expansion changes the set).
template <class S>
class SgdMomentum {
 public:
  void attach(std::vector<ParamRef<S>> params) {
    params_ = std::move(params);
    velocity_.clear();
    for (auto& p : params_) velocity_.push_back(Matrix<S>::Zero(p.value->rows(), p.value->cols()));
  }

  void step(S lr, S momentum, S weight_decay) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      Matrix<S> g = *p.grad;
      if (p.weight_decay && weight_decay != S(0)) g += weight_decay * (*p.value);
      velocity_[i] = momentum * velocity_[i] + g;
      *p.value -= lr * velocity_[i];
    }
  }

 private:
  std::vector<ParamRef<S>> params_;
  std::vector<Matrix<S>> velocity_;
};

// Gather + augment + normalize. Augmentation applies to image datasets only;
// with every regularizer off the train path is exactly baseline crop+flip.
template <class S>
class Pipeline {
 public:
  Pipeline(const Dataset& data, PipelineConfig cfg, RegularizerConfig reg)
      : data_(&data), cfg_(std::move(cfg)), reg_(reg) {}

  const Dataset& data() const { return *data_; }
  const RegularizerConfig& reg() const { return reg_; }

  Matrix<S> train_inputs(const std::vector<Index>& idx, Rng& aug_rng) const {
    Matrix<S> x = gather(idx);
    if (!data_->image.valid()) {
      if (cfg_.baseline_augment && cfg_.jitter_sigma > 0.0) {
        for (Index r = 0; r < x.rows(); ++r) {
          for (Index c = 0; c < x.cols(); ++c) {
            x(r, c) += static_cast<S>(cfg_.jitter_sigma * aug_rng.normal());
          }
        }
      }
      return x;
    }
    if (data_->image.valid()) {
      for (Index r = 0; r < x.rows(); ++r) {
        // Row data of a col-major matrix is strided; augment a copy.
        Vector<S> buf = x.row(r);
        ImageView<S> view{buf.data(), data_->image};
        if (cfg_.baseline_augment) {
          random_crop(view, cfg_.crop_pad, aug_rng);
          random_flip(view, aug_rng);
        }
        if (reg_.kind == RegularizerKind::h_aug) {
          const auto& policy = sample_policy(reg_.pool, aug_rng);
          apply_policy(policy, view);
          cutout(view, reg_.cutout_size, aug_rng);
        }
        x.row(r) = buf.transpose();
      }
    }
    normalize(x);
    return x;
  }

  Matrix<S> eval_inputs(const std::vector<Index>& idx) const {
    Matrix<S> x = gather(idx);
    normalize(x);
    return x;
  }

  // Normalization alone, for callers that already hold raw input rows.
  Matrix<S> normalize_rows(Matrix<S> x) const {
    normalize(x);
    return x;
  }

 private:
  Matrix<S> gather(const std::vector<Index>& idx) const {
    Matrix<S> x(static_cast<Index>(idx.size()), data_->inputs.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      x.row(static_cast<Index>(r)) = data_->inputs.row(idx[r]).template cast<S>();
    }
    return x;
  }

  void normalize(Matrix<S>& x) const {
    if (cfg_.norm_mean.empty()) return;
    if (!data_->image.valid()) return;
    const Index plane = static_cast<Index>(data_->image.height) * data_->image.width;
    for (int c = 0; c < data_->image.channels; ++c) {
      S mean = static_cast<S>(cfg_.norm_mean[static_cast<std::size_t>(c)]);
      S sd = static_cast<S>(cfg_.norm_std[static_cast<std::size_t>(c)]);
      x.middleCols(static_cast<Index>(c) * plane, plane) =
          (x.middleCols(static_cast<Index>(c) * plane, plane).array() - mean) / sd;
    }
  }

  const Dataset* data_;
  PipelineConfig cfg_;
  RegularizerConfig reg_;
};

template <class S>
struct TrainHooks {
  std::function<void()> on_first_update;  // fired once per step, before the first optimizer step
  // Fired right after the new-class batch's backward pass, before the
  // exemplar batch touches the gradients.
  std::function<void(const IncrementalClassifier<S>&)> on_after_x_backward;
  std::function<void(const IncrementalClassifier<S>&)> on_after_backward;
  std::function<void(const IncrementalClassifier<S>&, int epoch)> on_base_epoch_end;
  std::function<void(const ModelSnapshot<S>&, int generation)> on_generation_teacher;
};

struct EpochLog {
  std::string phase;  // "base", "step3", "sd-gen2", ...
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct StepLog {
  double lambda = 0.0;
  long x_batches = 0;
  long p_batches = 0;
  std::vector<EpochLog> epochs;
};

// Runs base-task training and the per-step incremental procedure: separate
// losses for the new-class batches and the balanced exemplar batches,
// distillation against the pre-step snapshot, one optimizer update per paired
// batch.
template <class S>
class Trainer {
 public:
  Trainer(const ClassTaskSchedule& schedule, Pipeline<S> pipeline, TrainConfig cfg,
          std::uint64_t seed)
      : schedule_(&schedule), pipeline_(std::move(pipeline)), cfg_(cfg), seed_(seed) {}

  const TrainConfig& config() const { return cfg_; }
  TrainHooks<S> hooks;

  // Plain cross-entropy training of the base task (step 0).
  StepLog train_base_task(IncrementalClassifier<S>& model, const TaskView& view) {
    if (view.step != 0) throw std::invalid_argument("train_base_task: expected step 0 view");
    check_spans(model, view);
    StepLog log;
    SgdMomentum<S> opt;
    opt.attach(collect(model));
    std::vector<Index> order = flatten(view.new_class_data);

    bool first_update_fired = false;
    for (int epoch = 0; epoch < cfg_.epochs_base; ++epoch) {
      double lr = lr_at_epoch(cfg_.schedule, cfg_.lr_base, cfg_.lr_floor, epoch, cfg_.epochs_base,
                              cfg_.milestones, cfg_.step_gamma);
      Rng shuffle_rng = stream("shuffle:base:epoch=" + std::to_string(epoch));
      Rng aug_rng = stream("aug:base:epoch=" + std::to_string(epoch));
      Rng mix_rng = stream("mixup:base:epoch=" + std::to_string(epoch));
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      long batches = 0;
      for (auto [seg_begin, seg_end] : batch_ranges(static_cast<Index>(order.size()), cfg_.batch_size)) {
        std::vector<Index> idx(order.begin() + seg_begin, order.begin() + seg_end);
        Matrix<S> x = pipeline_.train_inputs(idx, aug_rng);
        std::vector<int> slots = slot_labels(idx);
        Matrix<S> targets = target_rows(slots, model.num_classes(), mix_rng, &x);

        model.zero_grads();
        auto split = model.forward(x);
        Matrix<S> dlogits;
        // At step 0 the combined and separate softmax coincide.
        S loss = inter_task_ce(split, targets, &dlogits);
        check_finite(loss, "base", epoch);
        model.backward(dlogits);
        if (hooks.on_after_backward) hooks.on_after_backward(model);
        if (!first_update_fired) {
          if (hooks.on_first_update) hooks.on_first_update();
          first_update_fired = true;
        }
        opt.step(static_cast<S>(lr), static_cast<S>(cfg_.momentum),
                 static_cast<S>(cfg_.weight_decay));
        loss_sum += static_cast<double>(loss);
        ++batches;
      }
      log.epochs.push_back({"base", epoch, lr, loss_sum / std::max(1L, batches)});
      if (hooks.on_base_epoch_end) hooks.on_base_epoch_end(model, epoch);
    }
    return log;
  }

  // One incremental step of the compositional procedure. The exemplar memory
  // must already contain the step's new classes (updated before training).
  StepLog incremental_step(IncrementalClassifier<S>& model, const ModelSnapshot<S>& frozen,
                           const ExemplarMemory& memory, const TaskView& view) {
    if (view.step < 1) throw std::invalid_argument("incremental_step: expected step >= 1");
    check_spans(model, view);
    if (frozen.num_classes() != model.spans().old_count) {
      throw std::invalid_argument("incremental_step: snapshot spans " +
                                  std::to_string(frozen.num_classes()) +
                                  " classes, expected " + std::to_string(model.spans().old_count));
    }
    for (int cls : view.new_class_ids) {
      if (!memory.contains(cls) || memory.sets.at(cls).empty()) {
        throw std::logic_error("incremental_step: exemplar memory not updated with class " +
                               std::to_string(cls) + " before training");
      }
    }

    StepLog log;
    log.lambda = realized_lambda(view);
    SgdMomentum<S> opt;
    opt.attach(collect(model));
    std::vector<Index> order = flatten(view.new_class_data);
    const std::string tag = "step=" + std::to_string(view.step);

    ExemplarSampler sampler(memory, cfg_.batch_size,
                            hash_tag(tag) ^ seed_);
    std::vector<Index> p_idx;
    std::vector<int> p_cls;

    bool first_update_fired = false;
    for (int epoch = 0; epoch < cfg_.epochs_incremental; ++epoch) {
      double lr = lr_at_epoch(cfg_.schedule, cfg_.lr_incremental, cfg_.lr_floor, epoch,
                              cfg_.epochs_incremental, cfg_.milestones, cfg_.step_gamma);
      Rng shuffle_rng = stream("shuffle:" + tag + ":epoch=" + std::to_string(epoch));
      Rng aug_rng = stream("aug:" + tag + ":epoch=" + std::to_string(epoch));
      Rng mix_rng = stream("mixup:" + tag + ":epoch=" + std::to_string(epoch));
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      long batches = 0;
      for (auto [seg_begin, seg_end] : batch_ranges(static_cast<Index>(order.size()), cfg_.batch_size)) {
        std::vector<Index> idx(order.begin() + seg_begin, order.begin() + seg_end);
        model.zero_grads();
        LogitSpans spans = model.spans();
        double total = 0.0;

        // --- new-class mini-batch ---
        // Targets are built (and mixup applied, which rewrites x and the
        // teacher block) before the forward pass.
        Matrix<S> x = pipeline_.train_inputs(idx, aug_rng);
        std::vector<int> slots = slot_labels(idx);
        Matrix<S> teacher_x;
        if (use_kd()) teacher_x = frozen.logits(x);
        {
          Matrix<S> targets;
          bool sep = cfg_.softmax_mode == SoftmaxMode::sep;
          if (sep) {
            targets = new_span_targets(slots, spans, mix_rng, &x, &teacher_x, &frozen);
          } else {
            targets = target_rows(slots, spans.total, mix_rng, &x, &teacher_x, &frozen);
          }
          auto split = model.forward(x);
          Matrix<S> dlogits;
          S ce_x = sep ? intra_task_ce(split, targets, &dlogits)
                       : combined_softmax_ce(split, targets, &dlogits);
          total += static_cast<double>(ce_x);
          if (use_kd()) {
            Matrix<S> kd_grad;
            Matrix<S> current_old = split.old_logits();
            S kd_x = kd_loss<S>(current_old, teacher_x, static_cast<S>(cfg_.kd_temperature),
                                &kd_grad);
            total += log.lambda * static_cast<double>(kd_x);
            dlogits.leftCols(spans.old_count) += static_cast<S>(log.lambda) * kd_grad;
          }
          model.backward(dlogits);
        }
        if (hooks.on_after_x_backward) hooks.on_after_x_backward(model);
        ++log.x_batches;

        // --- balanced exemplar mini-batch (sampler cycles across epochs) ---
        if (memory.total_stored() > 0) {
          if (!sampler.next(p_idx, p_cls)) {
            sampler.reshuffle();
            sampler.next(p_idx, p_cls);
          }
          Matrix<S> xp = pipeline_.train_inputs(p_idx, aug_rng);
          std::vector<int> p_slots = slot_labels(p_idx);
          Matrix<S> teacher_p;
          if (use_kd()) teacher_p = frozen.logits(xp);
          Matrix<S> targets_p = target_rows(p_slots, spans.total, mix_rng, &xp, &teacher_p, &frozen);
          auto split_p = model.forward(xp);
          Matrix<S> dlogits_p;
          S ce_p = inter_task_ce(split_p, targets_p, &dlogits_p);
          total += static_cast<double>(ce_p);
          if (use_kd()) {
            Matrix<S> kd_grad;
            Matrix<S> current_old = split_p.old_logits();
            S kd_p = kd_loss<S>(current_old, teacher_p, static_cast<S>(cfg_.kd_temperature),
                                &kd_grad);
            total += log.lambda * static_cast<double>(kd_p);
            dlogits_p.leftCols(spans.old_count) += static_cast<S>(log.lambda) * kd_grad;
          }
          model.backward(dlogits_p);
          ++log.p_batches;
        }

        check_finite(static_cast<S>(total), tag.c_str(), epoch);
        if (hooks.on_after_backward) hooks.on_after_backward(model);
        if (!first_update_fired) {
          if (hooks.on_first_update) hooks.on_first_update();
          first_update_fired = true;
        }
        opt.step(static_cast<S>(lr), static_cast<S>(cfg_.momentum),
                 static_cast<S>(cfg_.weight_decay));
        loss_sum += total;
        ++batches;
      }
      log.epochs.push_back({tag, epoch, lr, loss_sum / std::max(1L, batches)});
    }
    return log;
  }

  // Iterative same-architecture distillation: the current student becomes the
  // teacher of the next generation and training continues with the step's
  // classification losses plus a KL term against that teacher over all
  // current logits. At incremental steps the old-model constraint and the
  // exemplar terms stay active.
  std::vector<StepLog> run_self_distillation(IncrementalClassifier<S>& model,
                                             const TaskView& view, const SelfDistillConfig& sd,
                                             const ExemplarMemory* memory = nullptr,
                                             const ModelSnapshot<S>* frozen = nullptr) {
    std::vector<StepLog> logs;
    if (sd.generations <= 0) return logs;  // identity
    for (int gen = 1; gen <= sd.generations; ++gen) {
      ModelSnapshot<S> teacher = snapshot(model);
      if (hooks.on_generation_teacher) hooks.on_generation_teacher(teacher, gen);
      logs.push_back(sd_generation(model, view, sd, teacher, gen, memory, frozen));
    }
    return logs;
  }

  double realized_lambda(const TaskView& view) const {
    int num_new = static_cast<int>(view.new_class_ids.size());
    int num_old = static_cast<int>(view.old_class_ids.size());
    if (!cfg_.adaptive_lambda_enabled) return cfg_.lambda_base;
    return adaptive_lambda(num_new, num_old, cfg_.lambda_base);
  }

 private:
  bool use_kd() const { return cfg_.kd_enabled; }

  Rng stream(const std::string& purpose) const { return derive_stream(seed_, purpose); }

  static std::vector<Index> flatten(const std::vector<std::vector<Index>>& per_class) {
    std::vector<Index> out;
    for (const auto& list : per_class) out.insert(out.end(), list.begin(), list.end());
    return out;
  }

  std::vector<ParamRef<S>> collect(IncrementalClassifier<S>& model) const {
    std::vector<ParamRef<S>> refs;
    model.collect_params(refs);
    return refs;
  }

  void check_spans(const IncrementalClassifier<S>& model, const TaskView& view) const {
    if (model.spans().new_count() != static_cast<Index>(view.new_class_ids.size())) {
      throw std::invalid_argument("trainer: head new span (" +
                                  std::to_string(model.spans().new_count()) +
                                  ") does not match the task's class count (" +
                                  std::to_string(view.new_class_ids.size()) + ")");
    }
    if (model.spans().old_count != static_cast<Index>(view.old_class_ids.size())) {
      throw std::invalid_argument("trainer: head old span does not match the step history");
    }
  }

  void check_finite(S loss, const std::string& phase, int epoch) const {
    if (!std::isfinite(static_cast<double>(loss))) {
      throw std::runtime_error("training diverged: non-finite loss in phase '" + phase +
                               "' at epoch " + std::to_string(epoch));
    }
  }

  std::vector<int> slot_labels(const std::vector<Index>& idx) const {
    std::vector<int> slots;
    slots.reserve(idx.size());
    for (Index i : idx) {
      slots.push_back(schedule_->slot_of(
          pipeline_.data().fine_labels[static_cast<std::size_t>(i)]));
    }
    return slots;
  }

  // One-hot rows over `width` slots with the active regularizer applied.
  // Mixup also mixes the input batch in place; label smoothing only reshapes
  // targets. KD teacher logits must be computed on the mixed inputs, so when
  // mixing changes x the teacher block is recomputed.
  Matrix<S> target_rows(const std::vector<int>& slots, Index width, Rng& mix_rng, Matrix<S>* x,
                        Matrix<S>* teacher = nullptr,
                        const ModelSnapshot<S>* frozen = nullptr) const {
    Matrix<S> targets = Matrix<S>::Zero(static_cast<Index>(slots.size()), width);
    for (std::size_t r = 0; r < slots.size(); ++r) {
      targets(static_cast<Index>(r), slots[r]) = S(1);
    }
    apply_label_regularizer(targets, mix_rng, x, teacher, frozen);
    return targets;
  }

  // Targets over the new span only (separate softmax path).
  Matrix<S> new_span_targets(const std::vector<int>& slots, LogitSpans spans, Rng& mix_rng,
                             Matrix<S>* x, Matrix<S>* teacher,
                             const ModelSnapshot<S>* frozen_for_teacher) const {
    Matrix<S> targets = Matrix<S>::Zero(static_cast<Index>(slots.size()), spans.new_count());
    for (std::size_t r = 0; r < slots.size(); ++r) {
      int rel = slots[r] - static_cast<int>(spans.old_count);
      if (rel < 0 || rel >= spans.new_count()) {
        throw std::invalid_argument("trainer: label outside the new-class span");
      }
      targets(static_cast<Index>(r), rel) = S(1);
    }
    apply_label_regularizer(targets, mix_rng, x, teacher, frozen_for_teacher);
    return targets;
  }

  void apply_label_regularizer(Matrix<S>& targets, Rng& mix_rng, Matrix<S>* x,
                               Matrix<S>* teacher, const ModelSnapshot<S>* frozen) const {
    const auto& reg = pipeline_.reg();
    if (reg.kind == RegularizerKind::ls) {
      targets = label_smooth_rows(targets, static_cast<S>(reg.ls_epsilon));
    } else if (reg.kind == RegularizerKind::mixup && x != nullptr) {
      auto mixed = mixup(*x, targets, reg.mixup_alpha, mix_rng);
      *x = std::move(mixed.inputs);
      targets = std::move(mixed.targets);
      if (teacher != nullptr && teacher->size() > 0 && frozen != nullptr) {
        *teacher = frozen->logits(*x);  // teacher sees the mixed inputs
      }
    }
  }

  StepLog sd_generation(IncrementalClassifier<S>& model, const TaskView& view,
                        const SelfDistillConfig& sd, const ModelSnapshot<S>& teacher, int gen,
                        const ExemplarMemory* memory, const ModelSnapshot<S>* frozen) {
    StepLog log;
    log.lambda = view.step >= 1 ? realized_lambda(view) : 0.0;
    SgdMomentum<S> opt;
    opt.attach(collect(model));
    std::vector<Index> order = flatten(view.new_class_data);
    const std::string tag =
        "sd:step=" + std::to_string(view.step) + ":gen=" + std::to_string(gen);

    std::unique_ptr<ExemplarSampler> sampler;
    if (memory != nullptr && memory->total_stored() > 0) {
      sampler = std::make_unique<ExemplarSampler>(*memory, cfg_.batch_size, hash_tag(tag) ^ seed_);
    }
    std::vector<Index> p_idx;
    std::vector<int> p_cls;

    for (int epoch = 0; epoch < sd.epochs_per_generation; ++epoch) {
      double lr = lr_at_epoch(LrSchedule::cosine, sd.lr, sd.lr_floor, epoch,
                              sd.epochs_per_generation, cfg_.milestones, cfg_.step_gamma);
      Rng shuffle_rng = stream("shuffle:" + tag + ":epoch=" + std::to_string(epoch));
      Rng aug_rng = stream("aug:" + tag + ":epoch=" + std::to_string(epoch));
      Rng mix_rng = stream("mixup:" + tag + ":epoch=" + std::to_string(epoch));
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      long batches = 0;
      for (auto [seg_begin, seg_end] : batch_ranges(static_cast<Index>(order.size()), cfg_.batch_size)) {
        std::vector<Index> idx(order.begin() + seg_begin, order.begin() + seg_end);
        model.zero_grads();
        LogitSpans spans = model.spans();
        double total = 0.0;

        Matrix<S> x = pipeline_.train_inputs(idx, aug_rng);
        std::vector<int> slots = slot_labels(idx);
        bool sep = view.step >= 1 && cfg_.softmax_mode == SoftmaxMode::sep;
        Matrix<S> targets = sep ? new_span_targets(slots, spans, mix_rng, &x, nullptr, nullptr)
                                : target_rows(slots, spans.total, mix_rng, &x);
        Matrix<S> teacher_old;
        if (view.step >= 1 && use_kd() && frozen != nullptr) teacher_old = frozen->logits(x);
        Matrix<S> teacher_all = teacher.logits(x);
        {
          auto split = model.forward(x);
          Matrix<S> dlogits;
          S ce = sep ? intra_task_ce(split, targets, &dlogits)
                     : inter_task_ce(split, targets, &dlogits);
          total += static_cast<double>(ce);

          // Generation-teacher distillation over all current logits.
          Matrix<S> sd_grad;
          S sd_kl = kd_loss<S>(split.logits, teacher_all, S(1), &sd_grad);
          total += sd.weight * static_cast<double>(sd_kl);
          dlogits += static_cast<S>(sd.weight) * sd_grad;

          if (view.step >= 1 && use_kd() && frozen != nullptr) {
            Matrix<S> kd_grad;
            Matrix<S> current_old = split.old_logits();
            S kd_x = kd_loss<S>(current_old, teacher_old, static_cast<S>(cfg_.kd_temperature),
                                &kd_grad);
            total += log.lambda * static_cast<double>(kd_x);
            dlogits.leftCols(spans.old_count) += static_cast<S>(log.lambda) * kd_grad;
          }
          model.backward(dlogits);
        }
        ++log.x_batches;

        if (sampler) {
          if (!sampler->next(p_idx, p_cls)) {
            sampler->reshuffle();
            sampler->next(p_idx, p_cls);
          }
          Matrix<S> xp = pipeline_.train_inputs(p_idx, aug_rng);
          std::vector<int> p_slots = slot_labels(p_idx);
          Matrix<S> targets_p = target_rows(p_slots, spans.total, mix_rng, &xp);
          auto split_p = model.forward(xp);
          Matrix<S> dlogits_p;
          S ce_p = inter_task_ce(split_p, targets_p, &dlogits_p);
          total += static_cast<double>(ce_p);

          Matrix<S> sd_grad_p;
          S sd_kl_p = kd_loss<S>(split_p.logits, teacher.logits(xp), S(1), &sd_grad_p);
          total += sd.weight * static_cast<double>(sd_kl_p);
          dlogits_p += static_cast<S>(sd.weight) * sd_grad_p;

          if (view.step >= 1 && use_kd() && frozen != nullptr) {
            Matrix<S> kd_grad;
            Matrix<S> current_old = split_p.old_logits();
            S kd_p = kd_loss<S>(current_old, Matrix<S>(frozen->logits(xp)),
                                static_cast<S>(cfg_.kd_temperature), &kd_grad);
            total += log.lambda * static_cast<double>(kd_p);
            dlogits_p.leftCols(spans.old_count) += static_cast<S>(log.lambda) * kd_grad;
          }
          model.backward(dlogits_p);
          ++log.p_batches;
        }

        check_finite(static_cast<S>(total), tag, epoch);
        opt.step(static_cast<S>(lr), static_cast<S>(cfg_.momentum),
                 static_cast<S>(cfg_.weight_decay));
        loss_sum += total;
        ++batches;
      }
      log.epochs.push_back({tag, epoch, lr, loss_sum / std::max(1L, batches)});
    }
    return log;
  }

  const ClassTaskSchedule* schedule_;
  Pipeline<S> pipeline_;
  TrainConfig cfg_;
  std::uint64_t seed_;
};

// Argmax prediction over all current logits, evaluated in mini-batches.
template <class S>
std::vector<int> predict_slots(const IncrementalClassifier<S>& model, const Pipeline<S>& pipeline,
                               const std::vector<Index>& idx, Index eval_batch = 256) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(eval_batch)) {
    std::vector<Index> chunk(idx.begin() + static_cast<std::ptrdiff_t>(off),
                             idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                               idx.size(), off + static_cast<std::size_t>(eval_batch))));
    Matrix<S> x = pipeline.eval_inputs(chunk);
    Matrix<S> logits = model.eval_logits(x);
    for (Index r = 0; r < logits.rows(); ++r) {
      Index best = 0;
      for (Index c = 1; c < logits.cols(); ++c) {
        if (logits(r, c) > logits(r, best)) best = c;
      }
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

}  // namespace ccil
