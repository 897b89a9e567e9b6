#include "ccil/config.hpp"

#include <stdexcept>

namespace ccil {

std::string head_mode_to_string(HeadMode m) {
  return m == HeadMode::dot ? "dot" : "cosine";
}

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "dot") return HeadMode::dot;
  if (s == "cosine") return HeadMode::cosine;
  throw std::invalid_argument("head_mode: expected 'dot' or 'cosine', got '" + s + "'");
}

std::string softmax_mode_to_string(SoftmaxMode m) {
  return m == SoftmaxMode::sep ? "sep" : "comb";
}

SoftmaxMode softmax_mode_from_string(const std::string& s) {
  if (s == "sep") return SoftmaxMode::sep;
  if (s == "comb") return SoftmaxMode::comb;
  throw std::invalid_argument("softmax_mode: expected 'sep' or 'comb', got '" + s + "'");
}

double default_lambda_base(const std::string& dataset_name) {
  if (dataset_name == "cifar100" || dataset_name == "synthetic") return 5.0;
  if (dataset_name == "imagenet100") return 20.0;
  if (dataset_name == "imagenet") return 600.0;
  throw std::invalid_argument("no default lambda_base for dataset '" + dataset_name + "'");
}

namespace {

std::string schedule_to_string(LrSchedule s) {
  return s == LrSchedule::cosine ? "cosine" : "step";
}

LrSchedule schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "step") return LrSchedule::step;
  throw std::invalid_argument("train.schedule: expected 'cosine' or 'step', got '" + s + "'");
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument("config field '" + scope + key + "': " + e.what());
  }
}

}  // namespace

Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["run_id"] = cfg.run_id;
  j["dataset"] = {
      {"name", cfg.dataset.name},
      {"path", cfg.dataset.path},
      {"synthetic",
       {{"num_classes", cfg.dataset.synthetic.num_classes},
        {"num_superclasses", cfg.dataset.synthetic.num_superclasses},
        {"input_dim", cfg.dataset.synthetic.input_dim},
        {"train_per_class", cfg.dataset.synthetic.train_per_class},
        {"test_per_class", cfg.dataset.synthetic.test_per_class},
        {"superclass_radius", cfg.dataset.synthetic.superclass_radius},
        {"class_radius", cfg.dataset.synthetic.class_radius},
        {"noise_sigma", cfg.dataset.synthetic.noise_sigma},
        {"label_noise", cfg.dataset.synthetic.label_noise},
        {"seed", cfg.dataset.synthetic.seed}}},
  };
  j["schedule"] = {{"base_count", cfg.base_count},
                   {"num_tasks", cfg.num_tasks},
                   {"class_seed", cfg.class_seed}};
  j["memory"] = {{"capacity", cfg.memory_capacity}};
  j["model"] = {{"arch", cfg.extractor.arch},
                {"input_dim", cfg.extractor.input_dim},
                {"hidden", cfg.extractor.hidden},
                {"feature_dim", cfg.extractor.feature_dim},
                {"image", {cfg.extractor.image.channels, cfg.extractor.image.height,
                           cfg.extractor.image.width}},
                {"head", head_mode_to_string(cfg.head_mode)},
                {"head_scale", cfg.head_scale}};
  j["train"] = {{"epochs_base", cfg.train.epochs_base},
                {"epochs_incremental", cfg.train.epochs_incremental},
                {"lr_base", cfg.train.lr_base},
                {"lr_incremental", cfg.train.lr_incremental},
                {"lr_floor", cfg.train.lr_floor},
                {"schedule", schedule_to_string(cfg.train.schedule)},
                {"milestones", cfg.train.milestones},
                {"step_gamma", cfg.train.step_gamma},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_size", cfg.train.batch_size},
                {"softmax_mode", softmax_mode_to_string(cfg.train.softmax_mode)},
                {"kd", cfg.train.kd_enabled},
                {"kd_temperature", cfg.train.kd_temperature},
                {"lambda_base", cfg.train.lambda_base},
                {"adaptive_lambda", cfg.train.adaptive_lambda_enabled},
                {"snapshot_every", cfg.train.snapshot_every}};
  j["regularizer"] = {{"kind", to_string(cfg.reg.kind)},
                      {"ls_epsilon", cfg.reg.ls_epsilon},
                      {"mixup_alpha", cfg.reg.mixup_alpha},
                      {"cutout_size", cfg.reg.cutout_size}};
  j["self_distill"] = {{"generations", cfg.sd.generations},
                       {"epochs_per_generation", cfg.sd.epochs_per_generation},
                       {"lr", cfg.sd.lr},
                       {"lr_floor", cfg.sd.lr_floor},
                       {"weight", cfg.sd.weight}};
  j["eval"] = {{"ece_bins", cfg.eval.ece_bins},
               {"feature_retention", cfg.eval.feature_retention},
               {"retention_epochs", cfg.eval.retention_epochs},
               {"retention_lr", cfg.eval.retention_lr},
               {"eval_batch", cfg.eval.eval_batch}};
  j["pipeline"] = {{"baseline_augment", cfg.pipeline.baseline_augment},
                   {"crop_pad", cfg.pipeline.crop_pad},
                   {"jitter_sigma", cfg.pipeline.jitter_sigma},
                   {"norm_mean", cfg.pipeline.norm_mean},
                   {"norm_std", cfg.pipeline.norm_std}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["init_checkpoint"] = cfg.init_checkpoint;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  read(j, "run_id", cfg.run_id, "");
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    read(d, "name", cfg.dataset.name, "dataset.");
    read(d, "path", cfg.dataset.path, "dataset.");
    if (d.contains("synthetic")) {
      const Json& s = d.at("synthetic");
      read(s, "num_classes", cfg.dataset.synthetic.num_classes, "dataset.synthetic.");
      read(s, "num_superclasses", cfg.dataset.synthetic.num_superclasses, "dataset.synthetic.");
      read(s, "input_dim", cfg.dataset.synthetic.input_dim, "dataset.synthetic.");
      read(s, "train_per_class", cfg.dataset.synthetic.train_per_class, "dataset.synthetic.");
      read(s, "test_per_class", cfg.dataset.synthetic.test_per_class, "dataset.synthetic.");
      read(s, "superclass_radius", cfg.dataset.synthetic.superclass_radius, "dataset.synthetic.");
      read(s, "class_radius", cfg.dataset.synthetic.class_radius, "dataset.synthetic.");
      read(s, "noise_sigma", cfg.dataset.synthetic.noise_sigma, "dataset.synthetic.");
      read(s, "label_noise", cfg.dataset.synthetic.label_noise, "dataset.synthetic.");
      read(s, "seed", cfg.dataset.synthetic.seed, "dataset.synthetic.");
    }
  }
  if (j.contains("schedule")) {
    const Json& s = j.at("schedule");
    read(s, "base_count", cfg.base_count, "schedule.");
    read(s, "num_tasks", cfg.num_tasks, "schedule.");
    read(s, "class_seed", cfg.class_seed, "schedule.");
  }
  if (j.contains("memory")) read(j.at("memory"), "capacity", cfg.memory_capacity, "memory.");
  if (j.contains("model")) {
    const Json& m = j.at("model");
    read(m, "arch", cfg.extractor.arch, "model.");
    read(m, "input_dim", cfg.extractor.input_dim, "model.");
    read(m, "hidden", cfg.extractor.hidden, "model.");
    read(m, "feature_dim", cfg.extractor.feature_dim, "model.");
    if (m.contains("image")) {
      auto img = m.at("image").get<std::vector<int>>();
      if (img.size() != 3) throw std::invalid_argument("config field 'model.image': expected [c,h,w]");
      cfg.extractor.image = {img[0], img[1], img[2]};
    }
    std::string head = head_mode_to_string(cfg.head_mode);
    read(m, "head", head, "model.");
    cfg.head_mode = head_mode_from_string(head);
    read(m, "head_scale", cfg.head_scale, "model.");
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    read(t, "epochs_base", cfg.train.epochs_base, "train.");
    read(t, "epochs_incremental", cfg.train.epochs_incremental, "train.");
    read(t, "lr_base", cfg.train.lr_base, "train.");
    read(t, "lr_incremental", cfg.train.lr_incremental, "train.");
    read(t, "lr_floor", cfg.train.lr_floor, "train.");
    std::string sched = schedule_to_string(cfg.train.schedule);
    read(t, "schedule", sched, "train.");
    cfg.train.schedule = schedule_from_string(sched);
    read(t, "milestones", cfg.train.milestones, "train.");
    read(t, "step_gamma", cfg.train.step_gamma, "train.");
    read(t, "momentum", cfg.train.momentum, "train.");
    read(t, "weight_decay", cfg.train.weight_decay, "train.");
    read(t, "batch_size", cfg.train.batch_size, "train.");
    std::string sm = softmax_mode_to_string(cfg.train.softmax_mode);
    read(t, "softmax_mode", sm, "train.");
    cfg.train.softmax_mode = softmax_mode_from_string(sm);
    read(t, "kd", cfg.train.kd_enabled, "train.");
    read(t, "kd_temperature", cfg.train.kd_temperature, "train.");
    read(t, "lambda_base", cfg.train.lambda_base, "train.");
    read(t, "adaptive_lambda", cfg.train.adaptive_lambda_enabled, "train.");
    read(t, "snapshot_every", cfg.train.snapshot_every, "train.");
  }
  if (j.contains("regularizer")) {
    const Json& r = j.at("regularizer");
    std::string kind = to_string(cfg.reg.kind);
    read(r, "kind", kind, "regularizer.");
    cfg.reg.kind = regularizer_from_string(kind);
    read(r, "ls_epsilon", cfg.reg.ls_epsilon, "regularizer.");
    read(r, "mixup_alpha", cfg.reg.mixup_alpha, "regularizer.");
    read(r, "cutout_size", cfg.reg.cutout_size, "regularizer.");
  }
  if (j.contains("self_distill")) {
    const Json& s = j.at("self_distill");
    read(s, "generations", cfg.sd.generations, "self_distill.");
    read(s, "epochs_per_generation", cfg.sd.epochs_per_generation, "self_distill.");
    read(s, "lr", cfg.sd.lr, "self_distill.");
    read(s, "lr_floor", cfg.sd.lr_floor, "self_distill.");
    read(s, "weight", cfg.sd.weight, "self_distill.");
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    read(e, "ece_bins", cfg.eval.ece_bins, "eval.");
    read(e, "feature_retention", cfg.eval.feature_retention, "eval.");
    read(e, "retention_epochs", cfg.eval.retention_epochs, "eval.");
    read(e, "retention_lr", cfg.eval.retention_lr, "eval.");
    read(e, "eval_batch", cfg.eval.eval_batch, "eval.");
  }
  if (j.contains("pipeline")) {
    const Json& p = j.at("pipeline");
    read(p, "baseline_augment", cfg.pipeline.baseline_augment, "pipeline.");
    read(p, "crop_pad", cfg.pipeline.crop_pad, "pipeline.");
    read(p, "jitter_sigma", cfg.pipeline.jitter_sigma, "pipeline.");
    read(p, "norm_mean", cfg.pipeline.norm_mean, "pipeline.");
    read(p, "norm_std", cfg.pipeline.norm_std, "pipeline.");
  }
  read(j, "seed", cfg.seed, "");
  read(j, "output_dir", cfg.output_dir, "");
  read(j, "init_checkpoint", cfg.init_checkpoint, "");
  return cfg;
}

void ExperimentConfig::validate() const {
  if (dataset.name != "synthetic" && dataset.name != "cifar100") {
    throw std::invalid_argument("dataset.name: unsupported dataset '" + dataset.name + "'");
  }
  if (dataset.name == "cifar100" && dataset.path.empty()) {
    throw std::invalid_argument("dataset.path: cifar100 requires a dataset root directory");
  }
  if (base_count < 1) throw std::invalid_argument("schedule.base_count: must be >= 1");
  if (num_tasks < 0) throw std::invalid_argument("schedule.num_tasks: must be >= 0");
  if (memory_capacity < 1) throw std::invalid_argument("memory.capacity: must be >= 1");
  if (train.batch_size < 1) throw std::invalid_argument("train.batch_size: must be >= 1");
  if (train.epochs_base < 0 || train.epochs_incremental < 0) {
    throw std::invalid_argument("train.epochs: must be >= 0");
  }
  if (!(train.lambda_base > 0.0)) throw std::invalid_argument("train.lambda_base: must be > 0");
  if (!(train.kd_temperature > 0.0)) {
    throw std::invalid_argument("train.kd_temperature: must be > 0");
  }
  if (!(reg.ls_epsilon >= 0.0 && reg.ls_epsilon < 1.0)) {
    throw std::invalid_argument("regularizer.ls_epsilon: must lie in [0, 1)");
  }
  if (!(reg.mixup_alpha > 0.0)) throw std::invalid_argument("regularizer.mixup_alpha: must be > 0");
  if (sd.generations < 0) throw std::invalid_argument("self_distill.generations: must be >= 0");
  if (sd.generations > 0 && reg.kind != RegularizerKind::sd) {
    throw std::invalid_argument(
        "self_distill.generations: > 0 requires regularizer.kind == 'sd' (regularizers are "
        "evaluated individually)");
  }
  if (eval.ece_bins < 1) throw std::invalid_argument("eval.ece_bins: must be >= 1");
  if (!pipeline.norm_mean.empty() && pipeline.norm_mean.size() != pipeline.norm_std.size()) {
    throw std::invalid_argument("pipeline.norm_mean/std: sizes must match");
  }
}

std::uint64_t config_fingerprint(const ExperimentConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("seed");
  j.erase("run_id");
  j.erase("output_dir");
  j.erase("init_checkpoint");
  return hash_tag(j.dump());
}

}  // namespace ccil
