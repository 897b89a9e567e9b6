#include "ccil/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ccil/checkpoint.hpp"
#include "ccil/nets.hpp"
#include "ccil/trainer.hpp"

namespace fs = std::filesystem;

namespace ccil {

namespace {

DataSplits load_data(const DatasetConfig& cfg) {
  if (cfg.name == "synthetic") return make_synthetic(cfg.synthetic);
  if (cfg.name == "cifar100") return load_cifar100(cfg.path);
  throw std::invalid_argument("dataset.name: unsupported dataset '" + cfg.name + "'");
}

ExtractorSpec resolved_extractor(const ExperimentConfig& cfg, const Dataset& train) {
  ExtractorSpec spec = cfg.extractor;
  if (spec.arch.empty()) spec.arch = train.image.valid() ? "resnet32" : "mlp";
  if (spec.arch.rfind("resnet", 0) == 0) {
    spec.image = train.image;
    if (!spec.image.valid()) {
      throw std::invalid_argument("model.arch: " + spec.arch + " requires image inputs");
    }
  } else {
    if (spec.input_dim == 0) spec.input_dim = train.inputs.cols();
    if (spec.feature_dim == 0) spec.feature_dim = spec.input_dim;
    if (spec.input_dim != train.inputs.cols()) {
      throw std::invalid_argument("model.input_dim: dataset provides " +
                                  std::to_string(train.inputs.cols()) + " inputs");
    }
  }
  return spec;
}

// Per-task and overall accuracy of the current model over every class seen
// through `step`, on the test split.
void evaluate_step(const IncrementalClassifier<Scalar>& model, const Pipeline<Scalar>& test_pipe,
                   const ClassTaskSchedule& schedule, const Dataset& test, int step,
                   Index eval_batch, AccuracyMatrix& matrix) {
  auto by_class = test.indices_by_class();
  std::vector<double> row;
  double correct_all = 0.0, count_all = 0.0;
  for (int task = 0; task <= step; ++task) {
    std::vector<Index> idx;
    for (int cls : schedule.task_classes(task)) {
      const auto& list = by_class[static_cast<std::size_t>(cls)];
      idx.insert(idx.end(), list.begin(), list.end());
    }
    auto preds = predict_slots(model, test_pipe, idx, eval_batch);
    double correct = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      int slot = schedule.slot_of(test.fine_labels[static_cast<std::size_t>(idx[i])]);
      if (preds[i] == slot) correct += 1.0;
    }
    row.push_back(100.0 * correct / static_cast<double>(idx.size()));
    correct_all += correct;
    count_all += static_cast<double>(idx.size());
  }
  matrix.task_acc.push_back(row);
  matrix.overall.push_back(100.0 * correct_all / count_all);
}

// Confidence/correctness pairs of the model on the given test samples.
std::vector<std::pair<double, bool>> confidence_pairs(const IncrementalClassifier<Scalar>& model,
                                                      const Pipeline<Scalar>& test_pipe,
                                                      const ClassTaskSchedule& schedule,
                                                      const Dataset& test,
                                                      const std::vector<Index>& idx,
                                                      Index eval_batch) {
  std::vector<std::pair<double, bool>> pairs;
  pairs.reserve(idx.size());
  for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(eval_batch)) {
    std::vector<Index> chunk(idx.begin() + static_cast<std::ptrdiff_t>(off),
                             idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                               idx.size(), off + static_cast<std::size_t>(eval_batch))));
    MatX x = test_pipe.eval_inputs(chunk);
    MatX logits = model.eval_logits(x);
    for (Index r = 0; r < logits.rows(); ++r) {
      // Stable softmax max-probability.
      double m = logits.row(r).maxCoeff();
      double denom = 0.0;
      Index best = 0;
      for (Index c = 0; c < logits.cols(); ++c) {
        denom += std::exp(static_cast<double>(logits(r, c)) - m);
        if (logits(r, c) > logits(r, best)) best = c;
      }
      double conf = std::exp(static_cast<double>(logits(r, best)) - m) / denom;
      int slot = schedule.slot_of(
          test.fine_labels[static_cast<std::size_t>(chunk[static_cast<std::size_t>(r)])]);
      pairs.push_back({conf, static_cast<int>(best) == slot});
    }
  }
  return pairs;
}

// SS metrics want the superclass of each head slot.
std::vector<int> slot_superclasses(const ClassTaskSchedule& schedule, const Dataset& data,
                                   Index count) {
  std::vector<int> out(static_cast<std::size_t>(count));
  for (Index slot = 0; slot < count; ++slot) {
    out[static_cast<std::size_t>(slot)] =
        data.superclass_of(schedule.class_order[static_cast<std::size_t>(slot)]);
  }
  return out;
}

// Trains a fresh linear head on frozen features; returns test accuracy in
// percent. Used for the feature-retention metric.
double frozen_feature_accuracy(const IncrementalClassifier<Scalar>& model,
                               const Pipeline<Scalar>& train_pipe,
                               const Pipeline<Scalar>& test_pipe,
                               const ClassTaskSchedule& schedule, const Dataset& train,
                               const Dataset& test, const EvalConfig& eval, Index batch,
                               std::uint64_t seed) {
  // Features are fixed, so compute them once.
  auto featurize = [&](const Pipeline<Scalar>& pipe, const Dataset& data) {
    std::vector<Index> idx(static_cast<std::size_t>(data.size()));
    for (Index i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    MatX feats(data.size(), model.extractor().feature_dim());
    for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(eval.eval_batch)) {
      std::vector<Index> chunk(idx.begin() + static_cast<std::ptrdiff_t>(off),
                               idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                 idx.size(),
                                                 off + static_cast<std::size_t>(eval.eval_batch))));
      feats.middleRows(static_cast<Index>(off), static_cast<Index>(chunk.size())) =
          model.eval_features(pipe.eval_inputs(chunk));
    }
    return feats;
  };
  MatX train_feats = featurize(train_pipe, train);
  MatX test_feats = featurize(test_pipe, test);

  Rng init_rng = derive_stream(seed, "retention:init");
  ClassifierHead<Scalar> head(model.extractor().feature_dim(), HeadMode::dot);
  head.expand(train.num_classes, init_rng);
  SgdMomentum<Scalar> opt;
  std::vector<ParamRef<Scalar>> refs;
  head.collect_params(refs);
  opt.attach(refs);

  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  for (Index i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < eval.retention_epochs; ++epoch) {
    double lr = lr_at_epoch(LrSchedule::cosine, eval.retention_lr, 1e-4, epoch,
                            eval.retention_epochs, {}, 0.1);
    Rng shuffle_rng = derive_stream(seed, "retention:epoch=" + std::to_string(epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(batch)) {
      std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(batch));
      MatX x(static_cast<Index>(end - off), train_feats.cols());
      std::vector<int> labels(end - off);
      for (std::size_t i = off; i < end; ++i) {
        x.row(static_cast<Index>(i - off)) = train_feats.row(order[i]);
        labels[i - off] = schedule.slot_of(
            train.fine_labels[static_cast<std::size_t>(order[i])]);
      }
      head.zero_grads();
      LogitsSplit<Scalar> split{head.forward(x), {0, head.num_classes()}};
      MatX dlogits;
      inter_task_ce(split, labels, &dlogits);
      head.backward(x, dlogits);
      opt.step(static_cast<Scalar>(lr), Scalar(0.9), Scalar(5e-4));
    }
  }

  MatX logits = head.forward(test_feats);
  double correct = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    if (static_cast<int>(best) ==
        schedule.slot_of(test.fine_labels[static_cast<std::size_t>(r)])) {
      correct += 1.0;
    }
  }
  return 100.0 * correct / static_cast<double>(test.size());
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void dump_memory(const std::string& path, const ExemplarMemory& memory) {
  Json j;
  j["capacity"] = memory.capacity;
  j["per_class"] = memory.per_class;
  Json sets = Json::object();
  for (const auto& [cls, list] : memory.sets) sets[std::to_string(cls)] = list;
  j["sets"] = sets;
  j["warnings"] = memory.warnings;
  write_text(path, j.dump(2));
}

Json report_to_json(const MetricsReport& report) {
  Json j;
  j["avg_acc"] = report.avg_acc;
  j["forgetting"] = report.forgetting;
  if (report.feature_retention) j["feature_retention"] = *report.feature_retention;
  j["ss_nll"] = report.ss_nll;
  j["ss_acc"] = report.ss_acc;
  j["ece"] = report.ece;
  if (report.weight_norm_gap) j["weight_norm_gap"] = *report.weight_norm_gap;
  j["provenance"] = report.provenance;
  return j;
}

std::string matrix_to_csv(const AccuracyMatrix& matrix) {
  std::string csv = "step";
  for (std::size_t j = 0; j < matrix.task_acc.back().size(); ++j) {
    csv += ",task" + std::to_string(j);
  }
  csv += ",overall\n";
  for (std::size_t i = 0; i < matrix.task_acc.size(); ++i) {
    csv += std::to_string(i);
    for (std::size_t j = 0; j < matrix.task_acc.back().size(); ++j) {
      csv += ",";
      if (j < matrix.task_acc[i].size()) {
        csv += std::to_string(matrix.task_acc[i][j]);
      }
    }
    csv += "," + std::to_string(matrix.overall[i]) + "\n";
  }
  return csv;
}

std::string log_to_csv(const std::vector<EpochLog>& log) {
  std::string csv = "phase,epoch,lr,loss\n";
  for (const auto& e : log) {
    csv += e.phase + "," + std::to_string(e.epoch) + "," + std::to_string(e.lr) + "," +
           std::to_string(e.loss) + "\n";
  }
  return csv;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  DataSplits splits = load_data(cfg.dataset);
  const Dataset& train = splits.train;
  const Dataset& test = splits.test;

  ClassTaskSchedule schedule =
      build_schedule(train.num_classes, cfg.base_count, cfg.num_tasks, cfg.class_seed);

  ExtractorSpec espec = resolved_extractor(cfg, train);
  Pipeline<Scalar> train_pipe(train, cfg.pipeline, cfg.reg);
  Pipeline<Scalar> test_pipe(test, cfg.pipeline, cfg.reg);
  Trainer<Scalar> trainer(schedule, train_pipe, cfg.train, cfg.seed);

  RunResult result;
  result.class_order = schedule.class_order;

  // Results directory and manifest.
  std::string run_dir;
  if (!cfg.output_dir.empty()) {
    run_dir = cfg.output_dir + "/" + cfg.run_id;
    fs::create_directories(run_dir);
    Json manifest;
    manifest["config"] = to_json(cfg);
    manifest["config_fingerprint"] = config_fingerprint(cfg);
    manifest["class_order"] = schedule.class_order;
    write_text(run_dir + "/manifest.json", manifest.dump(2));
    result.run_dir = run_dir;
  }

  CheckpointMeta meta;
  meta.extractor = espec;
  meta.head_mode = cfg.head_mode;
  meta.head_scale = cfg.head_scale;
  meta.config_fingerprint = config_fingerprint(cfg);
  auto save_step = [&](IncrementalClassifier<Scalar>& model, const std::string& name) {
    if (run_dir.empty()) return std::string();
    CheckpointMeta m = meta;
    m.num_classes = model.num_classes();
    m.old_count = model.spans().old_count;
    std::string path = run_dir + "/" + name + ".ckpt";
    save_checkpoint(path, model, m);
    return path;
  };

  // Base model: fresh training or a stored snapshot (overfitting study).
  std::unique_ptr<IncrementalClassifier<Scalar>> model;
  TaskView view0 = task_view(schedule, 0, train);
  if (!cfg.init_checkpoint.empty()) {
    CheckpointMeta loaded_meta;
    model = std::make_unique<IncrementalClassifier<Scalar>>(
        load_checkpoint(cfg.init_checkpoint, &loaded_meta));
    if (model->num_classes() != static_cast<Index>(cfg.base_count)) {
      throw std::runtime_error("init_checkpoint: snapshot has " +
                               std::to_string(model->num_classes()) + " classes, base task has " +
                               std::to_string(cfg.base_count));
    }
    model->set_old_count(0);
  } else {
    Rng model_rng = derive_stream(cfg.seed, "init:model");
    model = std::make_unique<IncrementalClassifier<Scalar>>(
        make_extractor<Scalar>(espec, model_rng), cfg.head_mode,
        static_cast<Scalar>(cfg.head_scale));
    Rng head_rng = derive_stream(cfg.seed, "init:head:step=0");
    model->expand_head(cfg.base_count, head_rng);

    if (cfg.train.snapshot_every > 0 && !run_dir.empty()) {
      trainer.hooks.on_base_epoch_end = [&](const IncrementalClassifier<Scalar>& m, int epoch) {
        if ((epoch + 1) % cfg.train.snapshot_every == 0) {
          CheckpointMeta sm = meta;
          sm.num_classes = m.num_classes();
          sm.old_count = 0;
          IncrementalClassifier<Scalar> copy(m);
          save_checkpoint(run_dir + "/snapshot_epoch_" + std::to_string(epoch + 1) + ".ckpt",
                          copy, sm);
        }
      };
    }
    StepLog base_log = trainer.train_base_task(*model, view0);
    result.log.insert(result.log.end(), base_log.epochs.begin(), base_log.epochs.end());
    trainer.hooks.on_base_epoch_end = nullptr;

    if (cfg.reg.kind == RegularizerKind::sd && cfg.sd.generations > 0) {
      auto sd_logs = trainer.run_self_distillation(*model, view0, cfg.sd);
      for (const auto& l : sd_logs) {
        result.log.insert(result.log.end(), l.epochs.begin(), l.epochs.end());
      }
    }
  }

  // The first-task model, kept frozen for SS metrics, ECE and forgetting.
  ModelSnapshot<Scalar> base_model = snapshot(*model);

  AccuracyMatrix& matrix = result.matrix;
  evaluate_step(*model, test_pipe, schedule, test, 0, cfg.eval.eval_batch, matrix);
  std::vector<std::string> provenance;
  provenance.push_back(save_step(*model, "step0"));

  // Exemplar memory for the base classes, compiled from the trained model.
  ExemplarMemory memory;
  memory.capacity = cfg.memory_capacity;
  {
    int m = exemplars_per_class(cfg.memory_capacity, cfg.base_count);
    ModelSnapshot<Scalar> phi = snapshot(*model);
    memory = update_exemplar_sets<Scalar>(
        train.inputs, view0.new_class_ids, view0.new_class_data, memory, m,
        [&](const MatX& x) { return phi.features(test_pipe.normalize_rows(x)); },
        cfg.seed ^ hash_tag("exemplar:step=0"));
    if (!run_dir.empty()) dump_memory(run_dir + "/memory_step0.json", memory);
  }

  for (int step = 1; step <= cfg.num_tasks; ++step) {
    TaskView view = task_view(schedule, step, train);
    ModelSnapshot<Scalar> frozen = snapshot(*model);
    Rng head_rng = derive_stream(cfg.seed, "init:head:step=" + std::to_string(step));
    model->expand_head(static_cast<Index>(view.new_class_ids.size()), head_rng);

    int m = exemplars_per_class(cfg.memory_capacity, schedule.classes_through(step));
    memory = update_exemplar_sets<Scalar>(
        train.inputs, view.new_class_ids, view.new_class_data, memory, m,
        [&](const MatX& x) { return frozen.features(test_pipe.normalize_rows(x)); },
        cfg.seed ^ hash_tag("exemplar:step=" + std::to_string(step)));
    for (const auto& warning : memory.warnings) {
      std::cerr << "[memory] step " << step << ": " << warning << "\n";
    }

    StepLog step_log = trainer.incremental_step(*model, frozen, memory, view);
    result.log.insert(result.log.end(), step_log.epochs.begin(), step_log.epochs.end());
    result.lambdas.push_back(step_log.lambda);

    if (cfg.reg.kind == RegularizerKind::sd && cfg.sd.generations > 0) {
      auto sd_logs = trainer.run_self_distillation(*model, view, cfg.sd, &memory, &frozen);
      for (const auto& l : sd_logs) {
        result.log.insert(result.log.end(), l.epochs.begin(), l.epochs.end());
      }
    }

    evaluate_step(*model, test_pipe, schedule, test, step, cfg.eval.eval_batch, matrix);
    provenance.push_back(save_step(*model, "step" + std::to_string(step)));
    if (!run_dir.empty()) {
      dump_memory(run_dir + "/memory_step" + std::to_string(step) + ".json", memory);
    }
  }

  // ---- metrics ----
  MetricsReport& report = result.report;
  report.avg_acc = average_incremental_accuracy(matrix);
  report.forgetting = forgetting_rate(matrix.task_acc.front()[0], matrix.task_acc.back()[0]);
  for (const std::string& p : provenance) {
    if (!p.empty()) report.provenance.push_back(p);
  }

  result.final_norms = weight_norms(model->head(), model->spans());
  if (result.final_norms.old_mean && result.final_norms.new_mean) {
    report.weight_norm_gap = std::abs(*result.final_norms.old_mean - *result.final_norms.new_mean);
  }

  // Secondary-information metrics and calibration of the first-task model on
  // the base classes' test data.
  {
    auto by_class = test.indices_by_class();
    std::vector<Index> idx;
    for (int cls : schedule.task_classes(0)) {
      const auto& list = by_class[static_cast<std::size_t>(cls)];
      idx.insert(idx.end(), list.begin(), list.end());
    }
    const IncrementalClassifier<Scalar>& base = base_model.model();
    if (train.has_coarse() && cfg.base_count >= 2) {
      std::vector<int> slot_super = slot_superclasses(schedule, train, cfg.base_count);
      MatX logits(static_cast<Index>(idx.size()), base.num_classes());
      std::vector<int> slot_labels(idx.size());
      for (std::size_t off = 0; off < idx.size();
           off += static_cast<std::size_t>(cfg.eval.eval_batch)) {
        std::vector<Index> chunk(idx.begin() + static_cast<std::ptrdiff_t>(off),
                                 idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                   idx.size(),
                                                   off + static_cast<std::size_t>(cfg.eval.eval_batch))));
        logits.middleRows(static_cast<Index>(off), static_cast<Index>(chunk.size())) =
            base.eval_logits(test_pipe.eval_inputs(chunk));
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        slot_labels[i] = schedule.slot_of(test.fine_labels[static_cast<std::size_t>(idx[i])]);
      }
      report.ss_nll = ss_nll(logits, slot_labels, slot_super);
      report.ss_acc = ss_acc(logits, slot_labels, slot_super);
    }
    report.ece = ece(confidence_pairs(base, test_pipe, schedule, test, idx, cfg.eval.eval_batch),
                     cfg.eval.ece_bins);
  }

  if (cfg.eval.feature_retention) {
    // Joint upper bound: same architecture trained on all classes at once.
    ClassTaskSchedule joint_schedule =
        build_schedule(train.num_classes, train.num_classes, 0, cfg.class_seed);
    Rng joint_rng = derive_stream(cfg.seed, "init:joint");
    IncrementalClassifier<Scalar> joint(make_extractor<Scalar>(espec, joint_rng), cfg.head_mode,
                                        static_cast<Scalar>(cfg.head_scale));
    Rng joint_head_rng = derive_stream(cfg.seed, "init:joint-head");
    joint.expand_head(train.num_classes, joint_head_rng);
    RegularizerConfig no_reg;
    Pipeline<Scalar> joint_pipe(train, cfg.pipeline, no_reg);
    Trainer<Scalar> joint_trainer(joint_schedule, joint_pipe, cfg.train, cfg.seed ^ 0x9e3779b9ULL);
    TaskView joint_view = task_view(joint_schedule, 0, train);
    joint_trainer.train_base_task(joint, joint_view);

    AccuracyMatrix joint_matrix;
    Pipeline<Scalar> joint_test_pipe(test, cfg.pipeline, no_reg);
    evaluate_step(joint, joint_test_pipe, joint_schedule, test, 0, cfg.eval.eval_batch,
                  joint_matrix);
    double joint_acc = joint_matrix.overall[0];

    double frozen_acc =
        frozen_feature_accuracy(*model, train_pipe, test_pipe, schedule, train, test, cfg.eval,
                                cfg.train.batch_size, cfg.seed);
    report.feature_retention = feature_retention_gap(joint_acc, frozen_acc);
  }

  if (!run_dir.empty()) {
    write_text(run_dir + "/accuracy_matrix.csv", matrix_to_csv(matrix));
    Json metrics = report_to_json(report);
    metrics["lambdas"] = result.lambdas;
    if (result.final_norms.old_mean) metrics["final_norm_old"] = *result.final_norms.old_mean;
    if (result.final_norms.new_mean) metrics["final_norm_new"] = *result.final_norms.new_mean;
    metrics["overall_acc"] = matrix.overall;
    write_text(run_dir + "/metrics.json", metrics.dump(2));
    write_text(run_dir + "/training_log.csv", log_to_csv(result.log));
  }
  return result;
}

RunResult recompute_metrics(const std::string& run_dir, const std::string& data_root_override) {
  std::ifstream in(run_dir + "/manifest.json");
  if (!in) throw std::runtime_error("cannot open " + run_dir + "/manifest.json");
  Json manifest = Json::parse(in);
  ExperimentConfig cfg = config_from_json(manifest.at("config"));
  if (!data_root_override.empty()) cfg.dataset.path = data_root_override;

  DataSplits splits = load_data(cfg.dataset);
  const Dataset& test = splits.test;
  ClassTaskSchedule schedule =
      build_schedule(splits.train.num_classes, cfg.base_count, cfg.num_tasks, cfg.class_seed);

  RunResult result;
  result.class_order = schedule.class_order;
  result.run_dir = run_dir;
  Pipeline<Scalar> test_pipe(test, cfg.pipeline, cfg.reg);

  for (int step = 0; step <= cfg.num_tasks; ++step) {
    std::string path = run_dir + "/step" + std::to_string(step) + ".ckpt";
    IncrementalClassifier<Scalar> model = load_checkpoint(path);
    evaluate_step(model, test_pipe, schedule, test, step, cfg.eval.eval_batch, result.matrix);
    result.report.provenance.push_back(path);
  }
  result.report.avg_acc = average_incremental_accuracy(result.matrix);
  result.report.forgetting =
      forgetting_rate(result.matrix.task_acc.front()[0], result.matrix.task_acc.back()[0]);
  return result;
}

}  // namespace ccil
