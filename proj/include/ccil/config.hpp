#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "ccil/dataset.hpp"
#include "ccil/nets.hpp"
#include "ccil/trainer.hpp"

namespace ccil {

using Json = nlohmann::json;

struct DatasetConfig {
  std::string name = "synthetic";  // "synthetic" | "cifar100"
  std::string path;                // dataset root for file-backed datasets
  SyntheticSpec synthetic;
};

struct EvalConfig {
  int ece_bins = 15;
  bool feature_retention = true;
  int retention_epochs = 60;
  double retention_lr = 0.1;
  Index eval_batch = 256;
};

// Full declarative description of one benchmark run. A run is reproducible
// from this structure alone.
struct ExperimentConfig {
  std::string run_id = "run";
  DatasetConfig dataset;
  int base_count = 4;
  int num_tasks = 4;
  std::uint64_t class_seed = 1993;
  int memory_capacity = 60;
  ExtractorSpec extractor;
  HeadMode head_mode = HeadMode::dot;
  double head_scale = 8.0;
  TrainConfig train;
  RegularizerConfig reg;
  SelfDistillConfig sd;
  EvalConfig eval;
  PipelineConfig pipeline;
  std::uint64_t seed = 0;
  std::string output_dir;        // empty: keep results in memory only
  std::string init_checkpoint;   // start from a stored base model snapshot

  void validate() const;  // throws std::invalid_argument naming the field
};

Json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const Json& j);

// Stable id over everything except seed/run_id/output paths; multi-seed
// replicas of one configuration share it.
std::uint64_t config_fingerprint(const ExperimentConfig& cfg);

std::string head_mode_to_string(HeadMode m);
HeadMode head_mode_from_string(const std::string& s);
std::string softmax_mode_to_string(SoftmaxMode m);
SoftmaxMode softmax_mode_from_string(const std::string& s);

// Paper defaults for the distillation base weight, per dataset.
double default_lambda_base(const std::string& dataset_name);

}  // namespace ccil
