// ccil command-line benchmark harness: `run` executes experiments or canned
// recipes, `render` aggregates results into tables and plots, `metrics`
// recomputes evaluation numbers from stored checkpoints.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ccil/experiment.hpp"
#include "ccil/recipes.hpp"
#include "ccil/report.hpp"

using namespace ccil;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

struct RunFlags {
  std::string config_path;
  std::string recipe;
  std::string out_dir = "results";
  std::string run_id;
  std::vector<std::uint64_t> seeds;
  bool list_recipes = false;

  // Config overrides; empty/none means "keep the config value".
  std::string dataset;
  std::string data_root;
  int base_count = -1;
  int num_tasks = -1;
  long long class_seed = -1;
  int memory_capacity = -1;
  std::string arch;
  std::vector<long long> hidden;
  int feature_dim = -1;
  std::string head;
  std::string softmax;
  int kd = -1;  // tri-state
  double lambda_base = -1.0;
  int adaptive_lambda = -1;
  double lr_base = -1.0;
  double lr_incremental = -1.0;
  int epochs_base = -1;
  int epochs_incremental = -1;
  int batch_size = -1;
  std::string regularizer;
  double ls_epsilon = -1.0;
  double mixup_alpha = -1.0;
  int sd_generations = -1;
  int retention = -1;
  int snapshot_every = -1;
  double weight_decay = -1.0;
  double kd_temperature = -1.0;
};

std::string env_data_root() {
  const char* env = std::getenv("CCIL_DATA_ROOT");
  return env ? env : "";
}

// Precedence: built-in defaults < --config file < individual flags.
ExperimentConfig build_config(const RunFlags& flags) {
  ExperimentConfig cfg;
  bool dataset_is_cifar = flags.dataset == "cifar100";
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) throw std::invalid_argument("cannot open config file " + flags.config_path);
    cfg = config_from_json(Json::parse(in));
  } else if (dataset_is_cifar) {
    cfg = cifar100_config();
  } else {
    cfg = desk_config();
  }

  if (!flags.dataset.empty()) {
    if (flags.dataset == "cifar100" && cfg.dataset.name != "cifar100") cfg = cifar100_config();
    if (flags.dataset == "synthetic" && cfg.dataset.name != "synthetic") cfg = desk_config();
    cfg.dataset.name = flags.dataset;
  }
  if (!flags.data_root.empty()) cfg.dataset.path = flags.data_root;
  if (cfg.dataset.name == "cifar100" && cfg.dataset.path.empty()) cfg.dataset.path = env_data_root();
  if (!flags.run_id.empty()) cfg.run_id = flags.run_id;
  if (flags.base_count >= 0) cfg.base_count = flags.base_count;
  if (flags.num_tasks >= 0) cfg.num_tasks = flags.num_tasks;
  if (flags.class_seed >= 0) cfg.class_seed = static_cast<std::uint64_t>(flags.class_seed);
  if (flags.memory_capacity >= 0) cfg.memory_capacity = flags.memory_capacity;
  if (!flags.arch.empty()) cfg.extractor.arch = flags.arch;
  if (!flags.hidden.empty()) {
    cfg.extractor.hidden.assign(flags.hidden.begin(), flags.hidden.end());
  }
  if (flags.feature_dim > 0) cfg.extractor.feature_dim = flags.feature_dim;
  if (!flags.head.empty()) cfg.head_mode = head_mode_from_string(flags.head);
  if (!flags.softmax.empty()) cfg.train.softmax_mode = softmax_mode_from_string(flags.softmax);
  if (flags.kd >= 0) cfg.train.kd_enabled = flags.kd != 0;
  if (flags.lambda_base > 0) cfg.train.lambda_base = flags.lambda_base;
  if (flags.adaptive_lambda >= 0) cfg.train.adaptive_lambda_enabled = flags.adaptive_lambda != 0;
  if (flags.lr_base > 0) cfg.train.lr_base = flags.lr_base;
  if (flags.lr_incremental > 0) cfg.train.lr_incremental = flags.lr_incremental;
  if (flags.epochs_base >= 0) cfg.train.epochs_base = flags.epochs_base;
  if (flags.epochs_incremental >= 0) cfg.train.epochs_incremental = flags.epochs_incremental;
  if (flags.batch_size > 0) cfg.train.batch_size = flags.batch_size;
  if (!flags.regularizer.empty()) {
    cfg.reg.kind = regularizer_from_string(flags.regularizer);
    if (cfg.reg.kind == RegularizerKind::sd && cfg.sd.generations == 0) cfg.sd.generations = 4;
    if (cfg.reg.kind != RegularizerKind::sd) cfg.sd.generations = 0;
  }
  if (flags.ls_epsilon >= 0) cfg.reg.ls_epsilon = flags.ls_epsilon;
  if (flags.mixup_alpha > 0) cfg.reg.mixup_alpha = flags.mixup_alpha;
  if (flags.sd_generations >= 0) {
    cfg.sd.generations = flags.sd_generations;
    if (flags.sd_generations > 0) cfg.reg.kind = RegularizerKind::sd;
  }
  if (flags.retention >= 0) cfg.eval.feature_retention = flags.retention != 0;
  if (flags.snapshot_every >= 0) cfg.train.snapshot_every = flags.snapshot_every;
  if (flags.weight_decay >= 0) cfg.train.weight_decay = flags.weight_decay;
  if (flags.kd_temperature > 0) cfg.train.kd_temperature = flags.kd_temperature;
  return cfg;
}

int do_run(const RunFlags& flags) {
  if (flags.list_recipes) {
    for (const auto& name : recipe_names()) std::cout << name << "\n";
    return kExitOk;
  }
  std::vector<std::uint64_t> seeds = flags.seeds;

  std::vector<ExperimentConfig> runs;
  if (!flags.recipe.empty()) {
    ExperimentConfig base = build_config(flags);
    if (seeds.empty()) seeds = {0, 1, 2};
    Recipe recipe = expand_recipe(flags.recipe, base, seeds, flags.out_dir);
    runs = recipe.runs;
  } else {
    ExperimentConfig cfg = build_config(flags);
    cfg.output_dir = flags.out_dir;
    if (seeds.empty()) seeds = {cfg.seed};
    for (std::uint64_t seed : seeds) {
      ExperimentConfig replica = cfg;
      replica.seed = seed;
      if (seeds.size() > 1) replica.run_id = cfg.run_id + "-seed" + std::to_string(seed);
      runs.push_back(replica);
    }
  }

  for (const auto& cfg : runs) cfg.validate();

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& cfg = runs[i];
    std::cout << "[run " << (i + 1) << "/" << runs.size() << "] " << cfg.run_id << "\n";
    RunResult result = run_experiment(cfg);
    std::cout << "  avg acc " << result.report.avg_acc << "  forgetting "
              << result.report.forgetting;
    if (result.report.feature_retention) {
      std::cout << "  retention " << *result.report.feature_retention;
    }
    std::cout << "\n";
    if (!result.run_dir.empty()) std::cout << "  results: " << result.run_dir << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional class-incremental learning benchmark"};
  app.require_subcommand(1);

  RunFlags flags;
  CLI::App* run = app.add_subcommand("run", "execute an experiment or a canned recipe");
  run->add_option("--config", flags.config_path, "JSON config file (flags override it)");
  run->add_option("--recipe", flags.recipe, "canned study; see --list-recipes");
  run->add_flag("--list-recipes", flags.list_recipes, "list recipe names and exit");
  run->add_option("--out", flags.out_dir, "results root directory")->capture_default_str();
  run->add_option("--run-id", flags.run_id, "run directory name");
  run->add_option("--seeds", flags.seeds, "experiment seeds (repeat runs)");
  run->add_option("--dataset", flags.dataset, "synthetic | cifar100");
  run->add_option("--data-root", flags.data_root,
                  "dataset root (or env CCIL_DATA_ROOT); train.bin/test.bin for cifar100");
  run->add_option("--base-count", flags.base_count, "classes in the base task");
  run->add_option("--num-tasks", flags.num_tasks, "number of incremental tasks");
  run->add_option("--class-seed", flags.class_seed, "class shuffle seed");
  run->add_option("--memory", flags.memory_capacity, "exemplar memory capacity K");
  run->add_option("--arch", flags.arch, "linear | mlp | mlp-bn | resnet32");
  run->add_option("--hidden", flags.hidden, "mlp hidden layer widths");
  run->add_option("--feature-dim", flags.feature_dim, "feature dimension (vector archs)");
  run->add_option("--head", flags.head, "dot | cosine");
  run->add_option("--softmax", flags.softmax, "sep | comb");
  run->add_option("--kd", flags.kd, "1 enables, 0 disables distillation");
  run->add_option("--lambda-base", flags.lambda_base, "distillation base weight");
  run->add_option("--adaptive-lambda", flags.adaptive_lambda, "1 adaptive, 0 fixed");
  run->add_option("--lr-base", flags.lr_base, "base-task learning rate");
  run->add_option("--lr-incremental", flags.lr_incremental, "incremental learning rate");
  run->add_option("--epochs-base", flags.epochs_base, "base-task epochs");
  run->add_option("--epochs-incremental", flags.epochs_incremental, "incremental epochs");
  run->add_option("--batch", flags.batch_size, "mini-batch size");
  run->add_option("--reg", flags.regularizer, "none | sd | h-aug | ls | mixup");
  run->add_option("--ls-eps", flags.ls_epsilon, "label smoothing epsilon");
  run->add_option("--mixup-alpha", flags.mixup_alpha, "mixup Beta(alpha, alpha)");
  run->add_option("--sd-generations", flags.sd_generations, "self-distillation generations");
  run->add_option("--retention", flags.retention, "1 computes feature retention, 0 skips");
  run->add_option("--snapshot-every", flags.snapshot_every, "base checkpoint cadence (epochs)");
  run->add_option("--weight-decay", flags.weight_decay, "SGD weight decay");
  run->add_option("--kd-temperature", flags.kd_temperature, "distillation temperature");

  std::string render_results, render_out;
  CLI::App* render = app.add_subcommand("render", "aggregate results into tables and plots");
  render->add_option("--results", render_results, "results root to scan")->required();
  render->add_option("--out", render_out, "output directory (default <results>/report)");

  std::string metrics_run, metrics_data;
  CLI::App* metrics = app.add_subcommand("metrics", "recompute metrics from checkpoints");
  metrics->add_option("--run", metrics_run, "run directory with manifest + checkpoints")
      ->required();
  metrics->add_option("--data-root", metrics_data, "dataset root override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (run->parsed()) return do_run(flags);
    if (render->parsed()) {
      if (render_out.empty()) render_out = render_results + "/report";
      RenderSummary summary = render_report(render_results, render_out);
      std::cout << "runs: " << summary.runs_found << "  groups: " << summary.groups << "\n";
      for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& f : summary.written) std::cout << "wrote " << f << "\n";
      return kExitOk;
    }
    if (metrics->parsed()) {
      RunResult result = recompute_metrics(metrics_run, metrics_data);
      std::cout << "avg acc " << result.report.avg_acc << "\nforgetting "
                << result.report.forgetting << "\n";
      for (std::size_t i = 0; i < result.matrix.overall.size(); ++i) {
        std::cout << "step " << i << " overall " << result.matrix.overall[i] << "\n";
      }
      return kExitOk;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}
