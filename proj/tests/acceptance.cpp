// Acceptance gate: runs every primary criterion at its stated tolerance and
// prints one PASS/FAIL line each. The two extended CIFAR-100 reproductions
// are opt-in recipes (several GPU-hours per run); this binary verifies their
// completed results when pointed at them and reports SKIP otherwise.
//
//   acceptance [--cifar-results DIR] [--overfit-results DIR]

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <vector>

#include <json.hpp>

#include "ccil/experiment.hpp"
#include "ccil/nets.hpp"
#include "ccil/recipes.hpp"
#include "ccil/trainer.hpp"

using namespace ccil;
namespace fs = std::filesystem;
using Mat = Matrix<double>;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << " — " << detail << "\n";
  if (!pass) ++failures;
}

void report_skip(int id, const std::string& name, const std::string& detail) {
  std::cout << "[SKIP] " << id << ". " << name << " — " << detail << "\n";
}

double rel_err(double a, double b) {
  double scale = std::max(std::abs(a), std::abs(b));
  if (scale < 1e-8) return 0.0;
  return std::abs(a - b) / scale;
}

Mat random_mat(Index rows, Index cols, Rng& rng, double spread = 2.0) {
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = spread * rng.normal();
  return m;
}

template <class F>
double central_diff(F&& f, Mat& x, Index r, Index c, double h = 1e-5) {
  double orig = x(r, c);
  x(r, c) = orig + h;
  double fp = f();
  x(r, c) = orig - h;
  double fm = f();
  x(r, c) = orig;
  return (fp - fm) / (2.0 * h);
}

// ---------------------------------------------------------------- criterion 1
void criterion_gradients() {
  Rng rng(17);
  int instances = 0;
  double worst = 0.0;
  bool ok = true;

  for (int trial = 0; trial < 120; ++trial) {
    Index batch = 1 + static_cast<Index>(rng.uniform_int(4));
    Index old_count = static_cast<Index>(rng.uniform_int(4));
    Index new_count = 2 + static_cast<Index>(rng.uniform_int(3));
    Index total = old_count + new_count;
    Mat logits = random_mat(batch, total, rng);
    Mat teacher = random_mat(batch, old_count, rng);
    std::vector<int> new_labels, all_labels;
    for (Index r = 0; r < batch; ++r) {
      new_labels.push_back(static_cast<int>(old_count +
                                            rng.uniform_int(static_cast<std::uint32_t>(new_count))));
      all_labels.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(total))));
    }
    double temp = 0.5 + rng.next_double() * 2.0;
    double lambda = adaptive_lambda(static_cast<int>(new_count),
                                    static_cast<int>(old_count), 5.0);

    auto check = [&](double analytic, double fd) {
      double e = rel_err(analytic, fd);
      worst = std::max(worst, e);
      if (e >= 1e-4) ok = false;
    };

    {  // intra-task CE (separate softmax over the new span)
      LogitsSplit<double> split{logits, {old_count, total}};
      Mat grad;
      intra_task_ce(split, new_labels, &grad);
      for (Index r = 0; r < batch; ++r) {
        for (Index c = 0; c < total; ++c) {
          check(grad(r, c), central_diff(
                                [&] {
                                  LogitsSplit<double> s{split.logits, split.spans};
                                  return intra_task_ce(s, new_labels);
                                },
                                split.logits, r, c));
        }
      }
    }
    if (old_count > 0) {  // KD over the old-class span
      Mat current = logits.leftCols(old_count);
      Mat grad;
      kd_loss<double>(current, teacher, temp, &grad);
      for (Index r = 0; r < batch; ++r) {
        for (Index c = 0; c < old_count; ++c) {
          check(grad(r, c),
                central_diff([&] { return kd_loss<double>(current, teacher, temp); }, current, r, c));
        }
      }
    }
    {  // inter-task CE (combined softmax over all logits)
      LogitsSplit<double> split{logits, {old_count, total}};
      Mat grad;
      inter_task_ce(split, all_labels, &grad);
      for (Index r = 0; r < batch; ++r) {
        for (Index c = 0; c < total; ++c) {
          check(grad(r, c), central_diff(
                                [&] {
                                  LogitsSplit<double> s{split.logits, split.spans};
                                  return inter_task_ce(s, all_labels);
                                },
                                split.logits, r, c));
        }
      }
    }
    if (old_count > 0) {  // total loss composition
      Mat x_logits = logits;
      auto total_of = [&] {
        LogitsSplit<double> split{x_logits, {old_count, total}};
        double ce = intra_task_ce(split, new_labels);
        double kd = kd_loss<double>(Mat(x_logits.leftCols(old_count)), teacher, temp);
        return total_loss(ce, 0.0, kd, 0.0, lambda);
      };
      LogitsSplit<double> split{x_logits, {old_count, total}};
      Mat g_ce, g_kd;
      intra_task_ce(split, new_labels, &g_ce);
      kd_loss<double>(Mat(x_logits.leftCols(old_count)), teacher, temp, &g_kd);
      Mat grad = g_ce;
      grad.leftCols(old_count) += lambda * g_kd;
      for (Index r = 0; r < batch; ++r) {
        for (Index c = 0; c < total; ++c) {
          check(grad(r, c), central_diff(total_of, x_logits, r, c));
        }
      }
    }
    ++instances;
  }

  // KD: zero at teacher == student; non-negative on 1000 random pairs.
  bool kd_ok = true;
  for (int i = 0; i < 1000; ++i) {
    Mat cur = random_mat(1, 4, rng);
    Mat fro = random_mat(1, 4, rng);
    if (kd_loss<double>(cur, fro, 1.0) < 0.0) kd_ok = false;
  }
  Mat same = random_mat(2, 5, rng);
  if (kd_loss<double>(same, same, 1.0) != 0.0) kd_ok = false;

  // Sep-mode CE gradient on old-class head weights is exactly zero.
  Rng hrng(31);
  ClassifierHead<double> head(3, HeadMode::dot);
  head.expand(2, hrng);
  head.expand(2, hrng);
  Mat feats = random_mat(4, 3, hrng);
  std::vector<int> labels{2, 3, 2, 3};
  head.zero_grads();
  LogitsSplit<double> split{head.forward(feats), {2, 4}};
  Mat dlogits;
  intra_task_ce(split, labels, &dlogits);
  head.backward(feats, dlogits);
  std::vector<ParamRef<double>> refs;
  head.collect_params(refs);
  bool sep_zero = refs[0].grad->topRows(2).cwiseAbs().maxCoeff() == 0.0;

  report(1, "loss/gradient property suite", ok && kd_ok && sep_zero && instances >= 100,
         std::to_string(instances) + " randomized instances, worst rel err " +
             std::to_string(worst) + ", KD >= 0 on 1000 pairs, sep-mode old-head grad exactly 0");
}

// ---------------------------------------------------------------- criterion 2
void criterion_memory() {
  bool ok = true;
  std::string detail;

  ok &= exemplars_per_class(2000, 100) == 20;

  // Prefix truncation preserves order.
  ExemplarMemory memory;
  memory.capacity = 100;
  memory.sets[3] = {11, 7, 19, 2, 5};
  Mat inputs = Mat::Zero(40, 4);
  auto trunc = update_exemplar_sets<double>(inputs, {}, {}, memory, 2,
                                            [](const Mat& x) { return x; }, 0);
  ok &= trunc.sets.at(3) == std::vector<Index>{11, 7};

  // Seeded random selection: deterministic per seed, varies across seeds.
  Rng rng(3);
  Mat feats(40, 4);
  for (Index j = 0; j < 4; ++j)
    for (Index i = 0; i < 40; ++i) feats(i, j) = rng.normal();
  std::vector<Index> candidates(40);
  for (Index i = 0; i < 40; ++i) candidates[static_cast<std::size_t>(i)] = i;
  auto pick = [&](std::uint64_t seed) {
    return update_exemplar_sets<double>(feats, {0}, {candidates}, ExemplarMemory{}, 12,
                                        [](const Mat& x) { return x; }, seed);
  };
  ok &= pick(5).sets.at(0) == pick(5).sets.at(0);
  ok &= pick(5).sets.at(0) != pick(6).sets.at(0);

  // Ascending distance order matches an independent full sort, 50 trials.
  for (int trial = 0; trial < 50 && ok; ++trial) {
    auto updated = pick(static_cast<std::uint64_t>(trial));
    const auto& stored = updated.sets.at(0);
    Mat picked(stored.size(), 4);
    for (std::size_t r = 0; r < stored.size(); ++r) picked.row(static_cast<Index>(r)) = feats.row(stored[r]);
    RowVector<double> mu = picked.colwise().mean();
    std::vector<std::pair<double, Index>> oracle;
    for (Index idx : stored) oracle.push_back({(feats.row(idx) - mu).norm(), idx});
    std::sort(oracle.begin(), oracle.end());
    for (std::size_t r = 0; r < stored.size(); ++r) {
      if (stored[r] != oracle[r].second) ok = false;
    }
  }

  // Update-before-training event order: the trainer rejects a memory that
  // lacks the step's classes and sees the updated one at its first update.
  SyntheticSpec spec;
  spec.num_classes = 6;
  spec.num_superclasses = 3;
  spec.input_dim = 8;
  spec.train_per_class = 20;
  spec.test_per_class = 5;
  spec.seed = 11;
  auto splits = make_synthetic(spec);
  auto schedule = build_schedule(6, 3, 1, 11);
  Rng mrng = derive_stream(11, "init:model");
  ExtractorSpec espec;
  espec.arch = "mlp";
  espec.input_dim = 8;
  espec.hidden = {12};
  espec.feature_dim = 8;
  IncrementalClassifier<Scalar> model(make_extractor<Scalar>(espec, mrng), HeadMode::dot);
  Rng hrng2 = derive_stream(11, "init:head");
  model.expand_head(3, hrng2);
  Pipeline<Scalar> pipe(splits.train, {}, {});
  TrainConfig tc;
  tc.epochs_base = 4;
  tc.epochs_incremental = 2;
  tc.batch_size = 16;
  Trainer<Scalar> trainer(schedule, pipe, tc, 11);
  auto view0 = task_view(schedule, 0, splits.train);
  trainer.train_base_task(model, view0);
  auto frozen = snapshot(model);
  auto view1 = task_view(schedule, 1, splits.train);
  model.expand_head(3, hrng2);

  ExemplarMemory stale;
  stale.capacity = 12;
  bool rejected = false;
  try {
    trainer.incremental_step(model, frozen, stale, view1);
  } catch (const std::logic_error&) {
    rejected = true;
  }
  ok &= rejected;

  ExemplarMemory ready;
  ready.capacity = 12;
  ready = update_exemplar_sets<Scalar>(
      splits.train.inputs, view0.new_class_ids, view0.new_class_data, ready, 4,
      [&](const MatX& x) { return frozen.features(x); }, 11);
  ready = update_exemplar_sets<Scalar>(
      splits.train.inputs, view1.new_class_ids, view1.new_class_data, ready,
      exemplars_per_class(12, 6),
      [&](const MatX& x) { return frozen.features(x); }, 11);
  bool saw_updated = false;
  trainer.hooks.on_first_update = [&] {
    saw_updated = true;
    for (int cls : view1.new_class_ids) saw_updated &= ready.contains(cls);
  };
  trainer.incremental_step(model, frozen, ready, view1);
  ok &= saw_updated;

  report(2, "exemplar memory oracle", ok,
         "m = K/t, prefix truncation, seeded selection, full-sort distance oracle (50 trials), "
         "update-before-training order enforced");
}

// ---------------------------------------------------------------- criterion 3
void criterion_metrics() {
  bool ok = true;
  Rng rng(23);

  // Brute-force SS enumeration on <= 10-class instances, exact to 1e-9.
  std::vector<int> super{0, 0, 0, 1, 1, 1, 2, 2, 2, 3};
  for (int trial = 0; trial < 500; ++trial) {
    Index n = 4 + static_cast<Index>(rng.uniform_int(7));
    Mat logits(1, n);
    std::vector<double> raw(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) {
      raw[static_cast<std::size_t>(j)] = 3.0 * rng.normal();
      logits(0, j) = raw[static_cast<std::size_t>(j)];
    }
    int label = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(n)));

    std::size_t drop = 0;
    for (std::size_t j = 1; j < raw.size(); ++j) {
      if (raw[j] > raw[drop]) drop = j;
    }
    double denom = 0.0, mass = 0.0;
    std::size_t second = drop == 0 ? 1 : 0;
    for (std::size_t j = 0; j < raw.size(); ++j) {
      if (j == drop) continue;
      denom += std::exp(raw[j]);
      if (super[j] == super[static_cast<std::size_t>(label)]) mass += std::exp(raw[j]);
      if (raw[j] > raw[second]) second = j;
    }
    double oracle_nll = -std::log(std::max(mass, denom * 1e-12) / denom);
    bool oracle_acc = super[second] == super[static_cast<std::size_t>(label)];

    if (std::abs(ss_nll(logits, {label}, super) - oracle_nll) > 1e-9) ok = false;
    if (ss_acc(logits, {label}, super) != (oracle_acc ? 100.0 : 0.0)) ok = false;
  }

  // ECE: direct bin arithmetic and the 1-bin identity.
  std::vector<std::pair<double, bool>> pairs{
      {0.3, false}, {0.4, true}, {0.9, true}, {0.8, false}, {0.7, false}};
  double expected = (2.0 / 5.0) * std::abs(0.5 - 0.35) + (3.0 / 5.0) * std::abs(1.0 / 3.0 - 0.8);
  if (std::abs(ece(pairs, 2) - expected) > 1e-12) ok = false;
  double conf_sum = 0.0, acc_sum = 0.0;
  std::vector<std::pair<double, bool>> many;
  for (int i = 0; i < 200; ++i) {
    double c = rng.next_double();
    bool correct = rng.next_double() < 0.7;
    many.push_back({c, correct});
    conf_sum += c;
    acc_sum += correct;
  }
  if (std::abs(ece(many, 1) - std::abs(acc_sum - conf_sum) / 200.0) > 1e-12) ok = false;

  // Accuracy-matrix derived metrics on constructed values.
  AccuracyMatrix m;
  m.task_acc = {{80.0}, {55.0, 65.0}};
  m.overall = {80.0, 60.0};
  if (std::abs(average_incremental_accuracy(m) - 70.0) > 1e-12) ok = false;
  if (std::abs(forgetting_rate(78.0, 61.0) - 17.0) > 1e-12) ok = false;

  report(3, "metric oracles", ok,
         "SS-NLL/SS-Acc match brute force on 500 instances (1e-9), ECE bin arithmetic + 1-bin "
         "identity, avg-acc/forgetting hand values");
}

// ------------------------------------------------------------- criteria 4-6
struct RowStats {
  std::vector<double> avg_acc, forgetting, norm_gap;
  double mean_acc() const {
    double s = 0;
    for (double v : avg_acc) s += v;
    return s / static_cast<double>(avg_acc.size());
  }
  double mean_fgt() const {
    double s = 0;
    for (double v : forgetting) s += v;
    return s / static_cast<double>(forgetting.size());
  }
  double mean_gap() const {
    double s = 0;
    for (double v : norm_gap) s += v;
    return s / static_cast<double>(norm_gap.size());
  }
};

void criterion_forgetting_demo() {
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  ExperimentConfig ccil = desk_config();
  ccil.eval.feature_retention = false;
  ExperimentConfig naive = ccil;
  naive.train.softmax_mode = SoftmaxMode::comb;
  naive.train.kd_enabled = false;
  naive.train.lr_incremental = naive.train.lr_base;

  auto drops = [&](ExperimentConfig cfg) {
    std::vector<double> out;
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      RunResult r = run_experiment(cfg);
      out.push_back(forgetting_rate(r.matrix.task_acc.front()[0], r.matrix.task_acc.back()[0]));
    }
    return out;
  };
  std::vector<double> naive_drops = drops(naive);
  std::vector<double> ccil_drops = drops(ccil);
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  double naive_mean = mean(naive_drops), ccil_mean = mean(ccil_drops);
  bool pass = naive_mean > 30.0 && ccil_mean < naive_mean / 2.0;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "task-0 drop over 3 seeds: naive %.1f (%.1f/%.1f/%.1f) > 30; Sep+LowLR+KD %.1f "
                "(%.1f/%.1f/%.1f) < naive/2 = %.1f",
                naive_mean, naive_drops[0], naive_drops[1], naive_drops[2], ccil_mean,
                ccil_drops[0], ccil_drops[1], ccil_drops[2], naive_mean / 2.0);
  report(4, "desk-scale forgetting demonstration", pass, buf);
}

void criteria_ablation(std::map<std::string, RowStats>& rows_out) {
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  Recipe recipe = expand_recipe("ablation-fig4", desk_config(), seeds, "");
  std::map<std::string, RowStats> rows;
  for (ExperimentConfig cfg : recipe.runs) {
    cfg.output_dir.clear();
    RunResult r = run_experiment(cfg);
    std::string row = cfg.run_id.substr(0, cfg.run_id.rfind("-seed"));
    rows[row].avg_acc.push_back(r.report.avg_acc);
    rows[row].forgetting.push_back(r.report.forgetting);
    if (r.final_norms.old_mean && r.final_norms.new_mean) {
      rows[row].norm_gap.push_back(std::abs(*r.final_norms.old_mean - *r.final_norms.new_mean));
    }
  }
  rows_out = rows;

  // Full-scale reference magnitudes for this grid are 47.97 / 52.86 /
  // 52.79 / 58.60 without KD and 52.71 / 60.85 / 54.54 / 64.79 with KD; the
  // desk gate is the ordering, not the magnitudes.
  std::cout << "       ablation 3-seed means (desk benchmark, hardened variant):\n";
  for (const auto& [row, stats] : rows) {
    std::printf("         %-18s avg acc %6.2f   forgetting %5.1f\n", row.c_str(),
                stats.mean_acc(), stats.mean_fgt());
  }

  auto acc = [&](const std::string& r) { return rows.at(r).mean_acc(); };
  bool ok = true;
  std::string detail;
  for (const char* kd : {"nokd", "kd"}) {
    double c = acc(std::string("comb+") + kd);
    double cl = acc(std::string("comb+lowlr+") + kd);
    double s = acc(std::string("sep+") + kd);
    double sl = acc(std::string("sep+lowlr+") + kd);
    bool col = c < cl && c < s && cl < sl && s < sl;
    ok &= col;
    detail += std::string(kd) + ": comb < {sep, comb+lowlr} < sep+lowlr " +
              (col ? "holds" : "VIOLATED") + "; ";
  }
  for (const char* r : {"comb", "comb+lowlr", "sep", "sep+lowlr"}) {
    double delta = acc(std::string(r) + "+kd") - acc(std::string(r) + "+nokd");
    ok &= delta > 0.0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s %+0.2f ", r, delta);
    detail += buf;
  }
  report(5, "ablation ordering (3-seed means)", ok, detail);
}

void criterion_weight_bias(const std::map<std::string, RowStats>& rows) {
  // Pooled |mean old norm - mean new norm| per configuration (both KD
  // variants of the ablation), Comb vs Sep+LowLR.
  auto pooled = [&](const std::string& base) {
    const RowStats& a = rows.at(base + "+nokd");
    const RowStats& b = rows.at(base + "+kd");
    double s = 0;
    for (double v : a.norm_gap) s += v;
    for (double v : b.norm_gap) s += v;
    return s / static_cast<double>(a.norm_gap.size() + b.norm_gap.size());
  };
  double comb = pooled("comb");
  double sep_lowlr = pooled("sep+lowlr");
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "pooled |old-new| head-norm gap: comb %.3f > sep+lowlr %.3f (w/ KD pair: %.3f vs "
                "%.3f; w/o KD pair: %.3f vs %.3f)",
                comb, sep_lowlr, rows.at("comb+kd").mean_gap(),
                rows.at("sep+lowlr+kd").mean_gap(), rows.at("comb+nokd").mean_gap(),
                rows.at("sep+lowlr+nokd").mean_gap());
  report(6, "weight-bias diagnostic", comb > sep_lowlr, buf);
}

// ------------------------------------------------------------- criteria 7-8
struct StoredRun {
  std::string row;
  Json metrics;
};

std::vector<StoredRun> load_runs(const std::string& dir) {
  std::vector<StoredRun> runs;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "metrics.json") continue;
    std::ifstream min(entry.path().parent_path() / "manifest.json");
    if (!min) continue;
    Json manifest = Json::parse(min);
    std::string run_id = manifest.at("config").at("run_id").get<std::string>();
    std::string row = run_id.substr(0, run_id.rfind("-seed"));
    std::ifstream met(entry.path());
    runs.push_back({row, Json::parse(met)});
  }
  return runs;
}

std::map<std::string, std::vector<Json>> group_rows(const std::vector<StoredRun>& runs) {
  std::map<std::string, std::vector<Json>> rows;
  for (const auto& r : runs) rows[r.row].push_back(r.metrics);
  return rows;
}

double row_mean(const std::vector<Json>& v, const char* key) {
  double s = 0;
  int n = 0;
  for (const auto& j : v) {
    if (j.contains(key) && j.at(key).is_number()) {
      s += j.at(key).get<double>();
      ++n;
    }
  }
  return n > 0 ? s / n : std::nan("");
}

void criterion_cifar(const std::string& results_dir) {
  if (results_dir.empty()) {
    report_skip(7, "extended CIFAR-100 reproduction",
                "opt-in recipe (several GPU-hours per run): run `ccil run --recipe sota-table5 "
                "--dataset cifar100 --data-root ...` and `--recipe regularizers-table2`, then "
                "re-run acceptance with --cifar-results DIR");
    return;
  }
  auto rows = group_rows(load_runs(results_dir));
  bool ok = true;
  std::string detail;
  auto check_ref = [&](const std::string& row, double ref) {
    if (!rows.count(row)) {
      detail += row + " missing; ";
      ok = false;
      return;
    }
    double v = row_mean(rows.at(row), "avg_acc");
    bool good = std::abs(v - ref) <= 1.0;
    ok &= good;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s %.2f (ref %.2f +/- 1.0) %s; ", row.c_str(), v, ref,
                  good ? "ok" : "OFF");
    detail += buf;
  };
  check_ref("ccil-5task", 66.44);
  check_ref("ccil-10task", 64.86);
  check_ref("ccil-sd-5task", 67.17);
  check_ref("ccil-sd-10task", 65.86);

  // Table-2 directional effects vs the CCIL control row.
  if (rows.count("ccil")) {
    double base_acc = row_mean(rows.at("ccil"), "avg_acc");
    double base_ssn = row_mean(rows.at("ccil"), "ss_nll");
    double base_ssa = row_mean(rows.at("ccil"), "ss_acc");
    auto direction = [&](const std::string& row, bool improves) {
      if (!rows.count(row)) {
        detail += row + " missing; ";
        ok = false;
        return;
      }
      double acc = row_mean(rows.at(row), "avg_acc");
      double ssn = row_mean(rows.at(row), "ss_nll");
      double ssa = row_mean(rows.at(row), "ss_acc");
      bool good = improves ? (acc > base_acc && ssn < base_ssn && ssa > base_ssa)
                           : (acc < base_acc && ssn > base_ssn && ssa < base_ssa);
      ok &= good;
      detail += row + (good ? " direction ok; " : " direction WRONG; ");
    };
    direction("ccil+sd", true);
    direction("ccil+h-aug", true);
    direction("ccil+ls", false);
    direction("ccil+mixup", false);
  } else {
    detail += "regularizer control row missing; ";
    ok = false;
  }
  report(7, "extended CIFAR-100 reproduction", ok, detail);
}

void criterion_overfit(const std::string& results_dir) {
  if (results_dir.empty()) {
    report_skip(8, "overfitting-forgetting correlation",
                "opt-in recipe: run `ccil run --recipe overfit-sec52 --dataset cifar100 "
                "--data-root ...`, then re-run acceptance with --overfit-results DIR");
    return;
  }
  auto rows = group_rows(load_runs(results_dir));
  std::vector<std::string> order{"ep100", "ep200", "ep300", "ep400", "ep500"};
  bool ok = true;
  std::string detail;
  auto series = [&](const char* key) {
    std::vector<double> out;
    for (const auto& ep : order) {
      if (rows.count(ep)) out.push_back(row_mean(rows.at(ep), key));
    }
    return out;
  };
  auto monotone = [&](const std::vector<double>& v, bool increasing) {
    if (v.size() < 2) return false;
    int inversions = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
      bool step_ok = increasing ? v[i] >= v[i - 1] : v[i] <= v[i - 1];
      if (!step_ok) ++inversions;
    }
    return inversions <= 1;  // one inversion allowed
  };
  if (series("ss_acc").size() < 5) {
    report(8, "overfitting-forgetting correlation", false,
           "expected runs ep100..ep500 under " + results_dir);
    return;
  }
  struct Check {
    const char* key;
    bool increasing;
  };
  for (Check c : {Check{"ss_acc", false}, Check{"ss_nll", true}, Check{"forgetting", true},
                  Check{"feature_retention", true}}) {
    bool good = monotone(series(c.key), c.increasing);
    ok &= good;
    detail += std::string(c.key) + (good ? " trend ok; " : " trend BROKEN; ");
  }
  report(8, "overfitting-forgetting correlation", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::string cifar_results, overfit_results;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--cifar-results") == 0 && i + 1 < argc) {
      cifar_results = argv[++i];
    } else if (std::strcmp(argv[i], "--overfit-results") == 0 && i + 1 < argc) {
      overfit_results = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--cifar-results DIR] [--overfit-results DIR]\n";
      return 2;
    }
  }

  std::cout << "acceptance criteria\n===================\n";
  try {
    criterion_gradients();
    criterion_memory();
    criterion_metrics();
    criterion_forgetting_demo();
    std::map<std::string, RowStats> ablation_rows;
    criteria_ablation(ablation_rows);
    criterion_weight_bias(ablation_rows);
    criterion_cifar(cifar_results);
    criterion_overfit(overfit_results);
  } catch (const std::exception& e) {
    std::cerr << "acceptance suite aborted: " << e.what() << "\n";
    return 2;
  }
  std::cout << (failures == 0 ? "all gated criteria passed\n"
                              : std::to_string(failures) + " criteria failed\n");
  return failures == 0 ? 0 : 1;
}
