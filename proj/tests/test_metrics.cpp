#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ccil/metrics.hpp"
#include "ccil/rng.hpp"

using namespace ccil;
using Mat = Matrix<double>;
using Row = RowVector<double>;

namespace {

// Brute-force oracle: enumerate the secondary softmax directly.
double oracle_ss_nll(const std::vector<double>& logits, int label,
                     const std::vector<int>& super) {
  std::size_t drop = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (logits[j] > logits[drop]) drop = j;
  }
  double denom = 0.0, mass = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == drop) continue;
    double e = std::exp(logits[j]);
    denom += e;
    if (super[j] == super[static_cast<std::size_t>(label)]) mass += e;
  }
  return -std::log(mass / denom);
}

int oracle_ss_pred_super(const std::vector<double>& logits, const std::vector<int>& super) {
  std::size_t drop = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (logits[j] > logits[drop]) drop = j;
  }
  std::size_t best = drop == 0 ? 1 : 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == drop) continue;
    if (logits[j] > logits[best]) best = j;
  }
  return super[best];
}

}  // namespace

TEST_CASE("average incremental accuracy") {
  AccuracyMatrix m;
  m.task_acc = {{70.0}, {70.0, 70.0}};
  m.overall = {70.0, 70.0};
  CHECK(average_incremental_accuracy(m) == doctest::Approx(70.0));

  AccuracyMatrix two;
  two.task_acc = {{80.0}, {55.0, 65.0}};
  two.overall = {80.0, 60.0};
  CHECK(average_incremental_accuracy(two) == doctest::Approx(70.0));

  SUBCASE("missing step is rejected") {
    AccuracyMatrix bad;
    bad.task_acc = {{80.0}, {55.0}};
    bad.overall = {80.0, 60.0};
    CHECK_THROWS_AS(average_incremental_accuracy(bad), std::invalid_argument);
  }
  SUBCASE("values outside [0, 100] are rejected") {
    AccuracyMatrix bad;
    bad.task_acc = {{160.0}};
    bad.overall = {160.0};
    CHECK_THROWS_AS(average_incremental_accuracy(bad), std::invalid_argument);
  }
}

TEST_CASE("forgetting rate is the first-task drop") {
  CHECK(forgetting_rate(78.0, 78.0) == doctest::Approx(0.0));
  CHECK(forgetting_rate(78.0, 61.0) == doctest::Approx(17.0));
  CHECK(feature_retention_gap(74.12, 64.42) == doctest::Approx(9.70));
}

TEST_CASE("SS-NLL on the worked 4-class example") {
  // 4 classes, superclasses {0,1} and {2,3}, logits (5,1,0,0), true label 1.
  // The max (index 0) is suppressed; mass in superclass {0,1} is e/(e+2).
  Mat logits(1, 4);
  logits << 5.0, 1.0, 0.0, 0.0;
  std::vector<int> super{0, 0, 1, 1};
  double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(expected == doctest::Approx(0.551).epsilon(1e-3));
  CHECK(ss_nll(logits, {1}, super) == doctest::Approx(expected));
  CHECK(ss_nll(logits, {1}, super) ==
        doctest::Approx(oracle_ss_nll({5.0, 1.0, 0.0, 0.0}, 1, super)));
}

TEST_CASE("SS-NLL is zero when all classes share one superclass") {
  Mat logits(1, 5);
  logits << 3.0, 1.0, 0.5, -2.0, 0.0;
  std::vector<int> super{0, 0, 0, 0, 0};
  CHECK(ss_nll(logits, {2}, super) == doctest::Approx(0.0));
}

TEST_CASE("SS metrics match brute-force enumeration on random instances") {
  Rng rng(17);
  std::vector<int> super;
  for (int c = 0; c < 10; ++c) super.push_back(c / 5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> raw(10);
    Mat logits(1, 10);
    for (int j = 0; j < 10; ++j) {
      raw[static_cast<std::size_t>(j)] = 3.0 * rng.normal();
      logits(0, j) = raw[static_cast<std::size_t>(j)];
    }
    int label = static_cast<int>(rng.uniform_int(10));
    CHECK(ss_nll(logits, {label}, super) ==
          doctest::Approx(oracle_ss_nll(raw, label, super)).epsilon(1e-9));
    bool correct = oracle_ss_pred_super(raw, super) == super[static_cast<std::size_t>(label)];
    CHECK(ss_acc(logits, {label}, super) == doctest::Approx(correct ? 100.0 : 0.0));
  }
}

TEST_CASE("SS metrics are invariant to constant logit shifts") {
  Rng rng(18);
  std::vector<int> super{0, 0, 1, 1, 2, 2};
  Mat logits(1, 6);
  for (int j = 0; j < 6; ++j) logits(0, j) = rng.normal();
  double nll = ss_nll(logits, {3}, super);
  double acc = ss_acc(logits, {3}, super);
  logits.array() += 11.5;
  CHECK(ss_nll(logits, {3}, super) == doctest::Approx(nll));
  CHECK(ss_acc(logits, {3}, super) == doctest::Approx(acc));
}

TEST_CASE("SS-NLL is non-negative; zero iff all secondary mass is in the true superclass") {
  Rng rng(19);
  std::vector<int> super{0, 0, 0, 1, 1, 1};
  for (int trial = 0; trial < 200; ++trial) {
    Mat logits(1, 6);
    for (int j = 0; j < 6; ++j) logits(0, j) = 2.0 * rng.normal();
    int label = static_cast<int>(rng.uniform_int(6));
    CHECK(ss_nll(logits, {label}, super) >= 0.0);
  }
}

TEST_CASE("secondary superclass accuracy on random logits over 20x5 classes") {
  // Monte Carlo sanity: with iid random logits the secondary argmax lands in
  // the true label's superclass rarely (roughly 4/99).
  Rng rng(20);
  std::vector<int> super;
  for (int c = 0; c < 100; ++c) super.push_back(c / 5);
  const int n = 100000;
  Mat logits(1, 100);
  int correct = 0;
  for (int trial = 0; trial < n; ++trial) {
    for (int j = 0; j < 100; ++j) logits(0, j) = rng.normal();
    int label = static_cast<int>(rng.uniform_int(100));
    RowVector<double> row = logits.row(0);
    if (ss_correct_single<double>(row, label, super)) ++correct;
  }
  double rate = 100.0 * correct / n;
  CHECK(rate > 3.0);
  CHECK(rate < 6.0);
}

TEST_CASE("ECE trivial and hand-built cases") {
  SUBCASE("perfect calibration") {
    // One bin at 0.75 confidence with 75% accuracy.
    std::vector<std::pair<double, bool>> pairs;
    for (int i = 0; i < 4; ++i) pairs.push_back({0.75, i < 3});
    CHECK(ece(pairs, 1) == doctest::Approx(0.0));
  }
  SUBCASE("always confident, always wrong") {
    std::vector<std::pair<double, bool>> pairs(10, {1.0, false});
    CHECK(ece(pairs, 15) == doctest::Approx(1.0));
  }
  SUBCASE("two-bin hand computation") {
    // Bin [0, 0.5): confidences 0.3, 0.4, one correct -> |0.5 - 0.35| = 0.15.
    // Bin [0.5, 1]: confidences 0.9, 0.8, 0.7, one correct -> |1/3 - 0.8|.
    std::vector<std::pair<double, bool>> pairs{
        {0.3, false}, {0.4, true}, {0.9, true}, {0.8, false}, {0.7, false}};
    double expected = (2.0 / 5.0) * std::abs(0.5 - 0.35) +
                      (3.0 / 5.0) * std::abs(1.0 / 3.0 - 0.8);
    CHECK(ece(pairs, 2) == doctest::Approx(expected));
  }
  SUBCASE("one bin equals the overall accuracy/confidence gap") {
    Rng rng(21);
    std::vector<std::pair<double, bool>> pairs;
    double conf_sum = 0.0, acc_sum = 0.0;
    for (int i = 0; i < 100; ++i) {
      double conf = rng.next_double();
      bool correct = rng.next_double() < 0.6;
      pairs.push_back({conf, correct});
      conf_sum += conf;
      acc_sum += correct ? 1.0 : 0.0;
    }
    CHECK(ece(pairs, 1) == doctest::Approx(std::abs(acc_sum - conf_sum) / 100.0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ece({}, 10), std::invalid_argument);
    CHECK_THROWS_AS(ece({{0.5, true}}, 0), std::invalid_argument);
    CHECK_THROWS_AS(ece({{1.5, true}}, 10), std::invalid_argument);
  }
}

TEST_CASE("class-mean distance ratios") {
  // Hand-planted features: class means under A are twice as far apart as
  // under B for pair (0,1), identical for pair (0,2).
  auto feats_a = [](int cls) {
    Mat f(2, 2);
    if (cls == 0) f << 0.0, 0.0, 0.0, 0.0;
    if (cls == 1) f << 4.0, 0.0, 4.0, 0.0;
    if (cls == 2) f << 0.0, 1.0, 0.0, 1.0;
    return f;
  };
  auto feats_b = [](int cls) {
    Mat f(2, 2);
    if (cls == 0) f << 0.0, 0.0, 0.0, 0.0;
    if (cls == 1) f << 2.0, 0.0, 2.0, 0.0;
    if (cls == 2) f << 0.0, 1.0, 0.0, 1.0;
    return f;
  };
  std::vector<ClassPair> pairs{{0, 1, true}, {0, 2, false}};
  auto ratios = class_mean_distance_ratios(feats_a, feats_b, pairs);
  REQUIRE(ratios.size() == 2);
  CHECK(ratios[0] == doctest::Approx(2.0));
  CHECK(ratios[1] == doctest::Approx(1.0));

  SUBCASE("identical models give all ratios 1") {
    auto same = class_mean_distance_ratios(feats_b, feats_b, pairs);
    CHECK(same[0] == doctest::Approx(1.0));
    CHECK(same[1] == doctest::Approx(1.0));
  }
  SUBCASE("empty class errors") {
    auto empty = [](int) { return Mat(0, 2); };
    CHECK_THROWS_AS(class_mean_distance_ratios(empty, feats_b, pairs), std::invalid_argument);
  }
}
