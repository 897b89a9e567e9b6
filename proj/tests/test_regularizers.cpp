#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccil/regularizers.hpp"

using namespace ccil;
using Mat = Matrix<double>;
using Vec = Vector<double>;

namespace {

Vec one_hot(Index t, Index k) {
  Vec v = Vec::Zero(t);
  v(k) = 1.0;
  return v;
}

MatX random_image(ImageShape shape, Rng& rng) {
  MatX row(1, shape.dim());
  for (Index i = 0; i < shape.dim(); ++i) row(0, i) = static_cast<Scalar>(rng.next_double());
  return row;
}

}  // namespace

TEST_CASE("label smoothing") {
  SUBCASE("epsilon 0 is the identity") {
    Vec y = one_hot(10, 3);
    CHECK((label_smooth(y, 0.0) - y).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("epsilon 0.1 over 10 classes") {
    Vec s = label_smooth(one_hot(10, 4), 0.1);
    CHECK(s(4) == doctest::Approx(0.91));
    for (Index j = 0; j < 10; ++j) {
      if (j != 4) CHECK(s(j) == doctest::Approx(0.01));
    }
  }
  SUBCASE("always a valid distribution") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      Index t = 2 + static_cast<Index>(rng.uniform_int(30));
      double eps = rng.next_double() * 0.999;
      Vec s = label_smooth(one_hot(t, static_cast<Index>(rng.uniform_int(static_cast<std::uint32_t>(t)))),
                           eps);
      CHECK(s.minCoeff() >= 0.0);
      CHECK(s.sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("row variant matches the vector variant") {
    Mat targets = Mat::Zero(2, 5);
    targets(0, 1) = 1.0;
    targets(1, 4) = 1.0;
    Mat s = label_smooth_rows(targets, 0.2);
    CHECK(s(0, 1) == doctest::Approx(0.84));
    CHECK(s(1, 0) == doctest::Approx(0.04));
  }
  SUBCASE("epsilon outside [0, 1) errors") {
    CHECK_THROWS_AS(label_smooth(one_hot(4, 0), 1.0), std::invalid_argument);
    CHECK_THROWS_AS(label_smooth(one_hot(4, 0), -0.1), std::invalid_argument);
  }
}

TEST_CASE("mixup endpoints and distribution") {
  Rng rng(2);
  Vec xa = Vec::Constant(3, 1.0), xb = Vec::Constant(3, -1.0);
  Vec ya = one_hot(4, 0), yb = one_hot(4, 2);

  SUBCASE("mixture stays on the segment and labels stay distributions") {
    for (int trial = 0; trial < 200; ++trial) {
      auto [x, y] = mixup_pair(xa, ya, xb, yb, 0.2, rng);
      CHECK(x(0) >= -1.0);
      CHECK(x(0) <= 1.0);
      CHECK(y.minCoeff() >= 0.0);
      CHECK(y.sum() == doctest::Approx(1.0).epsilon(1e-9));
      // Image and label use the same coefficient.
      double gamma_from_x = (x(0) + 1.0) / 2.0;
      CHECK(y(0) == doctest::Approx(gamma_from_x).epsilon(1e-9));
    }
  }
  SUBCASE("empirical mean of gamma is 1/2 for any alpha (Beta symmetry)") {
    for (double alpha : {0.2, 1.0, 4.0}) {
      double sum = 0.0;
      const int n = 100000;
      for (int i = 0; i < n; ++i) sum += rng.beta(alpha, alpha);
      CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
    }
  }
  SUBCASE("alpha must be positive") {
    CHECK_THROWS_AS(mixup_pair(xa, ya, xb, yb, 0.0, rng), std::invalid_argument);
  }
  SUBCASE("batch mixup pairs rows with a seeded permutation") {
    Mat inputs(4, 2);
    inputs << 1, 1, 2, 2, 3, 3, 4, 4;
    Mat targets = Mat::Identity(4, 4);
    auto mixed = mixup(inputs, targets, 0.2, rng);
    CHECK(mixed.inputs.rows() == 4);
    for (Index r = 0; r < 4; ++r) {
      CHECK(mixed.targets.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(mixed.targets.row(r).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("augmentation policies preserve shape and value range") {
  Rng rng(3);
  ImageShape shape{3, 16, 16};
  auto pool = default_policy_pool();
  REQUIRE(!pool.empty());

  for (int trial = 0; trial < 100; ++trial) {
    MatX img = random_image(shape, rng);
    const auto& policy = sample_policy(pool, rng);
    apply_policy(policy, ImageView<Scalar>{img.row(0).data(), shape});
    CHECK(img.cols() == shape.dim());
    CHECK(img.minCoeff() >= Scalar(0));
    CHECK(img.maxCoeff() <= Scalar(1));
  }
}

TEST_CASE("identity policy and zero-size cutout leave the image unchanged") {
  Rng rng(4);
  ImageShape shape{3, 8, 8};
  MatX img = random_image(shape, rng);
  MatX orig = img;

  AugmentationPolicy identity;  // both ops default to identity
  apply_policy(identity, ImageView<Scalar>{img.row(0).data(), shape});
  CHECK((img - orig).cwiseAbs().maxCoeff() == Scalar(0));

  cutout(ImageView<Scalar>{img.row(0).data(), shape}, 0, rng);
  CHECK((img - orig).cwiseAbs().maxCoeff() == Scalar(0));
}

TEST_CASE("cutout zeroes a patch of the requested size") {
  Rng rng(5);
  ImageShape shape{1, 8, 8};
  MatX img = MatX::Ones(1, shape.dim());
  cutout(ImageView<Scalar>{img.row(0).data(), shape}, 4, rng);
  Index zeros = (img.array() == Scalar(0)).count();
  CHECK(zeros > 0);
  CHECK(zeros <= 16);
}

TEST_CASE("crop and flip are seeded and shape-preserving") {
  ImageShape shape{3, 8, 8};
  Rng rng_a(6), rng_b(6);
  MatX a(1, shape.dim()), b(1, shape.dim());
  Rng fill(7);
  for (Index i = 0; i < shape.dim(); ++i) {
    a(0, i) = static_cast<Scalar>(fill.next_double());
  }
  b = a;
  random_crop(ImageView<Scalar>{a.row(0).data(), shape}, 4, rng_a);
  random_flip(ImageView<Scalar>{a.row(0).data(), shape}, rng_a);
  random_crop(ImageView<Scalar>{b.row(0).data(), shape}, 4, rng_b);
  random_flip(ImageView<Scalar>{b.row(0).data(), shape}, rng_b);
  CHECK((a - b).cwiseAbs().maxCoeff() == Scalar(0));
}

TEST_CASE("geometric ops keep the frame and value range") {
  Rng rng(8);
  ImageShape shape{3, 16, 16};
  for (AugOp op : {AugOp::shear_x, AugOp::shear_y, AugOp::translate_x, AugOp::translate_y,
                   AugOp::rotate}) {
    MatX img = random_image(shape, rng);
    double mag = op == AugOp::rotate ? 20.0 : 0.25;
    apply_aug_op(op, mag, ImageView<Scalar>{img.row(0).data(), shape});
    CHECK(img.minCoeff() >= Scalar(0));
    CHECK(img.maxCoeff() <= Scalar(1) + Scalar(1e-6));
  }
}

TEST_CASE("regularizer names round-trip") {
  for (RegularizerKind k : {RegularizerKind::none, RegularizerKind::sd, RegularizerKind::h_aug,
                            RegularizerKind::ls, RegularizerKind::mixup}) {
    CHECK(regularizer_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(regularizer_from_string("bogus"), std::invalid_argument);
}
