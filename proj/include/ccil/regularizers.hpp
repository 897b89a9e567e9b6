#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccil/dataset.hpp"
#include "ccil/rng.hpp"
#include "ccil/types.hpp"

namespace ccil {

enum class RegularizerKind { none, sd, h_aug, ls, mixup };

inline std::string to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::sd: return "sd";
    case RegularizerKind::h_aug: return "h-aug";
    case RegularizerKind::ls: return "ls";
    case RegularizerKind::mixup: return "mixup";
  }
  throw std::logic_error("unknown regularizer kind");
}

inline RegularizerKind regularizer_from_string(const std::string& s) {
  if (s == "none") return RegularizerKind::none;
  if (s == "sd") return RegularizerKind::sd;
  if (s == "h-aug") return RegularizerKind::h_aug;
  if (s == "ls") return RegularizerKind::ls;
  if (s == "mixup") return RegularizerKind::mixup;
  throw std::invalid_argument("unknown regularizer: " + s);
}

// (1 - eps) * one_hot + eps * uniform(t).
template <class S>
Vector<S> label_smooth(const Vector<S>& one_hot, S epsilon) {
  if (!(epsilon >= S(0) && epsilon < S(1))) {
    throw std::invalid_argument("label_smooth: epsilon must lie in [0, 1)");
  }
  const Index t = one_hot.size();
  if (t < 2) throw std::invalid_argument("label_smooth: need at least 2 classes");
  return (S(1) - epsilon) * one_hot + Vector<S>::Constant(t, epsilon / static_cast<S>(t));
}

// Row-wise smoothing of a batch of target distributions.
template <class S>
Matrix<S> label_smooth_rows(const Matrix<S>& targets, S epsilon) {
  if (!(epsilon >= S(0) && epsilon < S(1))) {
    throw std::invalid_argument("label_smooth: epsilon must lie in [0, 1)");
  }
  if (targets.cols() < 2) throw std::invalid_argument("label_smooth: need at least 2 classes");
  return (S(1) - epsilon) * targets +
         Matrix<S>::Constant(targets.rows(), targets.cols(),
                             epsilon / static_cast<S>(targets.cols()));
}

template <class S>
struct MixedBatch {
  Matrix<S> inputs;
  Matrix<S> targets;
  std::vector<double> gammas;  // realized mixing coefficients
};

// Linear combination of sample pairs, image and label, with the coefficient
// drawn from Beta(alpha, alpha). Partners are a seeded permutation of the
// batch itself.
template <class S>
MixedBatch<S> mixup(const Matrix<S>& inputs, const Matrix<S>& targets, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup: alpha must be > 0");
  if (inputs.rows() != targets.rows()) {
    throw std::invalid_argument("mixup: inputs and targets must pair up");
  }
  const Index b = inputs.rows();
  std::vector<Index> partner(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) partner[static_cast<std::size_t>(i)] = i;
  rng.shuffle(partner);

  MixedBatch<S> out;
  out.inputs.resize(b, inputs.cols());
  out.targets.resize(b, targets.cols());
  out.gammas.resize(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) {
    double gamma = rng.beta(alpha, alpha);
    Index j = partner[static_cast<std::size_t>(i)];
    out.inputs.row(i) = static_cast<S>(gamma) * inputs.row(i) +
                        static_cast<S>(1.0 - gamma) * inputs.row(j);
    out.targets.row(i) = static_cast<S>(gamma) * targets.row(i) +
                         static_cast<S>(1.0 - gamma) * targets.row(j);
    out.gammas[static_cast<std::size_t>(i)] = gamma;
  }
  return out;
}

// Two-sample mixup, the unit-level form.
template <class S>
std::pair<Vector<S>, Vector<S>> mixup_pair(const Vector<S>& xa, const Vector<S>& ya,
                                           const Vector<S>& xb, const Vector<S>& yb,
                                           double alpha, Rng& rng) {
  if (xa.size() != xb.size() || ya.size() != yb.size()) {
    throw std::invalid_argument("mixup: shape mismatch");
  }
  double gamma = alpha > 0.0 ? rng.beta(alpha, alpha)
                             : throw std::invalid_argument("mixup: alpha must be > 0");
  Vector<S> x = static_cast<S>(gamma) * xa + static_cast<S>(1.0 - gamma) * xb;
  Vector<S> y = static_cast<S>(gamma) * ya + static_cast<S>(1.0 - gamma) * yb;
  return {x, y};
}

// ---------------------------------------------------------------------------
// Image augmentation. Images are flattened CHW rows in [0, 1].

template <class S>
struct ImageView {
  S* data = nullptr;
  ImageShape shape;

  S& at(int c, int y, int x) {
    return data[(static_cast<Index>(c) * shape.height + y) * shape.width + x];
  }
  S get(int c, int y, int x) const {
    return data[(static_cast<Index>(c) * shape.height + y) * shape.width + x];
  }
  // Bilinear lookup with zero padding outside the frame.
  S sample(int c, double y, double x) const {
    int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    double fy = y - y0, fx = x - x0;
    auto px = [&](int yy, int xx) -> double {
      if (yy < 0 || yy >= shape.height || xx < 0 || xx >= shape.width) return 0.0;
      return static_cast<double>(get(c, yy, xx));
    };
    double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
               fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
    return static_cast<S>(v);
  }
};

enum class AugOp {
  identity,
  shear_x,
  shear_y,
  translate_x,
  translate_y,
  rotate,
  brightness,
  contrast,
  saturation,
  posterize
};

inline std::string to_string(AugOp op) {
  switch (op) {
    case AugOp::identity: return "identity";
    case AugOp::shear_x: return "shear-x";
    case AugOp::shear_y: return "shear-y";
    case AugOp::translate_x: return "translate-x";
    case AugOp::translate_y: return "translate-y";
    case AugOp::rotate: return "rotate";
    case AugOp::brightness: return "brightness";
    case AugOp::contrast: return "contrast";
    case AugOp::saturation: return "saturation";
    case AugOp::posterize: return "posterize";
  }
  throw std::logic_error("unknown aug op");
}

// One policy = a pair of transformations with magnitudes, applied on top of
// the baseline crop/flip; cutout is applied after the pair.
struct AugmentationPolicy {
  AugOp op_a = AugOp::identity;
  double magnitude_a = 0.0;
  AugOp op_b = AugOp::identity;
  double magnitude_b = 0.0;

  std::string name() const {
    return to_string(op_a) + "(" + std::to_string(magnitude_a) + ")+" + to_string(op_b) + "(" +
           std::to_string(magnitude_b) + ")";
  }
};

namespace detail {

template <class S>
void affine_inplace(ImageView<S> img, double m00, double m01, double m10, double m11,
                    double tx, double ty) {
  // Inverse mapping around the image center.
  const int h = img.shape.height, w = img.shape.width;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  std::vector<S> out(static_cast<std::size_t>(img.shape.dim()));
  for (int c = 0; c < img.shape.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double sy = m10 * (x - cx) + m11 * (y - cy) + cy - ty;
        double sx = m00 * (x - cx) + m01 * (y - cy) + cx - tx;
        out[(static_cast<std::size_t>(c) * h + y) * w + x] = img.sample(c, sy, sx);
      }
    }
  }
  std::copy(out.begin(), out.end(), img.data);
}

template <class S>
void clamp01(ImageView<S> img) {
  for (Index i = 0; i < img.shape.dim(); ++i) {
    img.data[i] = std::min(S(1), std::max(S(0), img.data[i]));
  }
}

}  // namespace detail

// Applies one op in place; color ops clamp back to [0, 1], geometric ops keep
// the frame (zero fill) so shape and value range are always preserved.
template <class S>
void apply_aug_op(AugOp op, double magnitude, ImageView<S> img) {
  switch (op) {
    case AugOp::identity:
      return;
    case AugOp::shear_x:
      detail::affine_inplace(img, 1.0, magnitude, 0.0, 1.0, 0.0, 0.0);
      return;
    case AugOp::shear_y:
      detail::affine_inplace(img, 1.0, 0.0, magnitude, 1.0, 0.0, 0.0);
      return;
    case AugOp::translate_x:
      detail::affine_inplace(img, 1.0, 0.0, 0.0, 1.0, magnitude * img.shape.width, 0.0);
      return;
    case AugOp::translate_y:
      detail::affine_inplace(img, 1.0, 0.0, 0.0, 1.0, 0.0, magnitude * img.shape.height);
      return;
    case AugOp::rotate: {
      double rad = magnitude * 3.14159265358979323846 / 180.0;
      detail::affine_inplace(img, std::cos(rad), -std::sin(rad), std::sin(rad), std::cos(rad),
                             0.0, 0.0);
      return;
    }
    case AugOp::brightness: {
      for (Index i = 0; i < img.shape.dim(); ++i) {
        img.data[i] = static_cast<S>(img.data[i] * (1.0 + magnitude));
      }
      detail::clamp01(img);
      return;
    }
    case AugOp::contrast: {
      double mean = 0.0;
      for (Index i = 0; i < img.shape.dim(); ++i) mean += img.data[i];
      mean /= static_cast<double>(img.shape.dim());
      for (Index i = 0; i < img.shape.dim(); ++i) {
        img.data[i] = static_cast<S>(mean + (img.data[i] - mean) * (1.0 + magnitude));
      }
      detail::clamp01(img);
      return;
    }
    case AugOp::saturation: {
      const int h = img.shape.height, w = img.shape.width, ch = img.shape.channels;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double gray = 0.0;
          for (int c = 0; c < ch; ++c) gray += img.get(c, y, x);
          gray /= ch;
          for (int c = 0; c < ch; ++c) {
            img.at(c, y, x) = static_cast<S>(gray + (img.get(c, y, x) - gray) * (1.0 + magnitude));
          }
        }
      }
      detail::clamp01(img);
      return;
    }
    case AugOp::posterize: {
      int levels = std::max(2, static_cast<int>(magnitude));
      for (Index i = 0; i < img.shape.dim(); ++i) {
        double q = std::round(static_cast<double>(img.data[i]) * (levels - 1)) / (levels - 1);
        img.data[i] = static_cast<S>(q);
      }
      detail::clamp01(img);
      return;
    }
  }
}

template <class S>
void apply_policy(const AugmentationPolicy& policy, ImageView<S> img) {
  apply_aug_op(policy.op_a, policy.magnitude_a, img);
  apply_aug_op(policy.op_b, policy.magnitude_b, img);
}

// The fixed pool: geometric/color op pairs at two magnitudes each. The exact
// contents are this artifact's documented choice.
inline std::vector<AugmentationPolicy> default_policy_pool() {
  return {
      {AugOp::shear_x, 0.2, AugOp::brightness, 0.3},
      {AugOp::shear_y, 0.2, AugOp::contrast, 0.4},
      {AugOp::translate_x, 0.15, AugOp::saturation, 0.5},
      {AugOp::translate_y, 0.15, AugOp::brightness, -0.3},
      {AugOp::rotate, 15.0, AugOp::contrast, -0.4},
      {AugOp::rotate, -15.0, AugOp::saturation, -0.5},
      {AugOp::shear_x, -0.2, AugOp::posterize, 6.0},
      {AugOp::translate_x, -0.15, AugOp::contrast, 0.4},
      {AugOp::shear_y, -0.2, AugOp::brightness, 0.3},
      {AugOp::rotate, 10.0, AugOp::posterize, 5.0},
  };
}

inline const AugmentationPolicy& sample_policy(const std::vector<AugmentationPolicy>& pool,
                                               Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_policy: empty pool");
  return pool[rng.uniform_int(static_cast<std::uint32_t>(pool.size()))];
}

// Baseline augmentation: pad-and-crop plus horizontal flip.
template <class S>
void random_crop(ImageView<S> img, int pad, Rng& rng) {
  int dy = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(2 * pad + 1))) - pad;
  int dx = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(2 * pad + 1))) - pad;
  if (dy == 0 && dx == 0) return;
  std::vector<S> out(static_cast<std::size_t>(img.shape.dim()), S(0));
  const int h = img.shape.height, w = img.shape.width;
  for (int c = 0; c < img.shape.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      int sy = y + dy;
      if (sy < 0 || sy >= h) continue;
      for (int x = 0; x < w; ++x) {
        int sx = x + dx;
        if (sx < 0 || sx >= w) continue;
        out[(static_cast<std::size_t>(c) * h + y) * w + x] = img.get(c, sy, sx);
      }
    }
  }
  std::copy(out.begin(), out.end(), img.data);
}

template <class S>
void random_flip(ImageView<S> img, Rng& rng) {
  if (rng.next_double() >= 0.5) return;
  const int h = img.shape.height, w = img.shape.width;
  for (int c = 0; c < img.shape.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w / 2; ++x) {
        std::swap(img.at(c, y, x), img.at(c, y, w - 1 - x));
      }
    }
  }
}

// Zeroes a square patch at a random center; size 0 is the identity.
template <class S>
void cutout(ImageView<S> img, int size, Rng& rng) {
  if (size <= 0) return;
  const int h = img.shape.height, w = img.shape.width;
  int cy = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(h)));
  int cx = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(w)));
  int y0 = std::max(0, cy - size / 2), y1 = std::min(h, cy - size / 2 + size);
  int x0 = std::max(0, cx - size / 2), x1 = std::min(w, cx - size / 2 + size);
  for (int c = 0; c < img.shape.channels; ++c) {
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) img.at(c, y, x) = S(0);
    }
  }
}

}  // namespace ccil
