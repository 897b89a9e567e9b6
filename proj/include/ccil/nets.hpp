#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccil/dataset.hpp"
#include "ccil/model.hpp"
#include "ccil/rng.hpp"
#include "ccil/types.hpp"

// Dense layers, 3x3/1x1 convolutions (im2col), batch norm and the two
// reference extractors: a small MLP for desk-scale runs and property tests,
// and the 6n+2 residual network for the CIFAR path. Images travel as
// flattened CHW rows; a CHW row maps onto a col-major (H*W x C) matrix view.

namespace ccil {
namespace nets {

template <class S>
void fanin_uniform(Matrix<S>& w, Index fan_in, Rng& rng) {
  S bound = S(1) / std::sqrt(static_cast<S>(fan_in));
  for (Index j = 0; j < w.cols(); ++j) {
    for (Index i = 0; i < w.rows(); ++i) {
      w(i, j) = static_cast<S>(2.0 * rng.next_double() - 1.0) * bound;
    }
  }
}

template <class S>
void he_normal(Matrix<S>& w, Index fan_in, Rng& rng) {
  S std_dev = std::sqrt(S(2) / static_cast<S>(fan_in));
  for (Index j = 0; j < w.cols(); ++j) {
    for (Index i = 0; i < w.rows(); ++i) {
      w(i, j) = static_cast<S>(rng.normal()) * std_dev;
    }
  }
}

template <class S>
struct Dense {
  Matrix<S> w, b, gw, gb;  // w: out x in
  Matrix<S> x_cache;

  Dense() = default;
  Dense(Index in, Index out, Rng& rng) {
    w.resize(out, in);
    fanin_uniform(w, in, rng);
    b.setZero(out, 1);
    gw.setZero(out, in);
    gb.setZero(out, 1);
  }

  Matrix<S> forward(const Matrix<S>& x, bool cache = true) {
    if (cache) x_cache = x;
    Matrix<S> y = x * w.transpose();
    y.rowwise() += b.col(0).transpose();
    return y;
  }

  Matrix<S> eval(const Matrix<S>& x) const {
    Matrix<S> y = x * w.transpose();
    y.rowwise() += b.col(0).transpose();
    return y;
  }

  Matrix<S> backward(const Matrix<S>& dy) {
    gw += dy.transpose() * x_cache;
    gb.col(0) += dy.colwise().sum().transpose();
    return dy * w;
  }

  void params(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + ".w", &w, &gw, true});
    out.push_back({prefix + ".b", &b, &gb, false});
  }
  void blobs(const std::string& prefix, std::vector<std::pair<std::string, Matrix<S>*>>& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

template <class S>
struct Relu {
  Matrix<S> y_cache;
  Matrix<S> forward(const Matrix<S>& x, bool cache = true) {
    Matrix<S> y = x.cwiseMax(S(0));
    if (cache) y_cache = y;
    return y;
  }
  static Matrix<S> eval(const Matrix<S>& x) { return x.cwiseMax(S(0)); }
  Matrix<S> backward(const Matrix<S>& dy) const {
    return (y_cache.array() > S(0)).template cast<S>().matrix().cwiseProduct(dy);
  }
};

template <class S>
struct Conv2d {
  ImageShape in, out;
  int kernel = 3, stride = 1, pad = 1;
  Matrix<S> w, gw;  // out.channels x (in.channels * kernel * kernel)
  Matrix<S> x_cache;

  Conv2d() = default;
  Conv2d(ImageShape input, int out_channels, int k, int s, int p, Rng& rng)
      : in(input), kernel(k), stride(s), pad(p) {
    out.channels = out_channels;
    out.height = (in.height + 2 * pad - kernel) / stride + 1;
    out.width = (in.width + 2 * pad - kernel) / stride + 1;
    Index fan_in = static_cast<Index>(in.channels) * kernel * kernel;
    w.resize(out_channels, fan_in);
    he_normal(w, fan_in, rng);
    gw.setZero(out_channels, fan_in);
  }

  // cols: (out.height*out.width) x (in.channels*kernel*kernel)
  void im2col(const S* img, Matrix<S>& cols) const {
    const Index hw = static_cast<Index>(in.height) * in.width;
    const Index ohw = static_cast<Index>(out.height) * out.width;
    cols.resize(ohw, static_cast<Index>(in.channels) * kernel * kernel);
    for (int c = 0; c < in.channels; ++c) {
      const S* plane = img + static_cast<Index>(c) * hw;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          Index j = (static_cast<Index>(c) * kernel + ky) * kernel + kx;
          for (int oy = 0; oy < out.height; ++oy) {
            int iy = oy * stride + ky - pad;
            for (int ox = 0; ox < out.width; ++ox) {
              int ix = ox * stride + kx - pad;
              S v = S(0);
              if (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) {
                v = plane[static_cast<Index>(iy) * in.width + ix];
              }
              cols(static_cast<Index>(oy) * out.width + ox, j) = v;
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix<S>& dcols, S* dimg) const {
    const Index hw = static_cast<Index>(in.height) * in.width;
    for (int c = 0; c < in.channels; ++c) {
      S* plane = dimg + static_cast<Index>(c) * hw;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          Index j = (static_cast<Index>(c) * kernel + ky) * kernel + kx;
          for (int oy = 0; oy < out.height; ++oy) {
            int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= in.height) continue;
            for (int ox = 0; ox < out.width; ++ox) {
              int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= in.width) continue;
              plane[static_cast<Index>(iy) * in.width + ix] +=
                  dcols(static_cast<Index>(oy) * out.width + ox, j);
            }
          }
        }
      }
    }
  }

  Matrix<S> forward(const Matrix<S>& x, bool cache = true) {
    if (cache) x_cache = x;
    return run(x);
  }

  Matrix<S> eval(const Matrix<S>& x) const { return run(x); }

  Matrix<S> run(const Matrix<S>& x) const {
    const Index b = x.rows();
    Matrix<S> y(b, out.dim());
    Matrix<S> cols;
    for (Index r = 0; r < b; ++r) {
      Vector<S> row = x.row(r);
      im2col(row.data(), cols);
      // cols * w^T is (ohw x out.channels) col-major, which is exactly the
      // flattened CHW output row.
      Matrix<S> yr = cols * w.transpose();
      y.row(r) = Eigen::Map<const Vector<S>>(yr.data(), out.dim()).transpose();
    }
    return y;
  }

  // im2col is rebuilt per sample instead of cached: caching it for a whole
  // batch costs ~k*k more memory than the activations themselves.
  Matrix<S> backward(const Matrix<S>& dy) {
    const Index b = dy.rows();
    const Index ohw = static_cast<Index>(out.height) * out.width;
    Matrix<S> dx(b, in.dim());
    Matrix<S> cols;
    for (Index r = 0; r < b; ++r) {
      Vector<S> row = x_cache.row(r);
      im2col(row.data(), cols);
      Vector<S> dyrow = dy.row(r);
      Eigen::Map<const Matrix<S>> dyr(dyrow.data(), ohw, out.channels);
      gw += dyr.transpose() * cols;
      Matrix<S> dcols = dyr * w;
      Vector<S> drow = Vector<S>::Zero(in.dim());
      col2im(dcols, drow.data());
      dx.row(r) = drow.transpose();
    }
    return dx;
  }

  void params(const std::string& prefix, std::vector<ParamRef<S>>& out_refs) {
    out_refs.push_back({prefix + ".w", &w, &gw, true});
  }
  void blobs(const std::string& prefix, std::vector<std::pair<std::string, Matrix<S>*>>& out_blobs) {
    out_blobs.emplace_back(prefix + ".w", &w);
  }
};

// Per-channel batch normalization over batch x spatial positions. Training
// uses batch statistics and updates running estimates; eval uses the running
// estimates only.
template <class S>
struct BatchNorm {
  int channels = 0;
  Index plane = 0;  // H*W
  S eps = S(1e-5);
  S momentum = S(0.1);
  Matrix<S> gamma, beta, ggamma, gbeta;
  Matrix<S> running_mean, running_var;
  Matrix<S> xhat_cache;
  Vector<S> sigma_cache;

  BatchNorm() = default;
  BatchNorm(int c, Index plane_size) : channels(c), plane(plane_size) {
    gamma.setOnes(c, 1);
    beta.setZero(c, 1);
    ggamma.setZero(c, 1);
    gbeta.setZero(c, 1);
    running_mean.setZero(c, 1);
    running_var.setOnes(c, 1);
  }

  Matrix<S> forward(const Matrix<S>& x) {
    const Index b = x.rows();
    Matrix<S> y(b, x.cols());
    xhat_cache.resize(b, x.cols());
    sigma_cache.resize(channels);
    const S n = static_cast<S>(b * plane);
    for (int c = 0; c < channels; ++c) {
      auto xc = x.middleCols(static_cast<Index>(c) * plane, plane);
      S mean = xc.sum() / n;
      S var = (xc.array() - mean).square().sum() / n;
      S sigma = std::sqrt(var + eps);
      sigma_cache(c) = sigma;
      auto xhat = xhat_cache.middleCols(static_cast<Index>(c) * plane, plane);
      xhat = (xc.array() - mean).matrix() / sigma;
      y.middleCols(static_cast<Index>(c) * plane, plane) =
          (xhat.array() * gamma(c, 0) + beta(c, 0)).matrix();
      running_mean(c, 0) = (S(1) - momentum) * running_mean(c, 0) + momentum * mean;
      running_var(c, 0) = (S(1) - momentum) * running_var(c, 0) + momentum * var;
    }
    return y;
  }

  Matrix<S> eval(const Matrix<S>& x) const {
    Matrix<S> y(x.rows(), x.cols());
    for (int c = 0; c < channels; ++c) {
      S sigma = std::sqrt(running_var(c, 0) + eps);
      y.middleCols(static_cast<Index>(c) * plane, plane) =
          ((x.middleCols(static_cast<Index>(c) * plane, plane).array() - running_mean(c, 0)) /
               sigma * gamma(c, 0) +
           beta(c, 0))
              .matrix();
    }
    return y;
  }

  Matrix<S> backward(const Matrix<S>& dy) {
    const Index b = dy.rows();
    const S n = static_cast<S>(b * plane);
    Matrix<S> dx(b, dy.cols());
    for (int c = 0; c < channels; ++c) {
      auto dyc = dy.middleCols(static_cast<Index>(c) * plane, plane);
      auto xhat = xhat_cache.middleCols(static_cast<Index>(c) * plane, plane);
      S sum_dy = dyc.sum();
      S sum_dy_xhat = (dyc.array() * xhat.array()).sum();
      ggamma(c, 0) += sum_dy_xhat;
      gbeta(c, 0) += sum_dy;
      dx.middleCols(static_cast<Index>(c) * plane, plane) =
          (gamma(c, 0) / sigma_cache(c)) *
          (dyc.array() - sum_dy / n - xhat.array() * (sum_dy_xhat / n)).matrix();
    }
    return dx;
  }

  void params(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma, false});
    out.push_back({prefix + ".beta", &beta, &gbeta, false});
  }
  void blobs(const std::string& prefix, std::vector<std::pair<std::string, Matrix<S>*>>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
    out.emplace_back(prefix + ".running_mean", &running_mean);
    out.emplace_back(prefix + ".running_var", &running_var);
  }
};

// Per-sample normalization over the feature dimension. Stateless, so the
// training and inference paths are identical (no running statistics).
template <class S>
struct LayerNorm {
  Index dim = 0;
  S eps = S(1e-5);
  Matrix<S> gamma, beta, ggamma, gbeta;
  Matrix<S> xhat_cache;
  Vector<S> sigma_cache;

  LayerNorm() = default;
  explicit LayerNorm(Index d) : dim(d) {
    gamma.setOnes(d, 1);
    beta.setZero(d, 1);
    ggamma.setZero(d, 1);
    gbeta.setZero(d, 1);
  }

  Matrix<S> apply(const Matrix<S>& x, Matrix<S>* xhat_out, Vector<S>* sigma_out) const {
    Matrix<S> y(x.rows(), x.cols());
    if (xhat_out) xhat_out->resize(x.rows(), x.cols());
    if (sigma_out) sigma_out->resize(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
      S mean = x.row(r).mean();
      S var = (x.row(r).array() - mean).square().mean();
      S sigma = std::sqrt(var + eps);
      RowVector<S> xhat = (x.row(r).array() - mean).matrix() / sigma;
      if (xhat_out) xhat_out->row(r) = xhat;
      if (sigma_out) (*sigma_out)(r) = sigma;
      y.row(r) = (xhat.array() * gamma.col(0).transpose().array() +
                  beta.col(0).transpose().array())
                     .matrix();
    }
    return y;
  }

  Matrix<S> forward(const Matrix<S>& x) { return apply(x, &xhat_cache, &sigma_cache); }
  Matrix<S> eval(const Matrix<S>& x) const { return apply(x, nullptr, nullptr); }

  Matrix<S> backward(const Matrix<S>& dy) {
    Matrix<S> dx(dy.rows(), dy.cols());
    const S n = static_cast<S>(dim);
    for (Index r = 0; r < dy.rows(); ++r) {
      RowVector<S> g = dy.row(r).cwiseProduct(gamma.col(0).transpose());
      RowVector<S> xhat = xhat_cache.row(r);
      ggamma.col(0) += dy.row(r).cwiseProduct(xhat).transpose();
      gbeta.col(0) += dy.row(r).transpose();
      S mean_g = g.sum() / n;
      S mean_gx = g.cwiseProduct(xhat).sum() / n;
      dx.row(r) = (g.array() - mean_g - xhat.array() * mean_gx) / sigma_cache(r);
    }
    return dx;
  }

  void params(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma, false});
    out.push_back({prefix + ".beta", &beta, &gbeta, false});
  }
  void blobs(const std::string& prefix, std::vector<std::pair<std::string, Matrix<S>*>>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

template <class S>
struct GlobalAvgPool {
  int channels = 0;
  Index plane = 0;

  Matrix<S> forward(const Matrix<S>& x) const {
    Matrix<S> y(x.rows(), channels);
    for (int c = 0; c < channels; ++c) {
      y.col(c) = x.middleCols(static_cast<Index>(c) * plane, plane).rowwise().mean();
    }
    return y;
  }

  Matrix<S> backward(const Matrix<S>& dy) const {
    Matrix<S> dx(dy.rows(), static_cast<Index>(channels) * plane);
    for (int c = 0; c < channels; ++c) {
      dx.middleCols(static_cast<Index>(c) * plane, plane) =
          (dy.col(c) / static_cast<S>(plane)).replicate(1, plane);
    }
    return dx;
  }
};

}  // namespace nets

enum class MlpNorm { none, batch, layer, feature };

// Multilayer perceptron: dense layers with ReLU (optionally normalized)
// between them and a linear final layer. dims = {input, hidden..., feature}.
template <class S>
class MlpExtractor final : public FeatureExtractor<S> {
 public:
  MlpExtractor(std::vector<Index> dims, Rng& rng, MlpNorm norm = MlpNorm::none)
      : dims_(std::move(dims)), norm_(norm) {
    if (dims_.size() < 2) throw std::invalid_argument("mlp: need at least input and feature dims");
    for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
      layers_.emplace_back(dims_[i], dims_[i + 1], rng);
    }
    relus_.resize(layers_.size() > 0 ? layers_.size() - 1 : 0);
    // Batch norm sits on hidden layers; layer norm also standardizes the
    // final feature layer, which pins the feature scale the head sees.
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      if (norm_ == MlpNorm::batch) bns_.emplace_back(static_cast<int>(dims_[i + 1]), 1);
    }
    if (norm_ == MlpNorm::layer) {
      for (std::size_t i = 0; i < layers_.size(); ++i) lns_.emplace_back(dims_[i + 1]);
    } else if (norm_ == MlpNorm::feature) {
      lns_.emplace_back(dims_.back());
    }
  }

  Index input_dim() const override { return dims_.front(); }
  Index feature_dim() const override { return dims_.back(); }

  Matrix<S> forward(const Matrix<S>& x) override {
    Matrix<S> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      bool last = i + 1 == layers_.size();
      if (norm_ == MlpNorm::layer) h = lns_[i].forward(h);
      if (norm_ == MlpNorm::feature && last) h = lns_[0].forward(h);
      if (!last) {
        if (norm_ == MlpNorm::batch) h = bns_[i].forward(h);
        h = relus_[i].forward(h);
      }
    }
    return h;
  }

  Matrix<S> eval_forward(const Matrix<S>& x) const override {
    Matrix<S> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].eval(h);
      bool last = i + 1 == layers_.size();
      if (norm_ == MlpNorm::layer) h = lns_[i].eval(h);
      if (norm_ == MlpNorm::feature && last) h = lns_[0].eval(h);
      if (!last) {
        if (norm_ == MlpNorm::batch) h = bns_[i].eval(h);
        h = nets::Relu<S>::eval(h);
      }
    }
    return h;
  }

  Matrix<S> backward(const Matrix<S>& dfeatures) override {
    Matrix<S> d = dfeatures;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      bool last = i + 1 == layers_.size();
      if (norm_ == MlpNorm::layer) d = lns_[i].backward(d);
      if (norm_ == MlpNorm::feature && last) d = lns_[0].backward(d);
      d = layers_[i].backward(d);
      if (i > 0) {
        d = relus_[i - 1].backward(d);
        if (norm_ == MlpNorm::batch) d = bns_[i - 1].backward(d);
      }
    }
    return d;
  }

  void collect_params(std::vector<ParamRef<S>>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].params("mlp.l" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < bns_.size(); ++i) {
      bns_[i].params("mlp.bn" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < lns_.size(); ++i) {
      lns_[i].params("mlp.ln" + std::to_string(i), out);
    }
  }

  void collect_blobs(std::vector<std::pair<std::string, Matrix<S>*>>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].blobs("mlp.l" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < bns_.size(); ++i) {
      bns_[i].blobs("mlp.bn" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < lns_.size(); ++i) {
      lns_[i].blobs("mlp.ln" + std::to_string(i), out);
    }
  }

  std::unique_ptr<FeatureExtractor<S>> clone() const override {
    return std::make_unique<MlpExtractor<S>>(*this);
  }

  std::string arch_id() const override {
    std::string id = norm_ == MlpNorm::batch    ? "mlp-bn:"
                     : norm_ == MlpNorm::layer   ? "mlp-ln:"
                     : norm_ == MlpNorm::feature ? "mlp-fn:"
                                                 : "mlp:";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) id += "-";
      id += std::to_string(dims_[i]);
    }
    return id;
  }

 private:
  std::vector<Index> dims_;
  MlpNorm norm_ = MlpNorm::none;
  std::vector<nets::Dense<S>> layers_;
  std::vector<nets::Relu<S>> relus_;
  std::vector<nets::BatchNorm<S>> bns_;
  std::vector<nets::LayerNorm<S>> lns_;
};

// Residual network for 32x32 images, depth 6n+2 with {16, 32, 64} channel
// stages and global average pooling (feature dim 64). Shortcuts that change
// shape use a 1x1 strided convolution followed by batch norm.
template <class S>
class ResNetExtractor final : public FeatureExtractor<S> {
 public:
  ResNetExtractor(int depth, ImageShape input, Rng& rng) : depth_(depth), input_(input) {
    if ((depth - 2) % 6 != 0 || depth < 8) {
      throw std::invalid_argument("resnet: depth must be 6n+2");
    }
    int n = (depth - 2) / 6;
    stem_conv_ = nets::Conv2d<S>(input_, 16, 3, 1, 1, rng);
    stem_bn_ = nets::BatchNorm<S>(16, plane(stem_conv_.out));
    ImageShape shape = stem_conv_.out;
    int widths[3] = {16, 32, 64};
    for (int stage = 0; stage < 3; ++stage) {
      for (int i = 0; i < n; ++i) {
        int stride = (stage > 0 && i == 0) ? 2 : 1;
        blocks_.emplace_back(shape, widths[stage], stride, rng);
        shape = blocks_.back().out_shape;
      }
    }
    pool_.channels = shape.channels;
    pool_.plane = plane(shape);
  }

  Index input_dim() const override { return input_.dim(); }
  Index feature_dim() const override { return pool_.channels; }

  Matrix<S> forward(const Matrix<S>& x) override {
    Matrix<S> h = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x)));
    for (auto& blk : blocks_) h = blk.forward(h);
    return pool_.forward(h);
  }

  Matrix<S> eval_forward(const Matrix<S>& x) const override {
    Matrix<S> h = nets::Relu<S>::eval(stem_bn_.eval(stem_conv_.eval(x)));
    for (const auto& blk : blocks_) h = blk.eval(h);
    return pool_.forward(h);
  }

  Matrix<S> backward(const Matrix<S>& dfeatures) override {
    Matrix<S> d = pool_.backward(dfeatures);
    for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d);
    return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(d)));
  }

  void collect_params(std::vector<ParamRef<S>>& out) override {
    stem_conv_.params("stem.conv", out);
    stem_bn_.params("stem.bn", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].params("block" + std::to_string(i), out);
    }
  }

  void collect_blobs(std::vector<std::pair<std::string, Matrix<S>*>>& out) override {
    stem_conv_.blobs("stem.conv", out);
    stem_bn_.blobs("stem.bn", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].blobs("block" + std::to_string(i), out);
    }
  }

  std::unique_ptr<FeatureExtractor<S>> clone() const override {
    return std::make_unique<ResNetExtractor<S>>(*this);
  }

  std::string arch_id() const override { return "resnet" + std::to_string(depth_); }

 private:
  static Index plane(ImageShape s) { return static_cast<Index>(s.height) * s.width; }

  struct BasicBlock {
    nets::Conv2d<S> conv1, conv2, conv_sc;
    nets::BatchNorm<S> bn1, bn2, bn_sc;
    nets::Relu<S> relu1, relu2;
    bool projected = false;
    ImageShape out_shape;
    Matrix<S> x_cache;

    BasicBlock(ImageShape in, int out_channels, int stride, Rng& rng) {
      conv1 = nets::Conv2d<S>(in, out_channels, 3, stride, 1, rng);
      bn1 = nets::BatchNorm<S>(out_channels, plane(conv1.out));
      conv2 = nets::Conv2d<S>(conv1.out, out_channels, 3, 1, 1, rng);
      bn2 = nets::BatchNorm<S>(out_channels, plane(conv2.out));
      out_shape = conv2.out;
      projected = (stride != 1 || in.channels != out_channels);
      if (projected) {
        conv_sc = nets::Conv2d<S>(in, out_channels, 1, stride, 0, rng);
        bn_sc = nets::BatchNorm<S>(out_channels, plane(conv_sc.out));
      }
    }

    Matrix<S> forward(const Matrix<S>& x) {
      Matrix<S> h = relu1.forward(bn1.forward(conv1.forward(x)));
      h = bn2.forward(conv2.forward(h));
      if (projected) {
        h += bn_sc.forward(conv_sc.forward(x));
      } else {
        h += x;
      }
      return relu2.forward(h);
    }

    Matrix<S> eval(const Matrix<S>& x) const {
      Matrix<S> h = nets::Relu<S>::eval(bn1.eval(conv1.eval(x)));
      h = bn2.eval(conv2.eval(h));
      if (projected) {
        h += bn_sc.eval(conv_sc.eval(x));
      } else {
        h += x;
      }
      return nets::Relu<S>::eval(h);
    }

    Matrix<S> backward(const Matrix<S>& dout) {
      Matrix<S> d = relu2.backward(dout);
      Matrix<S> d_main = conv1.backward(bn1.backward(relu1.backward(
          conv2.backward(bn2.backward(d)))));
      if (projected) {
        return d_main + conv_sc.backward(bn_sc.backward(d));
      }
      return d_main + d;
    }

    void params(const std::string& p, std::vector<ParamRef<S>>& out) {
      conv1.params(p + ".conv1", out);
      bn1.params(p + ".bn1", out);
      conv2.params(p + ".conv2", out);
      bn2.params(p + ".bn2", out);
      if (projected) {
        conv_sc.params(p + ".conv_sc", out);
        bn_sc.params(p + ".bn_sc", out);
      }
    }
    void blobs(const std::string& p, std::vector<std::pair<std::string, Matrix<S>*>>& out) {
      conv1.blobs(p + ".conv1", out);
      bn1.blobs(p + ".bn1", out);
      conv2.blobs(p + ".conv2", out);
      bn2.blobs(p + ".bn2", out);
      if (projected) {
        conv_sc.blobs(p + ".conv_sc", out);
        bn_sc.blobs(p + ".bn_sc", out);
      }
    }
  };

  int depth_;
  ImageShape input_;
  nets::Conv2d<S> stem_conv_;
  nets::BatchNorm<S> stem_bn_;
  nets::Relu<S> stem_relu_;
  std::vector<BasicBlock> blocks_;
  nets::GlobalAvgPool<S> pool_;
};

// Declarative extractor choice, serialized into run manifests.
struct ExtractorSpec {
  std::string arch = "mlp";      // "linear" | "mlp" | "resnet<depth>"
  Index input_dim = 0;           // vector archs
  std::vector<Index> hidden;     // mlp only
  Index feature_dim = 0;
  ImageShape image;              // resnet only
};

template <class S>
std::unique_ptr<FeatureExtractor<S>> make_extractor(const ExtractorSpec& spec, Rng& rng) {
  if (spec.arch == "linear") {
    return std::make_unique<MlpExtractor<S>>(std::vector<Index>{spec.input_dim, spec.feature_dim},
                                             rng);
  }
  if (spec.arch == "mlp" || spec.arch == "mlp-bn" || spec.arch == "mlp-ln" ||
      spec.arch == "mlp-fn") {
    std::vector<Index> dims;
    dims.push_back(spec.input_dim);
    dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
    dims.push_back(spec.feature_dim);
    MlpNorm norm = spec.arch == "mlp-bn"   ? MlpNorm::batch
                   : spec.arch == "mlp-ln" ? MlpNorm::layer
                   : spec.arch == "mlp-fn" ? MlpNorm::feature
                                           : MlpNorm::none;
    return std::make_unique<MlpExtractor<S>>(dims, rng, norm);
  }
  if (spec.arch.rfind("resnet", 0) == 0) {
    int depth = std::stoi(spec.arch.substr(6));
    if (!spec.image.valid()) throw std::invalid_argument("resnet extractor needs an image shape");
    return std::make_unique<ResNetExtractor<S>>(depth, spec.image, rng);
  }
  throw std::invalid_argument("unknown extractor arch: " + spec.arch);
}

}  // namespace ccil
