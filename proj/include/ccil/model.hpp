#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccil/losses.hpp"
#include "ccil/rng.hpp"
#include "ccil/types.hpp"

namespace ccil {

enum class HeadMode { dot, cosine };

template <class S>
struct ParamRef {
  std::string name;
  Matrix<S>* value = nullptr;
  Matrix<S>* grad = nullptr;
  bool weight_decay = true;
};

// Parametric feature map phi: batch of flattened inputs -> batch of feature
// vectors. forward/backward carry per-call activation caches; eval_forward is
// the pure inference path (batch-norm running statistics, no caches).
template <class S>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Index input_dim() const = 0;
  virtual Index feature_dim() const = 0;
  virtual Matrix<S> forward(const Matrix<S>& x) = 0;
  virtual Matrix<S> backward(const Matrix<S>& dfeatures) = 0;
  virtual Matrix<S> eval_forward(const Matrix<S>& x) const = 0;
  virtual void collect_params(std::vector<ParamRef<S>>& out) = 0;
  // Everything that defines the function, including non-trained buffers.
  virtual void collect_blobs(std::vector<std::pair<std::string, Matrix<S>*>>& out) = 0;
  virtual std::unique_ptr<FeatureExtractor<S>> clone() const = 0;
  virtual std::string arch_id() const = 0;

  void zero_grads() {
    std::vector<ParamRef<S>> refs;
    collect_params(refs);
    for (auto& p : refs) p.grad->setZero();
  }
};

// Expandable per-class weight vectors w_1..w_t. In dot mode logits are
// W phi(x) + b; in cosine mode scale * <w/|w|, phi(x)/|phi(x)|>, so logits lie
// in [-scale, scale]. The cosine scale is a single learnable positive scalar
// and there is no bias (normalization makes one ill-defined).
template <class S>
class ClassifierHead {
 public:
  ClassifierHead(Index feature_dim, HeadMode mode, S scale_init = S(8))
      : dim_(feature_dim), mode_(mode) {
    weights_.resize(0, dim_);
    grad_weights_.resize(0, dim_);
    bias_.resize(0, 1);
    grad_bias_.resize(0, 1);
    scale_.setConstant(1, 1, scale_init);
    grad_scale_.setZero(1, 1);
  }

  Index num_classes() const { return weights_.rows(); }
  Index feature_dim() const { return dim_; }
  HeadMode mode() const { return mode_; }
  S scale() const { return scale_(0, 0); }
  const Matrix<S>& weights() const { return weights_; }
  const Matrix<S>& bias() const { return bias_; }

  // Appends num_new fan-in initialized weight vectors; existing rows are
  // untouched, so old-class logits are preserved exactly.
  void expand(Index num_new, Rng& rng) {
    if (num_new < 1) throw std::invalid_argument("expand: num_new must be >= 1");
    Index old = weights_.rows();
    weights_.conservativeResize(old + num_new, dim_);
    S bound = S(1) / std::sqrt(static_cast<S>(dim_));
    for (Index r = old; r < old + num_new; ++r) {
      for (Index c = 0; c < dim_; ++c) {
        weights_(r, c) = static_cast<S>((2.0 * rng.next_double() - 1.0)) * bound;
      }
    }
    grad_weights_.setZero(old + num_new, dim_);
    if (mode_ == HeadMode::dot) {
      bias_.conservativeResize(old + num_new, 1);
      bias_.bottomRows(num_new).setZero();
      grad_bias_.setZero(old + num_new, 1);
    }
  }

  Matrix<S> forward(const Matrix<S>& feats) const {
    if (feats.cols() != dim_) throw std::invalid_argument("head: feature dimension mismatch");
    if (mode_ == HeadMode::dot) {
      Matrix<S> logits = feats * weights_.transpose();
      logits.rowwise() += bias_.col(0).transpose();
      return logits;
    }
    return scale_(0, 0) * (normalized_rows(feats) * normalized_rows(weights_).transpose());
  }

  // Accumulates parameter gradients and returns dL/dfeatures.
  Matrix<S> backward(const Matrix<S>& feats, const Matrix<S>& dlogits) {
    if (mode_ == HeadMode::dot) {
      grad_weights_ += dlogits.transpose() * feats;
      grad_bias_.col(0) += dlogits.colwise().sum().transpose();
      return dlogits * weights_;
    }
    Matrix<S> fhat = normalized_rows(feats);
    Matrix<S> what = normalized_rows(weights_);
    Matrix<S> cos = fhat * what.transpose();
    S s = scale_(0, 0);
    grad_scale_(0, 0) += (dlogits.array() * cos.array()).sum();
    Matrix<S> dcos = s * dlogits;
    Matrix<S> dfhat = dcos * what;
    Matrix<S> dwhat = dcos.transpose() * fhat;
    return unnormalize_rows(feats, fhat, dfhat, &grad_weights_, weights_, what, dwhat);
  }

  void zero_grads() {
    grad_weights_.setZero();
    grad_bias_.setZero();
    grad_scale_.setZero();
  }

  void collect_params(std::vector<ParamRef<S>>& out) {
    out.push_back({"head.weights", &weights_, &grad_weights_, true});
    if (mode_ == HeadMode::dot) {
      out.push_back({"head.bias", &bias_, &grad_bias_, false});
    } else {
      // The scale behaves like a temperature, not a weight vector; it is
      // excluded from weight decay.
      out.push_back({"head.scale", &scale_, &grad_scale_, false});
    }
  }

  void collect_blobs(std::vector<std::pair<std::string, Matrix<S>*>>& out) {
    out.emplace_back("head.weights", &weights_);
    out.emplace_back("head.bias", &bias_);
    out.emplace_back("head.scale", &scale_);
  }

 private:
  static Matrix<S> normalized_rows(const Matrix<S>& x) {
    Matrix<S> out = x;
    for (Index r = 0; r < x.rows(); ++r) {
      S n = x.row(r).norm();
      out.row(r) /= std::max(n, S(1e-12));
    }
    return out;
  }

  // Gradient of x/|x|: dx = (dxhat - (xhat . dxhat) xhat) / |x|, applied to
  // both the feature rows (returned) and the weight rows (accumulated).
  Matrix<S> unnormalize_rows(const Matrix<S>& feats, const Matrix<S>& fhat,
                             const Matrix<S>& dfhat, Matrix<S>* gw,
                             const Matrix<S>& w, const Matrix<S>& what,
                             const Matrix<S>& dwhat) const {
    Matrix<S> dfeats(feats.rows(), feats.cols());
    for (Index r = 0; r < feats.rows(); ++r) {
      S n = std::max(feats.row(r).norm(), S(1e-12));
      S dot = fhat.row(r).dot(dfhat.row(r));
      dfeats.row(r) = (dfhat.row(r) - dot * fhat.row(r)) / n;
    }
    for (Index r = 0; r < w.rows(); ++r) {
      S n = std::max(w.row(r).norm(), S(1e-12));
      S dot = what.row(r).dot(dwhat.row(r));
      gw->row(r) += (dwhat.row(r) - dot * what.row(r)) / n;
    }
    return dfeats;
  }

  Index dim_;
  HeadMode mode_;
  Matrix<S> weights_, grad_weights_;
  Matrix<S> bias_, grad_bias_;
  Matrix<S> scale_, grad_scale_;
};

template <class S>
class ModelSnapshot;

// Shared feature extractor plus expandable classification head, with the
// old/new span bookkeeping for the current incremental step.
template <class S>
class IncrementalClassifier {
 public:
  IncrementalClassifier(std::unique_ptr<FeatureExtractor<S>> extractor, HeadMode mode,
                        S scale_init = S(8))
      : extractor_(std::move(extractor)),
        head_(extractor_->feature_dim(), mode, scale_init) {}

  IncrementalClassifier(const IncrementalClassifier& other)
      : extractor_(other.extractor_->clone()),
        head_(other.head_),
        old_count_(other.old_count_) {}
  IncrementalClassifier& operator=(const IncrementalClassifier&) = delete;

  FeatureExtractor<S>& extractor() { return *extractor_; }
  const FeatureExtractor<S>& extractor() const { return *extractor_; }
  ClassifierHead<S>& head() { return head_; }
  const ClassifierHead<S>& head() const { return head_; }

  Index num_classes() const { return head_.num_classes(); }
  LogitSpans spans() const { return {old_count_, head_.num_classes()}; }

  // Adds output nodes for the classes of a new task; everything seen so far
  // becomes the old span.
  void expand_head(Index num_new, Rng& rng) {
    old_count_ = head_.num_classes();
    head_.expand(num_new, rng);
  }

  // Training-mode forward; caches activations for backward().
  LogitsSplit<S> forward(const Matrix<S>& x) {
    check_input(x);
    feats_cache_ = extractor_->forward(x);
    return {head_.forward(feats_cache_), spans()};
  }

  // Backprop from dL/dlogits through head and extractor; gradients accumulate.
  void backward(const Matrix<S>& dlogits) {
    Matrix<S> dfeats = head_.backward(feats_cache_, dlogits);
    extractor_->backward(dfeats);
  }

  LogitsSplit<S> eval_split(const Matrix<S>& x) const {
    check_input(x);
    return {head_.forward(extractor_->eval_forward(x)), spans()};
  }

  Matrix<S> eval_logits(const Matrix<S>& x) const { return eval_split(x).logits; }
  Matrix<S> eval_features(const Matrix<S>& x) const { return extractor_->eval_forward(x); }

  void collect_params(std::vector<ParamRef<S>>& out) {
    extractor_->collect_params(out);
    head_.collect_params(out);
  }

  void collect_blobs(std::vector<std::pair<std::string, Matrix<S>*>>& out) {
    extractor_->collect_blobs(out);
    head_.collect_blobs(out);
  }

  void zero_grads() {
    extractor_->zero_grads();
    head_.zero_grads();
  }

  void set_old_count(Index s) {
    if (s < 0 || s > head_.num_classes()) throw std::invalid_argument("set_old_count: bad span");
    old_count_ = s;
  }

 private:
  void check_input(const Matrix<S>& x) const {
    if (x.cols() != extractor_->input_dim()) {
      throw std::invalid_argument("model: input has " + std::to_string(x.cols()) +
                                  " columns, extractor expects " +
                                  std::to_string(extractor_->input_dim()));
    }
  }

  std::unique_ptr<FeatureExtractor<S>> extractor_;
  ClassifierHead<S> head_;
  Index old_count_ = 0;
  Matrix<S> feats_cache_;

  friend class ModelSnapshot<S>;
};

// Deep frozen copy of a model at a step boundary. Only const evaluation is
// exposed, so snapshot outputs cannot drift while the live model trains.
template <class S>
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const IncrementalClassifier<S>& model)
      : model_(std::make_unique<IncrementalClassifier<S>>(model)) {}
  ModelSnapshot(const ModelSnapshot& other)
      : model_(std::make_unique<IncrementalClassifier<S>>(*other.model_)) {}
  ModelSnapshot(ModelSnapshot&&) noexcept = default;

  Index num_classes() const { return model_->num_classes(); }
  Matrix<S> logits(const Matrix<S>& x) const { return model_->eval_logits(x); }
  Matrix<S> features(const Matrix<S>& x) const { return model_->eval_features(x); }
  const IncrementalClassifier<S>& model() const { return *model_; }

 private:
  std::unique_ptr<IncrementalClassifier<S>> model_;
};

template <class S>
ModelSnapshot<S> snapshot(const IncrementalClassifier<S>& model) {
  return ModelSnapshot<S>(model);
}

struct WeightNorms {
  std::optional<double> old_mean;
  std::optional<double> new_mean;
};

// Mean L2 norm of per-class head weight vectors over the old and new spans.
// An empty span is reported as absent. Raw parameter norms are reported in
// both head modes; the diagnostic is only meaningful for dot heads.
template <class S>
WeightNorms weight_norms(const ClassifierHead<S>& head, LogitSpans spans) {
  spans.check();
  if (spans.total > head.num_classes()) {
    throw std::invalid_argument("weight_norms: span exceeds head size");
  }
  auto mean_norm = [&](Index begin, Index end) -> std::optional<double> {
    if (end <= begin) return std::nullopt;
    double sum = 0.0;
    for (Index r = begin; r < end; ++r) sum += static_cast<double>(head.weights().row(r).norm());
    return sum / static_cast<double>(end - begin);
  };
  return {mean_norm(0, spans.old_count), mean_norm(spans.old_count, spans.total)};
}

}  // namespace ccil
