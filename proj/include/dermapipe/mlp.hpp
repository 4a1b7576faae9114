#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "dermapipe/dataset.hpp"
#include "dermapipe/error.hpp"
#include "dermapipe/featurestore.hpp"
#include "dermapipe/rng.hpp"

namespace dermapipe {

// One-hidden-layer severity classifier:
//   hidden = dropout(relu(W1^T x + b1)),  logits = W2^T hidden + b2.
// Batched functions take samples as columns.

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct MlpParams {
  Matrix<Scalar> w1;  // D x H
  Vector<Scalar> b1;  // H
  Matrix<Scalar> w2;  // H x C
  Vector<Scalar> b2;  // C
  /// Bumped by every optimizer step; forward caches remember it.
  std::uint64_t generation = 0;

  int input_dim() const { return static_cast<int>(w1.rows()); }
  int hidden_dim() const { return static_cast<int>(w1.cols()); }
  int num_classes() const { return static_cast<int>(w2.cols()); }

  static MlpParams zeros(int d, int h, int c) {
    return {Matrix<Scalar>::Zero(d, h), Vector<Scalar>::Zero(h), Matrix<Scalar>::Zero(h, c), Vector<Scalar>::Zero(c), 0};
  }

  template <typename Other>
  MlpParams<Other> cast() const {
    return {w1.template cast<Other>(), b1.template cast<Other>(), w2.template cast<Other>(), b2.template cast<Other>(),
            generation};
  }

  bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }
  bool same_shape(const MlpParams& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
           w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
  }
};

/// Weights ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
/// Weights are drawn W1 then W2, each in column-major order.
template <typename Scalar>
MlpParams<Scalar> glorot_init(int d, int h, int c, Rng& rng) {
  auto params = MlpParams<Scalar>::zeros(d, h, c);
  auto fill = [&rng](Matrix<Scalar>& w) {
    const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(rng.uniform(-a, a));
  };
  fill(params.w1);
  fill(params.w2);
  return params;
}

enum class Mode { Train, Eval };

template <typename Scalar>
struct ForwardCache {
  Matrix<Scalar> input;     // D x B
  Matrix<Scalar> preact;    // H x B, before relu
  Matrix<Scalar> keep;      // H x B dropout scales (0 or 1/(1-p)); empty in eval mode
  Matrix<Scalar> hidden;    // H x B, after relu and dropout
  std::uint64_t generation = 0;
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> logits;  // C x B
  ForwardCache<Scalar> cache;
};

/// Train mode draws one uniform per hidden unit, column by column, and drops
/// the unit when the draw is below dropout_p (inverted dropout).
template <typename Scalar, typename Derived>
ForwardResult<Scalar> forward(const MlpParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x, Mode mode,
                              double dropout_p = 0.0, Rng* rng = nullptr) {
  if (x.rows() != params.input_dim()) {
    fail(Errc::DimMismatch, "input has " + std::to_string(x.rows()) + " features, model expects " +
                                std::to_string(params.input_dim()));
  }
  ForwardResult<Scalar> out;
  auto& cache = out.cache;
  cache.generation = params.generation;
  cache.input = x.template cast<Scalar>();
  cache.preact = (params.w1.transpose() * cache.input).colwise() + params.b1;
  cache.hidden = cache.preact.cwiseMax(Scalar(0));
  if (mode == Mode::Train && dropout_p > 0.0) {
    if (rng == nullptr) fail(Errc::InvalidArgument, "train-mode dropout needs a random source");
    if (!(dropout_p < 1.0)) fail(Errc::InvalidArgument, "dropout probability must be < 1");
    const Scalar scale = Scalar(1.0 / (1.0 - dropout_p));
    cache.keep.resize(cache.hidden.rows(), cache.hidden.cols());
    for (Eigen::Index j = 0; j < cache.keep.cols(); ++j)
      for (Eigen::Index i = 0; i < cache.keep.rows(); ++i)
        cache.keep(i, j) = rng->uniform01() < dropout_p ? Scalar(0) : scale;
    cache.hidden = cache.hidden.cwiseProduct(cache.keep);
  }
  out.logits = (params.w2.transpose() * cache.hidden).colwise() + params.b2;
  return out;
}

/// Column-wise softmax with max subtraction.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> e = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp().matrix();
  return e.array().rowwise() / e.colwise().sum().array();
}

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;          // mean over the batch
  Matrix<Scalar> dlogits;   // d(mean loss)/d(logits), C x B
};

/// Mean cross-entropy over the batch columns and its gradient
/// (softmax - onehot) / B.
template <typename Derived>
LossResult<typename Derived::Scalar> softmax_cross_entropy(const Eigen::MatrixBase<Derived>& logits,
                                                           std::span<const int> labels) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols()) {
    fail(Errc::LengthMismatch, "labels do not match the logits batch");
  }
  LossResult<Scalar> out;
  out.dlogits = softmax(logits);
  const auto batch = static_cast<Scalar>(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= logits.rows()) fail(Errc::InvalidLabel, "label " + std::to_string(y));
    const Scalar max = logits.col(j).maxCoeff();
    const Scalar lse = max + std::log((logits.col(j).array() - max).exp().sum());
    out.loss += lse - logits(y, j);
    out.dlogits(y, j) -= Scalar(1);
  }
  out.loss /= batch;
  out.dlogits /= batch;
  return out;
}

/// Gradients share the parameter layout.
template <typename Scalar>
using MlpGradients = MlpParams<Scalar>;

/// Throws StaleCache when the cache came from another parameter generation or
/// shape, ShapeMismatch when dlogits does not match the cached batch.
template <typename Scalar, typename Derived>
MlpGradients<Scalar> backward(const MlpParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                              const Eigen::MatrixBase<Derived>& dlogits) {
  if (cache.generation != params.generation || cache.input.rows() != params.input_dim() ||
      cache.hidden.rows() != params.hidden_dim()) {
    fail(Errc::StaleCache, "forward cache does not belong to these parameters");
  }
  if (dlogits.rows() != params.num_classes() || dlogits.cols() != cache.hidden.cols()) {
    fail(Errc::ShapeMismatch, "dlogits shape does not match the cached batch");
  }
  MlpGradients<Scalar> g;
  g.generation = params.generation;
  g.w2 = cache.hidden * dlogits.transpose();
  g.b2 = dlogits.rowwise().sum();
  Matrix<Scalar> dhidden = params.w2 * dlogits;
  if (cache.keep.size() != 0) dhidden = dhidden.cwiseProduct(cache.keep);
  const Matrix<Scalar> dpre = (cache.preact.array() > Scalar(0)).select(dhidden, Scalar(0));
  g.w1 = cache.input * dpre.transpose();
  g.b1 = dpre.rowwise().sum();
  return g;
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Coupled L2: lambda * theta is added to the weight gradients (not biases).
  double weight_decay = 1e-4;
};

template <typename Scalar>
struct AdamState {
  MlpParams<Scalar> m;
  MlpParams<Scalar> v;
  std::int64_t t = 0;

  static AdamState for_params(const MlpParams<Scalar>& p) {
    return {MlpParams<Scalar>::zeros(p.input_dim(), p.hidden_dim(), p.num_classes()),
            MlpParams<Scalar>::zeros(p.input_dim(), p.hidden_dim(), p.num_classes()), 0};
  }
};

namespace detail {

template <typename Scalar, typename Param, typename Grad>
void adam_update(Eigen::MatrixBase<Param>& theta, const Eigen::MatrixBase<Grad>& grad, Eigen::MatrixBase<Param>& m,
                 Eigen::MatrixBase<Param>& v, double decay, const AdamConfig& cfg, double bias1, double bias2) {
  const auto g = (grad + Scalar(decay) * theta).eval();
  m = Scalar(cfg.beta1) * m + Scalar(1.0 - cfg.beta1) * g;
  v = Scalar(cfg.beta2) * v + Scalar(1.0 - cfg.beta2) * g.cwiseAbs2();
  theta -= (Scalar(cfg.learning_rate) * (m / Scalar(bias1)).array() /
            ((v / Scalar(bias2)).array().sqrt() + Scalar(cfg.epsilon)))
               .matrix();
}

}  // namespace detail

/// Adam with bias correction. Throws ShapeMismatch.
template <typename Scalar>
void adam_step(MlpParams<Scalar>& params, const MlpGradients<Scalar>& grads, AdamState<Scalar>& state,
               const AdamConfig& cfg) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    fail(Errc::ShapeMismatch, "parameters, gradients and optimizer state disagree in shape");
  }
  ++state.t;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  detail::adam_update<Scalar>(params.w1, grads.w1, state.m.w1, state.v.w1, cfg.weight_decay, cfg, bias1, bias2);
  detail::adam_update<Scalar>(params.b1, grads.b1, state.m.b1, state.v.b1, 0.0, cfg, bias1, bias2);
  detail::adam_update<Scalar>(params.w2, grads.w2, state.m.w2, state.v.w2, cfg.weight_decay, cfg, bias1, bias2);
  detail::adam_update<Scalar>(params.b2, grads.b2, state.m.b2, state.v.b2, 0.0, cfg, bias1, bias2);
  ++params.generation;
}

/// Argmax of eval-mode logits; ties go to the lowest class index.
template <typename Scalar, typename Derived>
std::vector<int> predict(const MlpParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x) {
  const auto logits = forward(params, x, Mode::Eval).logits;
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.rows(); ++c)
      if (logits(c, j) > logits(best, j)) best = c;
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

template <typename Scalar>
SeverityLabel predict_one(const MlpParams<Scalar>& params, const EmbeddingVector& x) {
  return SeverityLabel(predict(params, x)[0]);
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  AdamConfig adam;
  int epochs = 50;
  int batch_size = 16;
  double dropout = 0.3;
  int hidden = 128;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  /// Eval-mode mean loss over the training ids after the epoch.
  double train_loss = 0.0;
  /// NaN when the split has no validation ids.
  double val_weighted_f1 = 0.0;
};

struct TrainResult {
  MlpParams<float> params;
  std::vector<EpochLog> log;
};

/// Stacks the embeddings of `ids` as columns. Throws MissingFeature.
Matrix<double> gather_features(const EmbeddingProvider& features, std::span<const std::string> ids);
/// Throws MissingLabel.
std::vector<int> gather_labels(const std::unordered_map<std::string, SeverityLabel>& labels,
                               std::span<const std::string> ids);

/// Trains on split.train_ids for config.epochs epochs of ceil(N / batch)
/// steps with a fresh seeded shuffle per epoch; the final epoch's parameters
/// are returned. Arithmetic is done in double; the result is stored as float.
TrainResult train(const EmbeddingProvider& features, const SplitSpec& split,
                  const std::unordered_map<std::string, SeverityLabel>& labels, const TrainConfig& config);

std::string training_log_csv(std::span<const EpochLog> log);

inline constexpr char kModelMagic[4] = {'D', 'D', 'X', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

void write_model(const MlpParams<float>& params, const std::filesystem::path& path);
/// Throws BadMagic, UnsupportedVersion, TruncatedFile, NonFinite.
MlpParams<float> read_model(const std::filesystem::path& path);

}  // namespace dermapipe
