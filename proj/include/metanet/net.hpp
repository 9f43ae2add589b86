#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "metanet/binary_io.hpp"
#include "metanet/error.hpp"
#include "metanet/features.hpp"
#include "metanet/rng.hpp"

namespace metanet {

/// Raised when a parameter update would consume non-finite gradients.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

struct ModelConfig {
  std::size_t input_dim = 3300;
  std::size_t hidden_layers = 1;
  std::size_t hidden_width = 500;
  std::size_t output_classes = 2;
  double dropout_rate = 0.5;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_dim == 0 || hidden_layers == 0 || hidden_width == 0 || output_classes == 0) {
      throw ValidationError("model dimensions must be positive");
    }
    if (output_classes != 2) throw ValidationError("only two output classes are supported");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t patience = 10;
  double min_delta = 1e-4;
  std::uint64_t train_seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
    if (patience < 1) throw ValidationError("patience must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (max_epochs < 1) throw ValidationError("max_epochs must be at least 1");
  }
};

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Layer {
  MatrixT<Scalar> weights;  // fan_out x fan_in
  VectorT<Scalar> bias;
  MatrixT<Scalar> weight_velocity;
  VectorT<Scalar> bias_velocity;

  std::size_t fan_in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t fan_out() const { return static_cast<std::size_t>(weights.rows()); }
};

/// ReLU hidden layers followed by a softmax output layer.
template <typename Scalar>
struct BasicNetwork {
  ModelConfig config;
  std::vector<Layer<Scalar>> layers;
};

using Network = BasicNetwork<float>;

template <typename Scalar>
struct LayerGradient {
  MatrixT<Scalar> weights;
  VectorT<Scalar> bias;
};

template <typename Scalar>
using Gradients = std::vector<LayerGradient<Scalar>>;

enum class Mode { kTrain, kEval };

/// Per-layer state kept by a train-mode forward pass for backward().
template <typename Scalar>
struct ForwardCache {
  std::vector<MatrixT<Scalar>> inputs;          // input to each layer (post-dropout for hidden)
  std::vector<MatrixT<Scalar>> pre_activations;  // one per layer
  std::vector<MatrixT<Scalar>> masks;            // scaled dropout masks, one per hidden layer; empty if no dropout
  MatrixT<Scalar> probabilities;
};

template <typename Scalar = float>
BasicNetwork<Scalar> init_network(const ModelConfig& config) {
  config.validate();
  BasicNetwork<Scalar> net{config, {}};
  Rng rng(config.init_seed);
  std::size_t fan_in = config.input_dim;
  for (std::size_t l = 0; l <= config.hidden_layers; ++l) {
    const std::size_t fan_out = l == config.hidden_layers ? config.output_classes : config.hidden_width;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Layer<Scalar> layer;
    layer.weights.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
      }
    }
    layer.bias = VectorT<Scalar>::Zero(static_cast<Eigen::Index>(fan_out));
    layer.weight_velocity = MatrixT<Scalar>::Zero(layer.weights.rows(), layer.weights.cols());
    layer.bias_velocity = VectorT<Scalar>::Zero(layer.bias.size());
    net.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return net;
}

namespace detail {

template <typename Scalar>
void softmax_rows(MatrixT<Scalar>& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace detail

/// Class probabilities for each row of `batch`. In train mode, hidden
/// activations are masked with keep probability 1-p and scaled by 1/(1-p),
/// and `cache` (if given) receives what backward() needs.
template <typename Scalar>
MatrixT<Scalar> forward(const BasicNetwork<Scalar>& net, const MatrixT<Scalar>& batch, Mode mode,
                        std::uint64_t dropout_seed = 0, ForwardCache<Scalar>* cache = nullptr) {
  if (static_cast<std::size_t>(batch.cols()) != net.config.input_dim) {
    throw ValidationError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                          std::to_string(net.config.input_dim));
  }
  const double p = net.config.dropout_rate;
  const bool dropout = mode == Mode::kTrain && p > 0.0;
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  Rng rng(dropout_seed);
  if (cache) *cache = {};

  MatrixT<Scalar> a = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    MatrixT<Scalar> z = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->pre_activations.push_back(z);
    }
    if (l + 1 == net.layers.size()) {
      detail::softmax_rows(z);
      if (cache) cache->probabilities = z;
      return z;
    }
    a = z.cwiseMax(Scalar(0));
    if (dropout) {
      MatrixT<Scalar> mask(a.rows(), a.cols());
      for (Eigen::Index c = 0; c < mask.cols(); ++c) {
        for (Eigen::Index r = 0; r < mask.rows(); ++r) {
          mask(r, c) = rng.bernoulli(1.0 - p) ? keep_scale : Scalar(0);
        }
      }
      a.array() *= mask.array();
      if (cache) cache->masks.push_back(std::move(mask));
    }
  }
  return a;  // unreachable: a network always has an output layer
}

/// Mean cross-entropy of the true class with probabilities clamped at 1e-12.
template <typename Derived>
double loss(const Eigen::MatrixBase<Derived>& probabilities, std::span<const int> labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size()) {
    throw ValidationError("probability rows and label count differ");
  }
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = static_cast<double>(probabilities(static_cast<Eigen::Index>(i), labels[i]));
    total -= std::log(std::max(p, 1e-12));
  }
  return total / static_cast<double>(labels.size());
}

/// Analytic gradients of the mean cross-entropy for the batch cached by a
/// train-mode forward pass.
template <typename Scalar>
Gradients<Scalar> backward(const BasicNetwork<Scalar>& net, const ForwardCache<Scalar>& cache,
                           std::span<const int> labels) {
  if (cache.inputs.size() != net.layers.size() || cache.probabilities.size() == 0) {
    throw ValidationError("backward requires the cache of a train-mode forward pass");
  }
  const auto n = cache.probabilities.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw ValidationError("label count does not match cached batch");

  MatrixT<Scalar> delta = cache.probabilities;
  for (Eigen::Index i = 0; i < n; ++i) delta(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
  delta /= static_cast<Scalar>(n);

  Gradients<Scalar> grads(net.layers.size());
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    grads[l].weights = delta.transpose() * cache.inputs[l];
    grads[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    MatrixT<Scalar> upstream = delta * net.layers[l].weights;
    if (!cache.masks.empty()) upstream.array() *= cache.masks[l - 1].array();
    delta = (cache.pre_activations[l - 1].array() > Scalar(0)).select(upstream, Scalar(0));
  }
  return grads;
}

/// v <- momentum*v - lr*g; w <- w + v. Throws DivergenceError on non-finite gradients.
template <typename Scalar>
void sgd_momentum_step(BasicNetwork<Scalar>& net, const Gradients<Scalar>& grads, double lr, double momentum) {
  if (grads.size() != net.layers.size()) throw ValidationError("gradient layer count mismatch");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    const auto& layer = net.layers[l];
    if (grads[l].weights.rows() != layer.weights.rows() || grads[l].weights.cols() != layer.weights.cols() ||
        grads[l].bias.size() != layer.bias.size()) {
      throw ValidationError("gradient shape mismatch at layer " + std::to_string(l));
    }
    if (!grads[l].weights.allFinite() || !grads[l].bias.allFinite()) {
      throw DivergenceError("non-finite gradient at layer " + std::to_string(l));
    }
  }
  const auto m = static_cast<Scalar>(momentum);
  const auto eta = static_cast<Scalar>(lr);
  for (std::size_t l = 0; l < grads.size(); ++l) {
    auto& layer = net.layers[l];
    layer.weight_velocity = m * layer.weight_velocity - eta * grads[l].weights;
    layer.bias_velocity = m * layer.bias_velocity - eta * grads[l].bias;
    layer.weights += layer.weight_velocity;
    layer.bias += layer.bias_velocity;
  }
}

enum class StopReason { kEarlyStop, kMaxEpochs, kDiverged };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kEarlyStop: return "early-stop";
    case StopReason::kMaxEpochs: return "max-epochs";
    case StopReason::kDiverged: return "diverged";
  }
  return "?";
}

struct EpochStats {
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch completed
  StopReason stop_reason = StopReason::kMaxEpochs;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// Patience counter over validation losses. An epoch resets the counter only
/// when it beats the best loss by more than min_delta; any strict improvement
/// becomes the new best epoch.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Records the loss of the next epoch; returns true if it is the new best.
  bool update(double validation_loss) {
    ++epoch_;
    const bool significant = validation_loss < best_loss_ - min_delta_;
    const bool best = validation_loss < best_loss_;
    wait_ = significant ? 0 : wait_ + 1;
    if (best) {
      best_loss_ = validation_loss;
      best_epoch_ = epoch_;
    }
    return best;
  }

  bool should_stop() const { return wait_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t wait_ = 0;
};

template <typename Scalar = float>
MatrixT<Scalar> to_matrix(std::span<const LabeledExample> examples, std::span<const std::size_t> rows = {}) {
  const std::size_t n = rows.empty() ? examples.size() : rows.size();
  const std::size_t d = examples.empty() ? 0 : examples.front().features.size();
  MatrixT<Scalar> m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = examples[rows.empty() ? i : rows[i]].features;
    if (f.size() != d) throw ValidationError("inconsistent feature lengths");
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<Scalar>(f[j]);
  }
  return m;
}

inline std::vector<int> labels_of(std::span<const LabeledExample> examples) {
  std::vector<int> y;
  y.reserve(examples.size());
  for (const auto& e : examples) y.push_back(e.label);
  return y;
}

template <typename Scalar>
struct TrainResult {
  BasicNetwork<Scalar> network;
  TrainHistory history;
};

/// Mini-batch SGD with momentum and early stopping on validation loss.
/// Returns the parameters of the best validation epoch.
template <typename Scalar>
TrainResult<Scalar> train(BasicNetwork<Scalar> net, std::span<const LabeledExample> train_set,
                          std::span<const LabeledExample> validation_set, const TrainConfig& tc) {
  tc.validate();
  if (train_set.empty() || validation_set.empty()) throw ValidationError("training and validation sets must be non-empty");
  for (auto set : {train_set, validation_set}) {
    for (const auto& e : set) {
      if (e.features.size() != net.config.input_dim) {
        throw ValidationError("feature length " + std::to_string(e.features.size()) + " != input_dim " +
                              std::to_string(net.config.input_dim));
      }
    }
  }

  const MatrixT<Scalar> x_train = to_matrix<Scalar>(train_set);
  const std::vector<int> y_train = labels_of(train_set);
  const MatrixT<Scalar> x_val = to_matrix<Scalar>(validation_set);
  const std::vector<int> y_val = labels_of(validation_set);

  Rng rng(tc.train_seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult<Scalar> result{net, {}};
  EarlyStopping stopper(tc.patience, tc.min_delta);
  ForwardCache<Scalar> cache;
  std::vector<int> batch_labels;
  MatrixT<Scalar> batch;

  auto diverged = [&] {
    result.history.stop_reason = StopReason::kDiverged;
    result.history.best_epoch = stopper.best_epoch();
    return result;
  };

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      const auto n = static_cast<Eigen::Index>(end - start);
      batch.resize(n, x_train.cols());
      batch_labels.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t src = order[start + static_cast<std::size_t>(i)];
        batch.row(i) = x_train.row(static_cast<Eigen::Index>(src));
        batch_labels[static_cast<std::size_t>(i)] = y_train[src];
      }
      const auto probs = forward(net, batch, Mode::kTrain, rng.next(), &cache);
      const double batch_loss = loss(probs, batch_labels);
      if (!std::isfinite(batch_loss)) return diverged();
      train_total += batch_loss * static_cast<double>(n);
      try {
        sgd_momentum_step(net, backward(net, cache, batch_labels), tc.learning_rate, tc.momentum);
      } catch (const DivergenceError&) {
        return diverged();
      }
    }

    const auto val_probs = forward(net, x_val, Mode::kEval);
    EpochStats stats;
    stats.train_loss = train_total / static_cast<double>(order.size());
    stats.validation_loss = loss(val_probs, y_val);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < val_probs.rows(); ++i) {
      const int predicted = val_probs(i, 1) > val_probs(i, 0) ? 1 : 0;
      correct += predicted == y_val[static_cast<std::size_t>(i)];
    }
    stats.validation_accuracy = static_cast<double>(correct) / static_cast<double>(y_val.size());
    result.history.epochs.push_back(stats);
    if (!std::isfinite(stats.validation_loss) || !std::isfinite(stats.train_loss)) return diverged();

    if (stopper.update(stats.validation_loss)) result.network = net;
    result.history.best_epoch = stopper.best_epoch();
    if (stopper.should_stop()) {
      result.history.stop_reason = StopReason::kEarlyStop;
      return result;
    }
  }
  result.history.stop_reason = StopReason::kMaxEpochs;
  return result;
}

/// Probability of class 1 (metaphor) for each row, eval mode.
template <typename Scalar>
std::vector<double> predict_batch(const BasicNetwork<Scalar>& net, const MatrixT<Scalar>& batch) {
  const auto probs = forward(net, batch, Mode::kEval);
  std::vector<double> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(probs(i, 1));
  return out;
}

template <typename Scalar>
std::vector<double> predict_batch(const BasicNetwork<Scalar>& net, std::span<const LabeledExample> examples) {
  if (examples.empty()) return {};
  return predict_batch(net, to_matrix<Scalar>(examples));
}

template <typename Scalar>
double predict(const BasicNetwork<Scalar>& net, std::span<const float> features) {
  if (features.size() != net.config.input_dim) {
    throw ValidationError("feature length " + std::to_string(features.size()) + " != input_dim " +
                          std::to_string(net.config.input_dim));
  }
  MatrixT<Scalar> row(1, static_cast<Eigen::Index>(features.size()));
  for (std::size_t j = 0; j < features.size(); ++j) row(0, static_cast<Eigen::Index>(j)) = static_cast<Scalar>(features[j]);
  return predict_batch(net, row)[0];
}

inline constexpr char kModelMagic[4] = {'M', 'V', 'N', 'N'};
inline constexpr std::uint32_t kModelVersion = 1;

/// Model file: "MVNN", u32 version, u32 input_dim, hidden_layers, hidden_width,
/// output_classes, f64 dropout_rate, then per layer u32 rows, u32 cols,
/// row-major binary32 weights and binary32 biases.
inline std::uint64_t save_model(const Network& net, std::ostream& out) {
  detail::LeWriter w(out);
  w.raw(kModelMagic, 4);
  w.put<std::uint32_t>(kModelVersion);
  const auto& c = net.config;
  for (std::size_t v : {c.input_dim, c.hidden_layers, c.hidden_width, c.output_classes}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.put<double>(c.dropout_rate);
  for (const auto& layer : net.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.cols()));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index col = 0; col < layer.weights.cols(); ++col) w.put<float>(layer.weights(r, col));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.put<float>(layer.bias(r));
  }
  out.flush();
  if (!out) throw IoError("model write failed");
  return w.written();
}

inline Network load_model(std::istream& in) {
  detail::LeReader r(in);
  char magic[4];
  r.raw(magic, 4, "model magic");
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("not a model file: bad magic", 0);
  const auto version = r.get<std::uint32_t>("model version");
  if (version != kModelVersion) throw FormatError("unsupported model version " + std::to_string(version), 4);
  ModelConfig c;
  c.input_dim = r.get<std::uint32_t>("config");
  c.hidden_layers = r.get<std::uint32_t>("config");
  c.hidden_width = r.get<std::uint32_t>("config");
  c.output_classes = r.get<std::uint32_t>("config");
  c.dropout_rate = r.get<double>("config");
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid model config: ") + e.what(), r.offset());
  }
  Network net{c, {}};
  std::size_t fan_in = c.input_dim;
  for (std::size_t l = 0; l <= c.hidden_layers; ++l) {
    const std::size_t fan_out = l == c.hidden_layers ? c.output_classes : c.hidden_width;
    const auto rows = r.get<std::uint32_t>("layer shape");
    const auto cols = r.get<std::uint32_t>("layer shape");
    if (rows != fan_out || cols != fan_in) {
      throw FormatError("layer " + std::to_string(l) + " shape does not match config", r.offset() - 8);
    }
    Layer<float> layer;
    layer.weights.resize(rows, cols);
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = r.get<float>("weights");
    }
    layer.bias.resize(rows);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.get<float>("biases");
    layer.weight_velocity = MatrixT<float>::Zero(rows, cols);
    layer.bias_velocity = VectorT<float>::Zero(rows);
    net.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return net;
}

}  // namespace metanet
