#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "metanet/eval.hpp"
#include "metanet/net.hpp"
#include "test_util.hpp"

using namespace metanet;

namespace {

ModelConfig small_config(std::size_t input = 8, std::size_t layers = 1, std::size_t width = 6, double dropout = 0.0,
                         std::uint64_t seed = 1) {
  ModelConfig mc;
  mc.input_dim = input;
  mc.hidden_layers = layers;
  mc.hidden_width = width;
  mc.dropout_rate = dropout;
  mc.init_seed = seed;
  return mc;
}

MatrixT<float> random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixT<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

template <typename Scalar>
bool same_parameters(const BasicNetwork<Scalar>& a, const BasicNetwork<Scalar>& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weights != b.layers[l].weights || a.layers[l].bias != b.layers[l].bias) return false;
  }
  return true;
}

}  // namespace

TEST(Init, DeterministicShapesAndZeroBiases) {
  ModelConfig mc;  // 3300 -> 500 -> 500 -> 2
  mc.hidden_layers = 2;
  mc.init_seed = 5;
  const auto a = init_network(mc);
  const auto b = init_network(mc);
  EXPECT_TRUE(same_parameters(a, b));
  ASSERT_EQ(a.layers.size(), 3u);
  EXPECT_EQ(a.layers[0].fan_in(), 3300u);
  EXPECT_EQ(a.layers[0].fan_out(), 500u);
  EXPECT_EQ(a.layers[1].fan_in(), 500u);
  EXPECT_EQ(a.layers[1].fan_out(), 500u);
  EXPECT_EQ(a.layers[2].fan_in(), 500u);
  EXPECT_EQ(a.layers[2].fan_out(), 2u);
  for (const auto& layer : a.layers) {
    EXPECT_EQ(layer.bias.cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(layer.weight_velocity.cwiseAbs().maxCoeff(), 0.0f);
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in() + layer.fan_out()));
    EXPECT_LE(layer.weights.cwiseAbs().maxCoeff(), limit);
    EXPECT_GT(layer.weights.cwiseAbs().maxCoeff(), 0.9 * limit);
  }
  mc.init_seed = 6;
  EXPECT_FALSE(same_parameters(a, init_network(mc)));
}

TEST(Init, RejectsInvalidConfig) {
  auto mc = small_config();
  mc.dropout_rate = 1.0;
  EXPECT_THROW(init_network(mc), ValidationError);
  mc = small_config();
  mc.hidden_width = 0;
  EXPECT_THROW(init_network(mc), ValidationError);
}

TEST(Forward, ZeroNetworkGivesHalf) {
  auto net = init_network(small_config());
  for (auto& l : net.layers) l.weights.setZero();
  const auto p = forward(net, random_batch(4, 8, 1), Mode::kEval);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(p.data()[i], 0.5f);
  EXPECT_EQ(predict(net, std::vector<float>(8, 1.0f)), 0.5);
}

TEST(Forward, RowsAreProbabilities) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto net = init_network(small_config(8, 1 + seed % 3, 9, 0.5, seed));
    const auto batch = random_batch(16, 8, seed + 100);
    for (Mode mode : {Mode::kEval, Mode::kTrain}) {
      const auto p = forward(net, batch, mode, seed);
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        EXPECT_NEAR(static_cast<double>(p(i, 0)) + static_cast<double>(p(i, 1)), 1.0, 1e-6);
        EXPECT_GE(p(i, 0), 0.0f);
        EXPECT_LE(p(i, 0), 1.0f);
      }
    }
  }
}

TEST(Forward, NoDropoutTrainEqualsEval) {
  const auto net = init_network(small_config(8, 3, 10, 0.0, 4));
  const auto batch = random_batch(5, 8, 9);
  EXPECT_EQ(forward(net, batch, Mode::kTrain, 123), forward(net, batch, Mode::kEval));
}

TEST(Forward, ShapeMismatch) {
  const auto net = init_network(small_config());
  EXPECT_THROW(forward(net, random_batch(2, 7, 0), Mode::kEval), ValidationError);
  EXPECT_THROW(predict(net, std::vector<float>(9)), ValidationError);
}

TEST(Forward, InvertedDropoutIsUnbiased) {
  // Average the next layer's pre-activation over 10k masks and compare it with
  // the eval-mode value.
  auto net = init_network<double>([] {
    auto mc = small_config(6, 2, 12, 0.5, 8);
    return mc;
  }());
  MatrixT<double> x(1, 6);
  x << 0.9, -0.3, 1.2, 0.4, -1.1, 0.7;
  ForwardCache<double> eval_cache;
  net.config.dropout_rate = 0.0;
  forward(net, x, Mode::kTrain, 0, &eval_cache);
  const MatrixT<double> expected = eval_cache.pre_activations[1];
  net.config.dropout_rate = 0.5;

  MatrixT<double> sum = MatrixT<double>::Zero(expected.rows(), expected.cols());
  constexpr int kMasks = 10000;
  ForwardCache<double> cache;
  for (int k = 0; k < kMasks; ++k) {
    forward(net, x, Mode::kTrain, static_cast<std::uint64_t>(k), &cache);
    sum += cache.pre_activations[1];
  }
  const MatrixT<double> mean = sum / kMasks;
  const double scale = expected.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(mean.data()[i], expected.data()[i], 0.02 * scale) << "unit " << i;
  }
}

TEST(Loss, AnalyticValues) {
  MatrixT<double> p(1, 2);
  p << 0.0, 1.0;
  EXPECT_EQ(loss(p, std::vector<int>{1}), 0.0);
  p << 0.5, 0.5;
  EXPECT_NEAR(loss(p, std::vector<int>{0}), std::log(2.0), 1e-15);
  MatrixT<double> two(2, 2);
  two << 0.0, 1.0, 0.5, 0.5;
  EXPECT_NEAR(loss(two, std::vector<int>{1, 1}), std::log(2.0) / 2, 1e-15);
  p << 1.0, 0.0;
  EXPECT_NEAR(loss(p, std::vector<int>{1}), -std::log(1e-12), 1e-9);
}

TEST(Sgd, PlainStepWhenMomentumZero) {
  auto net = init_network<double>(small_config());
  const auto before = net;
  Gradients<double> g;
  for (const auto& l : net.layers) {
    g.push_back({MatrixT<double>::Constant(l.weights.rows(), l.weights.cols(), 2.0),
                 VectorT<double>::Constant(l.bias.size(), -1.0)});
  }
  sgd_momentum_step(net, g, 0.1, 0.0);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    EXPECT_TRUE(net.layers[l].weights.isApprox((before.layers[l].weights.array() - 0.2).matrix()));
    EXPECT_TRUE(net.layers[l].bias.isApprox((before.layers[l].bias.array() + 0.1).matrix()));
  }
}

TEST(Sgd, MomentumRecurrenceTwoSteps) {
  auto net = init_network<double>(small_config());
  const auto before = net;
  Gradients<double> g;
  for (const auto& l : net.layers) {
    g.push_back({MatrixT<double>::Ones(l.weights.rows(), l.weights.cols()), VectorT<double>::Ones(l.bias.size())});
  }
  sgd_momentum_step(net, g, 0.1, 0.9);
  sgd_momentum_step(net, g, 0.1, 0.9);
  // -0.1g + (-0.09g - 0.1g) = -0.29g
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const MatrixT<double> delta = net.layers[l].weights - before.layers[l].weights;
    EXPECT_NEAR(delta.maxCoeff(), -0.29, 1e-12);
    EXPECT_NEAR(delta.minCoeff(), -0.29, 1e-12);
    EXPECT_NEAR(net.layers[l].bias(0), -0.29, 1e-12);
  }
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  auto net = init_network<double>(small_config());
  const auto before = net;
  Gradients<double> g;
  for (const auto& l : net.layers) {
    g.push_back({MatrixT<double>::Zero(l.weights.rows(), l.weights.cols()), VectorT<double>::Zero(l.bias.size())});
  }
  sgd_momentum_step(net, g, 0.1, 0.9);
  EXPECT_TRUE(same_parameters(net, before));
}

TEST(Sgd, NonFiniteGradientSignalsDivergence) {
  auto net = init_network<double>(small_config());
  Gradients<double> g;
  for (const auto& l : net.layers) {
    g.push_back({MatrixT<double>::Zero(l.weights.rows(), l.weights.cols()), VectorT<double>::Zero(l.bias.size())});
  }
  g[0].weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = net;
  EXPECT_THROW(sgd_momentum_step(net, g, 0.1, 0.9), DivergenceError);
  EXPECT_TRUE(same_parameters(net, before));
  g.pop_back();
  EXPECT_THROW(sgd_momentum_step(net, g, 0.1, 0.9), ValidationError);
}

TEST(EarlyStop, PatienceOneStopsAfterFirstWorseEpoch) {
  EarlyStopping es(1, 1e-4);
  EXPECT_TRUE(es.update(0.5));
  EXPECT_FALSE(es.should_stop());
  EXPECT_FALSE(es.update(0.6));
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 1u);
}

TEST(EarlyStop, SmallImprovementsCountTowardPatienceButMoveBest) {
  EarlyStopping es(3, 0.1);
  es.update(1.0);
  es.update(0.95);  // better, but not by min_delta
  es.update(0.93);
  EXPECT_FALSE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 3u);
  es.update(0.92);
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 4u);
}

TEST(Train, LearnsSeparableClusters) {
  const auto data = test::gaussian_clusters(400, 10, 1.5, 3);
  const auto splits = split_dataset(data, 3);
  auto mc = small_config(10, 1, 32, 0.5, 3);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.max_epochs = 200;
  tc.train_seed = 3;
  const auto result = train(init_network(mc), std::span(splits.train), std::span(splits.validation), tc);
  EXPECT_NE(result.history.stop_reason, StopReason::kDiverged);
  ASSERT_GE(result.history.best_epoch, 1u);
  const auto& best = result.history.epochs[result.history.best_epoch - 1];
  for (const auto& e : result.history.epochs) EXPECT_GE(e.validation_loss, best.validation_loss);
  const auto scores = predict_batch(result.network, std::span(splits.test));
  EXPECT_GT(roc_auc(scores, labels_of(splits.test)), 0.99);
}

TEST(Train, FullyDeterministic) {
  const auto data = test::gaussian_clusters(120, 6, 0.5, 8);
  const auto splits = split_dataset(data, 8);
  auto mc = small_config(6, 2, 16, 0.5, 8);
  TrainConfig tc;
  tc.max_epochs = 30;
  tc.train_seed = 8;
  const auto a = train(init_network(mc), std::span(splits.train), std::span(splits.validation), tc);
  const auto b = train(init_network(mc), std::span(splits.train), std::span(splits.validation), tc);
  EXPECT_EQ(a.history, b.history);
  EXPECT_TRUE(same_parameters(a.network, b.network));
}

TEST(Train, DivergenceIsAStopReason) {
  // Deep, wide and a large step size: the weights blow up to inf/NaN.
  const auto data = test::gaussian_clusters(300, 176, 0.3, 2);
  const auto splits = split_dataset(data, 2);
  auto mc = small_config(176, 6, 500, 0.5, 2);
  TrainConfig tc;
  tc.learning_rate = 0.5;
  tc.max_epochs = 50;
  tc.train_seed = 2;
  const auto r = train(init_network(mc), std::span(splits.train), std::span(splits.validation), tc);
  EXPECT_EQ(r.history.stop_reason, StopReason::kDiverged);
}

TEST(Train, RejectsBadInputs) {
  const auto data = test::gaussian_clusters(20, 4, 1.0, 1);
  auto net = init_network(small_config(4));
  TrainConfig tc;
  EXPECT_THROW(train(net, std::span<const LabeledExample>(), std::span(data), tc), ValidationError);
  tc.learning_rate = 0.0;
  EXPECT_THROW(train(net, std::span(data), std::span(data), tc), ValidationError);
  tc = {};
  tc.patience = 0;
  EXPECT_THROW(train(net, std::span(data), std::span(data), tc), ValidationError);
  EXPECT_THROW(train(init_network(small_config(5)), std::span(data), std::span(data), TrainConfig{}), ValidationError);
}

TEST(Predict, MatchesForwardAndBatch) {
  const auto net = init_network(small_config(8, 2, 10, 0.5, 12));
  const auto data = test::gaussian_clusters(33, 8, 1.0, 12);
  const auto batched = predict_batch(net, std::span(data));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double single = predict(net, data[i].features);
    EXPECT_NEAR(single, batched[i], 1e-6);
    MatrixT<float> row = to_matrix<float>(std::span(data).subspan(i, 1));
    EXPECT_EQ(single, static_cast<double>(forward(net, row, Mode::kEval)(0, 1)));
  }
}

TEST(ModelFile, RoundTripPreservesPredictionsBitExactly) {
  const auto net = init_network(small_config(8, 3, 10, 0.25, 13));
  std::stringstream buf;
  const auto n = save_model(net, buf);
  EXPECT_EQ(n, buf.str().size());
  const auto back = load_model(buf);
  EXPECT_EQ(back.config.input_dim, 8u);
  EXPECT_EQ(back.config.hidden_layers, 3u);
  EXPECT_EQ(back.config.dropout_rate, 0.25);
  EXPECT_TRUE(same_parameters(back, net));
  const auto batch = random_batch(20, 8, 14);
  EXPECT_EQ(predict_batch(back, batch), predict_batch(net, batch));
}

TEST(ModelFile, RejectsBadMagicVersionAndTruncation) {
  const auto net = init_network(small_config());
  std::stringstream buf;
  save_model(net, buf);
  const std::string bytes = buf.str();

  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream magic(bad);
  EXPECT_THROW(load_model(magic), FormatError);

  bad = bytes;
  bad[4] = 99;
  std::istringstream version(bad);
  try {
    load_model(version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported model version 99"), std::string::npos);
  }

  std::istringstream cut(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_model(cut), FormatError);
}
