#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gearcnn/errors.hpp"
#include "gearcnn/optim.hpp"
#include "oracles.hpp"

using namespace gearcnn;

namespace {

struct Scalars {
  std::vector<Tensor> values;
  std::vector<ParameterRef> refs() {
    std::vector<ParameterRef> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
      out.push_back({i, "p" + std::to_string(i), &values[i]});
    }
    return out;
  }
};

LabeledDataset random_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabeledDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.push_back({oracle::random_tensor({32, 32, 3}, rng, 0, 1), i % 9, ""});
  }
  return d;
}

}  // namespace

TEST(Sgd, PlainStep) {
  Scalars s{{Tensor::vector({1.0})}};
  auto refs = s.refs();
  auto v = VelocityState::zeros_like(refs);
  OptimizerConfig cfg{0.1, 0.0, {}, 0};
  sgd_momentum_step(refs, {Tensor::vector({0.5})}, v, cfg);
  EXPECT_DOUBLE_EQ(s.values[0][0], 0.95);
  EXPECT_EQ(cfg.iteration, 1u);
}

TEST(Sgd, TwoStepUnroll) {
  Scalars s{{Tensor::vector({0.0})}};
  auto refs = s.refs();
  auto v = VelocityState::zeros_like(refs);
  OptimizerConfig cfg{0.1, 0.9, {}, 0};
  sgd_momentum_step(refs, {Tensor::vector({1.0})}, v, cfg);
  EXPECT_DOUBLE_EQ(s.values[0][0], -0.1);
  sgd_momentum_step(refs, {Tensor::vector({1.0})}, v, cfg);
  EXPECT_NEAR(s.values[0][0], -0.29, 1e-15);
}

// theta_{i+1} = theta_i - lr * g_i + beta * (theta_i - theta_{i-1}), theta_{-1} = theta_0.
TEST(Sgd, MatchesDisplacementFormOverHundredSteps) {
  std::mt19937_64 rng(1);
  for (double beta : {0.0, 0.5, 0.9}) {
    Scalars s{{oracle::random_tensor({4, 3}, rng), oracle::random_tensor({5}, rng)}};
    std::vector<Tensor> prev = s.values, cur = s.values;
    auto refs = s.refs();
    auto v = VelocityState::zeros_like(refs);
    OptimizerConfig cfg{0.05, beta, {{1, 0.3}}, 0};
    for (int step = 0; step < 100; ++step) {
      std::vector<Tensor> g = {oracle::random_tensor({4, 3}, rng), oracle::random_tensor({5}, rng)};
      for (std::size_t t = 0; t < 2; ++t) {
        const double lr = 0.05 * (t == 1 ? 0.3 : 1.0);
        Tensor next = cur[t];
        for (std::size_t k = 0; k < next.size(); ++k) {
          next[k] = cur[t][k] - lr * g[t][k] + beta * (cur[t][k] - prev[t][k]);
        }
        prev[t] = cur[t];
        cur[t] = next;
      }
      sgd_momentum_step(refs, g, v, cfg);
      if (beta == 0.0) {
        EXPECT_TRUE(bitwise_equal(s.values[0], cur[0]));
      }
    }
    for (std::size_t t = 0; t < 2; ++t) EXPECT_LE(max_abs_difference(s.values[t], cur[t]), 1e-12);
  }
}

TEST(Sgd, ZeroMultiplierFreezesBitwise) {
  std::mt19937_64 rng(2);
  Scalars s{{oracle::random_tensor({3, 3}, rng), oracle::random_tensor({2}, rng)}};
  const Tensor frozen = s.values[0];
  auto refs = s.refs();
  auto v = VelocityState::zeros_like(refs);
  OptimizerConfig cfg{0.1, 0.9, {{0, 0.0}}, 0};
  for (int i = 0; i < 100; ++i) {
    sgd_momentum_step(refs, {oracle::random_tensor({3, 3}, rng), oracle::random_tensor({2}, rng)},
                      v, cfg);
  }
  EXPECT_TRUE(bitwise_equal(s.values[0], frozen));
  EXPECT_EQ(cfg.iteration, 100u);
}

TEST(Sgd, ShapeMismatchThrows) {
  Scalars s{{Tensor({3})}};
  auto refs = s.refs();
  auto v = VelocityState::zeros_like(refs);
  OptimizerConfig cfg;
  EXPECT_THROW(sgd_momentum_step(refs, {Tensor({4})}, v, cfg), ConfigError);
  EXPECT_THROW(sgd_momentum_step(refs, {}, v, cfg), ConfigError);
}

TEST(TrainEpoch, BatchCountIncludesPartialBatch) {
  Network n = build_network(mini_spec(), 1);
  Optimizer opt = make_optimizer(n, 1e-2, 0.9);
  const auto h = train_epoch(n, random_set(9, 3), 5, opt, {}, 4);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0].iteration, 0u);
  EXPECT_EQ(h[1].iteration, 1u);
  EXPECT_EQ(opt.epoch, 1u);
  EXPECT_THROW(train_epoch(n, {}, 5, opt, {}, 4), DataError);
  EXPECT_THROW(train_epoch(n, random_set(2, 3), 0, opt, {}, 4), ConfigError);
}

TEST(TrainEpoch, ZeroLearningRateChangesNothing) {
  Network n = build_network(mini_spec(), 2);
  const Network before = n;
  Optimizer opt = make_optimizer(n, 0.0, 0.9);
  const auto data = random_set(12, 5);
  const auto first = train_epoch(n, data, 5, opt, {}, 6);
  const auto second = train_epoch(n, data, 5, opt, {}, 6);
  const auto a = before.parameter_tensors(), b = n.parameter_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(*a[i], *b[i]));
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(first[i].minibatch_loss, second[i].minibatch_loss);
  }
}

TEST(TrainEpoch, DeterministicGivenSeeds) {
  auto run = [] {
    Network n = build_network(mini_spec(), 3);
    Optimizer opt = make_optimizer(n, 1e-2, 0.9);
    TrainHistory all;
    const auto data = random_set(20, 7);
    for (int e = 0; e < 2; ++e) {
      const auto h = train_epoch(n, data, 5, opt, {}, 100 + e);
      all.insert(all.end(), h.begin(), h.end());
    }
    std::ostringstream csv;
    write_history_csv(csv, all);
    return std::make_pair(csv.str(), n);
  };
  const auto [csv_a, net_a] = run();
  const auto [csv_b, net_b] = run();
  EXPECT_EQ(csv_a, csv_b);
  EXPECT_EQ(csv_a.substr(0, csv_a.find('\n')), "iteration,epoch,minibatch_loss,minibatch_accuracy");
  const auto a = net_a.parameter_tensors(), b = net_b.parameter_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(*a[i], *b[i]));
}

TEST(TrainEpoch, SmallPlainStepLowersLoss) {
  Network n = build_network(mini_spec(), 4);
  n.set_mode(Mode::Eval);
  const auto data = random_set(5, 8);
  auto params = n.parameters();
  std::vector<const Tensor*> tensors;
  for (auto& p : params) tensors.push_back(p.value);
  const LossConfig cfg;
  auto batch_loss = [&] {
    double s = 0.0;
    for (const auto& x : data) s += cross_entropy_loss(n.infer(x.pixels), x.label, 0.0, cfg);
    return s / 5.0 + cfg.gamma * sum_of_squares(tensors);
  };
  const double before = batch_loss();
  auto grads = n.zero_gradients();
  for (const auto& x : data) n.backward(n.forward_trace(x.pixels, 0), x.label, grads);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    grads[i] *= 0.2;
    for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i][k] += 2 * cfg.gamma * (*params[i].value)[k];
  }
  Optimizer opt = make_optimizer(n, 1e-4, 0.0);
  sgd_momentum_step(params, grads, opt.velocity, opt.config);
  EXPECT_LT(batch_loss(), before);
}

TEST(TrainEpoch, SeparableToyReachesFullAccuracy) {
  // Class 0 brightens the top half, class 1 the bottom half.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.05);
  LabeledDataset data;
  for (std::size_t i = 0; i < 40; ++i) {
    Tensor x({32, 32, 3});
    const std::size_t label = i % 2;
    for (std::size_t h = 0; h < 32; ++h)
      for (std::size_t w = 0; w < 32; ++w)
        for (std::size_t c = 0; c < 3; ++c) {
          x.at(h, w, c) = ((h < 16) == (label == 0) ? 0.8 : 0.2) + noise(rng);
        }
    data.push_back({x, label, ""});
  }
  Network n = build_network(mini_spec(2), 10);
  Optimizer opt = make_optimizer(n, 1e-2, 0.9);
  TrainHistory h;
  for (int e = 0; e < 15; ++e) h = train_epoch(n, data, 5, opt, {5e-4, 2}, 50 + e);
  EXPECT_EQ(h.back().minibatch_accuracy, 1.0);
  EXPECT_EQ(evaluate_accuracy(n, data), 1.0);
}
