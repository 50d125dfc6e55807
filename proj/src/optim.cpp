#include "gearcnn/optim.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "gearcnn/errors.hpp"
#include "gearcnn/seed.hpp"

namespace gearcnn {

double OptimizerConfig::multiplier(std::size_t layer) const {
  const auto it = per_layer_lr_multipliers.find(layer);
  return it == per_layer_lr_multipliers.end() ? 1.0 : it->second;
}

VelocityState VelocityState::zeros_like(const std::vector<ParameterRef>& params) {
  VelocityState state;
  state.velocity.reserve(params.size());
  for (const ParameterRef& p : params) state.velocity.emplace_back(p.value->shape());
  return state;
}

void sgd_momentum_step(const std::vector<ParameterRef>& params, const std::vector<Tensor>& grads,
                       VelocityState& velocity, OptimizerConfig& config) {
  if (grads.size() != params.size() || velocity.velocity.size() != params.size()) {
    throw ConfigError("optimizer step: " + std::to_string(params.size()) + " parameters, " +
                      std::to_string(grads.size()) + " gradients, " +
                      std::to_string(velocity.velocity.size()) + " velocities");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].value;
    if (grads[i].shape() != theta.shape() || velocity.velocity[i].shape() != theta.shape()) {
      throw ConfigError("optimizer step: shape mismatch for " + params[i].name);
    }
    const double mult = config.multiplier(params[i].layer);
    if (mult == 0.0) continue;
    const double lr = config.base_learning_rate * mult;
    const double beta = config.momentum;
    double* v = velocity.velocity[i].raw();
    double* t = theta.raw();
    const double* g = grads[i].raw();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = beta * v[k] - lr * g[k];
      t[k] += v[k];
    }
  }
  ++config.iteration;
}

Optimizer make_optimizer(Network& network, double base_learning_rate, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
  if (base_learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
  Optimizer opt;
  opt.config.base_learning_rate = base_learning_rate;
  opt.config.momentum = momentum;
  for (std::size_t i = 0; i < network.layer_count(); ++i) {
    if (network.lr_multiplier(i) != 1.0) {
      opt.config.per_layer_lr_multipliers[i] = network.lr_multiplier(i);
    }
  }
  opt.velocity = VelocityState::zeros_like(network.parameters());
  return opt;
}

TrainHistory train_epoch(Network& network, const LabeledDataset& dataset, std::size_t batch_size,
                         Optimizer& optimizer, const LossConfig& loss_config,
                         std::uint64_t shuffle_seed) {
  if (dataset.empty()) throw DataError("cannot train on an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");

  const Mode saved_mode = network.mode();
  network.set_mode(Mode::Train);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto params = network.parameters();
  std::vector<const Tensor*> tensors;
  for (const ParameterRef& p : params) tensors.push_back(p.value);

  // Backward stops at the first layer that can change; everything before it
  // is frozen.
  std::size_t first_trainable = network.layer_count();
  for (const ParameterRef& p : params) {
    if (optimizer.config.multiplier(p.layer) != 0.0) {
      first_trainable = p.layer;
      break;
    }
  }

  TrainHistory history;
  std::vector<Tensor> grads = network.zero_gradients();
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const double count = static_cast<double>(end - start);
    for (Tensor& g : grads) g.fill(0.0);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = start; b < end; ++b) {
      const ImageSample& sample = dataset[order[b]];
      const auto seed = derive_seed({shuffle_seed, b});
      const ForwardTrace trace = network.forward_trace(sample.pixels, seed);
      loss_sum += cross_entropy_loss(trace.probabilities, sample.label, 0.0, loss_config);
      if (argmax(trace.probabilities) == sample.label) ++correct;
      if (first_trainable < network.layer_count()) {
        network.backward(trace, sample.label, grads, first_trainable);
      }
    }

    const double reg = loss_config.gamma * sum_of_squares(tensors);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      grads[i] *= 1.0 / count;
      if (loss_config.gamma != 0.0 && optimizer.config.multiplier(params[i].layer) != 0.0) {
        const double two_gamma = 2.0 * loss_config.gamma;
        double* g = grads[i].raw();
        const double* t = params[i].value->raw();
        for (std::size_t k = 0; k < grads[i].size(); ++k) g[k] += two_gamma * t[k];
      }
    }

    HistoryEntry entry;
    entry.iteration = optimizer.config.iteration;
    entry.epoch = optimizer.epoch;
    entry.minibatch_loss = loss_sum / count + reg;
    entry.minibatch_accuracy = static_cast<double>(correct) / count;
    history.push_back(entry);

    sgd_momentum_step(params, grads, optimizer.velocity, optimizer.config);
  }
  ++optimizer.epoch;
  network.set_mode(saved_mode);
  return history;
}

void write_history_csv(std::ostream& out, const TrainHistory& history) {
  out << "iteration,epoch,minibatch_loss,minibatch_accuracy\n";
  char buf[128];
  for (const HistoryEntry& e : history) {
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.17g,%.17g\n",
                  static_cast<unsigned long long>(e.iteration), e.epoch, e.minibatch_loss,
                  e.minibatch_accuracy);
    out << buf;
  }
}

}  // namespace gearcnn
