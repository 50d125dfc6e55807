#ifndef GEARCNN_OPTIM_HPP
#define GEARCNN_OPTIM_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "gearcnn/dataset.hpp"
#include "gearcnn/layers.hpp"
#include "gearcnn/network.hpp"
#include "gearcnn/parameters.hpp"

namespace gearcnn {

struct OptimizerConfig {
  double base_learning_rate = 1e-2;
  double momentum = 0.9;
  // Layers absent from the map use multiplier 1.
  std::map<std::size_t, double> per_layer_lr_multipliers;
  std::uint64_t iteration = 0;

  double multiplier(std::size_t layer) const;
};

// One velocity tensor per parameter tensor, holding theta_i - theta_{i-1}.
struct VelocityState {
  std::vector<Tensor> velocity;

  static VelocityState zeros_like(const std::vector<ParameterRef>& params);
};

// v <- momentum * v - lr_eff * grad; theta <- theta + v, with
// lr_eff = base_learning_rate * multiplier(layer). Tensors whose layer has
// multiplier 0 are not touched. Increments config.iteration.
void sgd_momentum_step(const std::vector<ParameterRef>& params, const std::vector<Tensor>& grads,
                       VelocityState& velocity, OptimizerConfig& config);

struct Optimizer {
  OptimizerConfig config;
  VelocityState velocity;
  std::size_t epoch = 0;
};

// Optimizer whose multipliers mirror the network's per-layer multipliers.
Optimizer make_optimizer(Network& network, double base_learning_rate, double momentum);

struct HistoryEntry {
  std::uint64_t iteration = 0;
  std::size_t epoch = 0;
  double minibatch_loss = 0.0;
  double minibatch_accuracy = 0.0;
};

using TrainHistory = std::vector<HistoryEntry>;

// One pass over `dataset` in seeded-shuffled mini-batches (the final partial
// batch included). Per batch: mean regularized loss, mean gradient plus
// 2*gamma*theta on trainable layers, one optimizer step.
TrainHistory train_epoch(Network& network, const LabeledDataset& dataset, std::size_t batch_size,
                         Optimizer& optimizer, const LossConfig& loss_config,
                         std::uint64_t shuffle_seed);

// Columns: iteration,epoch,minibatch_loss,minibatch_accuracy
void write_history_csv(std::ostream& out, const TrainHistory& history);

}  // namespace gearcnn

#endif  // GEARCNN_OPTIM_HPP
