#ifndef GEARCNN_TRANSFER_HPP
#define GEARCNN_TRANSFER_HPP

#include <cstddef>
#include <cstdint>

#include "gearcnn/checkpoint.hpp"
#include "gearcnn/network.hpp"

namespace gearcnn {

// Copy the first n layers of a trained network into a new one of m layers.
// Multipliers scale the optimizer's base learning rate.
struct TransferPlan {
  std::size_t n_transfer_layers = 21;
  std::size_t total_layers = 24;
  double lr_multiplier_transferred = 0.01;
  double lr_multiplier_new = 1.0;

  // Multipliers that realize the two absolute rates given a base rate of
  // lr_new; freeze pins transferred layers at multiplier 0.
  static TransferPlan from_rates(std::size_t n_transfer_layers, std::size_t total_layers,
                                 double lr_transferred, double lr_new, bool freeze = false);
};

// Layers [0, n) are copied bitwise from `source`, layers [n, m) are freshly
// initialized from `init_seed`, and learning-rate multipliers are set per
// layer. Throws TransplantError naming the first structurally different layer.
Network transplant(const Checkpoint& source, const NetworkSpec& target_spec,
                   const TransferPlan& plan, std::uint64_t init_seed);

}  // namespace gearcnn

#endif  // GEARCNN_TRANSFER_HPP
