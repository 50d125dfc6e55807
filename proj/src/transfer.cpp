#include "gearcnn/transfer.hpp"

#include <string>

#include "gearcnn/errors.hpp"

namespace gearcnn {

TransferPlan TransferPlan::from_rates(std::size_t n_transfer_layers, std::size_t total_layers,
                                      double lr_transferred, double lr_new, bool freeze) {
  if (lr_transferred < 0.0 || lr_new < 0.0) {
    throw ConfigError("learning rates must be non-negative");
  }
  TransferPlan plan;
  plan.n_transfer_layers = n_transfer_layers;
  plan.total_layers = total_layers;
  plan.lr_multiplier_new = lr_new > 0.0 ? 1.0 : 0.0;
  if (freeze || lr_new == 0.0) {
    plan.lr_multiplier_transferred = 0.0;
  } else {
    plan.lr_multiplier_transferred = lr_transferred / lr_new;
  }
  return plan;
}

Network transplant(const Checkpoint& source, const NetworkSpec& target_spec,
                   const TransferPlan& plan, std::uint64_t init_seed) {
  const std::size_t n = plan.n_transfer_layers;
  const std::size_t m = target_spec.layer_count();
  if (plan.total_layers != m) {
    throw TransplantError("plan expects " + std::to_string(plan.total_layers) +
                          " layers but target '" + target_spec.name + "' has " +
                          std::to_string(m));
  }
  if (n == 0 || n >= m) {
    throw TransplantError("transferred layer count " + std::to_string(n) +
                          " must lie in [1, " + std::to_string(m) + ")");
  }
  if (n > source.spec.layer_count()) {
    throw TransplantError("source '" + source.spec.name + "' has only " +
                          std::to_string(source.spec.layer_count()) + " layers");
  }
  if (source.spec.input_shape != target_spec.input_shape) {
    throw TransplantError("input shape " + shape_to_string(source.spec.input_shape) +
                          " of source differs from target " +
                          shape_to_string(target_spec.input_shape));
  }

  const auto source_layers = source.spec.layers();
  const auto target_layers = target_spec.layers();
  const auto source_shapes = infer_shapes(source.spec);
  const auto target_shapes = infer_shapes(target_spec);
  const auto names = layer_names(target_spec);
  for (std::size_t i = 0; i < n; ++i) {
    if (!same_layer_config(source_layers[i], target_layers[i]) ||
        source_shapes[i] != target_shapes[i]) {
      throw TransplantError("layer " + std::to_string(i + 1) + " (" + names[i] +
                            ") differs between source (" + layer_type(source_layers[i]) + ", " +
                            shape_to_string(source_shapes[i]) + ") and target (" +
                            layer_type(target_layers[i]) + ", " +
                            shape_to_string(target_shapes[i]) + ")");
    }
  }

  Network network(target_spec, init_seed);
  auto params = network.parameters();
  std::size_t next = 0;
  for (ParameterRef& p : params) {
    if (p.layer >= n) break;
    if (next >= source.parameters.size()) {
      throw TransplantError("source checkpoint is missing parameters for " + p.name);
    }
    const Tensor& stored = source.parameters[next++].tensor;
    if (stored.shape() != p.value->shape()) {
      throw TransplantError("parameter " + p.name + " has shape " +
                            shape_to_string(stored.shape()) + " in source, " +
                            shape_to_string(p.value->shape()) + " in target");
    }
    *p.value = stored;
  }
  for (std::size_t i = 0; i < m; ++i) {
    network.set_lr_multiplier(i, i < n ? plan.lr_multiplier_transferred : plan.lr_multiplier_new);
  }
  return network;
}

}  // namespace gearcnn
