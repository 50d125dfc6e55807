#ifndef GEARCNN_NETWORK_HPP
#define GEARCNN_NETWORK_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gearcnn/dataset.hpp"
#include "gearcnn/layers.hpp"
#include "gearcnn/parameters.hpp"
#include "gearcnn/tensor.hpp"

namespace gearcnn {

// ---------------------------------------------------------------------------
// Declarative layer configuration. Input sizes are inferred from the chain.

struct ConvConfig {
  std::size_t filter_height = 3;
  std::size_t filter_width = 3;
  std::size_t num_filters = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct ReluConfig {};
struct DenseConfig {
  std::size_t units = 1;
};
struct DropoutConfig {
  double rate = 0.5;
};
struct SoftmaxConfig {};
// Argmax over the softmax output, trained through the cross-entropy objective.
struct ClassificationConfig {};

using LayerConfig = std::variant<ConvConfig, ReluConfig, LRNSpec, MaxPoolSpec, DenseConfig,
                                 DropoutConfig, SoftmaxConfig, ClassificationConfig>;

// Short type tag: "conv", "relu", "lrn", "maxpool", "dense", "dropout", "softmax",
// "classification".
std::string layer_type(const LayerConfig& layer);
bool has_parameters(const LayerConfig& layer);
// Same type and hyperparameters.
bool same_layer_config(const LayerConfig& a, const LayerConfig& b);

struct NetworkSpec {
  std::string name;
  Shape input_shape;  // [H, W, C]
  std::vector<std::vector<LayerConfig>> stages;
  std::size_t num_classes = 9;

  std::size_t layer_count() const;
  std::vector<LayerConfig> layers() const;
  // Zero-based stage index of every layer.
  std::vector<std::size_t> stage_of_layers() const;
  // Number of layers contained in the first `stages` stages.
  std::size_t layers_in_first_stages(std::size_t stages) const;
};

// Output shape of every layer; throws ConfigError naming the first layer
// whose configuration does not compose with its input.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

// Unique per-layer names derived from type and stage ("conv1", "fc6", ...).
std::vector<std::string> layer_names(const NetworkSpec& spec);

struct ParameterInfo {
  std::size_t layer;
  std::string name;  // "<layer>.weights" or "<layer>.bias"
  Shape shape;
};
// Parameter tensors a network built from `spec` holds, in order.
std::vector<ParameterInfo> parameter_layout(const NetworkSpec& spec);

// Full-size network on 227x227x3 input, 24 layers in 8 stages.
NetworkSpec paper24_spec(std::size_t num_classes = 9);
// Scratch baseline: stages 1, 2 and 8 of paper24_spec.
NetworkSpec local_cnn_spec(std::size_t num_classes = 9);
// Same 8-stage pattern at 32x32x3 for desk-scale runs.
NetworkSpec mini_spec(std::size_t num_classes = 9);
// Stages 1, 2 and the last stage of `spec`; a 3-stage spec comes back unchanged.
NetworkSpec local_variant(const NetworkSpec& spec);
// "paper-24", "local-cnn", "mini", "mini-local".
NetworkSpec spec_by_name(const std::string& name, std::size_t num_classes = 9);
// Copy of `spec` with the final classifier resized to `num_classes`.
NetworkSpec with_num_classes(NetworkSpec spec, std::size_t num_classes);

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

// ---------------------------------------------------------------------------
// Instantiated network.

struct Relu {};
struct Softmax {};
struct Classification {};

using Layer = std::variant<ConvSpec, Relu, LRNSpec, MaxPoolSpec, DenseSpec, DropoutSpec, Softmax,
                           Classification>;

// Activations retained by a forward pass for the backward pass.
struct ForwardTrace {
  std::vector<Tensor> inputs;        // input of every layer
  std::vector<Tensor> dropout_masks; // per layer; unused entries stay 1-element
  Tensor logits;
  Tensor probabilities;
};

class Network {
 public:
  // Builds and initializes (He-scaled Gaussian weights, zero biases).
  Network(NetworkSpec spec, std::uint64_t init_seed);
  // All parameters zero; for callers that overwrite them immediately.
  static Network zeros(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Shape& output_shape(std::size_t i) const { return shapes_.at(i); }
  std::size_t stage_of(std::size_t i) const { return stages_.at(i); }
  // e.g. "conv1", "relu1", "fc6"; unique within the network.
  const std::string& layer_name(std::size_t i) const { return names_.at(i); }

  std::size_t parameter_count(std::size_t layer) const;
  std::size_t parameter_count() const;

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }

  // Per-layer learning-rate multipliers (default 1).
  double lr_multiplier(std::size_t layer) const { return lr_multipliers_.at(layer); }
  void set_lr_multiplier(std::size_t layer, double multiplier);

  // Class probabilities. Dropout layers sample masks from `dropout_seed`
  // in train mode and are identities in eval mode.
  Tensor forward(const Tensor& input, std::uint64_t dropout_seed = 0) const;
  // Eval-mode forward regardless of mode().
  Tensor infer(const Tensor& input) const;
  ForwardTrace forward_trace(const Tensor& input, std::uint64_t dropout_seed) const;
  // Eval-mode output of every layer, in order.
  std::vector<Tensor> activations(const Tensor& input) const;

  // Accumulates d(-ln p[label])/d(theta) into `grads`, which is ordered like
  // parameters(). Gradients for layers before `first_trainable` are skipped.
  void backward(const ForwardTrace& trace, std::size_t label, std::vector<Tensor>& grads,
                std::size_t first_trainable = 0) const;

  std::vector<ParameterRef> parameters();
  std::vector<const Tensor*> parameter_tensors() const;
  std::vector<std::string> parameter_names() const;
  // Zero tensors shaped like parameters().
  std::vector<Tensor> zero_gradients() const;

 private:
  Network(NetworkSpec spec, std::uint64_t init_seed, bool initialize);
  Tensor run(const Tensor& input, Mode mode, std::uint64_t dropout_seed) const;

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> stages_;
  std::vector<std::string> names_;
  std::vector<double> lr_multipliers_;
  Mode mode_ = Mode::Train;
};

Network build_network(const NetworkSpec& spec, std::uint64_t init_seed);

// argmax of infer(); ties resolve to the lowest class index.
std::size_t predict(const Network& network, const Tensor& input);

// Fraction of samples predicted correctly using the inference (eval) path.
double evaluate_accuracy(const Network& network, const LabeledDataset& dataset);

// Writes the post-ReLU activation following every convolution layer, one
// tensor file per convolution stage, and returns the written paths.
std::vector<std::filesystem::path> dump_feature_maps(const Network& network, const Tensor& input,
                                                     const std::filesystem::path& out_dir);

}  // namespace gearcnn

#endif  // GEARCNN_NETWORK_HPP
