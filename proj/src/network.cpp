#include "gearcnn/network.hpp"

#include <cmath>
#include <map>
#include <random>

#include "gearcnn/checkpoint.hpp"
#include "gearcnn/errors.hpp"
#include "gearcnn/seed.hpp"

namespace gearcnn {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr std::size_t kNoParameters = static_cast<std::size_t>(-1);

std::string base_name(const LayerConfig& layer, std::size_t stage) {
  const std::string s = std::to_string(stage + 1);
  return std::visit(Overloaded{
                        [&](const ConvConfig&) { return "conv" + s; },
                        [&](const ReluConfig&) { return "relu" + s; },
                        [&](const LRNSpec&) { return "norm" + s; },
                        [&](const MaxPoolSpec&) { return "pool" + s; },
                        [&](const DenseConfig&) { return "fc" + s; },
                        [&](const DropoutConfig&) { return "drop" + s; },
                        [](const SoftmaxConfig&) { return std::string("prob"); },
                        [](const ClassificationConfig&) { return std::string("output"); },
                    },
                    layer);
}

void he_init(Tensor& weights, std::size_t fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& w : weights.data()) w = normal(rng);
}

}  // namespace

std::vector<std::string> layer_names(const NetworkSpec& spec) {
  const auto configs = spec.layers();
  const auto stages = spec.stage_of_layers();
  std::map<std::string, std::size_t> seen;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::string name = base_name(configs[i], stages[i]);
    if (const std::size_t n = seen[name]++; n > 0) name += "_" + std::to_string(n + 1);
    names.push_back(std::move(name));
  }
  return names;
}

std::vector<ParameterInfo> parameter_layout(const NetworkSpec& spec) {
  const auto shapes = infer_shapes(spec);
  const auto configs = spec.layers();
  const auto names = layer_names(spec);
  std::vector<ParameterInfo> out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const Shape& in = i == 0 ? spec.input_shape : shapes[i - 1];
    if (const auto* c = std::get_if<ConvConfig>(&configs[i])) {
      out.push_back({i, names[i] + ".weights",
                     {c->filter_height, c->filter_width, in[2], c->num_filters}});
      out.push_back({i, names[i] + ".bias", {c->num_filters}});
    } else if (const auto* d = std::get_if<DenseConfig>(&configs[i])) {
      out.push_back({i, names[i] + ".weights", {d->units, shape_size(in)}});
      out.push_back({i, names[i] + ".bias", {d->units}});
    }
  }
  return out;
}

Network::Network(NetworkSpec spec, std::uint64_t init_seed)
    : Network(std::move(spec), init_seed, true) {}

Network Network::zeros(NetworkSpec spec) { return Network(std::move(spec), 0, false); }

Network::Network(NetworkSpec spec, std::uint64_t init_seed, bool initialize)
    : spec_(std::move(spec)) {
  shapes_ = infer_shapes(spec_);
  stages_ = spec_.stage_of_layers();
  names_ = layer_names(spec_);
  const auto configs = spec_.layers();
  Shape in_shape = spec_.input_shape;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const std::uint64_t layer_seed = derive_seed({init_seed, i});
    layers_.push_back(std::visit(
        Overloaded{
            [&](const ConvConfig& c) -> Layer {
              ConvSpec conv = ConvSpec::make(c.filter_height, c.filter_width, in_shape[2],
                                             c.num_filters, c.stride, c.padding);
              if (initialize) {
                he_init(conv.weights, c.filter_height * c.filter_width * in_shape[2], layer_seed);
              }
              return conv;
            },
            [](const ReluConfig&) -> Layer { return Relu{}; },
            [](const LRNSpec& c) -> Layer { return c; },
            [](const MaxPoolSpec& c) -> Layer { return c; },
            [&](const DenseConfig& c) -> Layer {
              DenseSpec dense = DenseSpec::make(shape_size(in_shape), c.units);
              if (initialize) he_init(dense.weights, dense.in_features, layer_seed);
              return dense;
            },
            [](const DropoutConfig& c) -> Layer { return DropoutSpec{c.rate, Mode::Train, 0}; },
            [](const SoftmaxConfig&) -> Layer { return Softmax{}; },
            [](const ClassificationConfig&) -> Layer { return Classification{}; },
        },
        configs[i]));
    in_shape = shapes_[i];
  }
  lr_multipliers_.assign(layers_.size(), 1.0);
}

Network build_network(const NetworkSpec& spec, std::uint64_t init_seed) {
  return Network(spec, init_seed);
}

std::size_t Network::parameter_count(std::size_t layer) const {
  return std::visit(Overloaded{
                        [](const ConvSpec& c) { return c.parameter_count(); },
                        [](const DenseSpec& d) { return d.parameter_count(); },
                        [](const auto&) { return std::size_t{0}; },
                    },
                    layers_.at(layer));
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) total += parameter_count(i);
  return total;
}

void Network::set_lr_multiplier(std::size_t layer, double multiplier) {
  if (!(multiplier >= 0.0)) throw ConfigError("learning-rate multiplier must be non-negative");
  lr_multipliers_.at(layer) = multiplier;
}

std::vector<ParameterRef> Network::parameters() {
  std::vector<ParameterRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* c = std::get_if<ConvSpec>(&layers_[i])) {
      out.push_back({i, names_[i] + ".weights", &c->weights});
      out.push_back({i, names_[i] + ".bias", &c->bias});
    } else if (auto* d = std::get_if<DenseSpec>(&layers_[i])) {
      out.push_back({i, names_[i] + ".weights", &d->weights});
      out.push_back({i, names_[i] + ".bias", &d->bias});
    }
  }
  return out;
}

std::vector<const Tensor*> Network::parameter_tensors() const {
  std::vector<const Tensor*> out;
  for (const Layer& layer : layers_) {
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      out.push_back(&d->weights);
      out.push_back(&d->bias);
    }
  }
  return out;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<ConvSpec>(layers_[i]) ||
        std::holds_alternative<DenseSpec>(layers_[i])) {
      out.push_back(names_[i] + ".weights");
      out.push_back(names_[i] + ".bias");
    }
  }
  return out;
}

std::vector<Tensor> Network::zero_gradients() const {
  std::vector<Tensor> out;
  for (const Tensor* p : parameter_tensors()) out.emplace_back(p->shape());
  return out;
}

ForwardTrace Network::forward_trace(const Tensor& input, std::uint64_t dropout_seed) const {
  if (input.shape() != spec_.input_shape) {
    throw ConfigError("network '" + spec_.name + "' expects input " +
                      shape_to_string(spec_.input_shape) + ", got " +
                      shape_to_string(input.shape()));
  }
  ForwardTrace trace;
  trace.inputs.reserve(layers_.size());
  trace.dropout_masks.resize(layers_.size());
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    trace.inputs.push_back(std::move(x));
    const Tensor& in = trace.inputs.back();
    x = std::visit(Overloaded{
                       [&](const ConvSpec& c) { return conv_forward(in, c); },
                       [&](const Relu&) { return relu_forward(in); },
                       [&](const LRNSpec& c) { return lrn_forward(in, c); },
                       [&](const MaxPoolSpec& c) { return maxpool_forward(in, c); },
                       [&](const DenseSpec& d) { return dense_forward(in, d); },
                       [&](const DropoutSpec& d) {
                         DropoutSpec sampled = d;
                         sampled.mode = mode_;
                         sampled.mask_seed = derive_seed({dropout_seed, i});
                         DropoutResult r = dropout_forward(in, sampled);
                         trace.dropout_masks[i] = std::move(r.mask);
                         return std::move(r.output);
                       },
                       [&](const Softmax&) {
                         trace.logits = in;
                         return softmax_forward(in);
                       },
                       [&](const Classification&) { return in; },
                   },
                   layers_[i]);
  }
  trace.probabilities = std::move(x);
  return trace;
}

Tensor Network::forward(const Tensor& input, std::uint64_t dropout_seed) const {
  return run(input, mode_, dropout_seed);
}

Tensor Network::infer(const Tensor& input) const { return run(input, Mode::Eval, 0); }

Tensor Network::run(const Tensor& input, Mode mode, std::uint64_t dropout_seed) const {
  if (input.shape() != spec_.input_shape) {
    throw ConfigError("network '" + spec_.name + "' expects input " +
                      shape_to_string(spec_.input_shape) + ", got " +
                      shape_to_string(input.shape()));
  }
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = std::visit(Overloaded{
                       [&](const ConvSpec& c) { return conv_forward(x, c); },
                       [&](const Relu&) { return relu_forward(x); },
                       [&](const LRNSpec& c) { return lrn_forward(x, c); },
                       [&](const MaxPoolSpec& c) { return maxpool_forward(x, c); },
                       [&](const DenseSpec& d) { return dense_forward(x, d); },
                       [&](const DropoutSpec& d) {
                         if (mode == Mode::Eval) return x;
                         DropoutSpec sampled = d;
                         sampled.mode = mode;
                         sampled.mask_seed = derive_seed({dropout_seed, i});
                         return dropout_forward(x, sampled).output;
                       },
                       [&](const Softmax&) { return softmax_forward(x); },
                       [&](const Classification&) { return x; },
                   },
                   layers_[i]);
  }
  return x;
}

std::vector<Tensor> Network::activations(const Tensor& input) const {
  if (input.shape() != spec_.input_shape) {
    throw ConfigError("network '" + spec_.name + "' expects input " +
                      shape_to_string(spec_.input_shape) + ", got " +
                      shape_to_string(input.shape()));
  }
  std::vector<Tensor> out;
  out.reserve(layers_.size());
  const Tensor* x = &input;
  for (const Layer& layer : layers_) {
    out.push_back(std::visit(Overloaded{
                                 [&](const ConvSpec& c) { return conv_forward(*x, c); },
                                 [&](const Relu&) { return relu_forward(*x); },
                                 [&](const LRNSpec& c) { return lrn_forward(*x, c); },
                                 [&](const MaxPoolSpec& c) { return maxpool_forward(*x, c); },
                                 [&](const DenseSpec& d) { return dense_forward(*x, d); },
                                 [&](const DropoutSpec&) { return *x; },
                                 [&](const Softmax&) { return softmax_forward(*x); },
                                 [&](const Classification&) { return *x; },
                             },
                             layer));
    x = &out.back();
  }
  return out;
}

void Network::backward(const ForwardTrace& trace, std::size_t label, std::vector<Tensor>& grads,
                       std::size_t first_trainable) const {
  std::size_t softmax_index = layers_.size();
  std::vector<std::size_t> slot(layers_.size(), kNoParameters);
  std::size_t next_slot = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<Softmax>(layers_[i])) softmax_index = i;
    if (std::holds_alternative<ConvSpec>(layers_[i]) ||
        std::holds_alternative<DenseSpec>(layers_[i])) {
      slot[i] = next_slot;
      next_slot += 2;
    }
  }
  if (grads.size() != next_slot) {
    throw ConfigError("gradient list has " + std::to_string(grads.size()) +
                      " tensors, network has " + std::to_string(next_slot));
  }
  if (trace.inputs.size() != layers_.size()) throw ConfigError("forward trace is incomplete");

  Tensor g = softmax_cross_entropy_grad(trace.probabilities, label);
  for (std::size_t i = softmax_index; i-- > first_trainable;) {
    const Tensor& in = trace.inputs[i];
    const bool need_input = i > first_trainable;
    g = std::visit(Overloaded{
                       [&](const ConvSpec& c) {
                         Tensor gi = need_input ? Tensor(in.shape()) : Tensor();
                         conv_backward_accumulate(in, c, g, need_input ? &gi : nullptr,
                                                  grads[slot[i]], grads[slot[i] + 1]);
                         return gi;
                       },
                       [&](const Relu&) { return relu_backward(in, g); },
                       [&](const LRNSpec& c) { return lrn_backward(in, c, g); },
                       [&](const MaxPoolSpec& c) { return maxpool_backward(in, c, g); },
                       [&](const DenseSpec& d) {
                         Tensor gi = need_input ? Tensor(in.shape()) : Tensor();
                         dense_backward_accumulate(in, d, g, need_input ? &gi : nullptr,
                                                   grads[slot[i]], grads[slot[i] + 1]);
                         return gi;
                       },
                       [&](const DropoutSpec&) {
                         return dropout_backward(trace.dropout_masks[i], g);
                       },
                       [&](const Softmax&) { return g; },
                       [&](const Classification&) { return g; },
                   },
                   layers_[i]);
  }
}

std::size_t predict(const Network& network, const Tensor& input) {
  return argmax(network.infer(input));
}

double evaluate_accuracy(const Network& network, const LabeledDataset& dataset) {
  if (dataset.empty()) throw DataError("cannot evaluate accuracy on an empty dataset");
  std::size_t correct = 0;
  for (const ImageSample& sample : dataset) {
    if (predict(network, sample.pixels) == sample.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::vector<std::filesystem::path> dump_feature_maps(const Network& network, const Tensor& input,
                                                     const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create directory " + out_dir.string() + ": " + ec.message());
  const auto acts = network.activations(input);
  std::vector<std::filesystem::path> written;
  std::size_t index = 0;
  for (std::size_t i = 0; i < network.layer_count(); ++i) {
    if (!std::holds_alternative<ConvSpec>(network.layer(i))) continue;
    std::size_t source = i;
    if (i + 1 < network.layer_count() && std::holds_alternative<Relu>(network.layer(i + 1))) {
      source = i + 1;
    }
    ++index;
    const std::string name = network.layer_name(source);
    const auto path = out_dir / (std::to_string(index) + "_" + name + ".tensor");
    save_tensor(path, name, acts[source]);
    written.push_back(path);
  }
  return written;
}

}  // namespace gearcnn
