#ifndef GEARCNN_LAYERS_HPP
#define GEARCNN_LAYERS_HPP

// Forward and backward mechanics of every layer type used by the networks,
// plus softmax and the regularized cross-entropy objective.
//
// Spatial tensors are [H, W, C]. Backward functions take the forward input
// and the gradient of a scalar objective with respect to the forward output,
// and return gradients with respect to the input and any parameters.

#include <cstddef>
#include <cstdint>
#include <span>

#include "gearcnn/tensor.hpp"

namespace gearcnn {

// Output extent along one axis: floor((in + 2*padding - window) / stride) + 1.
// Throws ConfigError when the window does not fit.
std::size_t output_extent(std::size_t in, std::size_t window, std::size_t stride,
                          std::size_t padding, const char* axis);

struct ConvSpec {
  std::size_t filter_height = 1;
  std::size_t filter_width = 1;
  std::size_t in_channels = 1;
  std::size_t num_filters = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weights;  // [filter_height, filter_width, in_channels, num_filters]
  Tensor bias;     // [num_filters]

  // Zero-initialized parameters of the right shapes.
  static ConvSpec make(std::size_t filter_height, std::size_t filter_width,
                       std::size_t in_channels, std::size_t num_filters, std::size_t stride = 1,
                       std::size_t padding = 0);

  Shape output_shape(const Shape& input_shape) const;
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

struct MaxPoolSpec {
  std::size_t window_height = 3;
  std::size_t window_width = 3;
  std::size_t stride = 2;

  Shape output_shape(const Shape& input_shape) const;
};

// Across-channel local response normalization.
struct LRNSpec {
  std::size_t channel_span = 5;
  double bias_k = 2.0;
  double scale_alpha = 1e-4;
  double exponent_beta = 0.75;
};

struct DenseSpec {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
  Tensor weights;  // [out_features, in_features]
  Tensor bias;     // [out_features]

  static DenseSpec make(std::size_t in_features, std::size_t out_features);
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

enum class Mode { Train, Eval };

struct DropoutSpec {
  double rate = 0.5;
  Mode mode = Mode::Train;
  std::uint64_t mask_seed = 0;
};

struct LossConfig {
  double gamma = 5e-4;
  std::size_t num_classes = 9;
};

// Floor applied to the target probability before taking its logarithm.
inline constexpr double kProbabilityFloor = 1e-15;

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

struct DropoutResult {
  Tensor output;
  Tensor mask;  // multiplicative factor per element: 0 or 1/(1-rate)
};

Tensor conv_forward(const Tensor& input, const ConvSpec& spec);
ConvGrads conv_backward(const Tensor& input, const ConvSpec& spec, const Tensor& grad_out);

// Accumulating variant used by the trainer; grads must already have the
// parameter shapes. grad_input is skipped when null.
void conv_backward_accumulate(const Tensor& input, const ConvSpec& spec, const Tensor& grad_out,
                              Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor maxpool_forward(const Tensor& input, const MaxPoolSpec& spec);
// Routes each output gradient to the first maximal element of its window.
Tensor maxpool_backward(const Tensor& input, const MaxPoolSpec& spec, const Tensor& grad_out);

Tensor lrn_forward(const Tensor& input, const LRNSpec& spec);
Tensor lrn_backward(const Tensor& input, const LRNSpec& spec, const Tensor& grad_out);

// Input of any shape is read flat; its size must equal in_features.
Tensor dense_forward(const Tensor& input, const DenseSpec& spec);
DenseGrads dense_backward(const Tensor& input, const DenseSpec& spec, const Tensor& grad_out);
void dense_backward_accumulate(const Tensor& input, const DenseSpec& spec, const Tensor& grad_out,
                               Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias);

// Inverted dropout in train mode, identity in eval mode.
DropoutResult dropout_forward(const Tensor& input, const DropoutSpec& spec);
Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out);

Tensor softmax_forward(const Tensor& logits);

double sum_of_squares(std::span<const Tensor* const> params);

// -ln(max(p[label], floor)) + gamma * sum(theta^2).
double cross_entropy_loss(const Tensor& probabilities, std::size_t label,
                          std::span<const Tensor* const> params, const LossConfig& config);
double cross_entropy_loss(const Tensor& probabilities, std::size_t label,
                          double params_sum_of_squares, const LossConfig& config);

// Gradient of -ln(softmax(z)[label]) with respect to z: p - onehot(label).
Tensor softmax_cross_entropy_grad(const Tensor& probabilities, std::size_t label);

// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(const Tensor& values);

}  // namespace gearcnn

#endif  // GEARCNN_LAYERS_HPP
