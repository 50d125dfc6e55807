#include "gearcnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gearcnn/errors.hpp"

namespace gearcnn {

namespace {

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw ConfigError(std::string(what) + " expects an [H, W, C] tensor, got " +
                      shape_to_string(t.shape()));
  }
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ConfigError(std::string(what) + " has shape " + shape_to_string(t.shape()) +
                      ", expected " + shape_to_string(expected));
  }
}

void check_conv_parameters(const ConvSpec& spec) {
  require_shape(spec.weights,
                {spec.filter_height, spec.filter_width, spec.in_channels, spec.num_filters},
                "convolution weights");
  require_shape(spec.bias, {spec.num_filters}, "convolution bias");
}

void check_dense_parameters(const DenseSpec& spec) {
  require_shape(spec.weights, {spec.out_features, spec.in_features}, "dense weights");
  require_shape(spec.bias, {spec.out_features}, "dense bias");
}

std::size_t span_low(std::size_t c, std::size_t half) { return c >= half ? c - half : 0; }
std::size_t span_high(std::size_t c, std::size_t half, std::size_t channels) {
  return std::min(channels - 1, c + half);
}

}  // namespace

std::size_t output_extent(std::size_t in, std::size_t window, std::size_t stride,
                          std::size_t padding, const char* axis) {
  if (stride == 0) throw ConfigError(std::string(axis) + ": stride must be positive");
  if (window == 0) throw ConfigError(std::string(axis) + ": window must be positive");
  const std::size_t padded = in + 2 * padding;
  if (window > padded) {
    throw ConfigError(std::string(axis) + ": window " + std::to_string(window) +
                      " exceeds padded input extent " + std::to_string(padded));
  }
  return (padded - window) / stride + 1;
}

ConvSpec ConvSpec::make(std::size_t filter_height, std::size_t filter_width,
                        std::size_t in_channels, std::size_t num_filters, std::size_t stride,
                        std::size_t padding) {
  ConvSpec spec;
  spec.filter_height = filter_height;
  spec.filter_width = filter_width;
  spec.in_channels = in_channels;
  spec.num_filters = num_filters;
  spec.stride = stride;
  spec.padding = padding;
  spec.weights = Tensor({filter_height, filter_width, in_channels, num_filters});
  spec.bias = Tensor({num_filters});
  return spec;
}

Shape ConvSpec::output_shape(const Shape& input_shape) const {
  if (input_shape.size() != 3) {
    throw ConfigError("convolution expects an [H, W, C] input, got " +
                      shape_to_string(input_shape));
  }
  if (input_shape[2] != in_channels) {
    throw ConfigError("convolution channel dimension: input has " +
                      std::to_string(input_shape[2]) + " channels, filter expects " +
                      std::to_string(in_channels));
  }
  return {output_extent(input_shape[0], filter_height, stride, padding, "convolution height"),
          output_extent(input_shape[1], filter_width, stride, padding, "convolution width"),
          num_filters};
}

Shape MaxPoolSpec::output_shape(const Shape& input_shape) const {
  if (input_shape.size() != 3) {
    throw ConfigError("max pooling expects an [H, W, C] input, got " +
                      shape_to_string(input_shape));
  }
  return {output_extent(input_shape[0], window_height, stride, 0, "max pooling height"),
          output_extent(input_shape[1], window_width, stride, 0, "max pooling width"),
          input_shape[2]};
}

DenseSpec DenseSpec::make(std::size_t in_features, std::size_t out_features) {
  DenseSpec spec;
  spec.in_features = in_features;
  spec.out_features = out_features;
  spec.weights = Tensor({out_features, in_features});
  spec.bias = Tensor({out_features});
  return spec;
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv_forward(const Tensor& input, const ConvSpec& spec) {
  require_rank3(input, "convolution");
  check_conv_parameters(spec);
  const Shape out_shape = spec.output_shape(input.shape());
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t OH = out_shape[0], OW = out_shape[1], K = spec.num_filters;
  const std::size_t P = spec.filter_height, Q = spec.filter_width;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  Tensor out(out_shape);
  const double* x = input.raw();
  const double* w = spec.weights.raw();
  const double* b = spec.bias.raw();
  for (std::size_t oh = 0; oh < OH; ++oh) {
    for (std::size_t ow = 0; ow < OW; ++ow) {
      double* o = out.raw() + (oh * OW + ow) * K;
      std::copy(b, b + K, o);
      for (std::size_t i = 0; i < P; ++i) {
        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec.stride + i) - pad;
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < Q; ++j) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec.stride + j) - pad;
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* xp = x + (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * C;
          const double* wp = w + (i * Q + j) * C * K;
          for (std::size_t c = 0; c < C; ++c) {
            const double xv = xp[c];
            const double* wc = wp + c * K;
            for (std::size_t k = 0; k < K; ++k) o[k] += xv * wc[k];
          }
        }
      }
    }
  }
  return out;
}

void conv_backward_accumulate(const Tensor& input, const ConvSpec& spec, const Tensor& grad_out,
                              Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias) {
  require_rank3(input, "convolution backward");
  check_conv_parameters(spec);
  const Shape out_shape = spec.output_shape(input.shape());
  require_shape(grad_out, out_shape, "convolution output gradient");
  require_shape(grad_weights, spec.weights.shape(), "convolution weight gradient");
  require_shape(grad_bias, spec.bias.shape(), "convolution bias gradient");
  if (grad_input) require_shape(*grad_input, input.shape(), "convolution input gradient");

  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t OH = out_shape[0], OW = out_shape[1], K = spec.num_filters;
  const std::size_t P = spec.filter_height, Q = spec.filter_width;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  const double* x = input.raw();
  const double* w = spec.weights.raw();
  double* gw = grad_weights.raw();
  double* gb = grad_bias.raw();
  double* gx = grad_input ? grad_input->raw() : nullptr;

  for (std::size_t oh = 0; oh < OH; ++oh) {
    for (std::size_t ow = 0; ow < OW; ++ow) {
      const double* g = grad_out.raw() + (oh * OW + ow) * K;
      for (std::size_t k = 0; k < K; ++k) gb[k] += g[k];
      for (std::size_t i = 0; i < P; ++i) {
        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec.stride + i) - pad;
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < Q; ++j) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec.stride + j) - pad;
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t in_off =
              (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * C;
          const std::size_t w_off = (i * Q + j) * C * K;
          for (std::size_t c = 0; c < C; ++c) {
            const double xv = x[in_off + c];
            double* gwc = gw + w_off + c * K;
            for (std::size_t k = 0; k < K; ++k) gwc[k] += xv * g[k];
            if (gx) {
              const double* wc = w + w_off + c * K;
              double acc = 0.0;
              for (std::size_t k = 0; k < K; ++k) acc += wc[k] * g[k];
              gx[in_off + c] += acc;
            }
          }
        }
      }
    }
  }
}

ConvGrads conv_backward(const Tensor& input, const ConvSpec& spec, const Tensor& grad_out) {
  ConvGrads grads{Tensor(input.shape()), Tensor(spec.weights.shape()), Tensor(spec.bias.shape())};
  conv_backward_accumulate(input, spec, grad_out, &grads.input, grads.weights, grads.bias);
  return grads;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_shape(grad_out, input.shape(), "ReLU output gradient");
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) grad[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return grad;
}

// ---------------------------------------------------------------------------
// Max pooling

namespace {

// Flat input index of the first maximum for every output element.
std::vector<std::size_t> pool_argmax(const Tensor& input, const MaxPoolSpec& spec,
                                     const Shape& out_shape, Tensor* out) {
  const std::size_t W = input.dim(1), C = input.dim(2);
  const std::size_t OH = out_shape[0], OW = out_shape[1];
  std::vector<std::size_t> arg(OH * OW * C);
  std::vector<double> best(C);
  for (std::size_t oh = 0; oh < OH; ++oh) {
    for (std::size_t ow = 0; ow < OW; ++ow) {
      std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
      std::size_t* a = arg.data() + (oh * OW + ow) * C;
      for (std::size_t i = 0; i < spec.window_height; ++i) {
        const std::size_t ih = oh * spec.stride + i;
        for (std::size_t j = 0; j < spec.window_width; ++j) {
          const std::size_t base = (ih * W + ow * spec.stride + j) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const double v = input[base + c];
            if (v > best[c] || (i == 0 && j == 0)) {
              best[c] = v;
              a[c] = base + c;
            }
          }
        }
      }
      if (out) std::copy(best.begin(), best.end(), out->raw() + (oh * OW + ow) * C);
    }
  }
  return arg;
}

}  // namespace

Tensor maxpool_forward(const Tensor& input, const MaxPoolSpec& spec) {
  require_rank3(input, "max pooling");
  const Shape out_shape = spec.output_shape(input.shape());
  Tensor out(out_shape);
  pool_argmax(input, spec, out_shape, &out);
  return out;
}

Tensor maxpool_backward(const Tensor& input, const MaxPoolSpec& spec, const Tensor& grad_out) {
  require_rank3(input, "max pooling backward");
  const Shape out_shape = spec.output_shape(input.shape());
  require_shape(grad_out, out_shape, "max pooling output gradient");
  const auto arg = pool_argmax(input, spec, out_shape, nullptr);
  Tensor grad(input.shape());
  for (std::size_t n = 0; n < arg.size(); ++n) grad[arg[n]] += grad_out[n];
  return grad;
}

// ---------------------------------------------------------------------------
// Local response normalization

namespace {

void check_lrn(const LRNSpec& spec) {
  if (spec.channel_span == 0 || spec.channel_span % 2 == 0) {
    throw ConfigError("LRN channel span must be a positive odd integer, got " +
                      std::to_string(spec.channel_span));
  }
  if (!(spec.bias_k > 0.0) || spec.scale_alpha < 0.0) {
    throw ConfigError("LRN requires bias_k > 0 and scale_alpha >= 0");
  }
}

// Denominator base (k + alpha * sum a^2) for every element.
Tensor lrn_scale(const Tensor& input, const LRNSpec& spec) {
  const std::size_t C = input.dim(2);
  const std::size_t pixels = input.dim(0) * input.dim(1);
  const std::size_t half = spec.channel_span / 2;
  Tensor scale(input.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* a = input.raw() + p * C;
    double* s = scale.raw() + p * C;
    for (std::size_t c = 0; c < C; ++c) {
      double sq = 0.0;
      for (std::size_t d = span_low(c, half); d <= span_high(c, half, C); ++d) sq += a[d] * a[d];
      s[c] = spec.bias_k + spec.scale_alpha * sq;
    }
  }
  return scale;
}

}  // namespace

Tensor lrn_forward(const Tensor& input, const LRNSpec& spec) {
  require_rank3(input, "LRN");
  check_lrn(spec);
  const Tensor scale = lrn_scale(input, spec);
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] * std::pow(scale[i], -spec.exponent_beta);
  }
  return out;
}

Tensor lrn_backward(const Tensor& input, const LRNSpec& spec, const Tensor& grad_out) {
  require_rank3(input, "LRN backward");
  check_lrn(spec);
  require_shape(grad_out, input.shape(), "LRN output gradient");
  const std::size_t C = input.dim(2);
  const std::size_t pixels = input.dim(0) * input.dim(1);
  const std::size_t half = spec.channel_span / 2;
  const Tensor scale = lrn_scale(input, spec);

  // ratio[c] = g_c * a_c * D_c^(-beta-1)
  std::vector<double> ratio(C);
  Tensor grad(input.shape());
  const double coeff = 2.0 * spec.scale_alpha * spec.exponent_beta;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* a = input.raw() + p * C;
    const double* s = scale.raw() + p * C;
    const double* g = grad_out.raw() + p * C;
    double* gi = grad.raw() + p * C;
    for (std::size_t c = 0; c < C; ++c) {
      ratio[c] = g[c] * a[c] * std::pow(s[c], -spec.exponent_beta - 1.0);
    }
    for (std::size_t j = 0; j < C; ++j) {
      double cross = 0.0;
      for (std::size_t c = span_low(j, half); c <= span_high(j, half, C); ++c) cross += ratio[c];
      gi[j] = g[j] * std::pow(s[j], -spec.exponent_beta) - coeff * a[j] * cross;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Fully connected

Tensor dense_forward(const Tensor& input, const DenseSpec& spec) {
  check_dense_parameters(spec);
  if (input.size() != spec.in_features) {
    throw ConfigError("dense input length " + std::to_string(input.size()) +
                      " does not match in_features " + std::to_string(spec.in_features));
  }
  const std::size_t N = spec.in_features;
  Tensor out({spec.out_features});
  const double* x = input.raw();
  for (std::size_t o = 0; o < spec.out_features; ++o) {
    const double* row = spec.weights.raw() + o * N;
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) acc += row[i] * x[i];
    out[o] = acc + spec.bias[o];
  }
  return out;
}

void dense_backward_accumulate(const Tensor& input, const DenseSpec& spec, const Tensor& grad_out,
                               Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias) {
  check_dense_parameters(spec);
  if (input.size() != spec.in_features) {
    throw ConfigError("dense input length " + std::to_string(input.size()) +
                      " does not match in_features " + std::to_string(spec.in_features));
  }
  require_shape(grad_out, {spec.out_features}, "dense output gradient");
  require_shape(grad_weights, spec.weights.shape(), "dense weight gradient");
  require_shape(grad_bias, spec.bias.shape(), "dense bias gradient");
  if (grad_input && grad_input->size() != input.size()) {
    throw ConfigError("dense input gradient has the wrong length");
  }
  const std::size_t N = spec.in_features;
  const double* x = input.raw();
  double* gx = grad_input ? grad_input->raw() : nullptr;
  for (std::size_t o = 0; o < spec.out_features; ++o) {
    const double g = grad_out[o];
    grad_bias[o] += g;
    if (g == 0.0) continue;
    double* gw = grad_weights.raw() + o * N;
    for (std::size_t i = 0; i < N; ++i) gw[i] += g * x[i];
    if (gx) {
      const double* row = spec.weights.raw() + o * N;
      for (std::size_t i = 0; i < N; ++i) gx[i] += g * row[i];
    }
  }
}

DenseGrads dense_backward(const Tensor& input, const DenseSpec& spec, const Tensor& grad_out) {
  DenseGrads grads{Tensor(input.shape()), Tensor(spec.weights.shape()), Tensor(spec.bias.shape())};
  dense_backward_accumulate(input, spec, grad_out, &grads.input, grads.weights, grads.bias);
  return grads;
}

// ---------------------------------------------------------------------------
// Dropout

DropoutResult dropout_forward(const Tensor& input, const DropoutSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(spec.rate));
  }
  if (spec.mode == Mode::Eval || spec.rate == 0.0) {
    return {input, Tensor(input.shape(), 1.0)};
  }
  const double keep_scale = 1.0 / (1.0 - spec.rate);
  std::mt19937_64 rng(spec.mask_seed);
  std::bernoulli_distribution keep(1.0 - spec.rate);
  DropoutResult result{Tensor(input.shape()), Tensor(input.shape())};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double m = keep(rng) ? keep_scale : 0.0;
    result.mask[i] = m;
    result.output[i] = input[i] * m;
  }
  return result;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out) {
  if (mask.size() != grad_out.size()) throw ConfigError("dropout mask/gradient size mismatch");
  Tensor grad(grad_out.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = grad_out[i] * mask[i];
  return grad;
}

// ---------------------------------------------------------------------------
// Softmax and loss

Tensor softmax_forward(const Tensor& logits) {
  if (logits.size() < 2) throw ConfigError("softmax needs at least two classes");
  const double peak = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor out(Shape{logits.size()});
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return out;
}

double sum_of_squares(std::span<const Tensor* const> params) {
  double s = 0.0;
  for (const Tensor* t : params) s += t->sum_of_squares();
  return s;
}

double cross_entropy_loss(const Tensor& probabilities, std::size_t label,
                          double params_sum_of_squares, const LossConfig& config) {
  if (label >= probabilities.size()) {
    throw ConfigError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(probabilities.size()) + " classes");
  }
  const double p = std::max(probabilities[label], kProbabilityFloor);
  return -std::log(p) + config.gamma * params_sum_of_squares;
}

double cross_entropy_loss(const Tensor& probabilities, std::size_t label,
                          std::span<const Tensor* const> params, const LossConfig& config) {
  return cross_entropy_loss(probabilities, label, sum_of_squares(params), config);
}

Tensor softmax_cross_entropy_grad(const Tensor& probabilities, std::size_t label) {
  if (label >= probabilities.size()) {
    throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  Tensor grad = probabilities;
  grad[label] -= 1.0;
  return grad;
}

std::size_t argmax(const Tensor& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace gearcnn
