#include "gearcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gearcnn/seed.hpp"

namespace gearcnn {

GradCheckReport check_network_gradients(Network& network, double eps,
                                        std::size_t samples_per_tensor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor input(network.spec().input_shape);
  for (double& v : input.data()) v = unit(rng);
  const std::size_t label = rng() % network.spec().num_classes;
  const std::uint64_t dropout_seed = derive_seed({seed, 0xd0});
  const LossConfig plain{0.0, network.spec().num_classes};

  auto loss = [&] {
    return cross_entropy_loss(network.forward_trace(input, dropout_seed).probabilities, label, 0.0,
                              plain);
  };

  std::vector<Tensor> grads = network.zero_gradients();
  network.backward(network.forward_trace(input, dropout_seed), label, grads);

  GradCheckReport report;
  auto params = network.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& theta = *params[t].value;
    const std::size_t n = std::min(samples_per_tensor, theta.size());
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t k = n == theta.size() ? s : rng() % theta.size();
      const double saved = theta[k];
      theta[k] = saved + eps;
      const double up = loss();
      theta[k] = saved - eps;
      const double down = loss();
      theta[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[t][k];
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double err = std::abs(analytic - numeric) / scale;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = params[t].name + "[" + std::to_string(k) + "]";
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace gearcnn
