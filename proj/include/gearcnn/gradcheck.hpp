#ifndef GEARCNN_GRADCHECK_HPP
#define GEARCNN_GRADCHECK_HPP

#include <cstddef>
#include <cstdint>
#include <string>

#include "gearcnn/network.hpp"

namespace gearcnn {

struct GradCheckReport {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

// Compares backward() against central differences of -ln p[label] on a
// random input, at `samples_per_tensor` random coordinates of every
// parameter tensor. Dropout masks are held fixed through the seed. Relative
// error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport check_network_gradients(Network& network, double eps,
                                        std::size_t samples_per_tensor, std::uint64_t seed);

}  // namespace gearcnn

#endif  // GEARCNN_GRADCHECK_HPP
