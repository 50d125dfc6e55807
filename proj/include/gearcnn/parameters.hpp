#ifndef GEARCNN_PARAMETERS_HPP
#define GEARCNN_PARAMETERS_HPP

#include <cstddef>
#include <string>

#include "gearcnn/tensor.hpp"

namespace gearcnn {

// A mutable parameter tensor and the zero-based layer that owns it.
struct ParameterRef {
  std::size_t layer;
  std::string name;
  Tensor* value;
};

}  // namespace gearcnn

#endif  // GEARCNN_PARAMETERS_HPP
