#ifndef GEARCNN_DATASET_HPP
#define GEARCNN_DATASET_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "gearcnn/tensor.hpp"

namespace gearcnn {

// Encoded network input with its class label.
struct ImageSample {
  Tensor pixels;  // [H, W, 3], values in [0, 1]
  std::size_t label = 0;
  std::string source_id;
};

using LabeledDataset = std::vector<ImageSample>;

}  // namespace gearcnn

#endif  // GEARCNN_DATASET_HPP
