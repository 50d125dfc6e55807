#ifndef GEARCNN_CHECKPOINT_HPP
#define GEARCNN_CHECKPOINT_HPP

// Binary network checkpoints (little-endian):
//
//   "GNCK" | u32 version | u32 spec_len | spec JSON (spec_len bytes)
//   then one tensor record per parameter tensor, in layer order:
//   u32 name_len | name | u8 dtype (1 = f32, 2 = f64) | u8 rank | u32 dims[rank] | data
//
// Feature-map dumps are a single tensor record with no header.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gearcnn/network.hpp"
#include "gearcnn/tensor.hpp"

namespace gearcnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  NetworkSpec spec;
  std::vector<NamedTensor> parameters;
  std::string provenance;  // task name, seed, epochs
};

Checkpoint make_checkpoint(const Network& network, std::string provenance = {});
Network network_from_checkpoint(const Checkpoint& checkpoint);

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path,
                      DType dtype = DType::Float64);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const Network& network, const std::filesystem::path& path,
                     const std::string& provenance = {}, DType dtype = DType::Float64);
Network load_checkpoint(const std::filesystem::path& path);

void write_tensor_record(std::ostream& out, const std::string& name, const Tensor& tensor,
                         DType dtype = DType::Float64);
NamedTensor read_tensor_record(std::istream& in);

void save_tensor(const std::filesystem::path& path, const std::string& name, const Tensor& tensor,
                 DType dtype = DType::Float64);
NamedTensor load_tensor(const std::filesystem::path& path);

}  // namespace gearcnn

#endif  // GEARCNN_CHECKPOINT_HPP
