#include "gearcnn/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "gearcnn/errors.hpp"

namespace gearcnn {

namespace {

constexpr std::array<char, 4> kMagic = {'G', 'N', 'C', 'K'};
constexpr std::uint32_t kMaxRank = 8;

using Kind = CheckpointError::Kind;

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, sizeof(T));
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw CheckpointError(Kind::Truncated, std::string("truncated payload while reading ") + what);
  }
}

std::uint8_t get_u8(std::istream& in, const char* what) {
  char c;
  read_exact(in, &c, 1, what);
  return static_cast<std::uint8_t>(c);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<char> read_bytes(std::istream& in, std::size_t n, const char* what) {
  std::vector<char> buf(n);
  if (n) read_exact(in, buf.data(), n, what);
  return buf;
}

std::string spec_document(const NetworkSpec& spec, const std::string& provenance) {
  nlohmann::json j = spec;
  j["provenance"] = provenance;
  return j.dump();
}

std::ofstream open_for_writing(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot open " + path.string() + " for writing");
  return out;
}

void finish_writing(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw CheckpointError(Kind::Io, "failed writing " + path.string());
}

void write_header(std::ostream& out, const NetworkSpec& spec, const std::string& provenance) {
  const std::string doc = spec_document(spec, provenance);
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(doc.size()));
  out.write(doc.data(), static_cast<std::streamsize>(doc.size()));
}

}  // namespace

void write_tensor_record(std::ostream& out, const std::string& name, const Tensor& tensor,
                         DType dtype) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u8(out, static_cast<std::uint8_t>(dtype));
  put_u8(out, static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  if (dtype == DType::Float64) {
    for (double v : tensor.data()) put_le(out, v);
  } else {
    for (double v : tensor.data()) put_le(out, static_cast<float>(v));
  }
}

NamedTensor read_tensor_record(std::istream& in) {
  const std::uint32_t name_len = get_u32(in, "tensor name length");
  const auto name_bytes = read_bytes(in, name_len, "tensor name");
  const std::uint8_t dtype = get_u8(in, "tensor dtype");
  if (dtype != static_cast<std::uint8_t>(DType::Float32) &&
      dtype != static_cast<std::uint8_t>(DType::Float64)) {
    throw CheckpointError(Kind::Integrity, "unknown tensor dtype tag " + std::to_string(dtype));
  }
  const std::uint8_t rank = get_u8(in, "tensor rank");
  if (rank == 0 || rank > kMaxRank) {
    throw CheckpointError(Kind::Integrity, "invalid tensor rank " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_u32(in, "tensor dimensions");
    if (d == 0) throw CheckpointError(Kind::Integrity, "tensor has a zero dimension");
  }
  Tensor tensor(shape);
  const std::size_t width = dtype == static_cast<std::uint8_t>(DType::Float64) ? 8 : 4;
  const auto raw = read_bytes(in, tensor.size() * width, "tensor data");
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(raw.data() + i * width);
    if (width == 8) {
      std::uint64_t bits = 0;
      for (std::size_t k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
      std::memcpy(&tensor[i], &bits, 8);
    } else {
      std::uint32_t bits = 0;
      for (std::size_t k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(b[k]) << (8 * k);
      float f;
      std::memcpy(&f, &bits, 4);
      tensor[i] = f;
    }
  }
  return {std::string(name_bytes.begin(), name_bytes.end()), std::move(tensor)};
}

Checkpoint make_checkpoint(const Network& network, std::string provenance) {
  Checkpoint ckpt;
  ckpt.spec = network.spec();
  ckpt.provenance = std::move(provenance);
  const auto names = network.parameter_names();
  const auto tensors = network.parameter_tensors();
  for (std::size_t i = 0; i < names.size(); ++i) ckpt.parameters.push_back({names[i], *tensors[i]});
  return ckpt;
}

Network network_from_checkpoint(const Checkpoint& checkpoint) {
  Network network = Network::zeros(checkpoint.spec);
  auto params = network.parameters();
  if (params.size() != checkpoint.parameters.size()) {
    throw CheckpointError(Kind::Integrity,
                          "checkpoint holds " + std::to_string(checkpoint.parameters.size()) +
                              " tensors, spec requires " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& stored = checkpoint.parameters[i];
    if (stored.name != params[i].name) {
      throw CheckpointError(Kind::Integrity, "tensor " + std::to_string(i) + " is named '" +
                                                 stored.name + "', spec expects '" +
                                                 params[i].name + "'");
    }
    if (stored.tensor.shape() != params[i].value->shape()) {
      throw CheckpointError(Kind::Integrity, "tensor '" + stored.name + "' has shape " +
                                                 shape_to_string(stored.tensor.shape()) +
                                                 ", spec requires " +
                                                 shape_to_string(params[i].value->shape()));
    }
    *params[i].value = stored.tensor;
  }
  return network;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path,
                      DType dtype) {
  auto out = open_for_writing(path);
  write_header(out, checkpoint.spec, checkpoint.provenance);
  for (const NamedTensor& p : checkpoint.parameters) write_tensor_record(out, p.name, p.tensor, dtype);
  finish_writing(out, path);
}

void save_checkpoint(const Network& network, const std::filesystem::path& path,
                     const std::string& provenance, DType dtype) {
  auto out = open_for_writing(path);
  write_header(out, network.spec(), provenance);
  const auto names = network.parameter_names();
  const auto tensors = network.parameter_tensors();
  for (std::size_t i = 0; i < names.size(); ++i) write_tensor_record(out, names[i], *tensors[i], dtype);
  finish_writing(out, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kMagic) {
    throw CheckpointError(Kind::NotACheckpoint, path.string() + " is not a checkpoint");
  }
  Checkpoint ckpt;
  ckpt.format_version = get_u32(in, "version");
  if (ckpt.format_version != kCheckpointVersion) {
    throw CheckpointError(Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(ckpt.format_version) +
                              " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t spec_len = get_u32(in, "spec length");
  const auto doc = read_bytes(in, spec_len, "spec JSON");
  try {
    const auto j = nlohmann::json::parse(doc.begin(), doc.end());
    ckpt.spec = j.get<NetworkSpec>();
    ckpt.provenance = j.value("provenance", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Integrity, std::string("invalid spec JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Integrity, std::string("invalid spec: ") + e.what());
  }

  std::vector<ParameterInfo> layout;
  try {
    layout = parameter_layout(ckpt.spec);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Integrity, std::string("spec does not compose: ") + e.what());
  }
  for (const ParameterInfo& p : layout) {
    NamedTensor record = read_tensor_record(in);
    if (record.name != p.name || record.tensor.shape() != p.shape) {
      throw CheckpointError(Kind::Integrity,
                            "tensor '" + record.name + "' " +
                                shape_to_string(record.tensor.shape()) +
                                " disagrees with spec entry '" + p.name + "' " +
                                shape_to_string(p.shape));
    }
    ckpt.parameters.push_back(std::move(record));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError(Kind::Integrity, "trailing bytes after the last tensor");
  }
  return ckpt;
}

Network load_checkpoint(const std::filesystem::path& path) {
  return network_from_checkpoint(read_checkpoint(path));
}

void save_tensor(const std::filesystem::path& path, const std::string& name, const Tensor& tensor,
                 DType dtype) {
  auto out = open_for_writing(path);
  write_tensor_record(out, name, tensor, dtype);
  finish_writing(out, path);
}

NamedTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  return read_tensor_record(in);
}

}  // namespace gearcnn
