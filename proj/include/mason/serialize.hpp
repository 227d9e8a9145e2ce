#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mason/common.hpp"
#include "mason/tensor.hpp"

namespace mason {

using json = nlohmann::json;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(bool(is), ErrorClass::io_failure, "unexpected end of file");
  return v;
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

/// Flat list of named float tensors; the weight-file format used for both
/// encoder checkpoints and decoder state. Little-endian, format-versioned.
inline void write_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write("MSNT", 4);
  detail::write_pod<std::uint32_t>(os, 1);  // format version
  detail::write_pod<std::uint32_t>(os, std::uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_pod<std::uint16_t>(os, std::uint16_t(t.name.size()));
    os.write(t.name.data(), std::streamsize(t.name.size()));
    detail::write_pod<std::uint8_t>(os, std::uint8_t(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape())
      detail::write_pod<std::uint64_t>(os, std::uint64_t(d));
    os.write(reinterpret_cast<const char*>(t.tensor.data()),
             std::streamsize(t.tensor.size() * sizeof(float)));
  }
}

inline std::vector<NamedTensor> read_tensors(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  require(bool(is) && std::string_view(magic, 4) == "MSNT",
          ErrorClass::io_failure, "not a mason tensor file");
  const auto version = detail::read_pod<std::uint32_t>(is);
  require(version == 1, ErrorClass::io_failure,
          "unsupported tensor file version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = detail::read_pod<std::uint8_t>(is);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = std::size_t(detail::read_pod<std::uint64_t>(is));
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            std::streamsize(t.size() * sizeof(float)));
    require(bool(is), ErrorClass::io_failure, "truncated tensor data: " + name);
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

inline void save_tensors(const std::filesystem::path& path,
                         const std::vector<NamedTensor>& tensors) {
  // Atomic: write to a sibling temp file, then rename.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    require(bool(os), ErrorClass::io_failure, "cannot write " + tmp);
    write_tensors(os, tensors);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorClass::file_not_found, "cannot open " + path.string());
  return read_tensors(is);
}

/// Checkpoint container: a JSON metadata block followed by a tensor section.
struct CheckpointFile {
  json meta;
  std::vector<NamedTensor> tensors;
};

inline void save_checkpoint_file(const std::filesystem::path& path,
                                 const CheckpointFile& ckpt) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    require(bool(os), ErrorClass::io_failure, "cannot write " + tmp);
    os.write("MSNC", 4);
    detail::write_pod<std::uint32_t>(os, 1);  // format version
    const std::string meta = ckpt.meta.dump();
    detail::write_pod<std::uint64_t>(os, meta.size());
    os.write(meta.data(), std::streamsize(meta.size()));
    write_tensors(os, ckpt.tensors);
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointFile load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorClass::file_not_found,
          "cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  require(bool(is) && std::string_view(magic, 4) == "MSNC",
          ErrorClass::io_failure, "not a mason checkpoint: " + path.string());
  const auto version = detail::read_pod<std::uint32_t>(is);
  require(version == 1, ErrorClass::io_failure,
          "unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = detail::read_pod<std::uint64_t>(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), std::streamsize(meta_len));
  CheckpointFile out;
  out.meta = json::parse(meta);
  out.tensors = read_tensors(is);
  return out;
}

}  // namespace mason
