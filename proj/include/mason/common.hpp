#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mason {

/// Error classes used across the library. The CLI prints `code(): what()` as a
/// single machine-parseable line and maps every class to a nonzero exit.
enum class ErrorClass {
  invalid_config,
  missing_counterpart,
  shape_mismatch,
  missing_label,
  file_not_found,
  unknown_adapter,
  unknown_layer,
  invalid_argument,
  numeric_failure,
  io_failure,
};

inline std::string_view to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::invalid_config: return "invalid_config";
    case ErrorClass::missing_counterpart: return "missing_counterpart";
    case ErrorClass::shape_mismatch: return "shape_mismatch";
    case ErrorClass::missing_label: return "missing_label";
    case ErrorClass::file_not_found: return "file_not_found";
    case ErrorClass::unknown_adapter: return "unknown_adapter";
    case ErrorClass::unknown_layer: return "unknown_layer";
    case ErrorClass::invalid_argument: return "invalid_argument";
    case ErrorClass::numeric_failure: return "numeric_failure";
    case ErrorClass::io_failure: return "io_failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& msg)
      : std::runtime_error(msg), cls_(cls) {}

  ErrorClass error_class() const { return cls_; }
  std::string code() const { return std::string(to_string(cls_)); }

 private:
  ErrorClass cls_;
};

[[noreturn]] inline void raise(ErrorClass cls, const std::string& msg) {
  throw Error(cls, msg);
}

inline void require(bool cond, ErrorClass cls, const std::string& msg) {
  if (!cond) raise(cls, msg);
}

/// FNV-1a over raw bytes; used for weight hashes and rng key derivation.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), seed);
}

}  // namespace mason
