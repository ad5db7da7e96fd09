#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace latproc {

// Error taxonomy. Batch commands map ConfigError/DataError/DomainError to
// exit status 2 and FactorizationError/NumericalError to exit status 3.

/// Invalid model specification, run configuration, or option values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent cohort data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Covariance factorization failure; carries the failing pivot index
/// (position in the original, unpermuted variable order).
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& msg, int pivot)
      : std::runtime_error(msg), pivot_(pivot) {}
  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

/// Numerical failure during evaluation or optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a. Used for config hashing and per-subject seed derivation;
// stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 14695981039346656037ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic child seed from a base seed and a textual tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = fnv1a64(&base, sizeof(base));
  h = fnv1a64(tag, h);
  return splitmix64(h);
}

/// Deterministic child seed from a base seed and an index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t payload[2] = {base, index};
  return splitmix64(fnv1a64(payload, sizeof(payload)));
}

/// Maps a 64-bit word to a double in [0, 1) using the top 53 bits.
/// std::generate_canonical is implementation-defined; this is not.
inline double to_unit_interval(std::uint64_t w) {
  return static_cast<double>(w >> 11) * 0x1.0p-53;
}

}  // namespace latproc
