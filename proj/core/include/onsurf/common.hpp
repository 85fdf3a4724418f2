#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace onsurf {

using Point3 = Eigen::Vector3d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using MatrixX = Eigen::MatrixXd;
using VectorX = Eigen::VectorXd;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Point3& p) { return p.allFinite(); }

// Deterministic 64-bit mixing, used to derive child seeds from a parent seed
// and a textual key.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view key);

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// Worker count honoring ONSURF_THREADS; never less than one.
unsigned thread_count();

// Runs body(chunk_index) for chunk_index in [0, chunks). Work is spread over
// thread_count() workers; callers own any reduction and must perform it in
// chunk order so results do not depend on the worker count.
void parallel_for(std::size_t chunks, const std::function<void(std::size_t)>& body);

}  // namespace onsurf
