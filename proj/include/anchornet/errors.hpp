#pragma once

#include <stdexcept>
#include <string>

namespace anchornet {

// Geometry that cannot be realized (intermediate size smaller than a kernel,
// patch exiting the input bounds, ...).
struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (parse failures, version mismatches,
// checksum failures, vocab mismatches).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (diverged training,
// NaN/Inf escaping a tensor op).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace anchornet
