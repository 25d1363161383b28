#pragma once

#include <stdexcept>
#include <string>

namespace lpt {

// Malformed input: bad files, invalid configuration, out-of-range indices.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

// A numerical routine could not proceed (non-SPD matrix, nonfinite density).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

}  // namespace lpt
