#pragma once

#include <stdexcept>
#include <string>

namespace bvf {

/// Bad input data, configuration, or specification strings.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric fit could not be carried out or did not produce a usable model.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process exit codes shared by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidInput = 2;
inline constexpr int kExitFitFailure = 3;
inline constexpr int kExitPartial = 4;

}  // namespace bvf
