#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mica {

// Raised when a caller breaks a documented precondition (shape mismatch,
// rank out of range, non-conformal checkpoints, malformed config).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a numerical routine fails: non-finite values, SVD
// non-convergence, diverging training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SvdNonConvergence : public NumericalError {
 public:
  explicit SvdNonConvergence(std::size_t sweeps)
      : NumericalError("full_svd: no convergence after " + std::to_string(sweeps) + " sweeps"),
        sweeps_(sweeps) {}

  std::size_t sweeps() const noexcept { return sweeps_; }

 private:
  std::size_t sweeps_;
};

// Config error carrying the JSON path of the offending field.
class ConfigError : public ContractViolation {
 public:
  ConfigError(std::string path, const std::string& what)
      : ContractViolation(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace mica
