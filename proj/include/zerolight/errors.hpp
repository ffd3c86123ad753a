#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace zerolight {

/// Operation called on an object that is not ready for it (e.g. an
/// uninitialized network, non-finite gradients).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad user configuration: invalid ranges, missing required inputs, empty
/// corpora. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (manifest JSON, TOML config, tensor archive).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the trainer when the total loss stops being finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::vector<std::string> batch_ids)
      : std::runtime_error(what), batch_ids_(std::move(batch_ids)) {}

  const std::vector<std::string>& batch_ids() const { return batch_ids_; }

 private:
  std::vector<std::string> batch_ids_;
};

}  // namespace zerolight
