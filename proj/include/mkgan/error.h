#pragma once

#include <stdexcept>
#include <string>

namespace mkgan {

// Bad argument values (even kernel sizes, out-of-range thresholds, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dimension or channel-count mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable, malformed or unexpected file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation called in a state that does not support it.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A segmented region is too small to learn from.
class RegionTooSmall : public std::runtime_error {
 public:
  RegionTooSmall(std::string region, double fraction, const std::string& detail = {});

  const std::string& region() const { return region_; }
  double fraction() const { return fraction_; }

 private:
  std::string region_;
  double fraction_;
};

// A training loop produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& stage, int iteration);

  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

}  // namespace mkgan
