#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cola {

// Base for every error raised by the library. `kind()` is a stable,
// machine-readable tag; the CLI writes it into its error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message) : Error("invalid-argument", message) {}
};

class CapacityExceeded : public Error {
 public:
  CapacityExceeded(std::size_t requested, std::size_t capacity)
      : Error("capacity-exceeded", "requested " + std::to_string(requested) +
                                       " classes but only " + std::to_string(capacity) +
                                       " distinct trees exist"),
        requested_(requested),
        capacity_(capacity) {}

  std::size_t requested() const noexcept { return requested_; }
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  std::size_t requested_;
  std::size_t capacity_;
};

class DegenerateSplit : public Error {
 public:
  DegenerateSplit(std::size_t train_size, std::size_t test_size)
      : Error("degenerate-split", "split is degenerate: train=" + std::to_string(train_size) +
                                      " test=" + std::to_string(test_size)),
        train_size_(train_size),
        test_size_(test_size) {}

  std::size_t train_size() const noexcept { return train_size_; }
  std::size_t test_size() const noexcept { return test_size_; }

 private:
  std::size_t train_size_;
  std::size_t test_size_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape-error", message) {}
};

class NumericError : public Error {
 public:
  NumericError(const std::string& message, int iteration)
      : Error("numeric-error", message + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}

  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& message) : Error("state-error", message) {}
};

class ZeroShotViolation : public Error {
 public:
  explicit ZeroShotViolation(const std::string& message) : Error("zero-shot-violation", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io-error", message) {}
};

}  // namespace cola
