#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rdns {

/// Extents of two operands do not agree, or an extent is out of its valid range.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid configuration (network, dataset, training or anchor settings).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A metric whose denominator is zero for the given counts.
class UndefinedMetricError : public std::domain_error {
 public:
  UndefinedMetricError(const std::string& metric, const std::string& why)
      : std::domain_error(metric + " is undefined: " + why), metric_(metric) {}
  const std::string& metric() const noexcept { return metric_; }

 private:
  std::string metric_;
};

/// Non-finite value produced by a numeric routine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated binary / JSON input.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Lesion geometry that does not fit on the canvas.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset generation gave up after exhausting its retry budget.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rdns
