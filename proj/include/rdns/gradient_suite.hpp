#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rdns/gradcheck.hpp"

namespace rdns {

struct GradientSuiteOptions {
  /// Seeded random instances per operation.
  std::size_t cases = 5;
  double eps = kDefaultFdEps;
  std::uint64_t seed = 0;
  /// Test hook: the named operation's analytic gradient is deliberately corrupted so that
  /// callers can confirm a broken backward pass is reported. Empty disables the hook.
  std::string broken_op;
};

struct GradientCheckRow {
  std::string op;
  std::size_t cases = 0;
  /// Largest max_relative_error over every checked argument of every case.
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  /// Sampled coordinates left out because a kink lay within the finite-difference step.
  std::size_t kink_skips = 0;

  bool passed() const { return max_rel_error <= tolerance; }
};

/// Every operation the suite covers, in report order.
const std::vector<std::string>& gradient_suite_ops();

/// Compares each backward pass against central finite differences. Primitive operations
/// are checked on every coordinate against 1e-4; the composed micro network is checked on
/// a seeded sample of input and parameter coordinates against 1e-3, leaving out sampled
/// coordinates that straddle a kink. Throws ConfigError when broken_op names no operation.
std::vector<GradientCheckRow> run_gradient_suite(const GradientSuiteOptions& opts = {});

}  // namespace rdns
