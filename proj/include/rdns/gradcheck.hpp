#pragma once

#include <functional>
#include <span>

#include "rdns/rng.hpp"
#include "rdns/tensor.hpp"

namespace rdns {

using ScalarFn = std::function<double(const Tensor&)>;

inline constexpr double kDefaultFdEps = 1e-4;

/// Central-difference gradient of `f` at `x`: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Throws NumericError if any evaluation is non-finite.
Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x, double eps = kDefaultFdEps);

/// Central difference of a scalar function of one coordinate.
double finite_difference(const std::function<double(double)>& f, double x,
                         double eps = kDefaultFdEps);

/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);
Tensor normal_tensor(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0);

/// Sum of elementwise products; the scalar projection used to check backward passes.
double dot(const Tensor& a, const Tensor& b);

}  // namespace rdns
