#include "rdns/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rdns/errors.hpp"

namespace rdns {

namespace {

double checked(double v, std::size_t index) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite function value while perturbing element " +
                       std::to_string(index));
  }
  return v;
}

}  // namespace

Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_difference_gradient: eps must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double plus = checked(f(probe), i);
    probe[i] = orig - eps;
    const double minus = checked(f(probe), i);
    probe[i] = orig;
    grad[i] = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

double finite_difference(const std::function<double(double)>& f, double x, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_difference: eps must be positive");
  const double plus = checked(f(x + eps), 0);
  const double minus = checked(f(x - eps), 0);
  return (plus - minus) / (2.0 * eps);
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("max_relative_error: length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1.0, std::abs(numeric[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor normal_tensor(Shape shape, Rng& rng, double mean, double stddev) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dot: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace rdns
