#include "rdns/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "rdns/densenet.hpp"
#include "rdns/errors.hpp"
#include "rdns/losses.hpp"
#include "rdns/nn_ops.hpp"
#include "rdns/roi_ops.hpp"

namespace rdns {
namespace {

constexpr double kPrimitiveTolerance = 1e-4;
constexpr double kComposedTolerance = 1e-3;

/// Distinct values spaced far beyond any finite-difference step, in random order, so
/// max-style operations have no ties and no argmax flips under perturbation.
Tensor distinct_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = -1.0 + 0.01 * static_cast<double>(order[i]);
  return t;
}

/// Uniform magnitudes in [lo, hi] with a random sign; keeps values away from kinks at zero.
Tensor signed_away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

Tensor from_vector(const std::vector<double>& v) { return Tensor({1, 1, 1, v.size()}, v); }

struct CaseChecker {
  double eps;
  bool broken;
  double worst = 0.0;
  std::size_t skipped = 0;

  /// Checks every coordinate of `x` against `analytic`.
  void full(const ScalarFn& f, const Tensor& x, Tensor analytic) {
    if (broken) {
      analytic[0] += 1e-2 * (1.0 + std::abs(analytic[0]));
      broken = false;
    }
    const Tensor numeric = finite_difference_gradient(f, x, eps);
    worst = std::max(worst, max_relative_error(analytic.data(), numeric.data()));
  }

  /// Checks only the listed coordinates of `x`. Across a kink (ReLU or max selection) the
  /// one-sided differences disagree by the slope jump, and the central difference is off by
  /// half that gap; coordinates whose gap exceeds the tolerance are skipped and counted.
  void sampled(const ScalarFn& f, const Tensor& x, const Tensor& analytic,
               const std::vector<std::size_t>& coords, double tolerance) {
    std::vector<double> a;
    std::vector<double> n;
    const double f0 = f(x);
    for (std::size_t i : coords) {
      Tensor y = x;
      y[i] = x[i] + eps;
      const double forward = (f(y) - f0) / eps;
      y[i] = x[i] - eps;
      const double backward = (f0 - f(y)) / eps;
      const double central = 0.5 * (forward + backward);
      if (!std::isfinite(central)) throw NumericError("non-finite finite difference");
      if (std::abs(forward - backward) > tolerance * std::max(1.0, std::abs(central))) {
        ++skipped;
        continue;
      }
      n.push_back(central);
      a.push_back(analytic[i]);
    }
    if (broken && !a.empty()) {
      a[0] += 1e-2 * (1.0 + std::abs(a[0]));
      broken = false;
    }
    worst = std::max(worst, max_relative_error(a, n));
  }
};

using CaseFn = std::function<void(Rng&, CaseChecker&)>;

void check_conv2d(Rng& rng, CaseChecker& c) {
  const std::size_t stride = 1 + rng.below(2);
  const std::size_t pad = rng.below(2);
  ConvParams p = ConvParams::zeros(4, 3, 3, 3, stride, pad);
  p.kernels = uniform_tensor(p.kernels.shape(), rng);
  for (double& b : p.bias) b = rng.uniform(-1.0, 1.0);
  const Tensor x = uniform_tensor({2, 3, 6, 7}, rng);
  const Tensor r = uniform_tensor(conv2d_output_shape(x.shape(), p), rng);
  const ConvGrads g = conv2d_backward(x, p, r);

  c.full([&](const Tensor& v) { return dot(conv2d(v, p), r); }, x, g.input);
  c.full(
      [&](const Tensor& k) {
        ConvParams q = p;
        q.kernels = k;
        return dot(conv2d(x, q), r);
      },
      p.kernels, g.kernels);
  c.full(
      [&](const Tensor& b) {
        ConvParams q = p;
        q.bias = b.values();
        return dot(conv2d(x, q), r);
      },
      from_vector(p.bias), from_vector(g.bias));
}

void check_batch_norm(Rng& rng, CaseChecker& c) {
  BatchNormParams p = BatchNormParams::identity(2);
  for (double& v : p.gamma) v = rng.uniform(0.5, 1.5);
  for (double& v : p.beta) v = rng.uniform(-0.5, 0.5);
  const Tensor x = normal_tensor({3, 2, 4, 4}, rng, 0.3, 1.2);
  const Tensor r = uniform_tensor(x.shape(), rng);
  auto eval = [&](const Tensor& in, BatchNormParams q) {
    return dot(batch_norm(in, q, Mode::Train), r);
  };
  BatchNormParams fwd = p;
  BatchNormCache cache;
  (void)batch_norm(x, fwd, Mode::Train, &cache);
  const BatchNormGrads g = batch_norm_backward(r, p, cache);

  c.full([&](const Tensor& v) { return eval(v, p); }, x, g.input);
  c.full(
      [&](const Tensor& gamma) {
        BatchNormParams q = p;
        q.gamma = gamma.values();
        return eval(x, q);
      },
      from_vector(p.gamma), from_vector(g.gamma));
  c.full(
      [&](const Tensor& beta) {
        BatchNormParams q = p;
        q.beta = beta.values();
        return eval(x, q);
      },
      from_vector(p.beta), from_vector(g.beta));
}

void check_relu(Rng& rng, CaseChecker& c) {
  const Tensor x = signed_away_from_zero({2, 3, 4, 4}, rng, 0.01, 1.0);
  const Tensor r = uniform_tensor(x.shape(), rng);
  c.full([&](const Tensor& v) { return dot(relu(v), r); }, x, relu_backward(x, r));
}

void check_max_pool(Rng& rng, CaseChecker& c) {
  const bool overlap = rng.below(2) == 1;
  const Window win = overlap ? Window{3, 3} : Window{2, 2};
  const std::size_t pad = overlap ? 1 : 0;
  const Tensor x = distinct_tensor({2, 2, 6, 6}, rng);
  const MaxPoolResult fwd = max_pool2d(x, win, 2, pad);
  const Tensor r = uniform_tensor(fwd.output.shape(), rng);
  c.full([&](const Tensor& v) { return dot(max_pool2d(v, win, 2, pad).output, r); }, x,
         max_pool2d_backward(x.shape(), fwd.argmax, r));
}

void check_avg_pool(Rng& rng, CaseChecker& c) {
  const Tensor x = uniform_tensor({2, 3, 6, 8}, rng);
  const Tensor r = uniform_tensor({2, 3, 3, 4}, rng);
  c.full([&](const Tensor& v) { return dot(avg_pool2d(v, {2, 2}, 2), r); }, x,
         avg_pool2d_backward(x.shape(), {2, 2}, 2, r));
}

void check_global_avg_pool(Rng& rng, CaseChecker& c) {
  const Tensor x = uniform_tensor({2, 3, 5, 4}, rng);
  const Tensor r = uniform_tensor({2, 3, 1, 1}, rng);
  c.full([&](const Tensor& v) { return dot(global_avg_pool(v), r); }, x,
         global_avg_pool_backward(x.shape(), r));
}

void check_linear(Rng& rng, CaseChecker& c) {
  LinearParams p = LinearParams::zeros(16, 5);
  for (double& w : p.weight) w = rng.uniform(-1.0, 1.0);
  for (double& b : p.bias) b = rng.uniform(-1.0, 1.0);
  const Tensor x = uniform_tensor({3, 4, 2, 2}, rng);
  const Tensor r = uniform_tensor({3, 5, 1, 1}, rng);
  const LinearGrads g = linear_backward(x, p, r);

  c.full([&](const Tensor& v) { return dot(linear(v, p), r); }, x, g.input);
  c.full(
      [&](const Tensor& w) {
        LinearParams q = p;
        q.weight = w.values();
        return dot(linear(x, q), r);
      },
      from_vector(p.weight), from_vector(g.weight));
  c.full(
      [&](const Tensor& b) {
        LinearParams q = p;
        q.bias = b.values();
        return dot(linear(x, q), r);
      },
      from_vector(p.bias), from_vector(g.bias));
}

void check_upsample(Rng& rng, CaseChecker& c) {
  const Tensor x = uniform_tensor({2, 2, 3, 4}, rng);
  const Tensor r = uniform_tensor({2, 2, 6, 8}, rng);
  c.full([&](const Tensor& v) { return dot(upsample_nearest(v, 2), r); }, x,
         upsample_nearest_backward(r, 2));
}

std::vector<RoIBox> random_rois(Rng& rng, std::size_t count, std::size_t batch, double extent) {
  std::vector<RoIBox> rois;
  for (std::size_t i = 0; i < count; ++i) {
    const double x1 = rng.uniform(-0.5, extent - 2.0);
    const double y1 = rng.uniform(-0.5, extent - 2.0);
    rois.push_back({rng.below(batch), x1, y1, rng.uniform(x1 + 0.5, extent),
                    rng.uniform(y1 + 0.5, extent)});
  }
  return rois;
}

void check_roi_align(Rng& rng, CaseChecker& c) {
  const Tensor x = uniform_tensor({2, 3, 8, 8}, rng);
  const std::vector<RoIBox> rois = random_rois(rng, 4, 2, 7.5);
  const RoiSpec spec{3, 3, 2};
  const Tensor r = uniform_tensor({rois.size(), 3, 3, 3}, rng);
  c.full([&](const Tensor& v) { return dot(roi_align(v, rois, spec), r); }, x,
         roi_align_backward(x.shape(), rois, spec, r));
}

void check_roi_pool(Rng& rng, CaseChecker& c) {
  const Tensor x = distinct_tensor({2, 2, 8, 8}, rng);
  const std::vector<RoIBox> rois = random_rois(rng, 4, 2, 7.0);
  const RoiSpec spec{2, 2, 1};
  const RoiPoolResult fwd = roi_pool(x, rois, spec);
  const Tensor r = uniform_tensor(fwd.output.shape(), rng);
  c.full([&](const Tensor& v) { return dot(roi_pool(v, rois, spec).output, r); }, x,
         roi_pool_backward(x.shape(), fwd.argmax, r));
}

void check_smooth_l1(Rng& rng, CaseChecker& c) {
  // Magnitudes straddle the kink at 1 without landing within a step of it.
  Tensor x({1, 1, 1, 12});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mag = i % 2 == 0 ? rng.uniform(0.0, 0.95) : rng.uniform(1.05, 3.0);
    x[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * mag;
  }
  const Tensor r = uniform_tensor(x.shape(), rng);
  auto f = [&](const Tensor& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += r[i] * smooth_l1(v[i]);
    return s;
  };
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = r[i] * smooth_l1_grad(x[i]);
  c.full(f, x, g);
}

void check_bce(Rng& rng, CaseChecker& c) {
  const Tensor p = uniform_tensor({1, 1, 1, 10}, rng, 0.05, 0.95);
  std::vector<int> y(p.size());
  for (int& v : y) v = static_cast<int>(rng.below(2));
  auto f = [&](const Tensor& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += bce(v[i], y[i]);
    return s;
  };
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = bce_grad(p[i], y[i]);
  c.full(f, p, g);
}

void check_detection_loss(Rng& rng, CaseChecker& c) {
  constexpr std::size_t kAnchors = 12;
  LossConfig cfg;
  cfg.n_cls = kAnchors;
  cfg.n_box = 4;
  std::vector<AnchorTarget> targets(kAnchors);
  for (AnchorTarget& t : targets) {
    t.p_star = static_cast<int>(rng.below(2));
    t.ignore = rng.below(5) == 0;
    for (double& v : t.t_star) v = rng.uniform(-1.0, 1.0);
  }
  // Layout per anchor: p, t0, t1, t2, t3. Box residuals stay clear of the smooth-L1 kink.
  Tensor x({1, 1, kAnchors, 5});
  for (std::size_t a = 0; a < kAnchors; ++a) {
    x.at(0, 0, a, 0) = rng.uniform(0.05, 0.95);
    for (std::size_t j = 0; j < 4; ++j) {
      const double res = (rng.uniform() < 0.5 ? -1.0 : 1.0) *
                         (rng.below(2) == 0 ? rng.uniform(0.0, 0.9) : rng.uniform(1.1, 2.0));
      x.at(0, 0, a, 1 + j) = targets[a].t_star[j] + res;
    }
  }
  auto preds_of = [&](const Tensor& v) {
    std::vector<AnchorPrediction> preds(kAnchors);
    for (std::size_t a = 0; a < kAnchors; ++a) {
      preds[a].p = v.at(0, 0, a, 0);
      for (std::size_t j = 0; j < 4; ++j) preds[a].t[j] = v.at(0, 0, a, 1 + j);
    }
    return preds;
  };
  auto f = [&](const Tensor& v) {
    const DetectionLoss l = detection_loss(preds_of(v), targets, cfg);
    return l.class_loss + l.box_loss;
  };
  const DetectionLossGrads g = detection_loss_backward(preds_of(x), targets, cfg);
  Tensor analytic(x.shape());
  for (std::size_t a = 0; a < kAnchors; ++a) {
    analytic.at(0, 0, a, 0) = g.p[a];
    for (std::size_t j = 0; j < 4; ++j) analytic.at(0, 0, a, 1 + j) = g.t[a][j];
  }
  c.full(f, x, analytic);
}

void check_mask_loss(Rng& rng, CaseChecker& c) {
  LossConfig cfg;
  cfg.mask_size = 6;
  const Tensor pred = uniform_tensor({1, 1, 6, 6}, rng, 0.05, 0.95);
  Tensor target({1, 1, 6, 6});
  for (double& v : target.data()) v = static_cast<double>(rng.below(2));
  c.full([&](const Tensor& v) { return mask_loss(v, target, cfg); }, pred,
         mask_loss_backward(pred, target, cfg));
}

void check_softmax_ce(Rng& rng, CaseChecker& c) {
  const Tensor logits = uniform_tensor({4, 3, 1, 1}, rng, -2.0, 2.0);
  std::vector<int> labels(4);
  for (int& l : labels) l = static_cast<int>(rng.below(3));
  c.full([&](const Tensor& v) { return softmax_cross_entropy(v, labels).loss; }, logits,
         softmax_cross_entropy(logits, labels).grad);
}

std::vector<std::size_t> sample_coords(Rng& rng, std::size_t size, std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(rng.below(size));
  return out;
}

/// The micro network on a reduced 32 x 32 canvas, batch of two, train-mode batch norm.
void check_densenet_micro(Rng& rng, CaseChecker& c) {
  DenseNetConfig cfg = DenseNetConfig::micro();
  cfg.input_h = 32;
  cfg.input_w = 32;
  cfg.seed = rng.next_u64();
  DenseNet net = build_densenet(cfg);
  const Tensor x = uniform_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
  const Tensor r = uniform_tensor({2, cfg.num_classes, 1, 1}, rng);
  std::vector<StateRef> params = net.parameters();

  zero_grad(params);
  (void)net.forward(x, Mode::Train);
  const Tensor grad_x = net.backward(r);

  c.sampled([&](const Tensor& v) { return dot(net.forward(v, Mode::Train), r); }, x, grad_x,
            sample_coords(rng, x.size(), 48), kComposedTolerance);

  // Flatten every trainable block into one coordinate space.
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].value.size(); ++i) where.emplace_back(b, i);
  }
  Tensor theta({1, 1, 1, where.size()});
  Tensor grad_theta({1, 1, 1, where.size()});
  for (std::size_t k = 0; k < where.size(); ++k) {
    theta[k] = params[where[k].first].value[where[k].second];
    grad_theta[k] = params[where[k].first].grad[where[k].second];
  }
  auto f = [&](const Tensor& t) {
    for (std::size_t k = 0; k < where.size(); ++k) params[where[k].first].value[where[k].second] = t[k];
    return dot(net.forward(x, Mode::Train), r);
  };
  c.sampled(f, theta, grad_theta, sample_coords(rng, where.size(), 48), kComposedTolerance);
}

struct SuiteEntry {
  std::string op;
  CaseFn fn;
  double tolerance;
};

const std::vector<SuiteEntry>& suite() {
  static const std::vector<SuiteEntry> entries{
      {"conv2d", check_conv2d, kPrimitiveTolerance},
      {"batch_norm", check_batch_norm, kPrimitiveTolerance},
      {"relu", check_relu, kPrimitiveTolerance},
      {"max_pool2d", check_max_pool, kPrimitiveTolerance},
      {"avg_pool2d", check_avg_pool, kPrimitiveTolerance},
      {"global_avg_pool", check_global_avg_pool, kPrimitiveTolerance},
      {"linear", check_linear, kPrimitiveTolerance},
      {"upsample_nearest", check_upsample, kPrimitiveTolerance},
      {"roi_align", check_roi_align, kPrimitiveTolerance},
      {"roi_pool", check_roi_pool, kPrimitiveTolerance},
      {"smooth_l1", check_smooth_l1, kPrimitiveTolerance},
      {"bce", check_bce, kPrimitiveTolerance},
      {"detection_loss", check_detection_loss, kPrimitiveTolerance},
      {"mask_loss", check_mask_loss, kPrimitiveTolerance},
      {"softmax_cross_entropy", check_softmax_ce, kPrimitiveTolerance},
      {"densenet_micro", check_densenet_micro, kComposedTolerance},
  };
  return entries;
}

}  // namespace

const std::vector<std::string>& gradient_suite_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const SuiteEntry& e : suite()) out.push_back(e.op);
    return out;
  }();
  return names;
}

std::vector<GradientCheckRow> run_gradient_suite(const GradientSuiteOptions& opts) {
  const std::vector<std::string>& ops = gradient_suite_ops();
  if (!opts.broken_op.empty() && std::find(ops.begin(), ops.end(), opts.broken_op) == ops.end()) {
    throw ConfigError("unknown gradient-check operation: " + opts.broken_op);
  }
  if (opts.cases == 0) throw ConfigError("gradient suite needs at least one case per operation");
  if (!(opts.eps > 0.0) || !std::isfinite(opts.eps)) {
    throw ConfigError("finite-difference step must be positive and finite");
  }

  std::vector<GradientCheckRow> rows;
  for (std::size_t k = 0; k < suite().size(); ++k) {
    const SuiteEntry& e = suite()[k];
    GradientCheckRow row{e.op, opts.cases, 0.0, e.tolerance};
    for (std::size_t i = 0; i < opts.cases; ++i) {
      Rng rng(derive_seed(derive_seed(opts.seed, k), i));
      CaseChecker checker{opts.eps, i == 0 && e.op == opts.broken_op};
      e.fn(rng, checker);
      row.max_rel_error = std::max(row.max_rel_error, checker.worst);
      row.kink_skips += checker.skipped;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rdns
