#include "rdns/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rdns/errors.hpp"
#include "rdns/parallel.hpp"

namespace rdns {

namespace {

// Range of output columns [lo, hi) whose input column o*stride + tap - pad lies in [0, in).
struct TapRange {
  std::size_t lo;
  std::size_t hi;
};

TapRange valid_outputs(std::size_t in, std::size_t out, std::size_t stride, std::size_t tap,
                       std::size_t pad) {
  // o*stride + tap >= pad  =>  o >= ceil((pad - tap) / stride)
  std::size_t lo = 0;
  if (pad > tap) lo = (pad - tap + stride - 1) / stride;
  // o*stride + tap - pad <= in - 1  =>  o <= (in - 1 + pad - tap) / stride
  std::size_t hi = 0;
  if (in + pad > tap) hi = std::min(out, (in - 1 + pad - tap) / stride + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": expected " + a.str() + ", got " + b.str());
}

}  // namespace

ConvParams ConvParams::zeros(std::size_t out_channels, std::size_t in_channels, std::size_t kh,
                             std::size_t kw, std::size_t stride, std::size_t padding) {
  ConvParams p;
  p.kernels = Tensor({out_channels, in_channels, kh, kw});
  p.bias.assign(out_channels, 0.0);
  p.stride = stride;
  p.padding = padding;
  return p;
}

void ConvParams::validate() const {
  const Shape& k = kernels.shape();
  if (k.n == 0 || k.c == 0 || k.h == 0 || k.w == 0) {
    throw ShapeError("conv kernels must have positive extents, got " + k.str());
  }
  if (bias.size() != k.n) {
    throw ShapeError("conv bias length " + std::to_string(bias.size()) + " != kernel count " +
                     std::to_string(k.n));
  }
  if (stride == 0) throw ShapeError("conv stride must be positive");
}

std::size_t sliding_extent(std::size_t in, std::size_t window, std::size_t stride,
                           std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (window == 0) throw ShapeError("window must be positive");
  const std::size_t padded = in + 2 * padding;
  if (padded < window) {
    throw ShapeError("window " + std::to_string(window) + " exceeds padded extent " +
                     std::to_string(padded));
  }
  return (padded - window) / stride + 1;
}

Shape conv2d_output_shape(const Shape& in, const ConvParams& p) {
  p.validate();
  if (in.c != p.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, kernels expect " +
                     std::to_string(p.in_channels()));
  }
  const Shape& k = p.kernels.shape();
  return {in.n, k.n, sliding_extent(in.h, k.h, p.stride, p.padding),
          sliding_extent(in.w, k.w, p.stride, p.padding)};
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  const Shape os = conv2d_output_shape(input.shape(), p);
  const Shape& is = input.shape();
  const Shape& ks = p.kernels.shape();
  Tensor out(os);
  const std::size_t s = p.stride;
  const std::size_t pad = p.padding;
  parallel_for(is.n, [&](std::size_t n) {
    for (std::size_t k = 0; k < ks.n; ++k) {
      double* o = out.plane(n, k);
      std::fill(o, o + os.h * os.w, p.bias[k]);
      for (std::size_t c = 0; c < ks.c; ++c) {
        const double* x = input.plane(n, c);
        const double* wk = p.kernels.plane(k, c);
        for (std::size_t kh = 0; kh < ks.h; ++kh) {
          const TapRange rows = valid_outputs(is.h, os.h, s, kh, pad);
          for (std::size_t kw = 0; kw < ks.w; ++kw) {
            const double wv = wk[kh * ks.w + kw];
            const TapRange cols = valid_outputs(is.w, os.w, s, kw, pad);
            for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
              const double* xr = x + (oh * s + kh - pad) * is.w;
              double* orow = o + oh * os.w;
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                orow[ow] += wv * xr[ow * s + kw - pad];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  const Shape os = conv2d_output_shape(input.shape(), p);
  require_same(os, grad_out.shape(), "conv2d_backward grad_out");
  const Shape& is = input.shape();
  const Shape& ks = p.kernels.shape();
  const std::size_t s = p.stride;
  const std::size_t pad = p.padding;

  ConvGrads g{Tensor(is), Tensor(ks), std::vector<double>(ks.n, 0.0)};
  // Per-sample kernel gradients, reduced in sample order so the result is independent of
  // the worker count.
  std::vector<Tensor> partial(is.n, Tensor(ks));
  parallel_for(is.n, [&](std::size_t n) {
    Tensor& gk = partial[n];
    for (std::size_t k = 0; k < ks.n; ++k) {
      const double* go = grad_out.plane(n, k);
      for (std::size_t c = 0; c < ks.c; ++c) {
        const double* x = input.plane(n, c);
        double* gx = g.input.plane(n, c);
        const double* wk = p.kernels.plane(k, c);
        double* gw = gk.plane(k, c);
        for (std::size_t kh = 0; kh < ks.h; ++kh) {
          const TapRange rows = valid_outputs(is.h, os.h, s, kh, pad);
          for (std::size_t kw = 0; kw < ks.w; ++kw) {
            const double wv = wk[kh * ks.w + kw];
            const TapRange cols = valid_outputs(is.w, os.w, s, kw, pad);
            double acc = 0.0;
            for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
              const std::size_t base = (oh * s + kh - pad) * is.w;
              const double* xr = x + base;
              double* gxr = gx + base;
              const double* gor = go + oh * os.w;
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                const std::size_t iw = ow * s + kw - pad;
                acc += gor[ow] * xr[iw];
                gxr[iw] += wv * gor[ow];
              }
            }
            gw[kh * ks.w + kw] += acc;
          }
        }
      }
    }
  });
  for (std::size_t n = 0; n < is.n; ++n) {
    g.kernels += partial[n];
    for (std::size_t k = 0; k < ks.n; ++k) {
      const double* go = grad_out.plane(n, k);
      double acc = 0.0;
      for (std::size_t i = 0; i < os.h * os.w; ++i) acc += go[i];
      g.bias[k] += acc;
    }
  }
  return g;
}

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  BatchNormParams p;
  p.gamma.assign(channels, 1.0);
  p.beta.assign(channels, 0.0);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

void BatchNormParams::validate() const {
  const std::size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batch norm parameter vectors disagree on channel count");
  }
  if (!(epsilon > 0.0)) throw ConfigError("batch norm epsilon must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("batch norm momentum must be in [0,1)");
}

Tensor batch_norm(const Tensor& input, BatchNormParams& p, Mode mode, BatchNormCache* cache) {
  p.validate();
  const Shape& s = input.shape();
  if (s.c != p.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(s.c) + " channels, parameters " +
                     std::to_string(p.channels()));
  }
  const std::size_t plane = s.h * s.w;
  const std::size_t m = s.n * plane;
  if (mode == Mode::Train && m == 0) throw DomainError("batch_norm: empty batch in train mode");

  Tensor out(s);
  Tensor normalized(s);
  std::vector<double> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* x = input.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) mean += x[i];
      }
      mean /= static_cast<double>(m);
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* x = input.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mean) * (x[i] - mean);
      }
      var /= static_cast<double>(m);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      p.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean;
      p.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * unbiased;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + p.epsilon);
    inv_std[c] = is;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* x = input.plane(n, c);
      double* xn = normalized.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xn[i] = (x[i] - mean) * is;
        o[i] = p.gamma[c] * xn[i] + p.beta[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
  }
  return out;
}

BatchNormGrads batch_norm_backward(const Tensor& grad_out, const BatchNormParams& p,
                                   const BatchNormCache& cache) {
  const Shape& s = grad_out.shape();
  require_same(cache.normalized.shape(), s, "batch_norm_backward grad_out");
  if (s.c != p.channels()) throw ShapeError("batch_norm_backward: channel mismatch");
  const std::size_t plane = s.h * s.w;
  const double m = static_cast<double>(s.n * plane);
  BatchNormGrads g{Tensor(s), std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xn = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* xn = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xn += dy[i] * xn[i];
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xn;
    const double scale = p.gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* xn = cache.normalized.plane(n, c);
      double* dx = g.input.plane(n, c);
      if (cache.mode == Mode::Train) {
        for (std::size_t i = 0; i < plane; ++i) {
          dx[i] = scale * (dy[i] - sum_dy / m - xn[i] * sum_dy_xn / m);
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  // Written so that NaN passes through: a diverged activation must reach the loss check.
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] <= 0.0 ? 0.0 : input[i];
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same(input.shape(), grad_out.shape(), "relu_backward grad_out");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

MaxPoolResult max_pool2d(const Tensor& input, Window window, std::size_t stride,
                         std::size_t padding) {
  const Shape& s = input.shape();
  if (padding >= window.h || padding >= window.w) {
    throw ShapeError("max_pool2d: padding must be smaller than the window");
  }
  const Shape os{s.n, s.c, sliding_extent(s.h, window.h, stride, padding),
                 sliding_extent(s.w, window.w, stride, padding)};
  MaxPoolResult r{Tensor(os), std::vector<std::size_t>(os.numel())};
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oh = 0; oh < os.h; ++oh) {
        for (std::size_t ow = 0; ow < os.w; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = 0;
          bool found = false;
          for (std::size_t dh = 0; dh < window.h; ++dh) {
            const std::size_t ph = oh * stride + dh;
            if (ph < padding || ph - padding >= s.h) continue;
            for (std::size_t dw = 0; dw < window.w; ++dw) {
              const std::size_t pw = ow * stride + dw;
              if (pw < padding || pw - padding >= s.w) continue;
              const std::size_t idx = input.offset(n, c, ph - padding, pw - padding);
              // Row-major scan: strict '>' keeps the lowest flat index among ties.
              if (!found || input[idx] > best) {
                best = input[idx];
                arg = idx;
                found = true;
              }
            }
          }
          const std::size_t o = r.output.offset(n, c, oh, ow);
          r.output[o] = best;
          r.argmax[o] = arg;
        }
      }
    }
  }
  return r;
}

Tensor max_pool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                           const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("max_pool2d_backward: argmax/grad_out length mismatch");
  }
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= g.size()) throw IndexError("max_pool2d_backward: argmax out of range");
    g[argmax[i]] += grad_out[i];
  }
  return g;
}

Tensor avg_pool2d(const Tensor& input, Window window, std::size_t stride) {
  const Shape& s = input.shape();
  const Shape os{s.n, s.c, sliding_extent(s.h, window.h, stride, 0),
                 sliding_extent(s.w, window.w, stride, 0)};
  Tensor out(os);
  const double area = static_cast<double>(window.h * window.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* x = input.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t oh = 0; oh < os.h; ++oh) {
        for (std::size_t ow = 0; ow < os.w; ++ow) {
          double acc = 0.0;
          for (std::size_t dh = 0; dh < window.h; ++dh) {
            const double* row = x + (oh * stride + dh) * s.w + ow * stride;
            for (std::size_t dw = 0; dw < window.w; ++dw) acc += row[dw];
          }
          o[oh * os.w + ow] = acc / area;
        }
      }
    }
  }
  return out;
}

Tensor avg_pool2d_backward(const Shape& input_shape, Window window, std::size_t stride,
                           const Tensor& grad_out) {
  const Shape os{input_shape.n, input_shape.c, sliding_extent(input_shape.h, window.h, stride, 0),
                 sliding_extent(input_shape.w, window.w, stride, 0)};
  require_same(os, grad_out.shape(), "avg_pool2d_backward grad_out");
  Tensor g(input_shape);
  const double area = static_cast<double>(window.h * window.w);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t c = 0; c < os.c; ++c) {
      const double* go = grad_out.plane(n, c);
      double* gx = g.plane(n, c);
      for (std::size_t oh = 0; oh < os.h; ++oh) {
        for (std::size_t ow = 0; ow < os.w; ++ow) {
          const double v = go[oh * os.w + ow] / area;
          for (std::size_t dh = 0; dh < window.h; ++dh) {
            double* row = gx + (oh * stride + dh) * input_shape.w + ow * stride;
            for (std::size_t dw = 0; dw < window.w; ++dw) row[dw] += v;
          }
        }
      }
    }
  }
  return g;
}

Tensor global_avg_pool(const Tensor& input) {
  const Shape& s = input.shape();
  if (s.h * s.w == 0) throw DomainError("global_avg_pool: empty spatial extent");
  Tensor out({s.n, s.c, 1, 1});
  const std::size_t plane = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* x = input.plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += x[i];
      out.at(n, c, 0, 0) = acc / static_cast<double>(plane);
    }
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  require_same(Shape{input_shape.n, input_shape.c, 1, 1}, grad_out.shape(),
               "global_avg_pool_backward grad_out");
  Tensor g(input_shape);
  const std::size_t plane = input_shape.h * input_shape.w;
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const double v = grad_out.at(n, c, 0, 0) / static_cast<double>(plane);
      double* gx = g.plane(n, c);
      std::fill(gx, gx + plane, v);
    }
  }
  return g;
}

LinearParams LinearParams::zeros(std::size_t in_features, std::size_t out_features) {
  LinearParams p;
  p.in_features = in_features;
  p.out_features = out_features;
  p.weight.assign(in_features * out_features, 0.0);
  p.bias.assign(out_features, 0.0);
  return p;
}

void LinearParams::validate() const {
  if (in_features == 0 || out_features == 0) throw ShapeError("linear: zero feature count");
  if (weight.size() != in_features * out_features || bias.size() != out_features) {
    throw ShapeError("linear: weight/bias sizes disagree with feature counts");
  }
}

Tensor linear(const Tensor& input, const LinearParams& p) {
  p.validate();
  const Shape& s = input.shape();
  const std::size_t f = s.c * s.h * s.w;
  if (f != p.in_features) {
    throw ShapeError("linear: input has " + std::to_string(f) + " features, expected " +
                     std::to_string(p.in_features));
  }
  Tensor out({s.n, p.out_features, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* x = input.plane(n, 0);
    for (std::size_t o = 0; o < p.out_features; ++o) {
      const double* w = p.weight.data() + o * f;
      double acc = p.bias[o];
      for (std::size_t i = 0; i < f; ++i) acc += w[i] * x[i];
      out.at(n, o, 0, 0) = acc;
    }
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const LinearParams& p, const Tensor& grad_out) {
  p.validate();
  const Shape& s = input.shape();
  const std::size_t f = s.c * s.h * s.w;
  if (f != p.in_features) throw ShapeError("linear_backward: feature mismatch");
  require_same(Shape{s.n, p.out_features, 1, 1}, grad_out.shape(), "linear_backward grad_out");
  LinearGrads g{Tensor(s), std::vector<double>(p.weight.size(), 0.0),
                std::vector<double>(p.out_features, 0.0)};
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* x = input.plane(n, 0);
    double* gx = g.input.plane(n, 0);
    for (std::size_t o = 0; o < p.out_features; ++o) {
      const double go = grad_out.at(n, o, 0, 0);
      const double* w = p.weight.data() + o * f;
      double* gw = g.weight.data() + o * f;
      for (std::size_t i = 0; i < f; ++i) {
        gw[i] += go * x[i];
        gx[i] += go * w[i];
      }
      g.bias[o] += go;
    }
  }
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

Tensor softmax(const Tensor& logits) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax: expected (N, C, 1, 1), got " + s.str());
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::vector<double> row = softmax(std::span<const double>(logits.plane(n, 0), s.c));
    std::copy(row.begin(), row.end(), out.plane(n, 0));
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
  const Shape& s = input.shape();
  Tensor out({s.n, s.c, s.h * factor, s.w * factor});
  const std::size_t ow = s.w * factor;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* x = input.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t h = 0; h < s.h * factor; ++h) {
        for (std::size_t w = 0; w < ow; ++w) o[h * ow + w] = x[(h / factor) * s.w + w / factor];
      }
    }
  }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor) {
  if (factor == 0) throw ShapeError("upsample_nearest_backward: factor must be positive");
  const Shape& s = grad_out.shape();
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("upsample_nearest_backward: extents not divisible by factor");
  }
  Tensor g({s.n, s.c, s.h / factor, s.w / factor});
  const std::size_t gw = s.w / factor;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* go = grad_out.plane(n, c);
      double* gx = g.plane(n, c);
      for (std::size_t h = 0; h < s.h; ++h) {
        for (std::size_t w = 0; w < s.w; ++w) gx[(h / factor) * gw + w / factor] += go[h * s.w + w];
      }
    }
  }
  return g;
}

}  // namespace rdns
