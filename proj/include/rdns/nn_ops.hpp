#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rdns/tensor.hpp"

namespace rdns {

enum class Mode { Train, Infer };

/// Convolution weights: kernels are (K out, D in, kh, kw); one bias per output kernel.
struct ConvParams {
  Tensor kernels;
  std::vector<double> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvParams zeros(std::size_t out_channels, std::size_t in_channels, std::size_t kh,
                          std::size_t kw, std::size_t stride = 1, std::size_t padding = 0);

  std::size_t out_channels() const { return kernels.shape().n; }
  std::size_t in_channels() const { return kernels.shape().c; }
  void validate() const;
};

struct ConvGrads {
  Tensor input;
  Tensor kernels;
  std::vector<double> bias;
};

/// Output extent of a sliding window: floor((in + 2 pad - window) / stride) + 1.
/// Throws ShapeError when the window does not fit.
std::size_t sliding_extent(std::size_t in, std::size_t window, std::size_t stride,
                           std::size_t padding);

Shape conv2d_output_shape(const Shape& in, const ConvParams& p);

/// Zero-padded cross-correlation plus bias.
Tensor conv2d(const Tensor& input, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  /// Weight kept on the old running statistic: r = momentum * r + (1 - momentum) * batch.
  double momentum = 0.9;

  /// gamma = 1, beta = 0, running mean 0, running variance 1.
  static BatchNormParams identity(std::size_t channels);

  std::size_t channels() const { return gamma.size(); }
  void validate() const;
};

/// Values retained by the forward pass for batch_norm_backward.
struct BatchNormCache {
  Mode mode = Mode::Infer;
  std::vector<double> inv_std;
  Tensor normalized;
};

struct BatchNormGrads {
  Tensor input;
  std::vector<double> gamma;
  std::vector<double> beta;
};

/// Train mode normalizes with batch statistics over (N, H, W) and updates the running
/// statistics; infer mode uses the running statistics and leaves `p` untouched.
Tensor batch_norm(const Tensor& input, BatchNormParams& p, Mode mode,
                  BatchNormCache* cache = nullptr);
BatchNormGrads batch_norm_backward(const Tensor& grad_out, const BatchNormParams& p,
                                   const BatchNormCache& cache);

Tensor relu(const Tensor& input);
/// Passes grad where input > 0; zero elsewhere (including exactly 0).
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct Window {
  std::size_t h = 1;
  std::size_t w = 1;
};

struct MaxPoolResult {
  Tensor output;
  /// Flat input offset of each output's maximum.
  std::vector<std::size_t> argmax;
};

/// Window maximum; padded cells never win. Ties go to the lowest flat input index.
MaxPoolResult max_pool2d(const Tensor& input, Window window, std::size_t stride,
                         std::size_t padding = 0);
Tensor max_pool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                           const Tensor& grad_out);

Tensor avg_pool2d(const Tensor& input, Window window, std::size_t stride);
Tensor avg_pool2d_backward(const Shape& input_shape, Window window, std::size_t stride,
                           const Tensor& grad_out);

/// Mean over H x W; output (N, C, 1, 1).
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

/// Fully connected layer; weight is row-major (out_features x in_features).
struct LinearParams {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static LinearParams zeros(std::size_t in_features, std::size_t out_features);
  void validate() const;
};

struct LinearGrads {
  Tensor input;
  std::vector<double> weight;
  std::vector<double> bias;
};

/// Input (N, C, H, W) is read as N rows of C*H*W features; output is (N, out, 1, 1).
Tensor linear(const Tensor& input, const LinearParams& p);
LinearGrads linear_backward(const Tensor& input, const LinearParams& p, const Tensor& grad_out);

/// Row-wise softmax over C of an (N, C, 1, 1) tensor, with max subtraction.
Tensor softmax(const Tensor& logits);
std::vector<double> softmax(std::span<const double> logits);

/// Numerically stable logistic function, elementwise.
double sigmoid(double x);
Tensor sigmoid(const Tensor& x);

/// Nearest-neighbour upsampling by an integer factor along H and W.
Tensor upsample_nearest(const Tensor& input, std::size_t factor);
Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor);

}  // namespace rdns
