#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rdns/nn_ops.hpp"
#include "rdns/rng.hpp"
#include "rdns/tensor.hpp"

namespace rdns {

/// A view of one block of layer state. Trainable parameters carry a gradient span of the
/// same length; buffers such as batch-norm running statistics have an empty `grad`.
struct StateRef {
  std::string name;
  Shape shape;
  std::span<double> value;
  std::span<double> grad;

  bool trainable() const { return !grad.empty(); }
};

/// One g_i of the feedforward composition. forward() caches whatever backward() needs, so a
/// backward call refers to the most recent forward.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns d loss / d input.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_state(const std::string& prefix, std::vector<StateRef>& out) {
    (void)prefix;
    (void)out;
  }
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Calls fn on this layer and, for containers, on every nested layer (pre-order).
  virtual void visit(const std::function<void(Layer&)>& fn) { fn(*this); }
};

class Conv2dLayer final : public Layer {
 public:
  explicit Conv2dLayer(ConvParams params);
  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dLayer>(*this); }

  ConvParams& params() { return params_; }
  const ConvParams& params() const { return params_; }
  /// He-normal weights (std sqrt(2 / fan_in)) and zero bias.
  void init_he(Rng& rng);

 private:
  ConvParams params_;
  Tensor grad_kernels_;
  std::vector<double> grad_bias_;
  Tensor input_;
};

class BatchNormLayer final : public Layer {
 public:
  explicit BatchNormLayer(BatchNormParams params);
  std::string kind() const override { return "batch_norm"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNormLayer>(*this); }

  BatchNormParams& params() { return params_; }

 private:
  BatchNormParams params_;
  std::vector<double> grad_gamma_;
  std::vector<double> grad_beta_;
  BatchNormCache cache_;
};

class ReluLayer final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReluLayer>(*this); }

 private:
  Tensor input_;
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(Window window, std::size_t stride, std::size_t padding);
  std::string kind() const override { return "max_pool2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }

 private:
  Window window_;
  std::size_t stride_;
  std::size_t padding_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class AvgPoolLayer final : public Layer {
 public:
  AvgPoolLayer(Window window, std::size_t stride);
  std::string kind() const override { return "avg_pool2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPoolLayer>(*this); }

 private:
  Window window_;
  std::size_t stride_;
  Shape input_shape_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAvgPoolLayer>(*this);
  }

 private:
  Shape input_shape_;
};

class LinearLayer final : public Layer {
 public:
  explicit LinearLayer(LinearParams params);
  std::string kind() const override { return "linear"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LinearLayer>(*this); }

  LinearParams& params() { return params_; }
  void init_he(Rng& rng);

 private:
  LinearParams params_;
  std::vector<double> grad_weight_;
  std::vector<double> grad_bias_;
  Tensor input_;
};

class UpsampleNearestLayer final : public Layer {
 public:
  explicit UpsampleNearestLayer(std::size_t factor) : factor_(factor) {}
  std::string kind() const override { return "upsample_nearest"; }
  Shape output_shape(const Shape& in) const override {
    return {in.n, in.c, in.h * factor_, in.w * factor_};
  }
  Tensor forward(const Tensor& x, Mode) override { return upsample_nearest(x, factor_); }
  Tensor backward(const Tensor& grad_out) override {
    return upsample_nearest_backward(grad_out, factor_);
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<UpsampleNearestLayer>(*this);
  }

 private:
  std::size_t factor_;
};

/// Layers applied in order; backward runs them in reverse.
class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::string name, std::unique_ptr<Layer> layer);
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }
  const Layer& at(std::size_t i) const { return *layers_[i]; }
  const std::string& name_at(std::size_t i) const { return names_[i]; }

  std::string kind() const override { return "sequential"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }
  void visit(const std::function<void(Layer&)>& fn) override;

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Replaces the batch-norm running statistics under `root` with the cumulative average of
/// the per-batch statistics seen over `batches` train-mode forwards of `run` (index 0 to
/// batches - 1). Parameters are untouched; momenta are restored afterwards.
void recalibrate_batch_norm(Layer& root, std::size_t batches,
                            const std::function<void(std::size_t)>& run);

/// Sets every gradient span in `state` to zero.
void zero_grad(std::span<const StateRef> state);

/// Number of trainable scalars.
std::size_t count_parameters(std::span<const StateRef> state);

}  // namespace rdns
