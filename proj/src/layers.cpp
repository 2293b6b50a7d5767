#include "rdns/layers.hpp"

#include <algorithm>
#include <cmath>

#include "rdns/errors.hpp"

namespace rdns {

Conv2dLayer::Conv2dLayer(ConvParams params)
    : params_(std::move(params)),
      grad_kernels_(params_.kernels.shape()),
      grad_bias_(params_.bias.size(), 0.0) {
  params_.validate();
}

Shape Conv2dLayer::output_shape(const Shape& in) const { return conv2d_output_shape(in, params_); }

Tensor Conv2dLayer::forward(const Tensor& x, Mode) {
  input_ = x;
  return conv2d(x, params_);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out) {
  ConvGrads g = conv2d_backward(input_, params_, grad_out);
  grad_kernels_ += g.kernels;
  for (std::size_t k = 0; k < grad_bias_.size(); ++k) grad_bias_[k] += g.bias[k];
  return std::move(g.input);
}

void Conv2dLayer::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  out.push_back({prefix + ".weight", params_.kernels.shape(), params_.kernels.data(),
                 grad_kernels_.data()});
  out.push_back({prefix + ".bias", Shape{1, params_.bias.size(), 1, 1}, params_.bias, grad_bias_});
}

void Conv2dLayer::init_he(Rng& rng) {
  const Shape& k = params_.kernels.shape();
  const double stddev = std::sqrt(2.0 / static_cast<double>(k.c * k.h * k.w));
  for (double& v : params_.kernels.data()) v = rng.normal(0.0, stddev);
  std::fill(params_.bias.begin(), params_.bias.end(), 0.0);
}

BatchNormLayer::BatchNormLayer(BatchNormParams params)
    : params_(std::move(params)),
      grad_gamma_(params_.channels(), 0.0),
      grad_beta_(params_.channels(), 0.0) {
  params_.validate();
}

Shape BatchNormLayer::output_shape(const Shape& in) const {
  if (in.c != params_.channels()) {
    throw ShapeError("batch_norm expects " + std::to_string(params_.channels()) +
                     " channels, got " + std::to_string(in.c));
  }
  return in;
}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
  return batch_norm(x, params_, mode, &cache_);
}

Tensor BatchNormLayer::backward(const Tensor& grad_out) {
  BatchNormGrads g = batch_norm_backward(grad_out, params_, cache_);
  for (std::size_t c = 0; c < grad_gamma_.size(); ++c) {
    grad_gamma_[c] += g.gamma[c];
    grad_beta_[c] += g.beta[c];
  }
  return std::move(g.input);
}

void BatchNormLayer::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  const Shape vec{1, params_.channels(), 1, 1};
  out.push_back({prefix + ".gamma", vec, params_.gamma, grad_gamma_});
  out.push_back({prefix + ".beta", vec, params_.beta, grad_beta_});
  out.push_back({prefix + ".running_mean", vec, params_.running_mean, {}});
  out.push_back({prefix + ".running_var", vec, params_.running_var, {}});
}

Tensor ReluLayer::forward(const Tensor& x, Mode) {
  input_ = x;
  return relu(x);
}

Tensor ReluLayer::backward(const Tensor& grad_out) { return relu_backward(input_, grad_out); }

MaxPoolLayer::MaxPoolLayer(Window window, std::size_t stride, std::size_t padding)
    : window_(window), stride_(stride), padding_(padding) {}

Shape MaxPoolLayer::output_shape(const Shape& in) const {
  return {in.n, in.c, sliding_extent(in.h, window_.h, stride_, padding_),
          sliding_extent(in.w, window_.w, stride_, padding_)};
}

Tensor MaxPoolLayer::forward(const Tensor& x, Mode) {
  MaxPoolResult r = max_pool2d(x, window_, stride_, padding_);
  input_shape_ = x.shape();
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

Tensor MaxPoolLayer::backward(const Tensor& grad_out) {
  return max_pool2d_backward(input_shape_, argmax_, grad_out);
}

AvgPoolLayer::AvgPoolLayer(Window window, std::size_t stride) : window_(window), stride_(stride) {}

Shape AvgPoolLayer::output_shape(const Shape& in) const {
  return {in.n, in.c, sliding_extent(in.h, window_.h, stride_, 0),
          sliding_extent(in.w, window_.w, stride_, 0)};
}

Tensor AvgPoolLayer::forward(const Tensor& x, Mode) {
  input_shape_ = x.shape();
  return avg_pool2d(x, window_, stride_);
}

Tensor AvgPoolLayer::backward(const Tensor& grad_out) {
  return avg_pool2d_backward(input_shape_, window_, stride_, grad_out);
}

Shape GlobalAvgPoolLayer::output_shape(const Shape& in) const {
  if (in.h * in.w == 0) throw ShapeError("global_avg_pool on empty spatial extent");
  return {in.n, in.c, 1, 1};
}

Tensor GlobalAvgPoolLayer::forward(const Tensor& x, Mode) {
  input_shape_ = x.shape();
  return global_avg_pool(x);
}

Tensor GlobalAvgPoolLayer::backward(const Tensor& grad_out) {
  return global_avg_pool_backward(input_shape_, grad_out);
}

LinearLayer::LinearLayer(LinearParams params)
    : params_(std::move(params)),
      grad_weight_(params_.weight.size(), 0.0),
      grad_bias_(params_.bias.size(), 0.0) {
  params_.validate();
}

Shape LinearLayer::output_shape(const Shape& in) const {
  if (in.c * in.h * in.w != params_.in_features) {
    throw ShapeError("linear expects " + std::to_string(params_.in_features) +
                     " features, got " + in.str());
  }
  return {in.n, params_.out_features, 1, 1};
}

Tensor LinearLayer::forward(const Tensor& x, Mode) {
  input_ = x;
  return linear(x, params_);
}

Tensor LinearLayer::backward(const Tensor& grad_out) {
  LinearGrads g = linear_backward(input_, params_, grad_out);
  for (std::size_t i = 0; i < grad_weight_.size(); ++i) grad_weight_[i] += g.weight[i];
  for (std::size_t i = 0; i < grad_bias_.size(); ++i) grad_bias_[i] += g.bias[i];
  return std::move(g.input);
}

void LinearLayer::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  out.push_back({prefix + ".weight", Shape{params_.out_features, params_.in_features, 1, 1},
                 params_.weight, grad_weight_});
  out.push_back({prefix + ".bias", Shape{1, params_.out_features, 1, 1}, params_.bias, grad_bias_});
}

void LinearLayer::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(params_.in_features));
  for (double& v : params_.weight) v = rng.normal(0.0, stddev);
  std::fill(params_.bias.begin(), params_.bias.end(), 0.0);
}

Sequential::Sequential(const Sequential& other) : names_(other.names_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
}

Shape Sequential::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_state(prefix.empty() ? names_[i] : prefix + "." + names_[i], out);
  }
}

void Sequential::visit(const std::function<void(Layer&)>& fn) {
  fn(*this);
  for (auto& l : layers_) l->visit(fn);
}

void recalibrate_batch_norm(Layer& root, std::size_t batches,
                            const std::function<void(std::size_t)>& run) {
  std::vector<BatchNormParams*> bns;
  root.visit([&](Layer& l) {
    if (auto* bn = dynamic_cast<BatchNormLayer*>(&l)) bns.push_back(&bn->params());
  });
  std::vector<double> saved;
  for (BatchNormParams* p : bns) saved.push_back(p->momentum);
  // Weight k / (k + 1) on the old value turns the running update into a plain mean.
  for (std::size_t k = 0; k < batches; ++k) {
    for (BatchNormParams* p : bns) p->momentum = static_cast<double>(k) / static_cast<double>(k + 1);
    run(k);
  }
  for (std::size_t i = 0; i < bns.size(); ++i) bns[i]->momentum = saved[i];
}

void zero_grad(std::span<const StateRef> state) {
  for (const StateRef& s : state) std::fill(s.grad.begin(), s.grad.end(), 0.0);
}

std::size_t count_parameters(std::span<const StateRef> state) {
  std::size_t n = 0;
  for (const StateRef& s : state) {
    if (s.trainable()) n += s.value.size();
  }
  return n;
}

}  // namespace rdns
