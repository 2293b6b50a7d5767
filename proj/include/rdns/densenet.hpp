#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdns/layers.hpp"
#include "rdns/rng.hpp"

namespace rdns {

/// One DenseNet variant: growth rate, per-block layer counts and transition compression.
struct DenseNetConfig {
  std::size_t growth_rate = 32;
  std::vector<std::size_t> block_layers{6, 12, 24, 16};
  double theta = 0.5;
  /// Stem output channels; 0 selects 2 * growth_rate.
  std::size_t init_channels = 0;
  std::size_t num_classes = 1000;
  std::size_t input_h = 224;
  std::size_t input_w = 224;
  std::size_t in_channels = 3;
  /// The 1x1 bottleneck conv emits bottleneck_width * growth_rate channels.
  std::size_t bottleneck_width = 4;
  std::uint64_t seed = 0;

  static DenseNetConfig densenet121();
  static DenseNetConfig densenet169();
  static DenseNetConfig densenet201();
  static DenseNetConfig densenet264();
  /// k = 8, blocks [2, 2], 64 x 64 single-channel input, two classes.
  static DenseNetConfig micro();

  std::size_t stem_channels() const { return init_channels == 0 ? 2 * growth_rate : init_channels; }
  void validate() const;

  nlohmann::json to_json() const;
  static DenseNetConfig from_json(const nlohmann::json& j);
};

/// BN-ReLU-Conv1x1 (to bottleneck_width * k) then BN-ReLU-Conv3x3 pad 1 (to k channels).
class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in_channels, std::size_t growth_rate, std::size_t bottleneck_width);

  std::size_t in_channels() const { return in_channels_; }
  std::size_t growth_rate() const { return growth_rate_; }
  void init(Rng& rng);

  std::string kind() const override { return "dense_layer"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }
  void visit(const std::function<void(Layer&)>& fn) override {
    fn(*this);
    body_.visit(fn);
  }

 private:
  std::size_t in_channels_;
  std::size_t growth_rate_;
  Sequential body_;
};

/// Layer i sees the channel concatenation of the block input and the outputs of layers
/// 0..i-1; the block emits the concatenation of the input and every layer output.
class DenseBlock final : public Layer {
 public:
  /// Throws ShapeError if layer i does not expect in_channels + i * k inputs.
  DenseBlock(std::size_t in_channels, std::vector<DenseLayer> layers);

  static DenseBlock make(std::size_t in_channels, std::size_t num_layers, std::size_t growth_rate,
                         std::size_t bottleneck_width, Rng& rng);

  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const;
  std::size_t num_layers() const { return layers_.size(); }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }
  /// Input seen by each layer during the most recent forward.
  const std::vector<Tensor>& last_layer_inputs() const { return layer_inputs_; }

  std::string kind() const override { return "dense_block"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseBlock>(*this); }
  void visit(const std::function<void(Layer&)>& fn) override {
    fn(*this);
    for (DenseLayer& l : layers_) l.visit(fn);
  }

 private:
  std::size_t in_channels_;
  std::vector<DenseLayer> layers_;
  std::vector<Tensor> layer_inputs_;
};

/// BN-ReLU-Conv1x1 to floor(theta * C) channels, then 2 x 2 average pool, stride 2.
class Transition final : public Layer {
 public:
  Transition(std::size_t in_channels, double theta);

  std::size_t out_channels() const { return out_channels_; }
  void init(Rng& rng);

  std::string kind() const override { return "transition"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Transition>(*this); }
  void visit(const std::function<void(Layer&)>& fn) override {
    fn(*this);
    body_.visit(fn);
  }

  Sequential& body() { return body_; }

 private:
  std::size_t out_channels_;
  Sequential body_;
};

/// Output channel count of a transition; throws ConfigError when it would be zero.
std::size_t transition_channels(std::size_t in_channels, double theta);

/// 7x7 stride-2 conv (pad 3), BN, ReLU, 3x3 stride-2 max pool (pad 1), appended to `seq`.
void append_stem(Sequential& seq, std::size_t in_channels, std::size_t out_channels, Rng& rng);

struct TraceEntry {
  std::string name;
  Shape shape;
};

/// A built network: the ordered top-level layers G(x) = g_N(...g_1(x)) plus the config that
/// produced them.
class DenseNet {
 public:
  DenseNet(DenseNetConfig config, Sequential layers);

  const DenseNetConfig& config() const { return config_; }
  Sequential& layers() { return layers_; }
  const Sequential& layers() const { return layers_; }

  /// Per-layer output shapes for a batch of n, computed from the config alone.
  std::vector<TraceEntry> shape_trace(std::size_t n = 1) const;

  Tensor forward(const Tensor& input, Mode mode);
  /// Back-propagates d loss / d logits, accumulating into the parameter gradients.
  Tensor backward(const Tensor& grad_logits);

  std::vector<StateRef> state();
  std::vector<StateRef> parameters();
  std::size_t parameter_count();

 private:
  DenseNetConfig config_;
  Sequential layers_;
};

/// Stem, dense blocks with transitions between them, final BN-ReLU, global average pool and a
/// fully connected classifier. Throws ConfigError naming the layer whose extent underflows.
DenseNet build_densenet(const DenseNetConfig& cfg);

Tensor network_forward(DenseNet& net, const Tensor& input, Mode mode);
/// Runs backward and returns the parameter state with its accumulated gradients.
std::vector<StateRef> network_backward(DenseNet& net, const Tensor& grad_logits);

}  // namespace rdns
