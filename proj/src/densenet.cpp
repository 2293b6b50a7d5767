#include "rdns/densenet.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "rdns/errors.hpp"

namespace rdns {

DenseNetConfig DenseNetConfig::densenet121() { return {}; }

DenseNetConfig DenseNetConfig::densenet169() {
  DenseNetConfig c;
  c.block_layers = {6, 12, 32, 32};
  return c;
}

DenseNetConfig DenseNetConfig::densenet201() {
  DenseNetConfig c;
  c.block_layers = {6, 12, 48, 32};
  return c;
}

DenseNetConfig DenseNetConfig::densenet264() {
  DenseNetConfig c;
  c.block_layers = {6, 12, 64, 48};
  return c;
}

DenseNetConfig DenseNetConfig::micro() {
  DenseNetConfig c;
  c.growth_rate = 8;
  c.block_layers = {2, 2};
  c.num_classes = 2;
  c.input_h = 64;
  c.input_w = 64;
  c.in_channels = 1;
  return c;
}

void DenseNetConfig::validate() const {
  if (growth_rate == 0) throw ConfigError("growth_rate must be positive");
  if (block_layers.empty()) throw ConfigError("block_layers must be nonempty");
  for (std::size_t l : block_layers) {
    if (l == 0) throw ConfigError("every block needs at least one layer");
  }
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in (0, 1]");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (input_h == 0 || input_w == 0) throw ConfigError("input size must be positive");
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (bottleneck_width == 0) throw ConfigError("bottleneck_width must be positive");
}

nlohmann::json DenseNetConfig::to_json() const {
  return nlohmann::json{{"growth_rate", growth_rate},   {"block_layers", block_layers},
                        {"theta", theta},               {"init_channels", stem_channels()},
                        {"num_classes", num_classes},   {"input_h", input_h},
                        {"input_w", input_w},           {"in_channels", in_channels},
                        {"bottleneck_width", bottleneck_width}, {"seed", seed}};
}

DenseNetConfig DenseNetConfig::from_json(const nlohmann::json& j) {
  try {
    DenseNetConfig c;
    c.growth_rate = j.at("growth_rate").get<std::size_t>();
    c.block_layers = j.at("block_layers").get<std::vector<std::size_t>>();
    c.theta = j.at("theta").get<double>();
    c.init_channels = j.at("init_channels").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.input_h = j.at("input_h").get<std::size_t>();
    c.input_w = j.at("input_w").get<std::size_t>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.bottleneck_width = j.at("bottleneck_width").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("densenet config: ") + e.what());
  }
}

namespace {

std::unique_ptr<Conv2dLayer> make_conv(std::size_t out, std::size_t in, std::size_t kernel,
                                       std::size_t stride, std::size_t pad) {
  return std::make_unique<Conv2dLayer>(ConvParams::zeros(out, in, kernel, kernel, stride, pad));
}

std::unique_ptr<BatchNormLayer> make_bn(std::size_t channels) {
  return std::make_unique<BatchNormLayer>(BatchNormParams::identity(channels));
}

}  // namespace

DenseLayer::DenseLayer(std::size_t in_channels, std::size_t growth_rate,
                       std::size_t bottleneck_width)
    : in_channels_(in_channels), growth_rate_(growth_rate) {
  if (in_channels == 0 || growth_rate == 0 || bottleneck_width == 0) {
    throw ConfigError("dense layer widths must be positive");
  }
  const std::size_t mid = bottleneck_width * growth_rate;
  body_.add("bn1", make_bn(in_channels));
  body_.add("relu1", std::make_unique<ReluLayer>());
  body_.add("conv1", make_conv(mid, in_channels, 1, 1, 0));
  body_.add("bn2", make_bn(mid));
  body_.add("relu2", std::make_unique<ReluLayer>());
  body_.add("conv2", make_conv(growth_rate, mid, 3, 1, 1));
}

void DenseLayer::init(Rng& rng) {
  static_cast<Conv2dLayer&>(body_.at(2)).init_he(rng);
  static_cast<Conv2dLayer&>(body_.at(5)).init_he(rng);
}

Shape DenseLayer::output_shape(const Shape& in) const { return body_.output_shape(in); }

Tensor DenseLayer::forward(const Tensor& x, Mode mode) {
  if (x.shape().c != in_channels_) {
    throw ShapeError("dense layer expects " + std::to_string(in_channels_) + " channels, got " +
                     x.shape().str());
  }
  return body_.forward(x, mode);
}

Tensor DenseLayer::backward(const Tensor& grad_out) { return body_.backward(grad_out); }

void DenseLayer::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  body_.collect_state(prefix, out);
}

DenseBlock::DenseBlock(std::size_t in_channels, std::vector<DenseLayer> layers)
    : in_channels_(in_channels), layers_(std::move(layers)) {
  std::size_t c = in_channels_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].in_channels() != c) {
      throw ShapeError("dense layer " + std::to_string(i) + " expects " +
                       std::to_string(layers_[i].in_channels()) + " inputs but the block provides " +
                       std::to_string(c));
    }
    c += layers_[i].growth_rate();
  }
}

DenseBlock DenseBlock::make(std::size_t in_channels, std::size_t num_layers,
                            std::size_t growth_rate, std::size_t bottleneck_width, Rng& rng) {
  std::vector<DenseLayer> layers;
  layers.reserve(num_layers);
  for (std::size_t i = 0; i < num_layers; ++i) {
    layers.emplace_back(in_channels + i * growth_rate, growth_rate, bottleneck_width);
    layers.back().init(rng);
  }
  return DenseBlock(in_channels, std::move(layers));
}

std::size_t DenseBlock::out_channels() const {
  std::size_t c = in_channels_;
  for (const DenseLayer& l : layers_) c += l.growth_rate();
  return c;
}

Shape DenseBlock::output_shape(const Shape& in) const {
  if (in.c != in_channels_) {
    throw ShapeError("dense block expects " + std::to_string(in_channels_) + " channels, got " +
                     in.str());
  }
  Shape s = in;
  for (const DenseLayer& l : layers_) s.c += l.output_shape(s).c;
  return s;
}

Tensor DenseBlock::forward(const Tensor& x, Mode mode) {
  (void)output_shape(x.shape());
  layer_inputs_.clear();
  Tensor cur = x;
  for (DenseLayer& l : layers_) {
    layer_inputs_.push_back(cur);
    Tensor y = l.forward(cur, mode);
    const Tensor parts[2] = {std::move(cur), std::move(y)};
    cur = concat_channels(parts);
  }
  return cur;
}

Tensor DenseBlock::backward(const Tensor& grad_out) {
  // Walk layers in reverse: the trailing k-channel band belongs to layer i's output, the
  // rest is its input, which also receives layer i's input gradient.
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t head = g.shape().c - layers_[i].growth_rate();
    const std::size_t bands[2] = {head, layers_[i].growth_rate()};
    std::vector<Tensor> split = split_channels(g, bands);
    split[0] += layers_[i].backward(split[1]);
    g = std::move(split[0]);
  }
  return g;
}

void DenseBlock::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect_state(prefix + ".layer" + std::to_string(i), out);
  }
}

std::size_t transition_channels(std::size_t in_channels, double theta) {
  const double c = std::floor(theta * static_cast<double>(in_channels));
  if (!(c >= 1.0)) {
    throw ConfigError("transition compresses " + std::to_string(in_channels) +
                      " channels to zero with theta " + std::to_string(theta));
  }
  return static_cast<std::size_t>(c);
}

Transition::Transition(std::size_t in_channels, double theta)
    : out_channels_(transition_channels(in_channels, theta)) {
  body_.add("bn", make_bn(in_channels));
  body_.add("relu", std::make_unique<ReluLayer>());
  body_.add("conv", make_conv(out_channels_, in_channels, 1, 1, 0));
  body_.add("pool", std::make_unique<AvgPoolLayer>(Window{2, 2}, 2));
}

void Transition::init(Rng& rng) { static_cast<Conv2dLayer&>(body_.at(2)).init_he(rng); }

Shape Transition::output_shape(const Shape& in) const { return body_.output_shape(in); }
Tensor Transition::forward(const Tensor& x, Mode mode) { return body_.forward(x, mode); }
Tensor Transition::backward(const Tensor& grad_out) { return body_.backward(grad_out); }

void Transition::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
  body_.collect_state(prefix, out);
}

void append_stem(Sequential& seq, std::size_t in_channels, std::size_t out_channels, Rng& rng) {
  auto conv = make_conv(out_channels, in_channels, 7, 2, 3);
  conv->init_he(rng);
  seq.add("stem_conv", std::move(conv));
  seq.add("stem_bn", make_bn(out_channels));
  seq.add("stem_relu", std::make_unique<ReluLayer>());
  seq.add("stem_pool", std::make_unique<MaxPoolLayer>(Window{3, 3}, 2, 1));
}

DenseNet::DenseNet(DenseNetConfig config, Sequential layers)
    : config_(std::move(config)), layers_(std::move(layers)) {}

std::vector<TraceEntry> DenseNet::shape_trace(std::size_t n) const {
  std::vector<TraceEntry> trace;
  Shape s{n, config_.in_channels, config_.input_h, config_.input_w};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      s = layers_.at(i).output_shape(s);
    } catch (const ShapeError& e) {
      throw ConfigError("layer '" + layers_.name_at(i) + "' cannot accept input: " + e.what());
    }
    trace.push_back({layers_.name_at(i), s});
  }
  return trace;
}

Tensor DenseNet::forward(const Tensor& input, Mode mode) {
  const Shape& s = input.shape();
  if (s.c != config_.in_channels || s.h != config_.input_h || s.w != config_.input_w) {
    throw ShapeError("network expects (N, " + std::to_string(config_.in_channels) + ", " +
                     std::to_string(config_.input_h) + ", " + std::to_string(config_.input_w) +
                     ") input, got " + s.str());
  }
  return layers_.forward(input, mode);
}

Tensor DenseNet::backward(const Tensor& grad_logits) { return layers_.backward(grad_logits); }

std::vector<StateRef> DenseNet::state() {
  std::vector<StateRef> out;
  layers_.collect_state("", out);
  return out;
}

std::vector<StateRef> DenseNet::parameters() {
  std::vector<StateRef> out;
  for (StateRef& s : state()) {
    if (s.trainable()) out.push_back(std::move(s));
  }
  return out;
}

std::size_t DenseNet::parameter_count() { return count_parameters(state()); }

DenseNet build_densenet(const DenseNetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Sequential seq;
  const std::size_t k = cfg.growth_rate;
  std::size_t c = cfg.stem_channels();
  append_stem(seq, cfg.in_channels, c, rng);
  for (std::size_t b = 0; b < cfg.block_layers.size(); ++b) {
    const std::string idx = std::to_string(b + 1);
    auto block = std::make_unique<DenseBlock>(
        DenseBlock::make(c, cfg.block_layers[b], k, cfg.bottleneck_width, rng));
    c = block->out_channels();
    seq.add("block" + idx, std::move(block));
    if (b + 1 < cfg.block_layers.size()) {
      std::unique_ptr<Transition> t;
      try {
        t = std::make_unique<Transition>(c, cfg.theta);
      } catch (const ConfigError& e) {
        throw ConfigError("transition" + idx + ": " + e.what());
      }
      t->init(rng);
      c = t->out_channels();
      seq.add("transition" + idx, std::move(t));
    }
  }
  seq.add("final_bn", make_bn(c));
  seq.add("final_relu", std::make_unique<ReluLayer>());
  seq.add("global_pool", std::make_unique<GlobalAvgPoolLayer>());
  auto fc = std::make_unique<LinearLayer>(LinearParams::zeros(c, cfg.num_classes));
  fc->init_he(rng);
  seq.add("classifier", std::move(fc));

  DenseNet net(cfg, std::move(seq));
  (void)net.shape_trace();  // rejects inputs too small for the pooling cascade
  return net;
}

Tensor network_forward(DenseNet& net, const Tensor& input, Mode mode) {
  return net.forward(input, mode);
}

std::vector<StateRef> network_backward(DenseNet& net, const Tensor& grad_logits) {
  net.backward(grad_logits);
  return net.parameters();
}

}  // namespace rdns
