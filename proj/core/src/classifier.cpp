#include "tumorkit/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "tumorkit/error.hpp"

namespace tumorkit {
namespace {

constexpr int kStages = 4;
constexpr int kExpandRatio = 4;
constexpr int kHeadMultiplier = 8;

std::string block_name(const std::string& prefix, std::size_t i) { return prefix + std::to_string(i); }

void add_conv(nn::ParameterSet& ps, Rng& rng, const std::string& name, int out_c, int in_c, int k,
              double gain = 1.0) {
  auto& w = ps.add(name + ".weight", {out_c, in_c, k, k});
  nn::init_fan_in_uniform(w.value, in_c * k * k, rng, gain);
  ps.add(name + ".bias", {out_c});
}

void add_linear(nn::ParameterSet& ps, Rng& rng, const std::string& name, int out_f, int in_f,
                double gain = 1.0) {
  auto& w = ps.add(name + ".weight", {out_f, in_f});
  nn::init_fan_in_uniform(w.value, in_f, rng, gain);
  ps.add(name + ".bias", {out_f});
}

// Binds parameters onto a tape: as trainable leaves, or as plain inputs when
// the tape records no gradients.
template <typename Params>
struct Binder {
  nn::Tape& tape;
  Params& params;

  nn::Var operator()(const std::string& name) const {
    if constexpr (std::is_const_v<Params>) {
      return tape.input(params.get(name).value);
    } else {
      if (!tape.grad_enabled()) return tape.input(params.get(name).value);
      return tape.param(params.get(name));
    }
  }
};

template <typename Bind>
nn::Var conv(nn::Tape& t, nn::Var x, const Bind& bind, const std::string& name, int stride, int pad) {
  return nn::conv2d(t, x, bind(name + ".weight"), bind(name + ".bias"), stride, pad);
}

template <typename Bind>
nn::Var dense(nn::Tape& t, nn::Var x, const Bind& bind, const std::string& name) {
  return nn::linear(t, x, bind(name + ".weight"), bind(name + ".bias"));
}

template <typename Bind>
nn::Var cnn_forward(nn::Tape& t, nn::Var x, const CnnConfig& cfg, const Bind& bind) {
  for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
    const auto& block = cfg.conv_blocks[i];
    x = nn::relu(t, conv(t, x, bind, block_name("conv", i), 1, block.kernel / 2));
    if (block.pool) x = nn::max_pool2(t, x);
  }
  x = nn::flatten(t, x);
  x = nn::relu(t, dense(t, x, bind, "fc"));
  return dense(t, x, bind, ClassifierModel::kOutputLayer);
}

template <typename Bind>
nn::Var scaled_forward(nn::Tape& t, nn::Var x, const ScaledDims& dims, const Bind& bind) {
  x = nn::silu(t, conv(t, x, bind, "stem", 2, 1));
  const auto plan = scaled_block_plan(dims);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& b = plan[i];
    const std::string p = block_name("blocks.", i);
    nn::Var h = x;
    if (b.expand_ratio != 1) h = nn::silu(t, conv(t, h, bind, p + ".expand", 1, 0));
    h = nn::silu(t, nn::depthwise_conv2d(t, h, bind(p + ".dw.weight"), bind(p + ".dw.bias"), b.stride, 1));
    nn::Var s = nn::global_avg_pool(t, h);
    s = nn::silu(t, dense(t, s, bind, p + ".se_reduce"));
    s = nn::sigmoid(t, dense(t, s, bind, p + ".se_expand"));
    h = nn::scale_channels(t, h, s);
    h = conv(t, h, bind, p + ".project", 1, 0);
    if (b.stride == 1 && b.in_channels == b.out_channels) h = nn::add(t, h, x);
    x = h;
  }
  x = nn::silu(t, conv(t, x, bind, "head", 1, 0));
  x = nn::global_avg_pool(t, x);
  return dense(t, x, bind, ClassifierModel::kOutputLayer);
}

template <typename Bind>
nn::Var arch_forward(nn::Tape& t, nn::Var x, const ClassifierArch& arch, const Bind& bind) {
  if (const auto* cnn = std::get_if<CnnConfig>(&arch)) return cnn_forward(t, x, *cnn, bind);
  return scaled_forward(t, x, std::get<ScaledDims>(arch), bind);
}

void check_input(const nn::Tensor& x, int resolution) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != resolution || x.dim(3) != resolution) {
    throw ArgumentError("classifier expects input [N, 1, " + std::to_string(resolution) + ", " +
                        std::to_string(resolution) + "], got " + nn::shape_string(x.shape()));
  }
}

}  // namespace

void CnnConfig::validate() const {
  if (conv_blocks.empty()) throw ConfigError("baseline CNN needs at least one conv block");
  if (fc_width <= 0) throw ConfigError("fc_width must be positive");
  if (num_classes != kNumClasses) throw ConfigError("num_classes must be 4");
  if (input_size <= 0) throw ConfigError("input_size must be positive");
  int size = input_size;
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
    const auto& b = conv_blocks[i];
    if (b.filters <= 0 || b.kernel <= 0) {
      throw ConfigError("conv block " + std::to_string(i) + ": filters and kernel must be positive");
    }
    if (b.kernel % 2 == 0) {
      throw ConfigError("conv block " + std::to_string(i) + ": kernel must be odd");
    }
    if (b.pool) {
      size /= 2;
      if (size == 0) {
        throw ConfigError("conv block " + std::to_string(i) + ": pooling shrinks " +
                          std::to_string(input_size) + "px input to an empty feature map");
      }
    }
  }
}

FeatureDims cnn_feature_dims(const CnnConfig& config) {
  config.validate();
  int size = config.input_size;
  for (const auto& b : config.conv_blocks) {
    if (b.pool) size /= 2;
  }
  return {config.conv_blocks.back().filters, size, size};
}

void CompoundScaleConfig::validate() const {
  if (!(phi >= 0.0)) throw ConfigError("phi must be nonnegative");
  if (!(alpha > 1.0 && beta > 1.0 && gamma > 1.0)) {
    throw ConfigError("alpha, beta and gamma must each exceed 1");
  }
  const double f = flops_factor();
  if (f < 1.9 || f > 2.1) {
    throw ConfigError("alpha * beta^2 * gamma^2 = " + std::to_string(f) + " is outside [1.9, 2.1]");
  }
  if (base_depth <= 0 || base_width <= 0 || base_resolution < 16) {
    throw ConfigError("base depth/width must be positive and base resolution at least 16");
  }
}

ScaledDims compound_scale(const CompoundScaleConfig& c) {
  c.validate();
  ScaledDims d;
  d.depth = static_cast<int>(std::lround(c.base_depth * std::pow(c.alpha, c.phi)));
  d.width = static_cast<int>(std::lround(c.base_width * std::pow(c.beta, c.phi)));
  d.resolution = 16 * static_cast<int>(std::lround(c.base_resolution * std::pow(c.gamma, c.phi) / 16.0));
  return d;
}

std::vector<MbBlockSpec> scaled_block_plan(const ScaledDims& dims) {
  if (dims.depth <= 0 || dims.width <= 0 || dims.resolution <= 0) {
    throw ConfigError("scaled dims must be positive");
  }
  if (dims.resolution % 16 != 0) {
    throw ConfigError("scaled resolution " + std::to_string(dims.resolution) +
                      " is not a multiple of 16");
  }
  std::vector<MbBlockSpec> plan;
  const int base = dims.depth / kStages;
  const int extra = dims.depth % kStages;
  int channels = dims.width;
  for (int s = 0; s < kStages; ++s) {
    const int count = base + (s >= kStages - extra ? 1 : 0);
    const int out = dims.width << s;
    for (int i = 0; i < count; ++i) {
      MbBlockSpec b;
      b.in_channels = channels;
      b.out_channels = out;
      b.expand_ratio = s == 0 ? 1 : kExpandRatio;
      b.stride = (i == 0 && s > 0) ? 2 : 1;
      b.se_channels = std::max(1, channels / 4);
      plan.push_back(b);
      channels = out;
    }
  }
  return plan;
}

ClassifierModel ClassifierModel::baseline(const CnnConfig& config, std::uint64_t seed) {
  config.validate();
  ClassifierModel m;
  m.arch_ = config;
  Rng rng(seed);
  int in_c = 1;
  for (std::size_t i = 0; i < config.conv_blocks.size(); ++i) {
    const auto& b = config.conv_blocks[i];
    add_conv(m.params_, rng, block_name("conv", i), b.filters, in_c, b.kernel);
    in_c = b.filters;
  }
  const FeatureDims f = cnn_feature_dims(config);
  add_linear(m.params_, rng, "fc", config.fc_width, f.channels * f.height * f.width);
  add_linear(m.params_, rng, kOutputLayer, config.num_classes, config.fc_width, 0.5);
  return m;
}

ClassifierModel ClassifierModel::scaled(const ScaledDims& dims, std::uint64_t seed) {
  const auto plan = scaled_block_plan(dims);
  ClassifierModel m;
  m.arch_ = dims;
  Rng rng(seed);
  add_conv(m.params_, rng, "stem", dims.width, 1, 3);
  int last = dims.width;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& b = plan[i];
    const std::string p = block_name("blocks.", i);
    const int expanded = b.in_channels * b.expand_ratio;
    if (b.expand_ratio != 1) add_conv(m.params_, rng, p + ".expand", expanded, b.in_channels, 1);
    auto& dw = m.params_.add(p + ".dw.weight", {expanded, 1, 3, 3});
    nn::init_fan_in_uniform(dw.value, 9, rng);
    m.params_.add(p + ".dw.bias", {expanded});
    add_linear(m.params_, rng, p + ".se_reduce", b.se_channels, expanded);
    add_linear(m.params_, rng, p + ".se_expand", expanded, b.se_channels);
    add_conv(m.params_, rng, p + ".project", b.out_channels, expanded, 1, 0.5);
    last = b.out_channels;
  }
  const int head = kHeadMultiplier * dims.width;
  add_conv(m.params_, rng, "head", head, last, 1);
  add_linear(m.params_, rng, kOutputLayer, kNumClasses, head, 0.5);
  return m;
}

ClassifierModel ClassifierModel::from_arch(const ClassifierArch& arch, std::uint64_t seed) {
  if (const auto* cnn = std::get_if<CnnConfig>(&arch)) return baseline(*cnn, seed);
  return scaled(std::get<ScaledDims>(arch), seed);
}

std::string ClassifierModel::arch_name() const {
  return std::holds_alternative<CnnConfig>(arch_) ? "baseline_cnn" : "scaled";
}

int ClassifierModel::input_resolution() const {
  if (const auto* cnn = std::get_if<CnnConfig>(&arch_)) return cnn->input_size;
  return std::get<ScaledDims>(arch_).resolution;
}

nn::Var ClassifierModel::forward(nn::Tape& tape, nn::Var input) {
  check_input(tape.value(input), input_resolution());
  return arch_forward(tape, input, arch_, Binder<nn::ParameterSet>{tape, params_});
}

std::array<float, kNumClasses> ClassifierModel::logits(const Image& preprocessed) const {
  nn::Tensor x = image_to_tensor(preprocessed);
  check_input(x, input_resolution());
  nn::Tape tape(false);
  const nn::Var in = tape.input(std::move(x));
  const nn::Var out = arch_forward(tape, in, arch_, Binder<const nn::ParameterSet>{tape, params_});
  const nn::Tensor& y = tape.value(out);
  std::array<float, kNumClasses> result{};
  std::copy_n(y.data(), kNumClasses, result.begin());
  return result;
}

nn::Tensor image_to_tensor(const Image& image) {
  if (image.channels != 1) {
    throw ArgumentError("model input must be single-channel, got " + std::to_string(image.channels) +
                        " channels");
  }
  return nn::Tensor({1, 1, image.height, image.width}, image.data);
}

Probabilities softmax(std::span<const float> logits) {
  if (logits.size() != kNumClasses) throw ArgumentError("softmax expects 4 logits");
  const float mx = *std::max_element(logits.begin(), logits.end());
  Probabilities p;
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p.values[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p.values[i];
  }
  for (double& v : p.values) v /= z;
  return p;
}

Probabilities classify(const ClassifierModel& model, const Image& preprocessed) {
  const int r = model.input_resolution();
  if (preprocessed.height != r || preprocessed.width != r) {
    throw ArgumentError("classifier expects " + std::to_string(r) + "x" + std::to_string(r) +
                        " input, got " + std::to_string(preprocessed.height) + "x" +
                        std::to_string(preprocessed.width));
  }
  const auto l = model.logits(preprocessed);
  return softmax(l);
}

std::pair<TumorClass, double> predict_class(const Probabilities& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.values.size(); ++i) {
    if (p.values[i] > p.values[best]) best = i;
  }
  return {kClassOrder[best], p.values[best]};
}

}  // namespace tumorkit
