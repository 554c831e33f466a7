#include "tumorkit/segmentation.hpp"

#include <string>
#include <type_traits>
#include <vector>

#include "tumorkit/classifier.hpp"
#include "tumorkit/error.hpp"

namespace tumorkit {
namespace {

std::string level_name(const char* path, int level, const char* layer) {
  return std::string(path) + std::to_string(level) + "." + layer;
}

void add_conv(nn::ParameterSet& ps, Rng& rng, const std::string& name, int out_c, int in_c, int k) {
  auto& w = ps.add(name + ".weight", {out_c, in_c, k, k});
  nn::init_fan_in_uniform(w.value, in_c * k * k, rng);
  ps.add(name + ".bias", {out_c});
}

template <typename Bind>
nn::Var conv3(nn::Tape& t, nn::Var x, const Bind& bind, const std::string& name) {
  return nn::relu(t, nn::conv2d(t, x, bind(name + ".weight"), bind(name + ".bias"), 1, 1));
}

template <typename Bind>
nn::Var unet_forward(nn::Tape& t, nn::Var x, const UNetConfig& cfg, const Bind& bind,
                     std::optional<int> dropped_skip) {
  std::vector<nn::Var> skips;
  for (int l = 0; l < cfg.levels; ++l) {
    x = conv3(t, x, bind, level_name("down", l, "conv1"));
    x = conv3(t, x, bind, level_name("down", l, "conv2"));
    skips.push_back(x);
    x = nn::max_pool2(t, x);
  }
  x = conv3(t, x, bind, "bottleneck.conv1");
  x = conv3(t, x, bind, "bottleneck.conv2");
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const std::string up = level_name("up", l, "upsample");
    x = nn::conv_transpose2x2(t, x, bind(up + ".weight"), bind(up + ".bias"));
    nn::Var skip = skips[static_cast<std::size_t>(l)];
    if (dropped_skip && *dropped_skip == l) skip = t.input(nn::Tensor(t.value(skip).shape()));
    x = nn::concat_channels(t, x, skip);
    x = conv3(t, x, bind, level_name("up", l, "conv1"));
    x = conv3(t, x, bind, level_name("up", l, "conv2"));
  }
  const std::string head = SegModel::kHeadLayer;
  return nn::conv2d(t, x, bind(head + ".weight"), bind(head + ".bias"), 1, 0);
}

template <typename Params>
auto binder(nn::Tape& tape, Params& params) {
  return [&tape, &params](const std::string& name) {
    if constexpr (std::is_const_v<Params>) {
      return tape.input(params.get(name).value);
    } else {
      if (!tape.grad_enabled()) return tape.input(params.get(name).value);
      return tape.param(params.get(name));
    }
  };
}

void check_input(const nn::Tensor& x, int size) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != size || x.dim(3) != size) {
    throw ArgumentError("segmenter expects input [N, 1, " + std::to_string(size) + ", " +
                        std::to_string(size) + "], got " + nn::shape_string(x.shape()));
  }
}

}  // namespace

void UNetConfig::validate() const {
  if (levels < 1) throw ConfigError("U-Net needs at least one level");
  if (base_filters < 1) throw ConfigError("base_filters must be at least 1");
  if (levels >= 30 || input_size <= 0 || input_size % (1 << levels) != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(levels));
  }
}

SegModel SegModel::build(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  SegModel m;
  m.config_ = config;
  Rng rng(seed);
  int in_c = 1;
  for (int l = 0; l < config.levels; ++l) {
    const int c = config.base_filters << l;
    add_conv(m.params_, rng, level_name("down", l, "conv1"), c, in_c, 3);
    add_conv(m.params_, rng, level_name("down", l, "conv2"), c, c, 3);
    in_c = c;
  }
  const int bottom = config.base_filters << config.levels;
  add_conv(m.params_, rng, "bottleneck.conv1", bottom, in_c, 3);
  add_conv(m.params_, rng, "bottleneck.conv2", bottom, bottom, 3);
  in_c = bottom;
  for (int l = config.levels - 1; l >= 0; --l) {
    const int c = config.base_filters << l;
    auto& up = m.params_.add(level_name("up", l, "upsample.weight"), {in_c, c, 2, 2});
    nn::init_fan_in_uniform(up.value, in_c, rng);
    m.params_.add(level_name("up", l, "upsample.bias"), {c});
    add_conv(m.params_, rng, level_name("up", l, "conv1"), c, 2 * c, 3);
    add_conv(m.params_, rng, level_name("up", l, "conv2"), c, c, 3);
    in_c = c;
  }
  auto& head = m.params_.add(std::string(kHeadLayer) + ".weight", {1, in_c, 1, 1});
  nn::init_fan_in_uniform(head.value, in_c, rng, 0.5);
  m.params_.add(std::string(kHeadLayer) + ".bias", {1});
  return m;
}

nn::Var SegModel::forward_logits(nn::Tape& tape, nn::Var input, std::optional<int> dropped_skip) {
  check_input(tape.value(input), config_.input_size);
  return unet_forward(tape, input, config_, binder(tape, params_), dropped_skip);
}

ProbMap SegModel::predict(const Image& preprocessed, std::optional<int> dropped_skip) const {
  nn::Tensor x = image_to_tensor(preprocessed);
  check_input(x, config_.input_size);
  nn::Tape tape(false);
  const nn::Var in = tape.input(std::move(x));
  const nn::Var logits = unet_forward(tape, in, config_, binder(tape, params_), dropped_skip);
  const nn::Var prob = nn::sigmoid(tape, logits);
  const nn::Tensor& y = tape.value(prob);
  ProbMap map(config_.input_size, config_.input_size);
  std::copy(y.values().begin(), y.values().end(), map.data.begin());
  return map;
}

ProbMap segment(const SegModel& model, const Image& preprocessed) {
  const int s = model.config().input_size;
  if (preprocessed.height != s || preprocessed.width != s) {
    throw ArgumentError("segmenter expects " + std::to_string(s) + "x" + std::to_string(s) +
                        " input, got " + std::to_string(preprocessed.height) + "x" +
                        std::to_string(preprocessed.width));
  }
  return model.predict(preprocessed);
}

SegMask threshold_mask(const ProbMap& map, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ArgumentError("threshold tau must lie in (0, 1)");
  SegMask mask(map.height, map.width);
  for (std::size_t i = 0; i < map.data.size(); ++i) mask.data[i] = map.data[i] >= tau ? 1 : 0;
  return mask;
}

double dice(const SegMask& pred, const SegMask& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ArgumentError("dice: mask dimensions differ (" + std::to_string(pred.height) + "x" +
                        std::to_string(pred.width) + " vs " + std::to_string(truth.height) + "x" +
                        std::to_string(truth.width) + ")");
  }
  std::size_t inter = 0, sum = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool t = truth.data[i] != 0;
    inter += (p && t) ? 1 : 0;
    sum += (p ? 1 : 0) + (t ? 1 : 0);
  }
  return (2.0 * static_cast<double>(inter) + kDiceEps) / (static_cast<double>(sum) + kDiceEps);
}

}  // namespace tumorkit
