#include "tumorkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <spdlog/spdlog.h>

#include "tumorkit/error.hpp"
#include "tumorkit/nn/optimizer.hpp"
#include "tumorkit/preprocess.hpp"

namespace tumorkit {
namespace {

struct Sample {
  Image image;  // preprocessed, single channel
  int label = -1;
  std::optional<BinaryMask> mask;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined seeds
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Sample> prepare_labeled(std::span<const ScanRecord> records, int resolution) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw DataError("record '" + r.id + "' has no label");
    out.push_back({prepare_model_input(r.image, resolution), class_index(*r.label), std::nullopt});
  }
  return out;
}

std::vector<Sample> prepare_masked(std::span<const ScanRecord> records, int size) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.mask) throw DataError("record '" + r.id + "' has no mask");
    out.push_back({prepare_model_input(r.image, size), -1, resize_mask(*r.mask, size)});
  }
  return out;
}

// Copies the batch into [B, 1, S, S] (and the masks into a matching target),
// augmenting each sample with its own draw.
void fill_batch(std::span<const Sample> samples, std::span<const std::size_t> idx, int size,
                const AugmentConfig& aug, Rng* aug_rng, nn::Tensor& images, nn::Tensor* masks,
                std::vector<int>& labels) {
  const auto b = static_cast<int>(idx.size());
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  images = nn::Tensor({b, 1, size, size});
  if (masks) *masks = nn::Tensor({b, 1, size, size});
  labels.assign(idx.size(), -1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Sample& s = samples[idx[i]];
    labels[i] = s.label;
    const Image* img = &s.image;
    const BinaryMask* mask = s.mask ? &*s.mask : nullptr;
    std::pair<Image, std::optional<BinaryMask>> augmented;
    if (aug_rng) {
      const AugmentDraw draw = draw_augment(aug, *aug_rng);
      augmented = apply_augment(s.image, s.mask, draw);
      img = &augmented.first;
      mask = augmented.second ? &*augmented.second : nullptr;
    }
    std::copy(img->data.begin(), img->data.end(), images.data() + i * plane);
    if (masks && mask) std::copy(mask->data.begin(), mask->data.end(), masks->data() + i * plane);
  }
}

struct EvalResult {
  double loss = 0.0;
  double metric = 0.0;
};

double batch_dice_sum(const nn::Tensor& probs, const nn::Tensor& target, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  double total = 0.0;
  for (int i = 0; i < probs.dim(0); ++i) {
    SegMask p(size, size), t(size, size);
    for (std::size_t j = 0; j < plane; ++j) {
      p.data[j] = probs[i * plane + j] >= 0.5f ? 1 : 0;
      t.data[j] = target[i * plane + j] >= 0.5f ? 1 : 0;
    }
    total += dice(p, t);
  }
  return total;
}

std::size_t argmax_row(const nn::Tensor& logits, int row) {
  const float* r = logits.data() + static_cast<std::size_t>(row) * logits.dim(1);
  std::size_t best = 0;
  for (int j = 1; j < logits.dim(1); ++j) {
    if (r[j] > r[best]) best = static_cast<std::size_t>(j);
  }
  return best;
}

EvalResult eval_classifier_samples(ClassifierModel& model, std::span<const Sample> samples, int batch) {
  EvalResult res;
  const int r = model.input_resolution();
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(batch), order.size() - start);
    const std::span<const std::size_t> idx(order.data() + start, count);
    nn::Tensor images;
    std::vector<int> labels;
    fill_batch(samples, idx, r, {}, nullptr, images, nullptr, labels);
    nn::Tape tape(false);
    const nn::Var logits = model.forward(tape, tape.input(std::move(images)));
    const nn::Var loss = nn::softmax_cross_entropy(tape, logits, labels);
    res.loss += tape.value(loss)[0] * static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      correct += argmax_row(tape.value(logits), static_cast<int>(i)) == static_cast<std::size_t>(labels[i]) ? 1 : 0;
    }
  }
  res.loss /= static_cast<double>(samples.size());
  res.metric = static_cast<double>(correct) / static_cast<double>(samples.size());
  return res;
}

EvalResult eval_segmenter_samples(SegModel& model, std::span<const Sample> samples, int batch) {
  EvalResult res;
  const int s = model.config().input_size;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(batch), order.size() - start);
    const std::span<const std::size_t> idx(order.data() + start, count);
    nn::Tensor images, masks;
    std::vector<int> labels;
    fill_batch(samples, idx, s, {}, nullptr, images, &masks, labels);
    nn::Tape tape(false);
    const nn::Var probs = nn::sigmoid(tape, model.forward_logits(tape, tape.input(std::move(images))));
    const nn::Var loss = nn::soft_dice_loss(tape, probs, masks, kSoftDiceSmooth);
    res.loss += tape.value(loss)[0] * static_cast<double>(count);
    res.metric += batch_dice_sum(tape.value(probs), masks, s);
  }
  res.loss /= static_cast<double>(samples.size());
  res.metric /= static_cast<double>(samples.size());
  return res;
}

// Shared epoch loop. `step` runs one optimization step on a batch and
// returns (loss, metric sum over the batch); `eval` scores validation samples.
template <typename Model, typename Step, typename Eval>
TrainHistory run_training(Model& model, std::span<const Sample> train, std::span<const Sample> val,
                          const TrainConfig& config, Step&& step, Eval&& eval) {
  TrainHistory history;
  if (config.epochs == 0 || train.empty()) return history;

  Rng shuffle_rng(config.seed);
  Rng aug_rng(mix_seed(config.seed, config.augment.seed));
  nn::Adam optimizer(static_cast<float>(config.learning_rate));
  model.params().zero_grad();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const bool early_stop = config.early_stop_patience.has_value() && !val.empty();
  std::optional<nn::ParameterSet> best_params;
  double best_metric = -1.0;
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0, metric_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      const auto [loss, metric] = step(idx, aug_rng, optimizer);
      loss_sum += loss * static_cast<double>(count);
      metric_sum += metric;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_metric = metric_sum / static_cast<double>(train.size());
    if (!val.empty()) {
      const EvalResult v = eval(val);
      rec.val_loss = v.loss;
      rec.val_metric = v.metric;
    }
    history.epochs.push_back(rec);
    spdlog::debug("epoch {} train_loss={:.5f} train_metric={:.4f}", epoch, rec.train_loss, rec.train_metric);

    if (early_stop) {
      if (*rec.val_metric > best_metric) {
        best_metric = *rec.val_metric;
        best_params = model.params();
        history.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= *config.early_stop_patience) {
        history.stopped_early = true;
        break;
      }
    } else {
      history.best_epoch = epoch;
    }
  }
  if (early_stop && best_params) model.params() = std::move(*best_params);
  model.params().zero_grad();
  return history;
}

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (early_stop_patience && *early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  augment.validate();
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,train_metric,val_loss,val_metric\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + format_optional(e.train_loss) + "," +
           format_optional(e.train_metric) + "," + format_optional(e.val_loss) + "," +
           format_optional(e.val_metric) + "\n";
  }
  return out;
}

double MetricsReport::primary_metric() const {
  if (accuracy) return *accuracy;
  if (mean_dice) return *mean_dice;
  throw ArgumentError("report '" + split + "' carries no metric");
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = split;
  if (accuracy) j["accuracy"] = *accuracy;
  if (mean_dice) j["mean_dice"] = *mean_dice;
  if (confusion) {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : *confusion) rows.push_back(row);
    j["confusion"] = rows;
  }
  j["n_samples"] = n_samples;
  j["config_digest"] = config_digest;
  return j;
}

std::string MetricsReport::to_json_string() const { return to_json().dump(2); }

ClassifierTraining train_classifier(ClassifierModel model, const DatasetSplit& split,
                                    const RecordStore& data, const TrainConfig& config) {
  config.validate();
  const int r = model.input_resolution();
  for (const auto& id : split.train) {
    if (!data.at(id).label) throw DataError("train record '" + id + "' has no label");
  }
  const auto train = prepare_labeled(data.gather(split.train), r);
  const auto val = prepare_labeled(data.gather(split.val), r);

  auto step = [&](std::span<const std::size_t> idx, Rng& aug_rng, nn::Adam& opt) {
    nn::Tensor images;
    std::vector<int> labels;
    fill_batch(train, idx, r, config.augment, &aug_rng, images, nullptr, labels);
    nn::Tape tape;
    const nn::Var logits = model.forward(tape, tape.input(std::move(images)));
    const nn::Var loss = nn::softmax_cross_entropy(tape, logits, labels);
    tape.backward(loss);
    opt.step(model.params());
    double correct = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      correct += argmax_row(tape.value(logits), static_cast<int>(i)) == static_cast<std::size_t>(labels[i]) ? 1.0 : 0.0;
    }
    return std::pair<double, double>{tape.value(loss)[0], correct};
  };
  auto eval = [&](std::span<const Sample> v) { return eval_classifier_samples(model, v, config.batch_size); };
  TrainHistory history = run_training(model, train, val, config, step, eval);
  return {std::move(model), std::move(history)};
}

MetricsReport evaluate_classifier(const ClassifierModel& model, std::span<const ScanRecord> records,
                                  std::string split_name) {
  if (records.empty()) throw ArgumentError("cannot evaluate on an empty record set");
  MetricsReport report;
  report.split = std::move(split_name);
  ConfusionMatrix confusion{};
  std::size_t correct = 0;
  const int r = model.input_resolution();
  for (const auto& rec : records) {
    if (!rec.label) throw DataError("record '" + rec.id + "' has no label");
    const auto [predicted, confidence] = predict_class(classify(model, prepare_model_input(rec.image, r)));
    const int t = class_index(*rec.label);
    const int p = class_index(predicted);
    ++confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    correct += t == p ? 1 : 0;
  }
  report.n_samples = records.size();
  report.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  report.confusion = confusion;
  return report;
}

SegmenterTraining train_segmenter(SegModel model, std::span<const ScanRecord> records,
                                  const TrainConfig& config, std::span<const ScanRecord> val_records) {
  config.validate();
  const int s = model.config().input_size;
  const auto train = prepare_masked(records, s);
  const auto val = prepare_masked(val_records, s);

  auto step = [&](std::span<const std::size_t> idx, Rng& aug_rng, nn::Adam& opt) {
    nn::Tensor images, masks;
    std::vector<int> labels;
    fill_batch(train, idx, s, config.augment, &aug_rng, images, &masks, labels);
    nn::Tape tape;
    const nn::Var probs = nn::sigmoid(tape, model.forward_logits(tape, tape.input(std::move(images))));
    const nn::Var loss = nn::soft_dice_loss(tape, probs, masks, kSoftDiceSmooth);
    tape.backward(loss);
    opt.step(model.params());
    return std::pair<double, double>{tape.value(loss)[0], batch_dice_sum(tape.value(probs), masks, s)};
  };
  auto eval = [&](std::span<const Sample> v) { return eval_segmenter_samples(model, v, config.batch_size); };
  TrainHistory history = run_training(model, train, val, config, step, eval);
  return {std::move(model), std::move(history)};
}

MetricsReport evaluate_segmenter(const SegModel& model, std::span<const ScanRecord> records,
                                 std::string split_name) {
  if (records.empty()) throw ArgumentError("cannot evaluate on an empty record set");
  const int s = model.config().input_size;
  double total = 0.0;
  for (const auto& rec : records) {
    if (!rec.mask) throw DataError("record '" + rec.id + "' has no mask");
    const SegMask pred = threshold_mask(segment(model, prepare_model_input(rec.image, s)));
    total += dice(pred, resize_mask(*rec.mask, s));
  }
  MetricsReport report;
  report.split = std::move(split_name);
  report.n_samples = records.size();
  report.mean_dice = total / static_cast<double>(records.size());
  return report;
}

std::size_t select_best_index(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ArgumentError("select_best needs at least one candidate");
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].primary_metric() > reports[best].primary_metric()) best = i;
  }
  return best;
}

}  // namespace tumorkit
