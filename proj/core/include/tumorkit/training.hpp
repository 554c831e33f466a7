#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tumorkit/augment.hpp"
#include "tumorkit/classifier.hpp"
#include "tumorkit/dataset.hpp"
#include "tumorkit/segmentation.hpp"

namespace tumorkit {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  std::optional<int> early_stop_patience;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_metric = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_metric;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  // Epoch whose parameters were kept; -1 when training ran zero epochs.
  int best_epoch = -1;
  bool stopped_early = false;

  std::string to_csv() const;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

using ConfusionMatrix = std::array<std::array<std::int64_t, kNumClasses>, kNumClasses>;

struct MetricsReport {
  std::string split;
  std::optional<double> accuracy;
  std::optional<double> mean_dice;
  // confusion[i][j]: true class i predicted as j.
  std::optional<ConfusionMatrix> confusion;
  std::size_t n_samples = 0;
  std::string config_digest;

  // Validation metric used for model selection.
  double primary_metric() const;
  nlohmann::ordered_json to_json() const;
  std::string to_json_string() const;
};

struct ClassifierTraining {
  ClassifierModel model;
  TrainHistory history;
};

struct SegmenterTraining {
  SegModel model;
  TrainHistory history;
};

// Mini-batch Adam on cross-entropy with seeded shuffling and per-sample
// augmentation. Pure function of (model, split, data, config). Throws
// DataError naming the first unlabeled train record.
ClassifierTraining train_classifier(ClassifierModel model, const DatasetSplit& split,
                                    const RecordStore& data, const TrainConfig& config);

MetricsReport evaluate_classifier(const ClassifierModel& model, std::span<const ScanRecord> records,
                                  std::string split_name = "eval");

// Minimizes 1 - soft Dice. Validation records are optional and drive early
// stopping the same way as for classifiers.
SegmenterTraining train_segmenter(SegModel model, std::span<const ScanRecord> records,
                                  const TrainConfig& config,
                                  std::span<const ScanRecord> val_records = {});

// Mean over records of dice(threshold_mask(segment(image)), truth).
MetricsReport evaluate_segmenter(const SegModel& model, std::span<const ScanRecord> records,
                                 std::string split_name = "eval");

// Index of the highest primary metric; earliest wins ties. Throws on empty input.
std::size_t select_best_index(std::span<const MetricsReport> reports);

template <typename Model>
struct Candidate {
  Model model;
  MetricsReport report;
};

template <typename Model>
const Model& select_best(std::span<const Candidate<Model>> candidates) {
  std::vector<MetricsReport> reports;
  reports.reserve(candidates.size());
  for (const auto& c : candidates) reports.push_back(c.report);
  return candidates[select_best_index(reports)].model;
}

// Smoothing term of the soft Dice training loss.
inline constexpr float kSoftDiceSmooth = 1.0f;

}  // namespace tumorkit
