#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tumorkit/classifier.hpp"
#include "tumorkit/segmentation.hpp"
#include "tumorkit/service/store.hpp"
#include "tumorkit/service/tumor_info.hpp"

namespace tumorkit::service {

// An error with an HTTP status and a stable machine-readable code.
struct ServiceError : std::runtime_error {
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

struct UploadResult {
  StoredScan scan;
  bool created = false;
};

using Clock = std::chrono::steady_clock;

// Request handlers independent of the transport. Models are immutable once
// installed; installing a new one swaps it atomically, and requests already
// running finish on the model they started with.
class InferenceService {
 public:
  InferenceService(std::shared_ptr<Store> store, TumorInfoCatalog tumor_info, bool auto_create_patient = false);

  void install_classifier(ClassifierModel model);
  void install_segmenter(SegModel model);
  bool has_classifier() const;
  bool has_segmenter() const;
  std::optional<std::string> classifier_digest() const;
  std::optional<std::string> segmenter_digest() const;

  // Body may carry "patient_id" and "display_name". 400 on bad input, 409 on
  // an existing id.
  PatientRecord create_patient(const nlohmann::json& body);

  // 422 for undecodable payloads, 404 for unknown patients unless
  // auto-creation is on.
  UploadResult upload(const std::string& patient_id, std::span<const std::uint8_t> payload);

  // latency_ms covers received -> just before return.
  ClassificationResult classify(const std::string& scan_id, Clock::time_point received = Clock::now());
  SegmentationResult segment(const std::string& scan_id, Clock::time_point received = Clock::now());

  StoredScan scan(const std::string& scan_id) const;
  std::vector<std::uint8_t> scan_image(const std::string& scan_id) const;
  std::vector<std::uint8_t> scan_mask(const std::string& scan_id) const;
  std::vector<StoredScan> history(const std::string& patient_id) const;
  nlohmann::ordered_json export_patient(const std::string& patient_id) const;
  TumorInfoEntry tumor_info(const std::string& class_name) const;

  Store& store() { return *store_; }

 private:
  struct Serving {
    std::shared_ptr<const ClassifierModel> classifier;
    std::string classifier_digest;
    std::shared_ptr<const SegModel> segmenter;
    std::string segmenter_digest;
  };
  Serving serving() const;
  PatientRecord require_patient(const std::string& patient_id) const;

  std::shared_ptr<Store> store_;
  TumorInfoCatalog tumor_info_;
  bool auto_create_patient_;
  mutable std::mutex model_mu_;
  Serving serving_;
};

nlohmann::ordered_json to_json(const PatientRecord& p);
nlohmann::ordered_json to_json(const ClassificationResult& r);
nlohmann::ordered_json to_json(const SegmentationResult& r, const std::string& scan_id);
nlohmann::ordered_json to_json(const StoredScan& s);
nlohmann::ordered_json error_body(const std::string& code, const std::string& message);

inline constexpr const char* kApiPrefix = "/api/v1";

}  // namespace tumorkit::service
