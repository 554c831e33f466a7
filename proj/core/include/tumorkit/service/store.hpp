#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tumorkit/tumor_class.hpp"

namespace tumorkit::service {

struct PatientRecord {
  std::string patient_id;
  std::string display_name;
  std::string created_at;  // ISO-8601 UTC
  std::vector<std::string> scan_ids;  // upload order
};

struct ClassificationResult {
  TumorClass predicted_class = TumorClass::glioma;
  double confidence = 0.0;
  std::array<double, kNumClasses> probabilities{};
  std::int64_t latency_ms = 0;
  std::string model_digest;
  std::string created_at;
};

struct SegmentationResult {
  std::string mask_ref;
  int mask_height = 0;
  int mask_width = 0;
  std::int64_t latency_ms = 0;
  std::string model_digest;
  std::string created_at;
};

struct StoredScan {
  std::string scan_id;
  std::string patient_id;
  std::string blob_ref;
  std::string payload_sha256;
  std::string content_type;
  int height = 0;
  int width = 0;
  std::string uploaded_at;
  std::optional<ClassificationResult> classification;
  std::optional<SegmentationResult> segmentation;
};

struct PutScanResult {
  StoredScan scan;
  bool created = false;
};

// Thrown for constraint violations the caller can report (duplicate ids).
struct StoreConflict : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// SQLite index plus content files under one root directory. Blob and mask
// files are fsynced and renamed into place before the row that references
// them commits, so every committed row points at a complete file. All calls
// are serialized on one connection.
class Store {
 public:
  explicit Store(const std::filesystem::path& root);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Empty id picks the next free sequential id. Throws StoreConflict when
  // an explicit id already exists.
  PatientRecord create_patient(const std::string& patient_id, const std::string& display_name);
  std::optional<PatientRecord> patient(const std::string& patient_id) const;

  // Idempotent per (patient_id, payload digest). The patient must exist.
  PutScanResult put_scan(const std::string& patient_id, std::span<const std::uint8_t> payload,
                         const std::string& content_type, int height, int width);
  std::optional<StoredScan> scan(const std::string& scan_id) const;
  std::vector<StoredScan> scans_for(const std::string& patient_id) const;

  void save_classification(const std::string& scan_id, const ClassificationResult& result);
  // Writes the mask file and stores result with mask_ref pointing at it.
  SegmentationResult save_segmentation(const std::string& scan_id, SegmentationResult result,
                                       std::span<const std::uint8_t> mask_png);

  std::vector<std::uint8_t> read_blob(const std::string& ref) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  struct Db;
  StoredScan load_scan_locked(const std::string& scan_id) const;
  std::optional<StoredScan> find_scan_locked(const std::string& scan_id) const;

  std::filesystem::path root_;
  std::unique_ptr<Db> db_;
  mutable std::mutex mu_;
};

// Deterministic scan id for a (patient, payload digest) pair.
std::string scan_id_for(const std::string& patient_id, const std::string& payload_sha256);

std::string utc_timestamp_now();

}  // namespace tumorkit::service
