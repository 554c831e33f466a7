#include "tumorkit/service/inference_service.hpp"

#include <spdlog/spdlog.h>

#include "tumorkit/digest.hpp"
#include "tumorkit/error.hpp"
#include "tumorkit/image_io.hpp"
#include "tumorkit/preprocess.hpp"

namespace tumorkit::service {
namespace {

std::optional<std::string> sniff_content_type(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (b.size() >= sizeof kPng && std::equal(std::begin(kPng), std::end(kPng), b.begin())) return "image/png";
  if (b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff) return "image/jpeg";
  return std::nullopt;
}

bool valid_patient_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

std::int64_t elapsed_ms(Clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - since).count();
}

ServiceError not_found(const std::string& what, const std::string& id) {
  return ServiceError(404, "not_found", what + " '" + id + "' does not exist");
}

}  // namespace

InferenceService::InferenceService(std::shared_ptr<Store> store, TumorInfoCatalog tumor_info, bool auto_create_patient)
    : store_(std::move(store)), tumor_info_(std::move(tumor_info)), auto_create_patient_(auto_create_patient) {}

void InferenceService::install_classifier(ClassifierModel model) {
  auto ptr = std::make_shared<const ClassifierModel>(std::move(model));
  std::string digest = params_digest(ptr->params());
  std::lock_guard lock(model_mu_);
  serving_.classifier = std::move(ptr);
  serving_.classifier_digest = std::move(digest);
}

void InferenceService::install_segmenter(SegModel model) {
  auto ptr = std::make_shared<const SegModel>(std::move(model));
  std::string digest = params_digest(ptr->params());
  std::lock_guard lock(model_mu_);
  serving_.segmenter = std::move(ptr);
  serving_.segmenter_digest = std::move(digest);
}

InferenceService::Serving InferenceService::serving() const {
  std::lock_guard lock(model_mu_);
  return serving_;
}

bool InferenceService::has_classifier() const { return serving().classifier != nullptr; }
bool InferenceService::has_segmenter() const { return serving().segmenter != nullptr; }

std::optional<std::string> InferenceService::classifier_digest() const {
  auto s = serving();
  return s.classifier ? std::optional(s.classifier_digest) : std::nullopt;
}

std::optional<std::string> InferenceService::segmenter_digest() const {
  auto s = serving();
  return s.segmenter ? std::optional(s.segmenter_digest) : std::nullopt;
}

PatientRecord InferenceService::create_patient(const nlohmann::json& body) {
  if (!body.is_object()) throw ServiceError(400, "bad_request", "request body must be a JSON object");
  for (const auto& [key, value] : body.items()) {
    if (key != "patient_id" && key != "display_name") {
      throw ServiceError(400, "bad_request", "unknown field '" + key + "'");
    }
    if (!value.is_string()) throw ServiceError(400, "bad_request", "field '" + key + "' must be a string");
  }
  const std::string id = body.value("patient_id", std::string());
  if (!id.empty() && !valid_patient_id(id)) {
    throw ServiceError(400, "bad_request", "patient_id must be 1-64 characters of [A-Za-z0-9_-]");
  }
  try {
    return store_->create_patient(id, body.value("display_name", std::string()));
  } catch (const StoreConflict& e) {
    throw ServiceError(409, "conflict", e.what());
  }
}

PatientRecord InferenceService::require_patient(const std::string& patient_id) const {
  auto p = store_->patient(patient_id);
  if (!p) throw not_found("patient", patient_id);
  return std::move(*p);
}

UploadResult InferenceService::upload(const std::string& patient_id, std::span<const std::uint8_t> payload) {
  // Patient errors win over payload errors; creation waits for a valid payload.
  const bool exists = store_->patient(patient_id).has_value();
  if (!exists && !auto_create_patient_) throw not_found("patient", patient_id);
  if (!exists && !valid_patient_id(patient_id)) {
    throw ServiceError(400, "bad_request", "patient_id must be 1-64 characters of [A-Za-z0-9_-]");
  }
  if (payload.empty()) throw ServiceError(422, "unprocessable_image", "upload body is empty");
  const auto type = sniff_content_type(payload);
  if (!type) throw ServiceError(422, "unprocessable_image", "payload is neither PNG nor JPEG");
  const auto image = decode_image(payload);
  if (!image) throw ServiceError(422, "unprocessable_image", "payload could not be decoded as an image");
  if (!exists) {
    try {
      store_->create_patient(patient_id, "");
    } catch (const StoreConflict&) {
      // Created concurrently; fall through to the upload.
    }
  }
  auto put = store_->put_scan(patient_id, payload, *type, image->height, image->width);
  return {std::move(put.scan), put.created};
}

ClassificationResult InferenceService::classify(const std::string& scan_id, Clock::time_point received) {
  const auto stored = store_->scan(scan_id);
  if (!stored) throw not_found("scan", scan_id);
  const Serving s = serving();
  if (!s.classifier) throw ServiceError(503, "model_unavailable", "no classifier checkpoint is loaded");
  const auto image = decode_image(store_->read_blob(stored->blob_ref));
  if (!image) throw ServiceError(500, "internal", "stored image for scan '" + scan_id + "' is unreadable");
  const Probabilities probs = tumorkit::classify(*s.classifier, prepare_model_input(*image, s.classifier->input_resolution()));
  const auto [cls, confidence] = predict_class(probs);
  ClassificationResult r;
  r.predicted_class = cls;
  r.confidence = confidence;
  r.probabilities = probs.values;
  r.model_digest = s.classifier_digest;
  r.created_at = utc_timestamp_now();
  r.latency_ms = elapsed_ms(received);
  store_->save_classification(scan_id, r);
  return r;
}

SegmentationResult InferenceService::segment(const std::string& scan_id, Clock::time_point received) {
  const auto stored = store_->scan(scan_id);
  if (!stored) throw not_found("scan", scan_id);
  const Serving s = serving();
  if (!s.segmenter) throw ServiceError(503, "model_unavailable", "no segmenter checkpoint is loaded");
  const auto image = decode_image(store_->read_blob(stored->blob_ref));
  if (!image) throw ServiceError(500, "internal", "stored image for scan '" + scan_id + "' is unreadable");
  const SegMask mask =
      threshold_mask(tumorkit::segment(*s.segmenter, prepare_model_input(*image, s.segmenter->config().input_size)));
  SegmentationResult r;
  r.mask_height = mask.height;
  r.mask_width = mask.width;
  r.model_digest = s.segmenter_digest;
  r.created_at = utc_timestamp_now();
  const auto png = encode_mask_png(mask);
  r.latency_ms = elapsed_ms(received);
  return store_->save_segmentation(scan_id, r, png);
}

StoredScan InferenceService::scan(const std::string& scan_id) const {
  auto s = store_->scan(scan_id);
  if (!s) throw not_found("scan", scan_id);
  return std::move(*s);
}

std::vector<std::uint8_t> InferenceService::scan_image(const std::string& scan_id) const {
  return store_->read_blob(scan(scan_id).blob_ref);
}

std::vector<std::uint8_t> InferenceService::scan_mask(const std::string& scan_id) const {
  const StoredScan s = scan(scan_id);
  if (!s.segmentation) throw ServiceError(404, "not_found", "scan '" + scan_id + "' has not been segmented");
  return store_->read_blob(s.segmentation->mask_ref);
}

std::vector<StoredScan> InferenceService::history(const std::string& patient_id) const {
  require_patient(patient_id);
  return store_->scans_for(patient_id);
}

nlohmann::ordered_json InferenceService::export_patient(const std::string& patient_id) const {
  const PatientRecord p = require_patient(patient_id);
  nlohmann::ordered_json doc;
  doc["format"] = "tumorkit.patient_file";
  doc["format_version"] = 1;
  doc["patient"] = to_json(p);
  auto scans = nlohmann::ordered_json::array();
  for (const auto& s : store_->scans_for(patient_id)) scans.push_back(to_json(s));
  doc["scans"] = std::move(scans);
  return doc;
}

TumorInfoEntry InferenceService::tumor_info(const std::string& class_name) const {
  auto e = tumor_info_.find(class_name);
  if (!e) throw ServiceError(404, "not_found", "no tumor information for '" + class_name + "'");
  return std::move(*e);
}

nlohmann::ordered_json to_json(const PatientRecord& p) {
  nlohmann::ordered_json j;
  j["patient_id"] = p.patient_id;
  j["display_name"] = p.display_name;
  j["created_at"] = p.created_at;
  j["scan_ids"] = p.scan_ids;
  return j;
}

nlohmann::ordered_json to_json(const ClassificationResult& r) {
  nlohmann::ordered_json probs;
  for (TumorClass c : kClassOrder) probs[std::string(to_string(c))] = r.probabilities[static_cast<std::size_t>(class_index(c))];
  nlohmann::ordered_json j;
  j["predicted_class"] = std::string(to_string(r.predicted_class));
  j["confidence"] = r.confidence;
  j["probabilities"] = probs;
  j["latency_ms"] = r.latency_ms;
  j["model_digest"] = r.model_digest;
  j["created_at"] = r.created_at;
  return j;
}

nlohmann::ordered_json to_json(const SegmentationResult& r, const std::string& scan_id) {
  nlohmann::ordered_json j;
  j["mask_ref"] = r.mask_ref;
  j["mask_url"] = std::string(kApiPrefix) + "/scans/" + scan_id + "/mask";
  j["mask_height"] = r.mask_height;
  j["mask_width"] = r.mask_width;
  j["latency_ms"] = r.latency_ms;
  j["model_digest"] = r.model_digest;
  j["created_at"] = r.created_at;
  return j;
}

nlohmann::ordered_json to_json(const StoredScan& s) {
  nlohmann::ordered_json j;
  j["scan_id"] = s.scan_id;
  j["patient_id"] = s.patient_id;
  j["payload_sha256"] = s.payload_sha256;
  j["content_type"] = s.content_type;
  j["height"] = s.height;
  j["width"] = s.width;
  j["uploaded_at"] = s.uploaded_at;
  j["image_url"] = std::string(kApiPrefix) + "/scans/" + s.scan_id + "/image";
  j["classification"] = s.classification ? to_json(*s.classification) : nlohmann::ordered_json(nullptr);
  j["segmentation"] = s.segmentation ? to_json(*s.segmentation, s.scan_id) : nlohmann::ordered_json(nullptr);
  return j;
}

nlohmann::ordered_json error_body(const std::string& code, const std::string& message) {
  nlohmann::ordered_json inner;
  inner["code"] = code;
  inner["message"] = message;
  nlohmann::ordered_json j;
  j["error"] = inner;
  return j;
}

}  // namespace tumorkit::service
