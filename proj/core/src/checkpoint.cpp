#include "tumorkit/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "tumorkit/config_json.hpp"
#include "tumorkit/digest.hpp"
#include "tumorkit/error.hpp"
#include "tumorkit/image_io.hpp"

namespace tumorkit {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

constexpr std::array<std::uint8_t, 8> kMagic = {'T', 'K', 'C', 'K', 'P', 'T', '\r', '\n'};
constexpr std::size_t kDigestSize = 32;
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> finish() {
    const Sha256 d = sha256(out_);
    out_.insert(out_.end(), d.begin(), d.end());
    return std::move(out_);
  }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw LoadError("checkpoint is truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode(CheckpointKind kind, const nlohmann::ordered_json& arch,
                                 const nlohmann::json& metadata, const nn::ParameterSet& params) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.str(arch.dump());
  w.str(metadata.is_null() ? std::string("{}") : metadata.dump());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.bytes(p.value.data(), p.value.size() * sizeof(float));
  }
  return w.finish();
}

struct Header {
  CheckpointKind kind;
  nlohmann::json arch;
  nlohmann::json metadata;
};

// Validates magic, version and digest; leaves the reader at the tensor count.
Header read_header(std::span<const std::uint8_t> bytes, Reader& r) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw LoadError("not a checkpoint file (bad magic bytes)");
  }
  std::array<std::uint8_t, 8> magic{};
  r.bytes(magic.data(), magic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint format version " + std::to_string(version) + " (this build reads version " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < kMagic.size() + 4 + kDigestSize) throw LoadError("checkpoint is truncated");
  const auto body = bytes.first(bytes.size() - kDigestSize);
  const Sha256 expect = sha256(body);
  if (!std::equal(expect.begin(), expect.end(), bytes.end() - kDigestSize)) {
    throw LoadError("checkpoint digest mismatch (file is corrupt or truncated)");
  }
  Header h;
  const std::uint8_t kind = r.u8();
  if (kind != 1 && kind != 2) throw LoadError("unknown checkpoint kind " + std::to_string(kind));
  h.kind = static_cast<CheckpointKind>(kind);
  try {
    h.arch = nlohmann::json::parse(r.str());
    h.metadata = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("checkpoint descriptor is not valid JSON: ") + e.what());
  }
  return h;
}

void read_tensors(Reader& r, nn::ParameterSet& params, std::span<const std::uint8_t> bytes) {
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw LoadError("checkpoint holds " + std::to_string(count) + " tensors, arch expects " +
                    std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const nn::Parameter* known = params.find(name);
    if (!known) throw LoadError("checkpoint tensor '" + name + "' is not part of the arch");
    if (r.u8() != kDtypeF32) throw LoadError("checkpoint tensor '" + name + "' has an unsupported dtype");
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw LoadError("checkpoint tensor '" + name + "' has rank " + std::to_string(ndim));
    nn::Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    nn::Parameter& p = params.get(name);
    if (shape != p.value.shape()) {
      throw LoadError("checkpoint tensor '" + name + "' has shape " + nn::shape_string(shape) + ", arch expects " +
                      nn::shape_string(p.value.shape()));
    }
    r.bytes(p.value.data(), p.value.size() * sizeof(float));
  }
  // Only the digest may follow the last tensor.
  std::array<std::uint8_t, kDigestSize> digest{};
  r.bytes(digest.data(), digest.size());
  if (!r.done()) throw LoadError("checkpoint has trailing bytes");
  (void)bytes;
}

void check_expected(const nlohmann::json& actual, const nlohmann::json& expected) {
  for (const auto& [key, value] : expected.items()) {
    const bool present = actual.contains(key);
    if (!present || actual[key] != value) {
      throw LoadError("checkpoint arch mismatch on '" + key + "': checkpoint has " +
                      (present ? actual[key].dump() : std::string("nothing")) + ", config declares " + value.dump());
    }
  }
  for (const auto& [key, value] : actual.items()) {
    if (!expected.contains(key)) throw LoadError("checkpoint arch mismatch on '" + key + "': not declared by config");
  }
}

void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ClassifierModel& model, const nlohmann::json& metadata) {
  return encode(CheckpointKind::classifier, arch_to_json(model.arch()), metadata, model.params());
}

std::vector<std::uint8_t> encode_checkpoint(const SegModel& model, const nlohmann::json& metadata) {
  return encode(CheckpointKind::segmenter, to_json(model.config()), metadata, model.params());
}

void save_checkpoint(const std::filesystem::path& path, const ClassifierModel& model, const nlohmann::json& metadata) {
  write_atomic(path, encode_checkpoint(model, metadata));
}

void save_checkpoint(const std::filesystem::path& path, const SegModel& model, const nlohmann::json& metadata) {
  write_atomic(path, encode_checkpoint(model, metadata));
}

CheckpointKind peek_checkpoint_kind(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  return read_header(bytes, r).kind;
}

ClassifierCheckpoint decode_classifier_checkpoint(std::span<const std::uint8_t> bytes,
                                                  const std::optional<ClassifierArch>& expected) {
  Reader r(bytes);
  Header h = read_header(bytes, r);
  if (h.kind != CheckpointKind::classifier) throw LoadError("checkpoint holds a segmenter, not a classifier");
  if (expected) check_expected(h.arch, nlohmann::json(arch_to_json(*expected)));
  std::optional<ClassifierModel> model;
  try {
    model = ClassifierModel::from_arch(arch_from_json(h.arch), 0);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint arch is invalid: ") + e.what());
  }
  read_tensors(r, model->params(), bytes);
  return {std::move(*model), std::move(h.metadata)};
}

SegmenterCheckpoint decode_segmenter_checkpoint(std::span<const std::uint8_t> bytes,
                                                const std::optional<UNetConfig>& expected) {
  Reader r(bytes);
  Header h = read_header(bytes, r);
  if (h.kind != CheckpointKind::segmenter) throw LoadError("checkpoint holds a classifier, not a segmenter");
  if (expected) check_expected(h.arch, nlohmann::json(to_json(*expected)));
  std::optional<SegModel> model;
  try {
    model = SegModel::build(unet_config_from_json(h.arch), 0);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint arch is invalid: ") + e.what());
  }
  read_tensors(r, model->params(), bytes);
  return {std::move(*model), std::move(h.metadata)};
}

ClassifierCheckpoint load_classifier_checkpoint(const std::filesystem::path& path,
                                                const std::optional<ClassifierArch>& expected) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw LoadError("cannot read checkpoint '" + path.string() + "': " + e.what());
  }
  return decode_classifier_checkpoint(bytes, expected);
}

SegmenterCheckpoint load_segmenter_checkpoint(const std::filesystem::path& path,
                                              const std::optional<UNetConfig>& expected) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw LoadError("cannot read checkpoint '" + path.string() + "': " + e.what());
  }
  return decode_segmenter_checkpoint(bytes, expected);
}

}  // namespace tumorkit
