#include "tumorkit/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <spdlog/spdlog.h>

#include "tumorkit/error.hpp"
#include "tumorkit/image_io.hpp"
#include "tumorkit/rng.hpp"

namespace tumorkit {
namespace fs = std::filesystem;

namespace {

bool is_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::string record_id_for(const fs::path& relative) {
  std::string id;
  bool first = true;
  for (const auto& part : relative) {
    if (!first) id += "__";
    id += part.string();
    first = false;
  }
  return id;
}

LoadedDataset load_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw ConfigError("dataset root '" + root.string() + "' does not exist or is not a directory");
  }

  std::vector<std::pair<fs::path, TumorClass>> files;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "masks") continue;
    const auto label = parse_tumor_class(name);
    if (!label) {
      spdlog::warn("ignoring directory '{}': not a tumor class", entry.path().string());
      continue;
    }
    for (const auto& file : fs::directory_iterator(entry.path())) {
      if (file.is_regular_file() && is_image_extension(file.path())) {
        files.emplace_back(fs::relative(file.path(), root), *label);
      }
    }
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.first.generic_string() < b.first.generic_string(); });

  LoadedDataset out;
  out.records.reserve(files.size());
  for (const auto& [rel, label] : files) {
    const fs::path full = root / rel;
    auto image = read_image(full);
    if (!image) {
      spdlog::warn("skipping unreadable image '{}'", full.string());
      ++out.skipped;
      continue;
    }
    ScanRecord r;
    r.id = record_id_for(rel);
    r.image = std::move(*image);
    r.label = label;
    r.source_path = full.string();
    out.records.push_back(std::move(r));
  }
  return out;
}

std::vector<ScanRecord> load_mask_subset(const fs::path& root, std::span<const ScanRecord> records) {
  std::vector<ScanRecord> out;
  const fs::path mask_dir = root / "masks";
  for (const auto& record : records) {
    if (!record.label || *record.label == TumorClass::no_tumor) continue;
    const fs::path mask_path = mask_dir / (fs::path(record.source_path).stem().string() + ".png");
    std::error_code ec;
    if (!fs::is_regular_file(mask_path, ec)) continue;
    auto mask = read_mask(mask_path);
    if (!mask) {
      spdlog::warn("skipping unreadable mask '{}'", mask_path.string());
      continue;
    }
    if (mask->height != record.image.height || mask->width != record.image.width) {
      spdlog::warn("excluding '{}': mask is {}x{} but image is {}x{}", record.id, mask->height,
                   mask->width, record.image.height, record.image.width);
      continue;
    }
    ScanRecord copy = record;
    copy.mask = std::move(*mask);
    out.push_back(std::move(copy));
  }
  return out;
}

void SplitSpec::validate() const {
  for (double f : {train_frac, val_frac, test_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ArgumentError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw ArgumentError("split fractions must sum to 1");
  }
}

DatasetSplit split_ids(std::vector<std::string> ids, const SplitSpec& spec) {
  if (ids.empty()) throw ArgumentError("cannot split an empty record list");
  spec.validate();
  std::sort(ids.begin(), ids.end());
  Rng rng(spec.seed);
  rng.shuffle(std::span<std::string>(ids));

  const auto n = static_cast<double>(ids.size());
  // The small offset keeps exact products such as 0.7 * 10 from flooring to 6.
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_frac * n + 1e-9));
  const auto n_val = std::min(static_cast<std::size_t>(std::floor(spec.val_frac * n + 1e-9)),
                              ids.size() - n_train);

  DatasetSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return split;
}

DatasetSplit split_dataset(std::span<const ScanRecord> records, const SplitSpec& spec) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.id);
  return split_ids(std::move(ids), spec);
}

RecordStore::RecordStore(std::vector<ScanRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!index_.emplace(records_[i].id, i).second) {
      throw DataError("duplicate record id '" + records_[i].id + "'");
    }
  }
}

const ScanRecord& RecordStore::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown record id '" + id + "'");
  return records_[it->second];
}

std::vector<ScanRecord> RecordStore::gather(std::span<const std::string> ids) const {
  std::vector<ScanRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(at(id));
  return out;
}

}  // namespace tumorkit
