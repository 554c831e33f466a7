#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tumorkit/image.hpp"
#include "tumorkit/tumor_class.hpp"

namespace tumorkit {

// One MRI image, its optional label and optional ground-truth mask.
struct ScanRecord {
  std::string id;
  Image image;
  std::optional<TumorClass> label;
  std::optional<BinaryMask> mask;
  std::string source_path;
};

struct LoadedDataset {
  std::vector<ScanRecord> records;
  // Files that looked like images but could not be decoded.
  std::size_t skipped = 0;
};

// Reads <root>/<class>/<image>.{png,jpg,jpeg}. Records come back sorted by
// their path relative to root. Throws ConfigError if root is not a directory.
LoadedDataset load_dataset(const std::filesystem::path& root);

// Record id for a path relative to the dataset root ("glioma/a.png" -> "glioma__a.png").
std::string record_id_for(const std::filesystem::path& relative);

// Pairs records with <root>/masks/<stem>.png. Only tumor-labeled records
// with a readable mask of matching size are returned, masks binarized.
std::vector<ScanRecord> load_mask_subset(const std::filesystem::path& root,
                                         std::span<const ScanRecord> records);

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 42;

  // Throws ArgumentError when a fraction is outside [0,1] or they do not sum to 1.
  void validate() const;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

// Shuffles the sorted ids with a generator seeded by spec.seed; train and val
// take floor(frac * N), test takes the remainder.
DatasetSplit split_dataset(std::span<const ScanRecord> records, const SplitSpec& spec);
DatasetSplit split_ids(std::vector<std::string> ids, const SplitSpec& spec);

// Id-keyed view over loaded records.
class RecordStore {
 public:
  RecordStore() = default;
  explicit RecordStore(std::vector<ScanRecord> records);

  const ScanRecord& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.contains(id); }
  std::size_t size() const { return records_.size(); }
  std::span<const ScanRecord> records() const { return records_; }

  std::vector<ScanRecord> gather(std::span<const std::string> ids) const;

 private:
  std::vector<ScanRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tumorkit
