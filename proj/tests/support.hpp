#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "tumorkit/classifier.hpp"
#include "tumorkit/image.hpp"
#include "tumorkit/image_io.hpp"
#include "tumorkit/rng.hpp"
#include "tumorkit/segmentation.hpp"

namespace tumorkit::testing {

inline std::filesystem::path fixture_dir() { return TUMORKIT_FIXTURE_DIR; }
inline std::filesystem::path source_dir() { return TUMORKIT_SOURCE_DIR; }

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "tk") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

// Uniform-noise image in [0, 255] with the given geometry.
inline Image random_image(int h, int w, int c, Rng& rng) {
  Image img(h, w, c);
  for (auto& v : img.data) v = static_cast<float>(std::floor(rng.uniform(0.0, 256.0)));
  return img;
}

// Single-channel unit-range image, ready for a model.
inline Image random_unit_image(int size, Rng& rng) {
  Image img(size, size, 1, 0.0f, 1.0f);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

inline CnnConfig tiny_cnn(int input_size = 32) {
  CnnConfig c;
  c.conv_blocks = {{4, 3, true}, {8, 3, true}};
  c.fc_width = 16;
  c.input_size = input_size;
  return c;
}

inline UNetConfig tiny_unet(int input_size = 32, int levels = 2, int base = 4) {
  UNetConfig c;
  c.levels = levels;
  c.base_filters = base;
  c.input_size = input_size;
  return c;
}

// PNG bytes of a noise scan; distinct seeds give distinct payloads.
inline std::vector<std::uint8_t> scan_png(int size, std::uint64_t seed) {
  Rng rng(seed);
  return encode_image_png(random_image(size, size, 1, rng));
}

}  // namespace tumorkit::testing
