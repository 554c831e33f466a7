#include "tumorkit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tumorkit/error.hpp"

namespace tumorkit {
namespace {

Image from_mat(const cv::Mat& decoded) {
  cv::Mat mat = decoded;
  if (mat.channels() == 4) {
    cv::cvtColor(mat, mat, cv::COLOR_BGRA2RGB);
  } else if (mat.channels() == 3) {
    cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
  }
  const bool sixteen = mat.depth() == CV_16U;
  Image image(mat.rows, mat.cols, mat.channels(), 0.0f, sixteen ? 65535.0f : 255.0f);
  const int row_len = mat.cols * mat.channels();
  for (int y = 0; y < mat.rows; ++y) {
    float* out = image.data.data() + static_cast<std::size_t>(y) * row_len;
    if (sixteen) {
      const auto* row = mat.ptr<std::uint16_t>(y);
      std::copy(row, row + row_len, out);
    } else {
      const auto* row = mat.ptr<std::uint8_t>(y);
      std::copy(row, row + row_len, out);
    }
  }
  return image;
}

std::vector<std::uint8_t> encode_png(const cv::Mat& mat) {
  std::vector<std::uint8_t> out;
  // Fixed compression settings so identical masks encode to identical bytes.
  const std::vector<int> params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imencode(".png", mat, out, params)) throw ArgumentError("PNG encoding failed");
  return out;
}

}  // namespace

std::optional<Image> decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return std::nullopt;
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(raw, cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (decoded.empty()) return std::nullopt;
  if (decoded.depth() != CV_8U && decoded.depth() != CV_16U) {
    decoded.convertTo(decoded, CV_8U);
  }
  return from_mat(decoded);
}

std::optional<Image> read_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return decode_image(bytes);
}

std::optional<BinaryMask> read_mask(const std::filesystem::path& path) {
  auto image = read_image(path);
  if (!image) return std::nullopt;
  BinaryMask mask(image->height, image->width);
  for (int y = 0; y < image->height; ++y) {
    for (int x = 0; x < image->width; ++x) {
      bool on = false;
      for (int c = 0; c < image->channels; ++c) on = on || image->at(y, x, c) != 0.0f;
      mask.at(y, x) = on ? 1 : 0;
    }
  }
  return mask;
}

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask) {
  cv::Mat mat(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  return encode_png(mat);
}

std::vector<std::uint8_t> encode_image_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ArgumentError("only 1- or 3-channel images can be encoded");
  }
  cv::Mat mat(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3);
  const float scale = 255.0f / image.max_value;
  for (int y = 0; y < image.height; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const float v = std::clamp(std::round(image.at(y, x, c) * scale), 0.0f, 255.0f);
        row[x * image.channels + c] = static_cast<std::uint8_t>(v);
      }
    }
  }
  if (image.channels == 3) cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  return encode_png(mat);
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace tumorkit
