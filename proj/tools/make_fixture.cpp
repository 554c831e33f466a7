// Generates the bundled synthetic MRI fixture: 8 images per class at
// 256x256, plus binary tumor masks for a subset of the tumor images.
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tumorkit/image.hpp"
#include "tumorkit/image_io.hpp"
#include "tumorkit/rng.hpp"
#include "tumorkit/tumor_class.hpp"

namespace {

using tumorkit::BinaryMask;
using tumorkit::Image;
using tumorkit::Rng;
using tumorkit::TumorClass;

constexpr int kSize = 256;
constexpr int kPerClass = 8;

struct Blob {
  double cy, cx, radius;
  double harmonics[3];  // radial modulation amplitudes (irregular outline)
  double phases[3];
  double intensity;
};

bool inside(const Blob& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  const double theta = std::atan2(dy, dx);
  double r = b.radius;
  for (int k = 0; k < 3; ++k) r *= 1.0 + b.harmonics[k] * std::sin((k + 2) * theta + b.phases[k]);
  return dy * dy + dx * dx <= r * r;
}

struct Scan {
  Image image;
  BinaryMask mask;
};

Scan render(TumorClass cls, Rng& rng) {
  Scan s{Image(kSize, kSize, 1, 0.0f), BinaryMask(kSize, kSize)};
  const double cy = kSize / 2.0 + rng.uniform(-4, 4);
  const double cx = kSize / 2.0 + rng.uniform(-4, 4);
  const double ay = 108 + rng.uniform(-5, 5);  // brain semi-axes
  const double ax = 94 + rng.uniform(-5, 5);
  const double skull = 7.0;
  const double tissue = 85 + rng.uniform(-10, 10);
  const double f1 = rng.uniform(0.03, 0.06), f2 = rng.uniform(0.03, 0.06);
  const double p1 = rng.uniform(0, 2 * std::numbers::pi), p2 = rng.uniform(0, 2 * std::numbers::pi);

  std::optional<Blob> blob;
  auto harmonics = [&](Blob& b, double amp) {
    for (int k = 0; k < 3; ++k) {
      b.harmonics[k] = rng.uniform(-amp, amp);
      b.phases[k] = rng.uniform(0, 2 * std::numbers::pi);
    }
  };
  switch (cls) {
    case TumorClass::glioma: {
      // Large irregular mass inside one hemisphere.
      Blob b{};
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      b.cy = cy + rng.uniform(-40, 20);
      b.cx = cx + side * rng.uniform(25, 45);
      b.radius = rng.uniform(22, 30);
      harmonics(b, 0.18);
      b.intensity = 190 + rng.uniform(-10, 10);
      blob = b;
      break;
    }
    case TumorClass::meningioma: {
      // Round, bright mass against the skull.
      Blob b{};
      const double theta = rng.uniform(-std::numbers::pi, 0.2);  // upper half
      b.radius = rng.uniform(16, 22);
      b.cy = cy + (ay - b.radius * 0.7) * std::sin(theta);
      b.cx = cx + (ax - b.radius * 0.7) * std::cos(theta);
      harmonics(b, 0.03);
      b.intensity = 235 + rng.uniform(-8, 8);
      blob = b;
      break;
    }
    case TumorClass::pituitary: {
      // Compact mass at the skull base, on the midline.
      Blob b{};
      b.cy = cy + rng.uniform(52, 62);
      b.cx = cx + rng.uniform(-5, 5);
      b.radius = rng.uniform(12, 16);
      harmonics(b, 0.06);
      b.intensity = 215 + rng.uniform(-8, 8);
      blob = b;
      break;
    }
    case TumorClass::no_tumor:
      break;
  }

  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const double ny = (y - cy) / ay, nx = (x - cx) / ax;
      const double rho = std::sqrt(ny * ny + nx * nx);
      const double outer = 1.0 + skull / std::min(ay, ax);
      double v = 0.0;
      if (rho <= 1.0) {
        v = tissue + 12 * std::sin(f1 * y + p1) * std::cos(f2 * x + p2);
        if (blob && inside(*blob, y, x)) {
          v = blob->intensity;
          s.mask.at(y, x) = 1;
        }
      } else if (rho <= outer) {
        v = 200;
      }
      v += rng.normal() * 4.0;
      s.image.at(y, x) = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
    }
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic MRI fixture"};
  std::string out = "fixtures/mri32";
  std::uint64_t seed = 20240601;
  app.add_option("--out", out, "Output directory");
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);

  const std::filesystem::path root(out);
  std::filesystem::create_directories(root / "masks");
  // Masks for the first few images of each tumor class.
  auto masked = [](TumorClass c, int i) {
    switch (c) {
      case TumorClass::glioma:
      case TumorClass::meningioma: return i < 3;
      case TumorClass::pituitary: return i < 2;
      case TumorClass::no_tumor: return false;
    }
    return false;
  };
  int images = 0, masks = 0;
  for (TumorClass c : tumorkit::kClassOrder) {
    const std::string name(tumorkit::to_string(c));
    std::filesystem::create_directories(root / name);
    Rng rng(seed + static_cast<std::uint64_t>(tumorkit::class_index(c)) * 1000003ULL);
    for (int i = 0; i < kPerClass; ++i) {
      const Scan s = render(c, rng);
      const std::string stem = fmt::format("{}_{:03d}", name, i);
      tumorkit::write_file(root / name / (stem + ".png"), tumorkit::encode_image_png(s.image));
      ++images;
      if (masked(c, i)) {
        tumorkit::write_file(root / "masks" / (stem + ".png"), tumorkit::encode_mask_png(s.mask));
        ++masks;
      }
    }
  }
  std::cout << fmt::format("wrote {} images and {} masks to {}\n", images, masks, root.string());
  return 0;
}
