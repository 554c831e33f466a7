#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tumorkit/augment.hpp"
#include "tumorkit/dataset.hpp"
#include "tumorkit/error.hpp"

using namespace tumorkit;
using tumorkit::testing::random_image;

namespace {

BinaryMask random_blob_mask(int h, int w, Rng& rng) {
  BinaryMask m(h, w);
  const double cy = rng.uniform(h * 0.3, h * 0.7), cx = rng.uniform(w * 0.3, w * 0.7);
  const double r = rng.uniform(3.0, h * 0.25);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
  return m;
}

}  // namespace

TEST_CASE("degenerate ranges draw the identity", "[augment]") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(draw_augment(AugmentConfig::none(), rng) == AugmentDraw{0.0, false, 1.0});
}

TEST_CASE("draws are deterministic and within range", "[augment]") {
  AugmentConfig cfg;
  cfg.rotation_max_deg = 20;
  cfg.zoom_low = 0.8;
  cfg.zoom_high = 1.3;
  Rng a(17), b(17);
  for (int i = 0; i < 1000; ++i) {
    const AugmentDraw da = draw_augment(cfg, a);
    CHECK(da == draw_augment(cfg, b));
    CHECK(std::abs(da.angle_deg) <= 20.0);
    CHECK(da.zoom >= 0.8);
    CHECK(da.zoom <= 1.3);
  }
}

TEST_CASE("each draw consumes exactly three generator values", "[augment]") {
  for (const AugmentConfig& cfg : {AugmentConfig{}, AugmentConfig::none()}) {
    Rng drawn(5), manual(5);
    draw_augment(cfg, drawn);
    for (int i = 0; i < 3; ++i) manual.next_u64();
    CHECK(drawn.next_u64() == manual.next_u64());
  }
}

TEST_CASE("flip frequency follows hflip_prob", "[augment]") {
  AugmentConfig cfg;
  cfg.hflip_prob = 0.5;
  Rng rng(2024);
  int flips = 0;
  for (int i = 0; i < 10000; ++i) flips += draw_augment(cfg, rng).do_hflip;
  CHECK(flips >= 4500);
  CHECK(flips <= 5500);
}

TEST_CASE("identity draw leaves image and mask unchanged", "[augment]") {
  Rng rng(3);
  const Image img = random_image(17, 23, 3, rng);
  const BinaryMask mask = random_blob_mask(17, 23, rng);
  const auto [out, out_mask] = apply_augment(img, mask, AugmentDraw{});
  CHECK(out == img);
  REQUIRE(out_mask);
  CHECK(*out_mask == mask);
}

TEST_CASE("horizontal flip is an involution", "[augment]") {
  Rng rng(4);
  const AugmentDraw flip{0.0, true, 1.0};
  for (int w : {8, 9}) {
    const Image img = random_image(6, w, 1, rng);
    const auto once = apply_augment(img, std::nullopt, flip).first;
    CHECK(once.at(2, 0) == img.at(2, w - 1));
    CHECK(apply_augment(once, std::nullopt, flip).first == img);
  }
}

TEST_CASE("mask and image follow the same geometric map", "[augment][property]") {
  AugmentConfig cfg;
  cfg.rotation_max_deg = 45;
  cfg.zoom_low = 0.7;
  cfg.zoom_high = 1.4;
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 20 + static_cast<int>(rng.below(30)), w = 20 + static_cast<int>(rng.below(30));
    const BinaryMask mask = random_blob_mask(h, w, rng);
    Image img(h, w, 1, 0.0f, 1.0f);
    for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i];
    const AugmentDraw d = draw_augment(cfg, rng);
    const auto [out, out_mask] = apply_augment(img, mask, d);
    REQUIRE(out_mask);
    BinaryMask thresholded(h, w);
    for (std::size_t i = 0; i < out.data.size(); ++i) thresholded.data[i] = out.data[i] >= 0.5f;
    CHECK(thresholded == *out_mask);
    CHECK(out.height == h);
    CHECK(out.width == w);
  }
}

TEST_CASE("augmentation preserves record metadata", "[augment]") {
  Rng rng(7);
  ScanRecord r;
  r.id = "no_tumor__a.png";
  r.label = TumorClass::no_tumor;
  r.source_path = "no_tumor/a.png";
  r.image = random_image(16, 16, 1, rng);
  AugmentConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const ScanRecord out = apply_augment(r, draw_augment(cfg, rng));
    CHECK(out.label == r.label);
    CHECK(out.id == r.id);
    CHECK(out.source_path == r.source_path);
    CHECK_FALSE(out.mask);
  }
}

TEST_CASE("apply_augment rejects a mask of different size", "[augment]") {
  const Image img(8, 8);
  CHECK_THROWS_AS(apply_augment(img, BinaryMask(8, 9), AugmentDraw{}), ArgumentError);
}

TEST_CASE("augment config validation", "[augment]") {
  AugmentConfig c;
  CHECK_NOTHROW(c.validate());
  c.rotation_max_deg = 181;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.zoom_low = 1.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.hflip_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
