#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tumorkit/classifier.hpp"
#include "tumorkit/error.hpp"

using namespace tumorkit;
using Catch::Approx;
using tumorkit::testing::random_unit_image;
using tumorkit::testing::tiny_cnn;

namespace {

void zero_output_layer(ClassifierModel& m) {
  const std::string prefix = ClassifierModel::kOutputLayer;
  m.params().get(prefix + ".weight").value.fill(0.0f);
  m.params().get(prefix + ".bias").value.fill(0.0f);
}

}  // namespace

TEST_CASE("one pooled block halves a 32px input", "[classifier]") {
  CnnConfig c;
  c.conv_blocks = {{8, 3, true}};
  c.input_size = 32;
  CHECK(cnn_feature_dims(c) == FeatureDims{8, 16, 16});
  // k*k*in*out + out conv weights, then the flattened 16*16*8 features into fc.
  const ClassifierModel m = ClassifierModel::baseline(c, 1);
  const std::size_t conv = 3 * 3 * 1 * 8 + 8;
  const std::size_t fc = static_cast<std::size_t>(16 * 16 * 8) * c.fc_width + c.fc_width;
  const std::size_t out = static_cast<std::size_t>(c.fc_width) * 4 + 4;
  CHECK(m.params().count() == conv + fc + out);
}

TEST_CASE("six pooled blocks exhaust a 32px input", "[classifier]") {
  CnnConfig c;
  c.conv_blocks.assign(6, ConvBlockSpec{4, 3, true});
  c.input_size = 32;
  CHECK_THROWS_WITH(c.validate(), Catch::Matchers::ContainsSubstring("conv block 5"));
  CHECK_THROWS_AS(ClassifierModel::baseline(c, 0), ConfigError);
}

TEST_CASE("cnn config validation", "[classifier]") {
  CnnConfig c = tiny_cnn();
  c.fc_width = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_cnn();
  c.num_classes = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_cnn();
  c.conv_blocks.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("builds are deterministic in config and seed", "[classifier]") {
  const ClassifierModel a = ClassifierModel::baseline(tiny_cnn(), 7);
  const ClassifierModel b = ClassifierModel::baseline(tiny_cnn(), 7);
  const ClassifierModel c = ClassifierModel::baseline(tiny_cnn(), 8);
  CHECK(a.params().same_values(b.params()));
  CHECK_FALSE(a.params().same_values(c.params()));
  const ScaledDims d{3, 8, 32};
  CHECK(ClassifierModel::scaled(d, 3).params().same_values(ClassifierModel::scaled(d, 3).params()));
}

TEST_CASE("compound scaling arithmetic", "[classifier]") {
  CompoundScaleConfig c;
  CHECK(compound_scale(c) == ScaledDims{7, 16, 224});
  CHECK(c.flops_factor() == Approx(1.2 * 1.1 * 1.1 * 1.15 * 1.15).margin(1e-12));
  CHECK(c.flops_factor() == Approx(1.9203).margin(1e-4));

  c.base_depth = 10;
  c.phi = 1;
  CHECK(compound_scale(c).depth == 12);
  // 224 * 1.15 = 257.6, nearest multiple of 16 is 256; 16 * 1.1 = 17.6 -> 18.
  CHECK(compound_scale(c).resolution == 256);
  CHECK(compound_scale(c).width == 18);
}

TEST_CASE("compound scaling is nondecreasing in phi", "[classifier][property]") {
  CompoundScaleConfig c;
  ScaledDims prev = compound_scale(c);
  for (int step = 1; step <= 40; ++step) {
    c.phi = step * 0.1;
    const ScaledDims d = compound_scale(c);
    CHECK(d.depth >= prev.depth);
    CHECK(d.width >= prev.width);
    CHECK(d.resolution >= prev.resolution);
    CHECK(d.resolution % 16 == 0);
    prev = d;
  }
}

TEST_CASE("compound scale rejects constants outside the budget", "[classifier]") {
  CompoundScaleConfig c;
  c.alpha = 2.0;
  CHECK_THROWS_AS(compound_scale(c), ConfigError);
  c = {};
  c.phi = -1;
  CHECK_THROWS_AS(compound_scale(c), ConfigError);
  c = {};
  c.beta = 1.0;
  CHECK_THROWS_AS(compound_scale(c), ConfigError);
}

TEST_CASE("larger phi yields a larger scaled network", "[classifier]") {
  CompoundScaleConfig c;
  const auto p0 = ClassifierModel::scaled(compound_scale(c), 0).params().count();
  c.phi = 1;
  const auto p1 = ClassifierModel::scaled(compound_scale(c), 0).params().count();
  CHECK(p0 > 0);
  CHECK(p1 > p0);
}

TEST_CASE("scaled plan spreads depth over four stages", "[classifier]") {
  const auto plan = scaled_block_plan({7, 16, 224});
  REQUIRE(plan.size() == 7);
  CHECK(plan.front().in_channels == 16);
  CHECK(plan.back().out_channels == 16 * 8);
  CHECK_THROWS_AS(scaled_block_plan({7, 16, 200}), ConfigError);
  CHECK_THROWS_AS(ClassifierModel::scaled({7, 16, 200}, 0), ConfigError);
}

TEST_CASE("zero output layer gives a uniform distribution", "[classifier]") {
  Rng rng(1);
  for (ClassifierModel m : {ClassifierModel::baseline(tiny_cnn(), 1), ClassifierModel::scaled({3, 4, 32}, 1)}) {
    zero_output_layer(m);
    const Probabilities p = classify(m, random_unit_image(32, rng));
    for (double v : p.values) CHECK(v == Approx(0.25).margin(1e-9));
  }
}

TEST_CASE("softmax of hand-picked logits", "[classifier]") {
  const std::array<float, 4> l = {2.0f, 0.0f, 0.0f, 0.0f};
  const Probabilities p = softmax(l);
  CHECK(p.values[0] == Approx(std::exp(2.0) / (std::exp(2.0) + 3.0)).margin(1e-9));
  CHECK(p.values[0] == Approx(0.7113).margin(1e-4));
  const std::array<float, 4> huge = {1000.0f, -1000.0f, 0.0f, 999.0f};
  const Probabilities q = softmax(huge);
  CHECK(std::isfinite(q.values[0]));
  CHECK(q.sum() == Approx(1.0).margin(1e-12));
}

TEST_CASE("probabilities are valid for arbitrary parameters", "[classifier][property]") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ClassifierModel m = trial % 2 == 0 ? ClassifierModel::baseline(tiny_cnn(), rng.next_u64())
                                       : ClassifierModel::scaled({2, 4, 32}, rng.next_u64());
    const double scale = rng.uniform(0.1, 5.0);
    for (auto& p : m.params()) {
      for (auto& v : p.value.values()) v = static_cast<float>(rng.uniform(-scale, scale));
    }
    const Probabilities p = classify(m, random_unit_image(32, rng));
    for (double v : p.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(p.sum() == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("classification is deterministic", "[classifier]") {
  Rng rng(6);
  const ClassifierModel m = ClassifierModel::baseline(tiny_cnn(), 3);
  const Image img = random_unit_image(32, rng);
  CHECK(classify(m, img) == classify(m, img));
}

TEST_CASE("classify reports expected and actual resolution", "[classifier]") {
  Rng rng(7);
  const ClassifierModel m = ClassifierModel::baseline(tiny_cnn(32), 0);
  CHECK_THROWS_MATCHES(classify(m, random_unit_image(64, rng)), ArgumentError,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("32x32") &&
                                                       Catch::Matchers::ContainsSubstring("64x64")));
}

TEST_CASE("predict_class takes the argmax with lowest-index ties", "[classifier]") {
  CHECK(predict_class({{0.1, 0.7, 0.1, 0.1}}) == std::pair{TumorClass::meningioma, 0.7});
  CHECK(predict_class({{0.25, 0.25, 0.25, 0.25}}) == std::pair{TumorClass::glioma, 0.25});
  CHECK(predict_class({{0.0, 0.0, 0.0, 1.0}}) == std::pair{TumorClass::no_tumor, 1.0});
  CHECK(predict_class({{0.1, 0.4, 0.4, 0.1}}).first == TumorClass::meningioma);
}

TEST_CASE("argmax is invariant under increasing logit transforms", "[classifier][property]") {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<float, 4> l{};
    for (auto& v : l) v = static_cast<float>(rng.uniform(-3, 3));
    auto transformed = l;
    const double a = rng.uniform(0.1, 4.0), b = rng.uniform(-5, 5);
    for (auto& v : transformed) v = static_cast<float>(a * v + b + 0.1 * v * v * v);
    CHECK(predict_class(softmax(l)).first == predict_class(softmax(transformed)).first);
  }
}
