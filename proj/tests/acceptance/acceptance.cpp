// Acceptance run: one PASS/FAIL line per criterion. Every tolerance and
// budget is a named constant below; any failure makes the exit status nonzero.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "tumorkit/augment.hpp"
#include "tumorkit/checkpoint.hpp"
#include "tumorkit/config_json.hpp"
#include "tumorkit/dataset.hpp"
#include "tumorkit/digest.hpp"
#include "tumorkit/error.hpp"
#include "tumorkit/image_io.hpp"
#include "tumorkit/preprocess.hpp"
#include "tumorkit/service/http_server.hpp"
#include "tumorkit/training.hpp"

using namespace tumorkit;
using tumorkit::testing::fixture_dir;
using tumorkit::testing::random_unit_image;
using tumorkit::testing::scan_png;
using tumorkit::testing::source_dir;
using tumorkit::testing::TempDir;
using tumorkit::testing::tiny_cnn;
namespace fs = std::filesystem;

namespace {

constexpr double kDiceTol = 1e-6;
constexpr double kDiceBudgetS = 60.0;
constexpr int kProbModels = 1000;
constexpr double kProbSumTol = 1e-6;
constexpr double kOverfitAccuracy = 0.95;
constexpr int kOverfitClsEpochs = 200;
constexpr double kOverfitDice = 0.90;
constexpr int kOverfitSegEpochs = 300;
constexpr double kTrainBudgetS = 600.0;
constexpr double kFlopsLow = 1.9, kFlopsHigh = 2.1;
constexpr int kAugmentDraws = 100;
constexpr int kLatencyRequests = 50;
constexpr double kLatencyP95Ms = 2000.0;
constexpr int kScanSide = 256;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- Dice oracle --------------------------------------------------------------

SegMask mask_from_bits(unsigned bits) {
  SegMask m(3, 3);
  for (int i = 0; i < 9; ++i) m.data[i] = (bits >> i) & 1u;
  return m;
}

// Counts with explicit pixel-coordinate sets.
double set_dice(unsigned a, unsigned b) {
  std::set<int> sa, sb, both;
  for (int i = 0; i < 9; ++i) {
    if ((a >> i) & 1u) sa.insert(i);
    if ((b >> i) & 1u) sb.insert(i);
  }
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
  if (sa.empty() && sb.empty()) return 1.0;
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

Verdict dice_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SegMask> masks;
  for (unsigned m = 0; m < 512; ++m) masks.push_back(mask_from_bits(m));
  double worst = 0.0;
  std::size_t pairs = 0;
  for (unsigned a = 0; a < 512; ++a) {
    for (unsigned b = 0; b < 512; ++b, ++pairs) worst = std::max(worst, std::abs(dice(masks[a], masks[b]) - set_dice(a, b)));
  }
  const double secs = seconds_since(t0);
  return {pairs == 262144 && worst <= kDiceTol && secs < kDiceBudgetS,
          fmt::format("{} pairs, max |diff| {:.2e} (tol {:.0e}), {:.1f}s (budget {:.0f}s)", pairs, worst, kDiceTol, secs,
                      kDiceBudgetS)};
}

// ---- probability contract ----------------------------------------------------

Verdict probability_contract() {
  Rng rng(2024);
  double worst_sum = 0.0;
  int out_of_range = 0;
  for (int i = 0; i < kProbModels; ++i) {
    ClassifierModel m = i % 10 == 9 ? ClassifierModel::scaled({3, 4, 32}, static_cast<std::uint64_t>(i))
                                    : ClassifierModel::baseline(tiny_cnn(32), static_cast<std::uint64_t>(i));
    // Wide weight scales push logits far apart to stress the softmax.
    const double scale = rng.uniform(0.01, 4.0);
    for (auto& p : m.params()) {
      for (auto& v : p.value.values()) v = static_cast<float>(rng.uniform(-scale, scale));
    }
    const Probabilities p = classify(m, random_unit_image(32, rng));
    worst_sum = std::max(worst_sum, std::abs(p.sum() - 1.0));
    for (double v : p.values) out_of_range += !(v >= 0.0 && v <= 1.0);
  }
  return {worst_sum <= kProbSumTol && out_of_range == 0,
          fmt::format("{} models, max |sum-1| {:.2e} (tol {:.0e}), {} values outside [0,1]", kProbModels, worst_sum,
                      kProbSumTol, out_of_range)};
}

// ---- U-Net shapes ------------------------------------------------------------

Verdict unet_shapes() {
  std::string detail;
  bool ok = true;
  Rng rng(5);
  for (int size : {64, 128, 256}) {
    UNetConfig c;
    c.levels = 4;
    c.base_filters = 2;
    c.input_size = size;
    const ProbMap out = segment(build_unet(c, 1), random_unit_image(size, rng));
    ok = ok && out.height == size && out.width == size;
    detail += fmt::format("{}->{}x{} ", size, out.height, out.width);
  }
  bool rejected = false;
  try {
    UNetConfig c;
    c.levels = 4;
    c.input_size = 100;
    build_unet(c, 1);
  } catch (const ConfigError&) {
    rejected = true;
  }
  return {ok && rejected, detail + (rejected ? "100 rejected" : "100 accepted")};
}

// ---- overfit runs ------------------------------------------------------------

RunConfig fixture_config() { return load_run_config(source_dir() / "configs/fixture.json"); }

Verdict overfit_classification() {
  const RunConfig cfg = fixture_config();
  const LoadedDataset ds = load_dataset(fixture_dir());
  DatasetSplit all;
  for (const auto& r : ds.records) all.train.push_back(r.id);
  const RecordStore store(ds.records);
  TrainConfig tc = cfg.train;
  tc.epochs = kOverfitClsEpochs;

  const auto t0 = std::chrono::steady_clock::now();
  auto a = train_classifier(ClassifierModel::baseline(cfg.cnn, tc.seed), all, store, tc);
  const double secs = seconds_since(t0);
  auto b = train_classifier(ClassifierModel::baseline(cfg.cnn, tc.seed), all, store, tc);
  const double acc = *evaluate_classifier(a.model, ds.records, "train").accuracy;
  const bool same = params_digest(a.model.params()) == params_digest(b.model.params()) && a.history == b.history;
  return {acc >= kOverfitAccuracy && same && secs < kTrainBudgetS,
          fmt::format("{} images, {} epochs, train accuracy {:.4f} (need {:.2f}), runs identical: {}, {:.1f}s per run "
                      "(budget {:.0f}s)",
                      ds.records.size(), tc.epochs, acc, kOverfitAccuracy, same ? "yes" : "no", secs, kTrainBudgetS)};
}

Verdict overfit_segmentation() {
  const RunConfig cfg = fixture_config();
  const LoadedDataset ds = load_dataset(fixture_dir());
  const auto masked = load_mask_subset(fixture_dir(), ds.records);
  TrainConfig tc = cfg.segmenter_train();
  tc.epochs = kOverfitSegEpochs;
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = train_segmenter(build_unet(cfg.unet, tc.seed), masked, tc);
  const double secs = seconds_since(t0);
  const double d = *evaluate_segmenter(run.model, masked, "train").mean_dice;
  return {d >= kOverfitDice && secs < kTrainBudgetS,
          fmt::format("{} masks, {} epochs, train mean Dice {:.4f} (need {:.2f}), {:.1f}s (budget {:.0f}s)",
                      masked.size(), tc.epochs, d, kOverfitDice, secs, kTrainBudgetS)};
}

// ---- compound scaling --------------------------------------------------------

Verdict compound_scaling() {
  CompoundScaleConfig c;
  const ScaledDims base = compound_scale(c);
  const bool identity = base == ScaledDims{c.base_depth, c.base_width, c.base_resolution};
  std::vector<std::size_t> counts;
  for (double phi : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    c.phi = phi;
    counts.push_back(ClassifierModel::scaled(compound_scale(c), 0).params().count());
  }
  // Integer rounding of depth and width makes the count a step function of
  // phi: it must never drop along the grid and must grow from 0 to 1.
  const bool monotone = std::adjacent_find(counts.begin(), counts.end(), std::greater<>()) == counts.end();
  const bool increasing = monotone && counts.back() > counts.front();
  const double f = CompoundScaleConfig{}.flops_factor();
  return {identity && increasing && f >= kFlopsLow && f <= kFlopsHigh,
          fmt::format("phi=0 -> ({},{},{}), params at phi 0, 0.25, .., 1: {}, alpha*beta^2*gamma^2 = {:.4f} in [{}, {}]",
                      base.depth, base.width, base.resolution, fmt::join(counts, " <= "), f, kFlopsLow, kFlopsHigh)};
}

// ---- split contract ----------------------------------------------------------

Verdict split_contract() {
  std::string detail;
  bool ok = true;
  for (std::size_t n : {10u, 100u, 3064u}) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(fmt::format("id{:05d}", i));
    const SplitSpec spec{0.8, 0.1, 0.1, 42};
    const DatasetSplit s = split_ids(ids, spec);
    // Floor rule in exact integer arithmetic.
    const std::size_t want_train = n * 8 / 10, want_val = n / 10;
    std::set<std::string> seen(s.train.begin(), s.train.end());
    seen.insert(s.val.begin(), s.val.end());
    seen.insert(s.test.begin(), s.test.end());
    const bool sizes = s.train.size() == want_train && s.val.size() == want_val &&
                       s.test.size() == n - want_train - want_val;
    const bool partition = seen.size() == n && seen == std::set<std::string>(ids.begin(), ids.end());
    std::vector<std::string> reversed(ids.rbegin(), ids.rend());
    const bool deterministic = split_ids(reversed, spec) == s && split_ids(ids, spec) == s;
    ok = ok && sizes && partition && deterministic;
    detail += fmt::format("N={}: {}/{}/{} ", n, s.train.size(), s.val.size(), s.test.size());
  }
  return {ok, detail + "(disjoint, exhaustive, seed-deterministic)"};
}

// ---- augmentation consistency ------------------------------------------------

Verdict augmentation_consistency() {
  AugmentConfig cfg;
  cfg.rotation_max_deg = 30;
  cfg.zoom_low = 0.8;
  cfg.zoom_high = 1.25;
  Rng rng(77);
  const int side = 48;
  BinaryMask mask(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) mask.at(y, x) = (y - 20) * (y - 20) + (x - 28) * (x - 28) <= 100 || (x > 5 && x < 12);
  Image img(side, side, 1, 0.0f, 1.0f);
  for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i];
  int mismatched = 0;
  for (int i = 0; i < kAugmentDraws; ++i) {
    const auto [out, out_mask] = apply_augment(img, mask, draw_augment(cfg, rng));
    BinaryMask thresholded(side, side);
    for (std::size_t k = 0; k < out.data.size(); ++k) thresholded.data[k] = out.data[k] >= 0.5f;
    mismatched += !(out_mask && thresholded == *out_mask);
  }
  return {mismatched == 0, fmt::format("{} draws, {} with any pixel mismatch", kAugmentDraws, mismatched)};
}

// ---- checkpoint round trip ---------------------------------------------------

Verdict checkpoint_round_trip() {
  TempDir dir("accept");
  const ClassifierModel m = ClassifierModel::baseline(fixture_config().cnn, 11);
  save_checkpoint(dir / "m.tkc", m);
  const ClassifierCheckpoint loaded = load_classifier_checkpoint(dir / "m.tkc");
  Rng rng(12);
  const Image probe = random_unit_image(m.input_resolution(), rng);
  const Probabilities before = classify(m, probe), after = classify(loaded.model, probe);
  return {before == after, before == after ? "probabilities bitwise identical" : "probabilities differ"};
}

// ---- service latency ---------------------------------------------------------

Verdict latency_budget() {
  TempDir dir("accept");
  auto store = std::make_shared<service::Store>(dir / "store");
  service::InferenceService svc(store, service::TumorInfoCatalog::load(TUMORKIT_TUMOR_INFO_PATH));
  const ScaledDims dims = compound_scale(CompoundScaleConfig{});
  svc.install_classifier(ClassifierModel::scaled(dims, 1));
  svc.create_patient({{"patient_id", "lat"}});
  const std::string id = svc.upload("lat", scan_png(kScanSide, 3)).scan.scan_id;
  std::vector<double> ms;
  for (int i = 0; i < kLatencyRequests; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    svc.classify(id, t0);
    ms.push_back(seconds_since(t0) * 1000.0);
  }
  std::sort(ms.begin(), ms.end());
  // Nearest-rank percentile.
  const double p95 = ms[static_cast<std::size_t>(std::ceil(0.95 * ms.size())) - 1];
  return {p95 < kLatencyP95Ms,
          fmt::format("scaled ({},{},{}) on {}x{} scan, {} requests, p50 {:.1f} ms, p95 {:.1f} ms (budget {:.0f} ms)",
                      dims.depth, dims.width, dims.resolution, kScanSide, kScanSide, kLatencyRequests,
                      ms[ms.size() / 2], p95, kLatencyP95Ms)};
}

// ---- service workflow over HTTP ----------------------------------------------

Verdict service_workflow() {
  using nlohmann::json;
  TempDir dir("accept");
  const RunConfig cfg = fixture_config();
  auto store = std::make_shared<service::Store>(dir / "store");
  service::InferenceService svc(store, service::TumorInfoCatalog::load(TUMORKIT_TUMOR_INFO_PATH));
  svc.install_classifier(ClassifierModel::baseline(cfg.cnn, 1));
  svc.install_segmenter(build_unet(cfg.unet, 1));
  service::HttpServer http(svc, 2);
  const int port = http.bind("127.0.0.1", 0);
  http.start();
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(30, 0);

  const auto png = scan_png(kScanSide, 8);
  const std::string body(png.begin(), png.end());
  std::vector<std::string> problems;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) problems.push_back(what);
    return cond;
  };
  auto created = c.Post("/api/v1/patients", R"({"patient_id": "w1"})", "application/json");
  expect(created && created->status == 201, "create patient");
  auto up1 = c.Post("/api/v1/patients/w1/scans", body, "image/png");
  auto up2 = c.Post("/api/v1/patients/w1/scans", body, "image/png");
  std::string scan_id;
  if (expect(up1 && up1->status == 201 && up2 && up2->status == 200, "upload statuses 201 then 200")) {
    scan_id = json::parse(up1->body)["scan_id"];
    expect(json::parse(up2->body)["scan_id"] == scan_id, "repeat upload returns the same scan");
  }
  auto cls = c.Post("/api/v1/scans/" + scan_id + "/classify");
  auto seg = c.Post("/api/v1/scans/" + scan_id + "/segment");
  expect(cls && cls->status == 200, "classify");
  expect(seg && seg->status == 200, "segment");
  auto hist = c.Get("/api/v1/patients/w1/history");
  int mask_h = -1, mask_w = -1;
  std::size_t entries = 0;
  if (expect(hist && hist->status == 200, "history")) {
    const json h = json::parse(hist->body);
    entries = h["scans"].size();
    expect(entries == 1, "history has exactly one entry");
    if (entries == 1) {
      const json e = h["scans"][0];
      expect(e["classification"]["predicted_class"].is_string(), "entry carries a class");
      expect(e["classification"]["confidence"].is_number(), "entry carries a confidence");
      auto mask = c.Get(e["segmentation"]["mask_url"].get<std::string>());
      if (expect(mask && mask->status == 200, "mask retrievable")) {
        const auto img = decode_image(
            std::span(reinterpret_cast<const std::uint8_t*>(mask->body.data()), mask->body.size()));
        if (expect(img.has_value(), "mask is a PNG")) {
          mask_h = img->height;
          mask_w = img->width;
        }
      }
    }
  }
  // The preprocessed image is the scan resized to the segmenter input.
  const int want = cfg.unet.input_size;
  expect(mask_h == want && mask_w == want, "mask dims match the preprocessed image");
  http.stop();
  std::string detail = fmt::format("history entries {}, mask {}x{} vs preprocessed {}x{}", entries, mask_h, mask_w,
                                   want, want);
  for (const auto& p : problems) detail += "; failed: " + p;
  return {problems.empty(), detail};
}

// Criterion key, printed name, check.
struct Criterion {
  const char* key;
  const char* name;
  Verdict (*check)();
};

constexpr Criterion kCriteria[] = {
    {"dice_oracle", "dice oracle equivalence", dice_oracle},
    {"probability_contract", "probability contract", probability_contract},
    {"unet_shapes", "u-net shape invariant", unet_shapes},
    {"overfit_classification", "overfit fixture (classification)", overfit_classification},
    {"overfit_segmentation", "overfit fixture (segmentation)", overfit_segmentation},
    {"compound_scaling", "compound scaling", compound_scaling},
    {"split_contract", "split contract", split_contract},
    {"augmentation_consistency", "augmentation consistency", augmentation_consistency},
    {"checkpoint_round_trip", "checkpoint round trip", checkpoint_round_trip},
    {"latency_budget", "latency budget", latency_budget},
    {"service_workflow", "service workflow", service_workflow},
};

}  // namespace

// With no arguments every criterion runs; otherwise only the named keys.
// --list prints the keys; --registered k1 k2 .. fails unless the given keys
// are exactly the compiled-in set, so the build cannot silently drop one.
int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.size() == 1 && args[0] == "--list") {
    for (const auto& c : kCriteria) std::printf("%s\n", c.key);
    return 0;
  }
  if (!args.empty() && args[0] == "--registered") {
    const std::set<std::string> given(args.begin() + 1, args.end());
    std::set<std::string> compiled;
    for (const auto& c : kCriteria) compiled.insert(c.key);
    const bool same = given == compiled && given.size() == args.size() - 1;
    std::printf("[%s] criterion registry: %zu registered, %zu compiled in\n", same ? "PASS" : "FAIL", given.size(),
                compiled.size());
    return same ? 0 : 1;
  }
  for (const auto& a : args) {
    if (std::none_of(std::begin(kCriteria), std::end(kCriteria), [&](const Criterion& c) { return a == c.key; })) {
      std::fprintf(stderr, "unknown criterion '%s' (see --list)\n", a.c_str());
      return 2;
    }
  }
  int ran = 0, failures = 0;
  for (const auto& c : kCriteria) {
    if (!args.empty() && std::find(args.begin(), args.end(), c.key) == args.end()) continue;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    ++ran;
    failures += !v.pass;
    std::printf("[%s] %s: %s\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
