#include <fstream>
#include <set>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "support.hpp"
#include "tumorkit/checkpoint.hpp"
#include "tumorkit/image_io.hpp"

using namespace tumorkit;
using nlohmann::json;
using tumorkit::testing::fixture_dir;
using tumorkit::testing::TempDir;
using tumorkit::testing::tiny_unet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

// Small, fast run config over the fixture.
json quick_config(const fs::path& out) {
  return json{{"dataset_root", fixture_dir().string()},
              {"output_dir", out.string()},
              {"preprocess", {{"target_size", 32}}},
              {"cnn", {{"conv_blocks", {{{"filters", 4}, {"kernel", 3}, {"pool", true}}}}, {"fc_width", 8}}},
              {"unet", {{"levels", 2}, {"base_filters", 4}}},
              {"train", {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 0.002}, {"seed", 1}}},
              {"segment_train", {{"epochs", 2}, {"batch_size", 4}, {"learning_rate", 0.001}, {"seed", 1}}}};
}

fs::path write_config(const TempDir& dir, const json& j, const std::string& name = "run.json") {
  const fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> v;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] == '{') v.push_back(json::parse(line));
  }
  return v;
}

std::string sample_image() { return (fixture_dir() / "glioma" / "glioma_000.png").string(); }

}  // namespace

TEST_CASE("train writes a checkpoint and reproducible reports", "[cli]") {
  TempDir dir;
  const auto cfg = write_config(dir, quick_config(dir / "a"));
  const Outcome first = run_cli({"--config", cfg.string(), "--log-level", "off", "train"});
  INFO(first.err);
  REQUIRE(first.code == 0);
  for (const char* f : {"classifier.tkc", "classifier_history.csv", "classifier_metrics_train.json",
                        "classifier_metrics_val.json", "classifier_metrics_test.json"}) {
    CHECK(fs::exists(dir / "a" / f));
  }

  const Outcome second = run_cli({"--config", cfg.string(), "--log-level", "off", "--out", (dir / "b").string(), "train"});
  REQUIRE(second.code == 0);
  CHECK(second.out == first.out);
  CHECK(slurp(dir / "a/classifier_metrics_test.json") == slurp(dir / "b/classifier_metrics_test.json"));
  CHECK(slurp(dir / "a/classifier.tkc") == slurp(dir / "b/classifier.tkc"));

  // Nothing escapes the output directory.
  std::set<std::string> top;
  for (const auto& e : fs::directory_iterator(dir.path())) top.insert(e.path().filename().string());
  CHECK(top == std::set<std::string>{"a", "b", "run.json"});

  // Stdout and the report file carry the same metrics.
  const auto lines = json_lines(first.out);
  REQUIRE(lines.size() == 3);
  const json test_file = json::parse(slurp(dir / "a/classifier_metrics_test.json"));
  CHECK(lines[2]["split"] == "test");
  CHECK(lines[2]["accuracy"] == test_file["accuracy"]);

  SECTION("evaluate and predict use the checkpoint") {
    const Outcome ev = run_cli({"--config", cfg.string(), "--log-level", "off", "evaluate", "--checkpoint",
                                (dir / "a/classifier.tkc").string(), "--split", "test"});
    REQUIRE(ev.code == 0);
    CHECK(json_lines(ev.out).at(0)["accuracy"] == test_file["accuracy"]);

    const Outcome pr = run_cli({"predict", "--checkpoint", (dir / "a/classifier.tkc").string(), sample_image()});
    REQUIRE(pr.code == 0);
    const json p = json_lines(pr.out).at(0);
    double sum = 0.0;
    for (const auto& [k, v] : p["probabilities"].items()) sum += v.get<double>();
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    CHECK(p["probabilities"].contains(p["predicted_class"].get<std::string>()));
  }
}

TEST_CASE("seed override changes the trained weights", "[cli]") {
  TempDir dir;
  const auto cfg = write_config(dir, quick_config(dir / "a"));
  REQUIRE(run_cli({"--config", cfg.string(), "--log-level", "off", "train"}).code == 0);
  REQUIRE(run_cli({"--config", cfg.string(), "--log-level", "off", "--seed", "9", "--out", (dir / "b").string(), "train"})
              .code == 0);
  CHECK(slurp(dir / "a/classifier.tkc") != slurp(dir / "b/classifier.tkc"));
}

TEST_CASE("segment task trains the U-Net and writes masks", "[cli]") {
  TempDir dir;
  const auto cfg = write_config(dir, quick_config(dir / "s"));
  const Outcome t = run_cli({"--config", cfg.string(), "--log-level", "off", "train", "--task", "segment"});
  INFO(t.err);
  REQUIRE(t.code == 0);
  CHECK(fs::exists(dir / "s/segmenter.tkc"));
  CHECK(fs::exists(dir / "s/segmenter_metrics_train.json"));

  const Outcome seg = run_cli({"segment", "--checkpoint", (dir / "s/segmenter.tkc").string(), sample_image(), "-o",
                               (dir / "mask.png").string()});
  REQUIRE(seg.code == 0);
  const auto mask = read_mask(dir / "mask.png");
  REQUIRE(mask);
  CHECK(mask->height == 32);
}

TEST_CASE("segment output matches the model resolution", "[cli]") {
  TempDir dir;
  save_checkpoint(dir / "big.tkc", build_unet(tiny_unet(256, 2, 2), 1));
  const Outcome seg = run_cli({"--out", (dir / "o").string(), "segment", "--checkpoint", (dir / "big.tkc").string(),
                               sample_image()});
  INFO(seg.err);
  REQUIRE(seg.code == 0);
  const auto mask = read_mask(dir / "o/glioma_000_mask.png");
  REQUIRE(mask);
  CHECK(mask->height == 256);
  CHECK(mask->width == 256);
}

TEST_CASE("exit codes separate usage, data and load failures", "[cli]") {
  TempDir dir;
  json typo = quick_config(dir / "x");
  typo["train"]["epoch"] = 3;
  const Outcome bad_key = run_cli({"--config", write_config(dir, typo, "typo.json").string(), "train"});
  CHECK(bad_key.code == cli::kExitUsage);
  CHECK_THAT(bad_key.err, Catch::Matchers::ContainsSubstring("train.epoch"));

  CHECK(run_cli({"train"}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);

  // A dataset with no masks cannot train the segmenter.
  fs::create_directories(dir / "nomask/glioma");
  fs::copy_file(sample_image(), dir / "nomask/glioma/a.png");
  json nomask = quick_config(dir / "y");
  nomask["dataset_root"] = (dir / "nomask").string();
  const Outcome no_masks =
      run_cli({"--config", write_config(dir, nomask, "nomask.json").string(), "train", "--task", "segment"});
  CHECK(no_masks.code == cli::kExitData);

  std::ofstream(dir / "corrupt.tkc") << "TKCKPT\r\n garbage";
  CHECK(run_cli({"--config", write_config(dir, quick_config(dir / "z")).string(), "evaluate", "--checkpoint",
                 (dir / "corrupt.tkc").string()})
            .code == cli::kExitData);
  CHECK(run_cli({"predict", "--checkpoint", (dir / "corrupt.tkc").string(), sample_image()}).code == cli::kExitData);
  CHECK(run_cli({"predict", "--checkpoint", (dir / "corrupt.tkc").string(), (dir / "none.png").string()}).code ==
        cli::kExitUsage);
}

TEST_CASE("ingest-check counts the fixture", "[cli]") {
  const Outcome o = run_cli({"ingest-check", "--dataset", fixture_dir().string()});
  REQUIRE(o.code == 0);
  const json j = json_lines(o.out).at(0);
  CHECK(j["images"] == 32);
  CHECK(j["masks"] == 8);
  CHECK(j["skipped"] == 0);
  for (const auto& [k, v] : j["per_class"].items()) CHECK(v == 8);
  CHECK(run_cli({"ingest-check", "--dataset", "/nonexistent/data"}).code == cli::kExitUsage);
}

TEST_CASE("a checkpoint trained on the fixture scores its own train set", "[cli][slow]") {
  TempDir dir;
  std::ifstream in(tumorkit::testing::source_dir() / "configs/fixture.json");
  json cfg = json::parse(in);
  cfg["dataset_root"] = fixture_dir().string();
  cfg["output_dir"] = (dir / "run").string();
  cfg["split"] = {{"train", 1.0}, {"val", 0.0}, {"test", 0.0}, {"seed", 42}};
  cfg["train"]["epochs"] = 200;
  const auto path = write_config(dir, cfg);
  REQUIRE(run_cli({"--config", path.string(), "--log-level", "off", "train"}).code == 0);
  const Outcome ev = run_cli({"--config", path.string(), "--log-level", "off", "evaluate", "--checkpoint",
                              (dir / "run/classifier.tkc").string(), "--split", "train"});
  REQUIRE(ev.code == 0);
  const json report = json_lines(ev.out).at(0);
  CHECK(report["n_samples"] == 32);
  CHECK(report["accuracy"].get<double>() >= 0.95);
  CHECK(json::parse(slurp(dir / "run/classifier_eval_train.json"))["accuracy"] == report["accuracy"]);
}
