#include "commands.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tumorkit/checkpoint.hpp"
#include "tumorkit/config_json.hpp"
#include "tumorkit/dataset.hpp"
#include "tumorkit/digest.hpp"
#include "tumorkit/error.hpp"
#include "tumorkit/image_io.hpp"
#include "tumorkit/preprocess.hpp"
#include "tumorkit/service/http_server.hpp"
#include "tumorkit/service/service_config.hpp"
#include "tumorkit/training.hpp"

namespace tumorkit::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

std::ostream* g_out = nullptr;

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

RunConfig require_run_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("this command needs --config <run config>");
  RunConfig c = load_run_config(g.config);
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.seed) {
    c.train.seed = *g.seed;
    if (c.segment_train) c.segment_train->seed = *g.seed;
  }
  return c;
}

std::vector<ScanRecord> load_records(const fs::path& root, bool masks_only) {
  if (root.empty()) throw ConfigError("no dataset root given (set dataset_root or pass --dataset)");
  LoadedDataset data = load_dataset(root);
  if (data.skipped > 0) spdlog::warn("skipped {} unreadable files under '{}'", data.skipped, root.string());
  if (data.records.empty()) throw DataError("dataset '" + root.string() + "' contains no readable images");
  if (!masks_only) return std::move(data.records);
  auto masked = load_mask_subset(root, data.records);
  if (masked.empty()) throw DataError("dataset '" + root.string() + "' has no usable masks");
  return masked;
}

std::vector<ScanRecord> select_split(const RecordStore& store, const DatasetSplit& split, const std::string& name) {
  if (name == "all") return {store.records().begin(), store.records().end()};
  if (name == "train") return store.gather(split.train);
  if (name == "val") return store.gather(split.val);
  if (name == "test") return store.gather(split.test);
  throw ArgumentError("split must be train, val, test or all, got '" + name + "'");
}

nlohmann::ordered_json config_without_paths(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("dataset_root");
  j.erase("output_dir");
  return j;
}

void emit_report(const MetricsReport& r, const fs::path& path) {
  write_text(path, r.to_json_string() + "\n");
  *g_out << r.to_json().dump() << "\n";
}

// ---- train -----------------------------------------------------------------

int train_classify(const RunConfig& c) {
  auto records = load_records(c.dataset_root, false);
  const DatasetSplit split = split_dataset(records, c.split);
  const RecordStore store(std::move(records));
  const std::string digest = config_digest(c);

  std::vector<ClassifierArch> archs;
  if (c.model != ModelChoice::scaled) archs.emplace_back(c.cnn);
  if (c.model != ModelChoice::baseline_cnn) archs.emplace_back(compound_scale(c.compound_scale));

  std::vector<ClassifierTraining> runs;
  std::vector<MetricsReport> val_reports;
  const bool has_val = !split.val.empty();
  for (const auto& arch : archs) {
    ClassifierModel model = ClassifierModel::from_arch(arch, c.train.seed);
    spdlog::info("training {} ({} parameters) for up to {} epochs", model.arch_name(), model.params().count(),
                 c.train.epochs);
    auto run = train_classifier(std::move(model), split, store, c.train);
    const auto selection_set = store.gather(has_val ? split.val : split.train);
    val_reports.push_back(evaluate_classifier(run.model, selection_set, has_val ? "val" : "train"));
    runs.push_back(std::move(run));
  }
  const std::size_t best = select_best_index(val_reports);
  const ClassifierTraining& chosen = runs[best];
  const fs::path out = c.output_dir;
  fs::create_directories(out);

  if (runs.size() > 1) {
    auto cands = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      nlohmann::ordered_json e;
      e["arch"] = arch_to_json(runs[i].model.arch());
      e["selection_split"] = val_reports[i].split;
      e["accuracy"] = *val_reports[i].accuracy;
      e["selected"] = i == best;
      cands.push_back(e);
      write_text(out / fmt::format("classifier_history_{}.csv", runs[i].model.arch_name()), runs[i].history.to_csv());
    }
    write_text(out / "classifier_candidates.json", cands.dump(2) + "\n");
  }
  write_text(out / "classifier_history.csv", chosen.history.to_csv());

  for (const char* name : {"train", "val", "test"}) {
    const auto set = select_split(store, split, name);
    if (set.empty()) continue;
    MetricsReport r = evaluate_classifier(chosen.model, set, name);
    r.config_digest = digest;
    emit_report(r, out / fmt::format("classifier_metrics_{}.json", name));
  }

  nlohmann::json meta;
  meta["task"] = "classify";
  meta["config"] = config_without_paths(c);
  meta["config_digest"] = digest;
  meta["epochs_run"] = chosen.history.epochs.size();
  meta["best_epoch"] = chosen.history.best_epoch;
  meta["selection_metric"] = val_reports[best].primary_metric();
  save_checkpoint(out / "classifier.tkc", chosen.model, meta);
  spdlog::info("wrote {}", (out / "classifier.tkc").string());
  return kExitOk;
}

int train_segment(const RunConfig& c) {
  auto records = load_records(c.dataset_root, true);
  const DatasetSplit split = split_dataset(records, c.split);
  const RecordStore store(std::move(records));
  const std::string digest = config_digest(c);
  const TrainConfig& tc = c.segmenter_train();

  SegModel model = build_unet(c.unet, tc.seed);
  spdlog::info("training U-Net ({} parameters) on {} masks for up to {} epochs", model.params().count(),
               split.train.size(), tc.epochs);
  const auto train_set = store.gather(split.train);
  const auto val_set = store.gather(split.val);
  SegmenterTraining run = train_segmenter(std::move(model), train_set, tc, val_set);
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  write_text(out / "segmenter_history.csv", run.history.to_csv());

  std::optional<double> selection;
  for (const char* name : {"train", "val", "test"}) {
    const auto set = select_split(store, split, name);
    if (set.empty()) continue;
    MetricsReport r = evaluate_segmenter(run.model, set, name);
    r.config_digest = digest;
    if (!selection || std::string(name) == "val") selection = *r.mean_dice;
    emit_report(r, out / fmt::format("segmenter_metrics_{}.json", name));
  }

  nlohmann::json meta;
  meta["task"] = "segment";
  meta["config"] = config_without_paths(c);
  meta["config_digest"] = digest;
  meta["epochs_run"] = run.history.epochs.size();
  meta["best_epoch"] = run.history.best_epoch;
  if (selection) meta["selection_metric"] = *selection;
  save_checkpoint(out / "segmenter.tkc", run.model, meta);
  spdlog::info("wrote {}", (out / "segmenter.tkc").string());
  return kExitOk;
}

// ---- evaluate / predict / segment --------------------------------------------

int cmd_evaluate(const Globals& g, const std::string& checkpoint, const std::string& dataset,
                 const std::string& split_name) {
  std::optional<RunConfig> config;
  if (!g.config.empty()) config = require_run_config(g);
  const SplitSpec spec = config ? config->split : SplitSpec{};
  const fs::path root = !dataset.empty() ? fs::path(dataset) : config ? config->dataset_root : fs::path();
  fs::path out = !g.out.empty() ? fs::path(g.out) : config ? config->output_dir : fs::path(".");

  const auto bytes = [&] {
    try {
      return read_file(checkpoint);
    } catch (const std::exception& e) {
      throw LoadError("cannot read checkpoint '" + checkpoint + "': " + e.what());
    }
  }();
  const CheckpointKind kind = peek_checkpoint_kind(bytes);
  const bool seg = kind == CheckpointKind::segmenter;
  auto records = load_records(root, seg);
  const DatasetSplit split = split_dataset(records, spec);
  const RecordStore store(std::move(records));
  const auto set = select_split(store, split, split_name);
  if (set.empty()) throw DataError("split '" + split_name + "' is empty for this dataset");

  MetricsReport report = seg ? evaluate_segmenter(decode_segmenter_checkpoint(bytes).model, set, split_name)
                             : evaluate_classifier(decode_classifier_checkpoint(bytes).model, set, split_name);
  if (config) report.config_digest = config_digest(*config);
  emit_report(report, out / fmt::format("{}_eval_{}.json", seg ? "segmenter" : "classifier", split_name));
  return kExitOk;
}

Image read_input_image(const std::string& path) {
  auto img = read_image(path);
  if (!img) throw ConfigError("cannot read image '" + path + "'");
  return std::move(*img);
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path) {
  const Image image = read_input_image(image_path);
  const ClassifierCheckpoint ck = load_classifier_checkpoint(checkpoint);
  const Probabilities p = classify(ck.model, prepare_model_input(image, ck.model.input_resolution()));
  const auto [cls, confidence] = predict_class(p);
  nlohmann::ordered_json probs;
  for (TumorClass c : kClassOrder) probs[std::string(to_string(c))] = p.values[static_cast<std::size_t>(class_index(c))];
  nlohmann::ordered_json j;
  j["image"] = image_path;
  j["predicted_class"] = std::string(to_string(cls));
  j["confidence"] = confidence;
  j["probabilities"] = probs;
  j["model_digest"] = params_digest(ck.model.params());
  *g_out << j.dump() << "\n";
  return kExitOk;
}

int cmd_segment(const Globals& g, const std::string& checkpoint, const std::string& image_path,
                const std::string& output) {
  const Image image = read_input_image(image_path);
  const SegmenterCheckpoint ck = load_segmenter_checkpoint(checkpoint);
  const SegMask mask = threshold_mask(segment(ck.model, prepare_model_input(image, ck.model.config().input_size)));
  fs::path dest = output;
  if (dest.empty()) {
    dest = fs::path(g.out.empty() ? "." : g.out) / (fs::path(image_path).stem().string() + "_mask.png");
  }
  if (!dest.parent_path().empty()) fs::create_directories(dest.parent_path());
  write_file(dest, encode_mask_png(mask));
  nlohmann::ordered_json j;
  j["image"] = image_path;
  j["mask"] = dest.generic_string();
  j["height"] = mask.height;
  j["width"] = mask.width;
  j["tumor_pixels"] = mask.count();
  *g_out << j.dump() << "\n";
  return kExitOk;
}

int cmd_ingest_check(const Globals& g, const std::string& dataset) {
  fs::path root = dataset;
  if (root.empty()) root = require_run_config(g).dataset_root;
  if (root.empty()) throw ConfigError("no dataset root given (set dataset_root or pass --dataset)");
  const LoadedDataset data = load_dataset(root);
  std::map<TumorClass, std::size_t> per_class;
  for (const auto& r : data.records) {
    if (r.label) ++per_class[*r.label];
  }
  const auto masks = load_mask_subset(root, data.records);
  nlohmann::ordered_json counts;
  for (TumorClass c : kClassOrder) counts[std::string(to_string(c))] = per_class[c];
  nlohmann::ordered_json j;
  j["root"] = root.generic_string();
  j["images"] = data.records.size();
  j["per_class"] = counts;
  j["masks"] = masks.size();
  j["skipped"] = data.skipped;
  *g_out << j.dump() << "\n";
  return data.records.empty() ? kExitData : kExitOk;
}

// ---- serve -------------------------------------------------------------------

int cmd_serve(const Globals& g) {
  std::shared_ptr<service::Store> store;
  std::optional<service::InferenceService> svc;
  std::optional<service::HttpServer> server;
  service::ServiceConfig cfg;
  try {
    if (!g.config.empty()) cfg = service::load_service_config(g.config);
    service::apply_env_overrides(cfg);
    store = std::make_shared<service::Store>(cfg.store_path);
    svc.emplace(store, service::TumorInfoCatalog::load(cfg.tumor_info_path), cfg.auto_create_patient);
    if (cfg.classifier_checkpoint) svc->install_classifier(load_classifier_checkpoint(*cfg.classifier_checkpoint).model);
    if (cfg.segmenter_checkpoint) svc->install_segmenter(load_segmenter_checkpoint(*cfg.segmenter_checkpoint).model);
    server.emplace(*svc, cfg.worker_threads);
    server->bind(cfg.bind_address, cfg.port);
  } catch (const std::exception& e) {
    spdlog::error("serve failed to start: {}", e.what());
    return kExitStartup;
  }

  // Termination signals are taken synchronously by a watcher thread; every
  // thread started after this point inherits the blocked mask.
  sigset_t set, previous;
  sigemptyset(&set);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGUSR1);
  pthread_sigmask(SIG_BLOCK, &set, &previous);
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&set, &sig);
    if (sig != SIGUSR1) spdlog::info("received signal {}, shutting down", sig);
    server->stop();
  });

  *g_out << fmt::format("listening on http://{}:{}", cfg.bind_address, server->port()) << std::endl;
  spdlog::info("serving store '{}' (classifier: {}, segmenter: {})", cfg.store_path.string(),
               svc->has_classifier() ? "loaded" : "none", svc->has_segmenter() ? "loaded" : "none");
  server->serve();
  pthread_kill(watcher.native_handle(), SIGUSR1);
  watcher.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  return kExitOk;
}

void configure_logging(const std::string& level, std::ostream& err) {
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError("unknown log level '" + level + "'");
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("tumorkit", std::move(sink));
  logger->set_pattern("[%l] %v");
  logger->set_level(lvl);
  spdlog::set_default_logger(std::move(logger));
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return kExitUsage;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const LoadError*>(&e)) return kExitData;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitUsage;
  return kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brain MRI tumor classification and segmentation toolkit", "tumorkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (run config; service config for serve)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Override the training seed");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  std::string task = "classify", checkpoint, dataset, split_name = "test", image, output;
  auto* train = app.add_subcommand("train", "Train a classifier or the segmenter from a run config");
  train->add_option("--task", task, "classify or segment")->check(CLI::IsMember({"classify", "segment"}));
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--dataset", dataset, "Dataset root (defaults to the config's)");
  evaluate->add_option("--split", split_name, "train, val, test or all");
  auto* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("image", image)->required();
  auto* seg = app.add_subcommand("segment", "Write the tumor mask of one image");
  seg->add_option("--checkpoint", checkpoint)->required();
  seg->add_option("image", image)->required();
  seg->add_option("--output,-o", output, "Mask PNG path");
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  auto* ingest = app.add_subcommand("ingest-check", "Validate a dataset layout and print counts");
  ingest->add_option("--dataset", dataset, "Dataset root (defaults to the config's)");
  for (auto* sub : {train, evaluate, predict, seg, serve, ingest}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  g_out = &out;
  // The logger writes into err, so it must not outlive this call.
  struct RestoreLogger {
    ~RestoreLogger() { spdlog::set_default_logger(std::make_shared<spdlog::logger>(
          "tumorkit", std::make_shared<spdlog::sinks::stderr_color_sink_mt>())); }
  } restore;
  try {
    configure_logging(g.log_level, err);
    if (*train) {
      const RunConfig c = require_run_config(g);
      return task == "segment" ? train_segment(c) : train_classify(c);
    }
    if (*evaluate) return cmd_evaluate(g, checkpoint, dataset, split_name);
    if (*predict) return cmd_predict(checkpoint, image);
    if (*seg) return cmd_segment(g, checkpoint, image, output);
    if (*serve) return cmd_serve(g);
    if (*ingest) return cmd_ingest_check(g, dataset);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitUsage;
}

}  // namespace tumorkit::cli
