#include "tumorkit/config_json.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "tumorkit/digest.hpp"
#include "tumorkit/error.hpp"

namespace tumorkit {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// A view of one JSON object that rejects keys outside an allow-list and
// reports type errors with the dotted key path.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
      if (!ok.contains(key)) throw ConfigError("unknown config key '" + qualified(key) + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "config key '" + path_ + "'"; }

  const json& j_;
  std::string path_;
};

CnnConfig parse_cnn(const json& j, const std::string& path) {
  StrictObject o(j, path, {"conv_blocks", "fc_width", "num_classes", "input_size"});
  CnnConfig c;
  if (o.has("conv_blocks")) {
    const json& blocks = o.raw("conv_blocks");
    if (!blocks.is_array()) throw ConfigError("config key '" + o.qualified("conv_blocks") + "' must be an array");
    c.conv_blocks.clear();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      StrictObject b(blocks[i], o.qualified("conv_blocks") + "[" + std::to_string(i) + "]",
                     {"filters", "kernel", "pool"});
      ConvBlockSpec spec;
      b.read("filters", spec.filters);
      b.read("kernel", spec.kernel);
      b.read("pool", spec.pool);
      c.conv_blocks.push_back(spec);
    }
  }
  o.read("fc_width", c.fc_width);
  o.read("num_classes", c.num_classes);
  o.read("input_size", c.input_size);
  return c;
}

CompoundScaleConfig parse_compound(const json& j, const std::string& path) {
  StrictObject o(j, path, {"phi", "alpha", "beta", "gamma", "base_depth", "base_width", "base_resolution"});
  CompoundScaleConfig c;
  o.read("phi", c.phi);
  o.read("alpha", c.alpha);
  o.read("beta", c.beta);
  o.read("gamma", c.gamma);
  o.read("base_depth", c.base_depth);
  o.read("base_width", c.base_width);
  o.read("base_resolution", c.base_resolution);
  return c;
}

UNetConfig parse_unet(const json& j, const std::string& path) {
  StrictObject o(j, path, {"levels", "base_filters", "input_size"});
  UNetConfig c;
  o.read("levels", c.levels);
  o.read("base_filters", c.base_filters);
  o.read("input_size", c.input_size);
  return c;
}

AugmentConfig parse_augment(const json& j, const std::string& path) {
  StrictObject o(j, path, {"rotation_max_deg", "hflip_prob", "zoom_range", "seed"});
  AugmentConfig c;
  o.read("rotation_max_deg", c.rotation_max_deg);
  o.read("hflip_prob", c.hflip_prob);
  if (o.has("zoom_range")) {
    const json& z = o.raw("zoom_range");
    if (!z.is_array() || z.size() != 2 || !z[0].is_number() || !z[1].is_number()) {
      throw ConfigError("config key '" + o.qualified("zoom_range") + "' must be [low, high]");
    }
    c.zoom_low = z[0].get<double>();
    c.zoom_high = z[1].get<double>();
  }
  o.read("seed", c.seed);
  return c;
}

PreprocessConfig parse_preprocess(const json& j, const std::string& path) {
  StrictObject o(j, path, {"target_size", "normalize"});
  PreprocessConfig c;
  o.read("target_size", c.target_size);
  if (o.has("normalize")) {
    std::string mode;
    o.read("normalize", mode);
    if (mode != "unit_range") {
      throw ConfigError("config key '" + o.qualified("normalize") + "' must be \"unit_range\"");
    }
  }
  return c;
}

SplitSpec parse_split(const json& j, const std::string& path) {
  StrictObject o(j, path, {"train", "val", "test", "seed"});
  SplitSpec s;
  o.read("train", s.train_frac);
  o.read("val", s.val_frac);
  o.read("test", s.test_frac);
  o.read("seed", s.seed);
  return s;
}

TrainConfig parse_train(const json& j, const std::string& path, bool allow_augment) {
  StrictObject o = allow_augment
                       ? StrictObject(j, path, {"epochs", "batch_size", "learning_rate", "seed", "augment",
                                                "early_stop_patience"})
                       : StrictObject(j, path, {"epochs", "batch_size", "learning_rate", "seed",
                                                "early_stop_patience"});
  TrainConfig c;
  o.read("epochs", c.epochs);
  o.read("batch_size", c.batch_size);
  o.read("learning_rate", c.learning_rate);
  o.read("seed", c.seed);
  if (allow_augment && o.has("augment")) c.augment = parse_augment(o.raw("augment"), o.qualified("augment"));
  if (o.has("early_stop_patience") && !o.raw("early_stop_patience").is_null()) {
    int p = 0;
    o.read("early_stop_patience", p);
    c.early_stop_patience = p;
  }
  return c;
}

// Wraps validate() so the message carries the section name.
template <typename T>
void validate_section(const T& value, const char* section) {
  try {
    value.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

ordered_json train_json(const TrainConfig& c, bool with_augment) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  if (with_augment) j["augment"] = to_json(c.augment);
  j["early_stop_patience"] = c.early_stop_patience ? ordered_json(*c.early_stop_patience) : ordered_json(nullptr);
  return j;
}

const char* model_choice_name(ModelChoice m) {
  switch (m) {
    case ModelChoice::baseline_cnn: return "baseline_cnn";
    case ModelChoice::scaled: return "scaled";
    case ModelChoice::both: return "both";
  }
  return "baseline_cnn";
}

}  // namespace

CnnConfig cnn_config_from_json(const json& j) { return parse_cnn(j, ""); }
CompoundScaleConfig compound_scale_from_json(const json& j) { return parse_compound(j, ""); }
UNetConfig unet_config_from_json(const json& j) { return parse_unet(j, ""); }
AugmentConfig augment_config_from_json(const json& j) { return parse_augment(j, ""); }
PreprocessConfig preprocess_config_from_json(const json& j) { return parse_preprocess(j, ""); }
SplitSpec split_spec_from_json(const json& j) { return parse_split(j, ""); }
TrainConfig train_config_from_json(const json& j) { return parse_train(j, "", true); }

ScaledDims scaled_dims_from_json(const json& j) {
  StrictObject o(j, "", {"depth", "width", "resolution"});
  ScaledDims d;
  o.read("depth", d.depth);
  o.read("width", d.width);
  o.read("resolution", d.resolution);
  return d;
}

ordered_json to_json(const CnnConfig& c) {
  ordered_json blocks = ordered_json::array();
  for (const auto& b : c.conv_blocks) {
    blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}, {"pool", b.pool}});
  }
  ordered_json j;
  j["conv_blocks"] = blocks;
  j["fc_width"] = c.fc_width;
  j["num_classes"] = c.num_classes;
  j["input_size"] = c.input_size;
  return j;
}

ordered_json to_json(const ScaledDims& d) {
  ordered_json j;
  j["depth"] = d.depth;
  j["width"] = d.width;
  j["resolution"] = d.resolution;
  return j;
}

ordered_json to_json(const UNetConfig& c) {
  ordered_json j;
  j["levels"] = c.levels;
  j["base_filters"] = c.base_filters;
  j["input_size"] = c.input_size;
  return j;
}

ordered_json to_json(const AugmentConfig& c) {
  ordered_json j;
  j["rotation_max_deg"] = c.rotation_max_deg;
  j["hflip_prob"] = c.hflip_prob;
  j["zoom_range"] = {c.zoom_low, c.zoom_high};
  j["seed"] = c.seed;
  return j;
}

ordered_json to_json(const PreprocessConfig& c) {
  ordered_json j;
  j["target_size"] = c.target_size;
  j["normalize"] = "unit_range";
  return j;
}

ordered_json to_json(const SplitSpec& s) {
  ordered_json j;
  j["train"] = s.train_frac;
  j["val"] = s.val_frac;
  j["test"] = s.test_frac;
  j["seed"] = s.seed;
  return j;
}

ordered_json to_json(const TrainConfig& c) { return train_json(c, true); }

ordered_json arch_to_json(const ClassifierArch& arch) {
  ordered_json j;
  if (const auto* cnn = std::get_if<CnnConfig>(&arch)) {
    j["type"] = "baseline_cnn";
    const ordered_json fields = to_json(*cnn);
    for (const auto& [k, v] : fields.items()) j[k] = v;
  } else {
    j["type"] = "scaled";
    const ordered_json fields = to_json(std::get<ScaledDims>(arch));
    for (const auto& [k, v] : fields.items()) j[k] = v;
  }
  return j;
}

ClassifierArch arch_from_json(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ConfigError("arch descriptor needs a string 'type'");
  }
  json rest = j;
  rest.erase("type");
  const auto type = j["type"].get<std::string>();
  if (type == "baseline_cnn") return cnn_config_from_json(rest);
  if (type == "scaled") return scaled_dims_from_json(rest);
  throw ConfigError("unknown arch type '" + type + "'");
}

void RunConfig::validate() const {
  validate_section(split, "split");
  validate_section(preprocess, "preprocess");
  validate_section(augment, "augment");
  if (model != ModelChoice::scaled) validate_section(cnn, "cnn");
  if (model != ModelChoice::baseline_cnn) {
    validate_section(compound_scale, "compound_scale");
    try {
      scaled_block_plan(tumorkit::compound_scale(compound_scale));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("compound_scale: ") + e.what());
    }
  }
  validate_section(unet, "unet");
  validate_section(train, "train");
  if (segment_train) validate_section(*segment_train, "segment_train");
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  StrictObject o(j, "", {"dataset_root", "output_dir", "split", "preprocess", "augment", "model", "cnn",
                         "compound_scale", "unet", "train", "segment_train"});
  RunConfig c;
  auto read_path = [&](const char* key, std::filesystem::path& out) {
    if (!o.has(key)) return;
    std::string s;
    o.read(key, s);
    std::filesystem::path p(s);
    out = p.is_absolute() ? p : base_dir / p;
  };
  read_path("dataset_root", c.dataset_root);
  read_path("output_dir", c.output_dir);
  if (!o.has("output_dir")) c.output_dir = base_dir / c.output_dir;
  if (!c.dataset_root.empty() && !std::filesystem::is_directory(c.dataset_root)) {
    throw ConfigError("dataset_root '" + c.dataset_root.string() + "' is not a directory");
  }
  if (o.has("split")) c.split = parse_split(o.raw("split"), "split");
  if (o.has("preprocess")) c.preprocess = parse_preprocess(o.raw("preprocess"), "preprocess");
  if (o.has("augment")) c.augment = parse_augment(o.raw("augment"), "augment");
  if (o.has("model")) {
    std::string m;
    o.read("model", m);
    if (m == "baseline_cnn") {
      c.model = ModelChoice::baseline_cnn;
    } else if (m == "scaled") {
      c.model = ModelChoice::scaled;
    } else if (m == "both") {
      c.model = ModelChoice::both;
    } else {
      throw ConfigError("config key 'model' must be baseline_cnn, scaled or both, got '" + m + "'");
    }
  }
  c.cnn.input_size = c.preprocess.target_size;
  c.unet.input_size = c.preprocess.target_size;
  if (o.has("cnn")) {
    const json& cj = o.raw("cnn");
    c.cnn = parse_cnn(cj, "cnn");
    if (!cj.contains("input_size")) c.cnn.input_size = c.preprocess.target_size;
  }
  if (o.has("compound_scale")) c.compound_scale = parse_compound(o.raw("compound_scale"), "compound_scale");
  if (o.has("unet")) {
    const json& uj = o.raw("unet");
    c.unet = parse_unet(uj, "unet");
    if (!uj.contains("input_size")) c.unet.input_size = c.preprocess.target_size;
  }
  if (o.has("train")) c.train = parse_train(o.raw("train"), "train", false);
  c.train.augment = c.augment;
  if (o.has("segment_train")) {
    c.segment_train = parse_train(o.raw("segment_train"), "segment_train", false);
    c.segment_train->augment = c.augment;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path().empty() ? "." : path.parent_path());
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["dataset_root"] = c.dataset_root.generic_string();
  j["output_dir"] = c.output_dir.generic_string();
  j["split"] = to_json(c.split);
  j["preprocess"] = to_json(c.preprocess);
  j["augment"] = to_json(c.augment);
  j["model"] = model_choice_name(c.model);
  j["cnn"] = to_json(c.cnn);
  ordered_json cs;
  cs["phi"] = c.compound_scale.phi;
  cs["alpha"] = c.compound_scale.alpha;
  cs["beta"] = c.compound_scale.beta;
  cs["gamma"] = c.compound_scale.gamma;
  cs["base_depth"] = c.compound_scale.base_depth;
  cs["base_width"] = c.compound_scale.base_width;
  cs["base_resolution"] = c.compound_scale.base_resolution;
  j["compound_scale"] = cs;
  j["unet"] = to_json(c.unet);
  j["train"] = train_json(c.train, false);
  if (c.segment_train) j["segment_train"] = train_json(*c.segment_train, false);
  return j;
}

std::string config_digest(const RunConfig& c) {
  // Paths are excluded so the digest does not depend on where a run happens.
  ordered_json j = to_json(c);
  j.erase("dataset_root");
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

}  // namespace tumorkit
