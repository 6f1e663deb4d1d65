#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "patchrank/data.hpp"
#include "patchrank/errors.hpp"
#include "patchrank/masking.hpp"
#include "patchrank/models.hpp"
#include "patchrank/scoring.hpp"
#include "patchrank/training.hpp"

namespace patchrank {

using nlohmann::json;

enum class DataSource { kSynthetic, kFolder };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  std::filesystem::path train_dir;  // folder source only
  std::filesystem::path test_dir;
  int image_size = 64;  // folder source only; synthetic uses synth.image_size
  int channels = 1;
  std::map<std::string, Label> label_rule{{"normal", Label::kNormal}, {"abnormal", Label::kAbnormal}};
};

struct ScoringConfig {
  PatchGrid grid;
  RankWeightSchedule schedule;
  InferencePolicy inference;
  bool heatmaps = true;
  HeatmapScale heatmap_scale = HeatmapScale::kPerImage;
  double heatmap_fixed_max = 0.05;
};

/// Everything one pipeline run needs, parsed from a single JSON document.
struct RunConfig {
  std::uint64_t seed = 1;
  bool double_precision = false;
  SynthSpec synth;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  ScoringConfig scoring;
  int eval_bins = 20;

  RunConfig() { train.checkpoint_every = 5; }

  /// Applies cross-section wiring (seeds, image geometry) and validates.
  void resolve() {
    synth.seed = seed;
    train.seed = seed;
    scoring.inference.seed = seed;
    if (data.source == DataSource::kSynthetic) {
      model.image_size = synth.image_size;
      model.channels = synth.channels;
    } else {
      model.image_size = data.image_size;
      model.channels = data.channels;
    }
    model.patch_size = scoring.grid.patch_size;
    scoring.inference.mask.box_count = train.mask.box_count;
    scoring.inference.mask.box_size = train.mask.box_size;
    scoring.inference.mask.fill_value = train.mask.fill_value;
    validate();
  }

  void validate() const {
    if (data.source == DataSource::kSynthetic) synth.validate("synth");
    if (data.source == DataSource::kFolder) {
      if (data.train_dir.empty() && data.test_dir.empty()) {
        throw ConfigError("data.train_dir: folder source needs train_dir and/or test_dir");
      }
      if (data.channels != 1 && data.channels != 3) throw ConfigError("data.channels: must be 1 or 3");
    }
    model.validate("model");
    train.validate("train");
    const auto side = static_cast<std::size_t>(model.image_size);
    train.mask.validate(side, side, "mask");
    scoring.grid.validate(side, side);
    scoring.schedule.validate("scoring");
    if (scoring.inference.samples < 1) throw ConfigError("scoring.inference_mask.samples: must be >= 1");
    if (eval_bins < 1) throw ConfigError("eval.bins: must be >= 1");
  }
};

namespace detail {

/// Reads a JSON object field by field and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  template <typename T>
  void get_range(const std::string& key, Range<T>& out) {
    std::vector<T> v;
    get(key, v);
    if (!j_.contains(key)) return;
    if (v.size() != 2) throw ConfigError(field(key) + ": expected [min, max]");
    out = {v[0], v[1]};
  }

  template <typename Parse, typename T>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  StrictObject child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json kEmpty = json::object();
    return StrictObject(it == j_.end() ? kEmpty : *it, field(key));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_optimizer(StrictObject o, OptimizerSettings& s) {
  o.get_enum("kind", s.kind, parse_optimizer_kind);
  o.get("learning_rate", s.learning_rate);
  o.get("beta1", s.beta1);
  o.get("beta2", s.beta2);
  o.get("epsilon", s.epsilon);
  o.finish();
}

inline json optimizer_json(const OptimizerSettings& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"learning_rate", s.learning_rate},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"epsilon", s.epsilon}};
}

inline std::string_view data_source_name(DataSource s) { return s == DataSource::kSynthetic ? "synthetic" : "folder"; }

inline DataSource parse_data_source(std::string_view s) {
  if (s == "synthetic") return DataSource::kSynthetic;
  if (s == "folder") return DataSource::kFolder;
  throw ConfigError("unknown data source '" + std::string(s) + "'");
}

inline InferenceMask parse_inference_mask(std::string_view s) {
  if (s == "none") return InferenceMask::kNone;
  if (s == "multi") return InferenceMask::kMulti;
  throw ConfigError("unknown inference mask mode '" + std::string(s) + "'");
}

inline HeatmapScale parse_heatmap_scale(std::string_view s) {
  if (s == "per_image") return HeatmapScale::kPerImage;
  if (s == "fixed") return HeatmapScale::kFixed;
  throw ConfigError("unknown heatmap scale '" + std::string(s) + "'");
}

inline std::string_view element_type_name(bool dbl) { return dbl ? "float64" : "float32"; }

inline bool parse_element_type(std::string_view s) {
  if (s == "float32") return false;
  if (s == "float64") return true;
  throw ConfigError("unknown element type '" + std::string(s) + "'");
}

}  // namespace detail

/// Parses a config document; absent keys keep their defaults, unknown keys
/// are rejected with their field path. Call resolve() afterwards.
inline RunConfig parse_run_config(const json& j) {
  using detail::StrictObject;
  RunConfig c;
  StrictObject root(j, "");
  root.get("seed", c.seed);
  root.get_enum("element_type", c.double_precision, detail::parse_element_type);

  {
    auto s = root.child("synth");
    s.get("train_count", c.synth.train_count);
    s.get("test_normal_count", c.synth.test_normal_count);
    s.get("test_abnormal_count", c.synth.test_abnormal_count);
    s.get("image_size", c.synth.image_size);
    s.get("channels", c.synth.channels);
    s.get("noise_smoothness", c.synth.noise_smoothness);
    s.get("noise_amplitude", c.synth.noise_amplitude);
    s.get("pattern_frequency", c.synth.pattern_frequency);
    s.get("pattern_amplitude", c.synth.pattern_amplitude);
    s.get_range("blob_count", c.synth.blob_count);
    s.get_range("blob_radius", c.synth.blob_radius);
    s.get_range("blob_delta", c.synth.blob_delta);
    s.finish();
  }
  {
    auto d = root.child("data");
    d.get_enum("source", c.data.source, detail::parse_data_source);
    std::string train_dir, test_dir;
    d.get("train_dir", train_dir);
    d.get("test_dir", test_dir);
    c.data.train_dir = train_dir;
    c.data.test_dir = test_dir;
    d.get("image_size", c.data.image_size);
    d.get("channels", c.data.channels);
    if (d.has("label_rule")) {
      std::map<std::string, std::string> rule;
      d.get("label_rule", rule);
      c.data.label_rule.clear();
      for (const auto& [folder, label] : rule) {
        try {
          c.data.label_rule[folder] = parse_label(label);
        } catch (const ConfigError& e) {
          throw ConfigError(d.field("label_rule." + folder) + ": " + e.what());
        }
      }
    }
    d.finish();
  }
  {
    auto m = root.child("mask");
    m.get_range("box_count", c.train.mask.box_count);
    m.get_range("box_size", c.train.mask.box_size);
    m.get("fill_value", c.train.mask.fill_value);
    m.get("seed", c.train.mask.seed);
    m.finish();
  }
  {
    auto m = root.child("model");
    m.get("encoder_channels", c.model.encoder_channels);
    m.get("discriminator_channels", c.model.discriminator_channels);
    m.get("leaky_slope", c.model.leaky_slope);
    m.get_enum("init", c.model.init, parse_init_scheme);
    m.get("init_std", c.model.init_std);
    m.finish();
  }
  {
    auto t = root.child("train");
    t.get("lambda_rec", c.train.lambda_rec);
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get_enum("mode", c.train.mode, parse_ablation_mode);
    t.get_enum("adversarial_form", c.train.adversarial_form, parse_adversarial_form);
    t.get("patch_consistency_weight", c.train.patch_consistency_weight);
    t.get("discriminator_steps", c.train.discriminator_steps);
    t.get("checkpoint_every", c.train.checkpoint_every);
    t.get("run_id", c.train.run_id);
    detail::read_optimizer(t.child("optimizer"), c.train.reconstructor_optimizer);
    detail::read_optimizer(t.child("discriminator_optimizer"), c.train.discriminator_optimizer);
    t.finish();
  }
  {
    auto s = root.child("scoring");
    s.get("patch_size", c.scoring.grid.patch_size);
    s.get("stride", c.scoring.grid.stride);
    if (s.has("patch_size") && !s.has("stride")) c.scoring.grid.stride = c.scoring.grid.patch_size;
    s.get_enum("mode", c.scoring.schedule.mode, parse_weight_mode);
    s.get("weights", c.scoring.schedule.head);
    s.get("tail_weight", c.scoring.schedule.tail);
    s.get("decay", c.scoring.schedule.decay);
    s.get("top_k", c.scoring.schedule.top_k);
    {
      auto im = s.child("inference_mask");
      im.get_enum("mode", c.scoring.inference.mode, detail::parse_inference_mask);
      im.get("samples", c.scoring.inference.samples);
      im.get("seed", c.scoring.inference.mask.seed);
      im.finish();
    }
    s.get("heatmaps", c.scoring.heatmaps);
    s.get_enum("heatmap_scale", c.scoring.heatmap_scale, detail::parse_heatmap_scale);
    s.get("heatmap_fixed_max", c.scoring.heatmap_fixed_max);
    s.finish();
  }
  {
    auto e = root.child("eval");
    e.get("bins", c.eval_bins);
    e.finish();
  }
  root.finish();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

/// Fully resolved config as JSON; parse_run_config(to_json(c)) reproduces c.
inline json to_json(const RunConfig& c) {
  json label_rule = json::object();
  for (const auto& [folder, label] : c.data.label_rule) label_rule[folder] = std::string(to_string(label));
  const auto& s = c.synth;
  const auto& t = c.train;
  const auto& sc = c.scoring;
  return {
      {"seed", c.seed},
      {"element_type", std::string(detail::element_type_name(c.double_precision))},
      {"synth",
       {{"train_count", s.train_count},
        {"test_normal_count", s.test_normal_count},
        {"test_abnormal_count", s.test_abnormal_count},
        {"image_size", s.image_size},
        {"channels", s.channels},
        {"noise_smoothness", s.noise_smoothness},
        {"noise_amplitude", s.noise_amplitude},
        {"pattern_frequency", s.pattern_frequency},
        {"pattern_amplitude", s.pattern_amplitude},
        {"blob_count", {s.blob_count.min, s.blob_count.max}},
        {"blob_radius", {s.blob_radius.min, s.blob_radius.max}},
        {"blob_delta", {s.blob_delta.min, s.blob_delta.max}}}},
      {"data",
       {{"source", std::string(detail::data_source_name(c.data.source))},
        {"train_dir", c.data.train_dir.string()},
        {"test_dir", c.data.test_dir.string()},
        {"image_size", c.data.image_size},
        {"channels", c.data.channels},
        {"label_rule", label_rule}}},
      {"mask",
       {{"box_count", {t.mask.box_count.min, t.mask.box_count.max}},
        {"box_size", {t.mask.box_size.min, t.mask.box_size.max}},
        {"fill_value", t.mask.fill_value},
        {"seed", t.mask.seed}}},
      {"model",
       {{"encoder_channels", c.model.encoder_channels},
        {"discriminator_channels", c.model.discriminator_channels},
        {"leaky_slope", c.model.leaky_slope},
        {"init", std::string(to_string(c.model.init))},
        {"init_std", c.model.init_std}}},
      {"train",
       {{"lambda_rec", t.lambda_rec},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"mode", std::string(to_string(t.mode))},
        {"adversarial_form", std::string(to_string(t.adversarial_form))},
        {"patch_consistency_weight", t.patch_consistency_weight},
        {"discriminator_steps", t.discriminator_steps},
        {"checkpoint_every", t.checkpoint_every},
        {"run_id", t.run_id},
        {"optimizer", detail::optimizer_json(t.reconstructor_optimizer)},
        {"discriminator_optimizer", detail::optimizer_json(t.discriminator_optimizer)}}},
      {"scoring",
       {{"patch_size", sc.grid.patch_size},
        {"stride", sc.grid.stride},
        {"mode", std::string(to_string(sc.schedule.mode))},
        {"weights", sc.schedule.head},
        {"tail_weight", sc.schedule.tail},
        {"decay", sc.schedule.decay},
        {"top_k", sc.schedule.top_k},
        {"inference_mask",
         {{"mode", sc.inference.mode == InferenceMask::kNone ? "none" : "multi"},
          {"samples", sc.inference.samples},
          {"seed", sc.inference.mask.seed}}},
        {"heatmaps", sc.heatmaps},
        {"heatmap_scale", sc.heatmap_scale == HeatmapScale::kPerImage ? "per_image" : "fixed"},
        {"heatmap_fixed_max", sc.heatmap_fixed_max}}},
      {"eval", {{"bins", c.eval_bins}}},
  };
}

}  // namespace patchrank
