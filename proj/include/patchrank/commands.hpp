#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "patchrank/checkpoint.hpp"
#include "patchrank/config.hpp"
#include "patchrank/data.hpp"
#include "patchrank/evaluation.hpp"
#include "patchrank/gradcheck.hpp"
#include "patchrank/scoring.hpp"
#include "patchrank/training.hpp"

// Subcommand bodies of the patchrank CLI. Each one validates its inputs,
// writes its outputs below `out` together with a resolved-config echo, and
// throws ConfigError for bad configuration or missing input paths.
namespace patchrank {

namespace fs = std::filesystem;

inline void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

inline void write_config_echo(const RunConfig& cfg, const fs::path& out, const std::string& command) {
  write_json(out / (command + ".config.json"), to_json(cfg));
}

inline fs::path data_dir(const fs::path& out) { return out / "data"; }

struct SynthOutput {
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  fs::path manifest;
};

/// Generates the synthetic corpus as PNGs under out/data/{train,test}/<label>/
/// plus out/data/manifest.csv (paths relative to out/data).
inline SynthOutput cmd_synth(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const SyntheticCorpus corpus = generate_synthetic(cfg.synth);
  const fs::path root = data_dir(out);
  std::vector<ManifestRow> rows;
  for (const auto* ds : {&corpus.train, &corpus.test}) {
    const std::string split(to_string(ds->split()));
    fs::remove_all(root / split);
    write_dataset_pngs(*ds, root / split);
    for (const auto& s : ds->samples()) {
      rows.push_back({s.id, s.label, split + "/" + std::string(to_string(s.label)) + "/" + s.id + ".png"});
    }
  }
  SynthOutput result{corpus.train.size(), corpus.test.size(), root / "manifest.csv"};
  write_manifest(result.manifest, rows);
  write_config_echo(cfg, out, "synth");
  return result;
}

/// Loads a split from the configured folder, or from the synth output.
inline IngestResult load_split(const RunConfig& cfg, const fs::path& out, Split split) {
  fs::path dir;
  if (cfg.data.source == DataSource::kSynthetic) {
    dir = data_dir(out) / std::string(to_string(split));
  } else {
    dir = split == Split::kTrain ? cfg.data.train_dir : cfg.data.test_dir;
    if (dir.empty()) throw ConfigError("data." + std::string(to_string(split)) + "_dir: not set");
  }
  if (!fs::is_directory(dir)) {
    throw ConfigError("dataset folder not found: " + dir.string() +
                      (cfg.data.source == DataSource::kSynthetic ? " (run synth first)" : ""));
  }
  IngestOptions opts;
  opts.label_rule = cfg.data.label_rule;
  opts.target_size = cfg.model.image_size;
  opts.channels = cfg.model.channels;
  return ingest_folder(dir, split, opts);
}

struct TrainOutput {
  fs::path checkpoint;
  std::vector<double> epoch_loss_r;
  std::string dataset_hash;
};

namespace detail {

template <typename T>
TrainOutput train_impl(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const IngestResult data = load_split(cfg, out, Split::kTrain);
  for (const auto& w : data.warnings) log << "warning: " << w << '\n';
  data.dataset.require_patch_multiple(cfg.model.patch_size);

  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = out / "checkpoints";
  if (tc.checkpoint_every > 0) fs::create_directories(tc.checkpoint_dir);
  const std::size_t steps_per_epoch =
      (data.dataset.size() + static_cast<std::size_t>(tc.batch_size) - 1) / static_cast<std::size_t>(tc.batch_size);
  double epoch_ms = 0.0, sum_r = 0.0, sum_d = 0.0;
  std::size_t in_epoch = 0;
  auto on_step = [&](const TrainLogRecord& r) {
    epoch_ms += static_cast<double>(r.wall_ms);
    sum_r += r.loss_R;
    sum_d += r.loss_D;
    if (++in_epoch == steps_per_epoch) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "epoch %d/%d  loss_R %.6f  loss_D %.4f  %.1fs\n", r.epoch, tc.epochs,
                    sum_r / in_epoch, sum_d / in_epoch, epoch_ms / 1000.0);
      log << buf << std::flush;
      epoch_ms = sum_r = sum_d = 0.0;
      in_epoch = 0;
    }
  };
  TrainResult<T> result = train<T>(data.dataset, cfg.model, tc, on_step);

  TrainOutput o;
  o.checkpoint = out / "model.ckpt";
  o.epoch_loss_r = epoch_mean_loss_r(result.log);
  o.dataset_hash = dataset_hash(data.dataset);
  save_checkpoint(to_checkpoint(result.models, {{"run_id", tc.run_id}, {"epochs", tc.epochs}}), o.checkpoint);
  write_train_log(out / "train_log.csv", result.log);

  json checkpoints = json::array();
  for (const auto& p : result.checkpoints) checkpoints.push_back(fs::relative(p, out).generic_string());
  const MaskSpec mask = effective_mask(tc);
  write_json(out / "run_manifest.json",
             {{"config", to_json(cfg)},
              {"train_dataset_hash", o.dataset_hash},
              {"train_images", data.dataset.size()},
              {"skipped_files", data.skipped},
              {"steps", result.log.size()},
              {"masking", {{"policy", "resampled per image per epoch"},
                           {"effective_seed", mask.seed},
                           {"position", "boxes lie fully inside the image"}}},
              {"parameters",
               {{"reconstructor", result.models.reconstructor.network().parameter_count()},
                {"discriminator", result.models.discriminator.network().parameter_count()}}},
              {"epoch_mean_loss_R", o.epoch_loss_r},
              {"checkpoints", checkpoints},
              {"final_checkpoint", "model.ckpt"}});
  return o;
}

template <typename T>
std::vector<ScoreReport> score_impl(const RunConfig& cfg, const fs::path& out, const fs::path& checkpoint,
                                    std::ostream& log) {
  const Models<T> models = from_checkpoint(load_checkpoint<T>(checkpoint));
  const IngestResult data = load_split(cfg, out, Split::kTest);
  for (const auto& w : data.warnings) log << "warning: " << w << '\n';
  const Dataset& ds = data.dataset;

  const auto reports = score_dataset(models, ds, cfg.scoring.grid, cfg.scoring.schedule, cfg.scoring.inference);
  write_score_csv(out / "scores.csv", reports);
  if (cfg.scoring.heatmaps) {
    const auto rows = cfg.scoring.grid.rows(ds.height()), cols = cfg.scoring.grid.cols(ds.width());
    fs::remove_all(out / "heatmaps");
    for (const auto& r : reports) {
      emit_heatmap(r, rows, cols, cfg.scoring.grid.stride, out / "heatmaps" / (r.id + ".png"),
                   cfg.scoring.heatmap_scale, cfg.scoring.heatmap_fixed_max);
    }
  }
  return reports;
}

}  // namespace detail

/// Trains on the configured train split; writes model.ckpt, checkpoints/,
/// train_log.csv and run_manifest.json.
inline TrainOutput cmd_train(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  fs::create_directories(out);
  write_config_echo(cfg, out, "train");
  return cfg.double_precision ? detail::train_impl<double>(cfg, out, log) : detail::train_impl<float>(cfg, out, log);
}

/// Scores the test split with a checkpoint; writes scores.csv and heatmaps/.
inline std::vector<ScoreReport> cmd_score(const RunConfig& cfg, const fs::path& out,
                                          const std::optional<fs::path>& checkpoint, std::ostream& log) {
  cfg.validate();
  const fs::path ckpt = checkpoint.value_or(out / "model.ckpt");
  if (!fs::is_regular_file(ckpt)) throw ConfigError("checkpoint not found: " + ckpt.string());
  fs::create_directories(out);
  write_config_echo(cfg, out, "score");
  return cfg.double_precision ? detail::score_impl<double>(cfg, out, ckpt, log)
                              : detail::score_impl<float>(cfg, out, ckpt, log);
}

inline std::vector<ScoreReport> read_reports(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw ConfigError("score report not found: " + file.string());
  return read_score_csv(file);
}

struct EvalOutput {
  RocCurve roc;
  DistributionSummary summary;
};

/// ROC, AUC and score distributions of a report; writes roc.csv, hist.csv,
/// summary.json, roc.png and hist.png.
inline EvalOutput cmd_eval(const RunConfig& cfg, const fs::path& out, const std::optional<fs::path>& reports_path) {
  cfg.validate();
  const auto reports = read_reports(reports_path.value_or(out / "scores.csv"));
  const auto scores = labeled_scores(reports);
  EvalOutput o{compute_roc(scores), summarize_distributions(scores, cfg.eval_bins)};
  fs::create_directories(out);
  write_config_echo(cfg, out, "eval");
  write_roc_csv(out / "roc.csv", o.roc);
  write_hist_csv(out / "hist.csv", o.summary);
  write_json(out / "summary.json", {{"auc", o.roc.auc},
                                    {"normal_count", std::count_if(scores.begin(), scores.end(),
                                                                   [](const auto& s) { return !s.abnormal; })},
                                    {"abnormal_count", std::count_if(scores.begin(), scores.end(),
                                                                     [](const auto& s) { return s.abnormal; })},
                                    {"normal_mean", o.summary.normal_mean},
                                    {"abnormal_mean", o.summary.abnormal_mean},
                                    {"normal_median", o.summary.normal_median},
                                    {"abnormal_median", o.summary.abnormal_median},
                                    {"overlap", o.summary.overlap},
                                    {"polarity", "higher score = more abnormal"}});
  write_roc_png(out / "roc.png", o.roc);
  write_hist_png(out / "hist.png", o.summary);
  return o;
}

/// AUC delta between two reports over the same ids; writes compare.csv.
inline RunComparison cmd_compare(const RunConfig& cfg, const fs::path& out, const fs::path& a, const fs::path& b) {
  cfg.validate();
  const RunComparison c = compare_runs(read_reports(a), read_reports(b));
  fs::create_directories(out);
  write_config_echo(cfg, out, "compare");
  write_compare_csv(out / "compare.csv", c);
  return c;
}

/// Finite-difference check of every layer kind in double precision; one
/// PASS/FAIL line each. Returns true when all pass.
inline bool cmd_gradcheck(std::ostream& log, int configurations = 10, std::uint64_t seed = 1) {
  bool all = true;
  for (LayerKind kind : kAllLayerKinds) {
    const GradCheckResult r = check_layer_kind(kind, configurations, seed);
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s %-12s configs=%d checked=%zu tight=%.4f max_rel=%.3e\n",
                  r.passed() ? "PASS" : "FAIL", std::string(to_string(kind)).c_str(), r.configurations, r.checked,
                  r.tight_fraction(), r.max_rel_error);
    log << buf;
    all = all && r.passed();
  }
  return all;
}

}  // namespace patchrank
