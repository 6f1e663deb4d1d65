#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "patchrank/checkpoint.hpp"
#include "patchrank/data.hpp"
#include "patchrank/errors.hpp"
#include "patchrank/losses.hpp"
#include "patchrank/masking.hpp"
#include "patchrank/models.hpp"
#include "patchrank/optimizer.hpp"
#include "patchrank/random.hpp"

namespace patchrank {

enum class AblationMode {
  kFull,   // adversarial R/D training
  kAeOnly  // discriminator disabled, reconstruction loss only
};

inline std::string_view to_string(AblationMode m) { return m == AblationMode::kFull ? "full" : "ae_only"; }

inline AblationMode parse_ablation_mode(std::string_view s) {
  if (s == "full") return AblationMode::kFull;
  if (s == "ae_only") return AblationMode::kAeOnly;
  throw ConfigError("unknown ablation mode '" + std::string(s) + "'");
}

struct TrainConfig {
  double lambda_rec = 0.2;  // weight of the reconstruction term for R
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
  OptimizerSettings reconstructor_optimizer;
  OptimizerSettings discriminator_optimizer;
  MaskSpec mask;
  AblationMode mode = AblationMode::kFull;
  AdversarialForm adversarial_form = AdversarialForm::kNonSaturating;
  double patch_consistency_weight = 0.0;
  int discriminator_steps = 1;  // D updates per R update
  int checkpoint_every = 0;     // epochs; 0 disables periodic checkpoints
  std::string run_id = "run";
  std::filesystem::path checkpoint_dir;

  void validate(const std::string& prefix = "train") const {
    auto fail = [&](const std::string& field, const std::string& why) {
      throw ConfigError(prefix + "." + field + ": " + why);
    };
    if (!(lambda_rec > 0)) fail("lambda_rec", "must be > 0");
    if (epochs < 1) fail("epochs", "must be >= 1");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (!(reconstructor_optimizer.learning_rate > 0)) fail("optimizer.learning_rate", "must be > 0");
    if (!(discriminator_optimizer.learning_rate > 0)) fail("discriminator_optimizer.learning_rate", "must be > 0");
    if (!(patch_consistency_weight >= 0)) fail("patch_consistency_weight", "must be >= 0");
    if (discriminator_steps < 1) fail("discriminator_steps", "must be >= 1");
    if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
    if (run_id.empty()) fail("run_id", "must not be empty");
  }
};

struct TrainLogRecord {
  int epoch = 0;
  long step = 0;
  double loss_R = 0.0;
  double loss_D = 0.0;
  double loss_G_adv = 0.0;
  long wall_ms = 0;
};

template <typename T>
struct Models {
  ModelConfig config;
  Reconstructor<T> reconstructor;
  PatchDiscriminator<T> discriminator;

  Models() = default;
  Models(const ModelConfig& cfg, std::uint64_t seed)
      : config(cfg),
        reconstructor(cfg, derive_seed(seed, 1)),
        discriminator(cfg, derive_seed(seed, 2)) {}
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"channels", c.channels},
          {"patch_size", c.patch_size},
          {"encoder_channels", c.encoder_channels},
          {"discriminator_channels", c.discriminator_channels},
          {"leaky_slope", c.leaky_slope},
          {"init", std::string(to_string(c.init))},
          {"init_std", c.init_std}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.discriminator_channels = j.at("discriminator_channels").get<std::vector<int>>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.init = parse_init_scheme(j.value("init", std::string("fixed_std")));
  c.init_std = j.at("init_std").get<double>();
  return c;
}

template <typename T>
Checkpoint<T> to_checkpoint(const Models<T>& m, nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint<T> ckpt;
  ckpt.metadata = std::move(extra);
  ckpt.metadata["model"] = model_config_to_json(m.config);
  ckpt.metadata["element_type"] = sizeof(T) == 4 ? "float32" : "float64";
  ckpt.networks.push_back({"reconstructor", m.reconstructor.network()});
  ckpt.networks.push_back({"discriminator", m.discriminator.network()});
  return ckpt;
}

template <typename T>
Models<T> from_checkpoint(const Checkpoint<T>& ckpt) {
  Models<T> m;
  m.config = model_config_from_json(ckpt.metadata.at("model"));
  m.reconstructor = Reconstructor<T>(ckpt.get("reconstructor"));
  m.discriminator = PatchDiscriminator<T>(ckpt.get("discriminator"));
  return m;
}

/// One alternating optimization step at a time over a pair of models.
///
/// The D update only touches discriminator parameters and the R update only
/// reconstructor parameters; R(z) is treated as a constant input to D during
/// the D update.
template <typename T>
class AdversarialTrainer {
 public:
  AdversarialTrainer(Models<T>& models, const TrainConfig& cfg)
      : models_(models),
        cfg_(cfg),
        r_opt_(cfg.reconstructor_optimizer),
        d_opt_(cfg.discriminator_optimizer) {}

  /// Masked copy of a batch using the per-image, per-epoch mask streams.
  Tensor<T> mask_batch(const Dataset& ds, const Batch<T>& batch, int epoch, const MaskSpec& spec) const {
    Tensor<T> z = batch.pixels;
    const std::size_t len = shape_size(ds.image_shape());
    for (std::size_t b = 0; b < batch.indices.size(); ++b) {
      const MaskedImage m = apply_mask(ds[batch.indices[b]], spec, static_cast<std::uint64_t>(epoch));
      std::transform(m.pixels.values().begin(), m.pixels.values().end(), z.data() + b * len,
                     [](float v) { return static_cast<T>(v); });
    }
    return z;
  }

  /// Updates D on real x versus detached R(z); returns the D loss.
  double discriminator_step(const Tensor<T>& x, const Tensor<T>& rz) {
    auto& d = models_.discriminator;
    ForwardCache<T> real_cache, fake_cache;
    const Tensor<T> d_real = d.discriminate(x, &real_cache);
    const Tensor<T> d_fake = d.discriminate(rz, &fake_cache);
    const auto loss = discriminator_loss(d_real, d_fake);
    check_finite(loss.value, "loss_D");
    auto g_real = d.network().backward(real_cache, loss.grad_real);
    const auto g_fake = d.network().backward(fake_cache, loss.grad_fake);
    for (std::size_t i = 0; i < g_real.params.size(); ++i) {
      T* dst = g_real.params[i].data();
      const T* src = g_fake.params[i].data();
      for (std::size_t j = 0; j < g_real.params[i].size(); ++j) dst[j] += src[j];
    }
    d_opt_.step(d.network().mutable_params(), g_real.params);
    return loss.value;
  }

  struct ReconstructorStep {
    double loss_R = 0.0;
    double loss_G_adv = 0.0;
  };

  /// Updates R given the forward cache that produced rz from z.
  ReconstructorStep reconstructor_step(const Tensor<T>& x, const Tensor<T>& rz, const ForwardCache<T>& r_cache) {
    ReconstructorStep out;
    auto rec = reconstruction_loss_grad(x, rz);
    out.loss_R = rec.value;
    check_finite(out.loss_R, "loss_R");
    Tensor<T> upstream = std::move(rec.grad);
    if (cfg_.mode == AblationMode::kFull) {
      const T lambda = static_cast<T>(cfg_.lambda_rec);
      for (auto& v : upstream.values()) v *= lambda;
      ForwardCache<T> cache;
      const Tensor<T> d_fake = models_.discriminator.discriminate(rz, &cache);
      const auto adv = generator_adversarial_loss(d_fake, cfg_.adversarial_form);
      out.loss_G_adv = adv.value;
      check_finite(out.loss_G_adv, "loss_G_adv");
      const auto through_d = models_.discriminator.network().backward(cache, adv.grad);
      for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] += through_d.input[i];
      if (cfg_.patch_consistency_weight > 0) {
        const auto pc = patch_consistency_loss_grad(x, rz, models_.config.patch_size);
        const T w = static_cast<T>(cfg_.patch_consistency_weight);
        for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] += w * pc.grad[i];
      }
    }
    const auto grads = models_.reconstructor.network().backward(r_cache, upstream);
    r_opt_.step(models_.reconstructor.network().mutable_params(), grads.params);
    return out;
  }

  /// Full step on one batch: mask, D update(s) (full mode), R update.
  TrainLogRecord step(const Dataset& ds, const Batch<T>& batch, int epoch, const MaskSpec& spec) {
    TrainLogRecord rec;
    rec.epoch = epoch;
    const Tensor<T> z = mask_batch(ds, batch, epoch, spec);
    ForwardCache<T> r_cache;
    const Tensor<T> rz = models_.reconstructor.reconstruct(z, &r_cache);
    if (cfg_.mode == AblationMode::kFull) {
      for (int k = 0; k < cfg_.discriminator_steps; ++k) rec.loss_D = discriminator_step(batch.pixels, rz);
    }
    const auto r = reconstructor_step(batch.pixels, rz, r_cache);
    rec.loss_R = r.loss_R;
    rec.loss_G_adv = r.loss_G_adv;
    return rec;
  }

 private:
  static void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw TrainingError(std::string("non-finite ") + what);
  }

  Models<T>& models_;
  const TrainConfig& cfg_;
  Optimizer<T> r_opt_;
  Optimizer<T> d_opt_;
};

template <typename T>
struct TrainResult {
  Models<T> models;
  std::vector<TrainLogRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

/// Mask seed actually used for training: the configured mask seed mixed with
/// the run seed.
inline MaskSpec effective_mask(const TrainConfig& cfg) {
  MaskSpec m = cfg.mask;
  m.seed = derive_seed(cfg.seed, 0x4D41534BULL ^ cfg.mask.seed);
  return m;
}

/// Trains R and D on a normal-only dataset. Deterministic given cfg.seed.
/// On a non-finite loss or gradient the run aborts with a TrainingError that
/// names the last checkpoint written.
template <typename T>
TrainResult<T> train(const Dataset& train_set, const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const std::function<void(const TrainLogRecord&)>& on_step = {}) {
  cfg.validate();
  model_cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (train_set.split() != Split::kTrain || train_set.count(Label::kNormal) != train_set.size()) {
    throw DataError("training requires a normal-only train split");
  }
  if (train_set.image_shape() != image_shape(model_cfg)) {
    throw ShapeError("dataset image shape " + shape_string(train_set.image_shape()) +
                     " does not match model input " + shape_string(image_shape(model_cfg)));
  }
  cfg.mask.validate(train_set.height(), train_set.width(), "mask");
  const MaskSpec mask = effective_mask(cfg);

  TrainResult<T> result{Models<T>(model_cfg, cfg.seed), {}, {}};
  AdversarialTrainer<T> trainer(result.models, cfg);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = split_batches<T>(train_set, static_cast<std::size_t>(cfg.batch_size),
                                          derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (const auto& batch : batches) {
      const auto start = std::chrono::steady_clock::now();
      TrainLogRecord rec;
      try {
        rec = trainer.step(train_set, batch, epoch, mask);
      } catch (const TrainingError& e) {
        const std::string last = result.checkpoints.empty() ? std::string("none")
                                                            : result.checkpoints.back().string();
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1) + "; last checkpoint: " + last);
      }
      rec.step = ++step;
      rec.wall_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::steady_clock::now() - start)
                                          .count());
      result.log.push_back(rec);
      if (on_step) on_step(rec);
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      const auto path = cfg.checkpoint_dir / (cfg.run_id + "-epoch" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(to_checkpoint(result.models), path);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

inline void write_train_log(const std::filesystem::path& file, const std::vector<TrainLogRecord>& log) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << "epoch,step,loss_R,loss_D,loss_G_adv,wall_ms\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%ld,%.9g,%.9g,%.9g,%ld\n", r.epoch, r.step, r.loss_R, r.loss_D,
                  r.loss_G_adv, r.wall_ms);
    out << buf;
  }
}

/// Mean loss_R per epoch, index 0 = epoch 1.
inline std::vector<double> epoch_mean_loss_r(const std::vector<TrainLogRecord>& log) {
  std::vector<double> sums, counts;
  for (const auto& r : log) {
    const auto e = static_cast<std::size_t>(r.epoch);
    if (sums.size() < e) {
      sums.resize(e, 0.0);
      counts.resize(e, 0.0);
    }
    sums[e - 1] += r.loss_R;
    counts[e - 1] += 1.0;
  }
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = counts[i] > 0 ? sums[i] / counts[i] : 0.0;
  return sums;
}

}  // namespace patchrank
