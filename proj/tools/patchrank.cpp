#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "patchrank/commands.hpp"

namespace fs = std::filesystem;
using namespace patchrank;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string checkpoint;
  bool no_ranking = false;
  bool ae_only = false;
  std::string reports;
  std::string run_a, run_b;
};

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    if (!fs::is_regular_file(f.config)) throw ConfigError("config not found: " + f.config);
    cfg = load_run_config(f.config);
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.no_ranking) cfg.scoring.schedule.mode = WeightMode::kUniform;
  if (f.ae_only) cfg.train.mode = AblationMode::kAeOnly;
  cfg.resolve();
  return cfg;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-ranked adversarial anomaly detection"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON run config");
  app.add_option("--seed", f.seed, "Global seed (overrides config)");
  app.add_option("--out", f.out, "Output directory")->capture_default_str();
  app.add_option("--checkpoint", f.checkpoint, "Checkpoint to score (default OUT/model.ckpt)");
  app.add_flag("--no-ranking", f.no_ranking, "Score with the uniform patch schedule");
  app.add_flag("--ae-only", f.ae_only, "Train the reconstructor without the discriminator");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset as PNGs");
  auto* train = app.add_subcommand("train", "Train reconstructor and discriminator");
  auto* score = app.add_subcommand("score", "Score the test split");
  auto* eval = app.add_subcommand("eval", "ROC, AUC and score distributions");
  eval->add_option("reports", f.reports, "Score CSV (default OUT/scores.csv)");
  auto* compare = app.add_subcommand("compare", "Compare two score CSVs");
  compare->add_option("a", f.run_a, "Baseline score CSV")->required();
  compare->add_option("b", f.run_b, "Candidate score CSV")->required();
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer kind");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(std::cout) ? 0 : 1;
    const RunConfig cfg = resolve(f);
    const fs::path out = f.out;
    if (synth->parsed()) {
      const auto r = cmd_synth(cfg, out);
      std::cout << "wrote " << r.train_images << " train and " << r.test_images << " test images, manifest "
                << r.manifest.string() << '\n';
    } else if (train->parsed()) {
      const auto r = cmd_train(cfg, out, std::cerr);
      std::cout << "wrote " << r.checkpoint.string() << '\n';
    } else if (score->parsed()) {
      const auto r = cmd_score(cfg, out, opt_path(f.checkpoint), std::cerr);
      std::cout << "scored " << r.size() << " images into " << (out / "scores.csv").string() << '\n';
    } else if (eval->parsed()) {
      const auto r = cmd_eval(cfg, out, opt_path(f.reports));
      std::cout << "auc " << format_double(r.roc.auc) << '\n';
    } else if (compare->parsed()) {
      const auto r = cmd_compare(cfg, out, f.run_a, f.run_b);
      std::cout << "auc_a " << format_double(r.auc_a) << "\nauc_b " << format_double(r.auc_b) << "\ndelta_auc "
                << format_double(r.delta_auc) << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
