// Command-line front end for the pipeline.
//
//   sfsci <command> --config <path> [--out <dir>] [--seed <n>] [--preset desk|paper-geometry]
//
// Exit codes: 0 success, 2 configuration error, 3 missing artifact or bad
// file, 4 numeric failure.

#include <CLI11.hpp>
#include <cstdlib>

#include "sfsci/harness.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kArtifact = 3, kNumeric = 4 };

struct Options {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string preset;
  bool print_defaults = false;
  std::string model = "all";
  std::string dataset = "target";
};

sfsci::ExperimentConfig resolve_config(const Options& o) {
  sfsci::ExperimentConfig base = sfsci::preset(o.preset.empty() ? "desk" : o.preset);
  sfsci::ExperimentConfig cfg = base;
  if (!o.config_path.empty()) {
    if (!sfsci::fs::exists(o.config_path)) throw sfsci::ConfigError("config file not found: " + o.config_path);
    sfsci::json j;
    try {
      j = sfsci::read_json(o.config_path);
    } catch (const sfsci::IoError& e) {
      throw sfsci::ConfigError(e.what());
    }
    cfg = sfsci::from_json(j, base);
  } else if (o.preset.empty()) {
    throw sfsci::ConfigError("--config <path> is required unless --preset is given");
  }
  if (o.seed) cfg.seed = *o.seed;
  if (const char* env = std::getenv("SFSCI_OUT"); env && *env) cfg.output_dir = env;
  if (!o.out.empty()) cfg.output_dir = o.out;
  sfsci::validate(cfg);
  return cfg;
}

int run(const std::string& command, const Options& o) {
  using namespace sfsci;
  if (command == "gen-data" && o.print_defaults) {
    ExperimentConfig cfg = preset(o.preset.empty() ? "desk" : o.preset);
    std::cout << to_json(cfg).dump(2) << '\n';
    return kOk;
  }
  RunContext ctx(resolve_config(o));
  fs::create_directories(ctx.out);
  write_json(ctx.out / "config.json", to_json(ctx.cfg));
  if (command == "gen-data") {
    cmd_gen_data(ctx);
  } else if (command == "train-slow") {
    cmd_train_slow(ctx);
  } else if (command == "distill") {
    cmd_distill(ctx);
  } else if (command == "train-adapters") {
    cmd_train_adapters(ctx);
  } else if (command == "tta") {
    cmd_tta(ctx);
  } else if (command == "evaluate") {
    cmd_evaluate(ctx, o.model, o.dataset);
  } else if (command == "ablate") {
    cmd_ablate(ctx);
  } else if (command == "wiener-lab") {
    cmd_wiener_lab(ctx);
  } else if (command == "stats") {
    cmd_stats(ctx);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-speed learning for coded-aperture snapshot spectral imaging"};
  app.require_subcommand(1, 1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate masks and synthetic source/target datasets"},
      {"train-slow", "supervised pretraining of the teacher"},
      {"distill", "distill the teacher into the student"},
      {"train-adapters", "self-supervised adapter training on target measurements"},
      {"tta", "per-sample test-time adaptation on the target set"},
      {"evaluate", "PSNR/SSIM of stored checkpoints"},
      {"ablate", "stage/adapter/TTA ablation table"},
      {"wiener-lab", "learned linear denoiser vs. closed-form Wiener filter"},
      {"stats", "parameter and MAC counts"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "experiment config (JSON)");
    sub->add_option("--out", o.out, "output directory (overrides SFSCI_OUT and the config)");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--preset", o.preset, "base preset")->check(CLI::IsMember({"desk", "paper-geometry"}));
    if (name == "gen-data") sub->add_flag("--print-defaults", o.print_defaults, "print the preset config and exit");
    if (name == "evaluate") {
      sub->add_option("--model", o.model, "teacher, student, adapted or all");
      sub->add_option("--dataset", o.dataset, "source, distill or target");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const sfsci::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const sfsci::ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const sfsci::DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const sfsci::IoError& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return kArtifact;
  } catch (const sfsci::TrainingError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const sfsci::DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return kArtifact;
  }
}
