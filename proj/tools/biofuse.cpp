// biofuse command line: experiments, gradient checks and synthetic source data.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "biofuse/errors.hpp"
#include "biofuse/expctl.hpp"

using namespace biofuse;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

void print_row(const ResultRow& r, bool cached) {
  auto pct = [](std::optional<double> v) {
    char buf[32];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::fprintf(stderr, "  seed %llu  %-16s %-12s %-5s  id %s  gender %s  %s\n",
               static_cast<unsigned long long>(r.seed), r.cell.modalities.label().c_str(),
               std::string(to_string(r.cell.task)).c_str(), r.cell.noisy ? "noisy" : "clean",
               pct(r.id_accuracy).c_str(), pct(r.gender_accuracy).c_str(),
               cached ? "(cached)" : (std::to_string(static_cast<int>(r.train_seconds + 0.5)) + " s").c_str());
}

int run_experiment(const std::string& config_path, SweepKind kind) {
  const ExperimentConfig cfg = load_config(config_path);
  ExperimentRunner runner(cfg);
  runner.on_row = print_row;
  const ResultsTable table = runner.run(kind);
  const std::string stem = cfg.name + "_" + std::string(to_string(kind));
  const auto paths = write_reports(table, output_dir(cfg), stem);
  std::cout << format_summary(table);
  for (const auto& p : paths) std::cout << "wrote " << p.string() << '\n';
  return 0;
}

int run_gradcheck(double tolerance, std::uint64_t seed) {
  bool ok = true;
  for (const auto& e : run_gradient_suite(seed)) {
    const bool pass = e.report.passed(tolerance);
    ok = ok && pass;
    std::printf("%-28s max rel err %.3e  checked %4zu  skipped %zu  %s", e.name.c_str(), e.report.max_rel_error,
                e.report.checked, e.report.skipped, pass ? "ok" : "FAIL");
    if (!pass) std::printf("  worst %s", e.report.worst.c_str());
    std::printf("\n");
  }
  std::printf("%s\n", ok ? "all gradients match" : "gradient mismatch");
  return ok ? 0 : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biofuse: multimodal biometric fusion experiments"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "train and evaluate the cell described by a config");
  run->add_option("config", config, "experiment config (JSON)")->required();

  std::string sweep_kind;
  auto* sweep = app.add_subcommand("sweep", "modality, task or noise sweep");
  sweep->add_option("kind", sweep_kind, "modalities | tasks | noise")
      ->required()
      ->check(CLI::IsMember({"modalities", "tasks", "noise"}));
  sweep->add_option("config", config, "experiment config (JSON)")->required();

  double tolerance = 1e-4;
  std::uint64_t grad_seed = 7;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer and the fused network");
  grad->add_option("--tolerance", tolerance, "maximum relative error");
  grad->add_option("--seed", grad_seed, "seed of the random shapes and probed entries");

  std::size_t subjects = 0, images = 10;
  std::uint64_t seed = 1;
  std::string out_dir;
  SynthOptions synth;
  auto* syn = app.add_subcommand("synth", "write synthetic ECG, face and fingerprint sources");
  syn->add_option("--subjects", subjects, "number of subjects")->required()->check(CLI::Range(2, 100000));
  syn->add_option("--out", out_dir, "output directory")->required();
  syn->add_option("--images", images, "images per face/finger identity")->check(CLI::Range(1, 100000));
  syn->add_option("--seed", seed, "generator seed");
  syn->add_option("--side", synth.image_side, "image side in pixels")->check(CLI::Range(4, 4096));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*run) return run_experiment(config, SweepKind::run);
    if (*sweep) return run_experiment(config, parse_sweep_kind(sweep_kind));
    if (*grad) return run_gradcheck(tolerance, grad_seed);
    if (*syn) {
      write_synthetic_sources(subjects, images, synth, seed, out_dir);
      std::cout << "wrote " << subjects << " synthetic subjects to " << out_dir << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingDivergedError& e) {
    std::cerr << "training diverged at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
