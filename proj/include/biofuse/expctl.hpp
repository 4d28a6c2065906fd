#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/fusion.hpp"
#include "biofuse/gradient_check.hpp"
#include "biofuse/modality.hpp"

namespace biofuse {

// ---- configuration ----

enum class DataKind { synthetic, ingested };

struct DataConfig {
  DataKind kind = DataKind::synthetic;
  // synthetic
  std::size_t subjects = 20;
  SynthOptions synth;
  // ingested
  std::filesystem::path root;
  MatchingOptions matching;
  // both
  std::size_t samples_per_subject = 400;
  std::size_t image_size = 64;
  AugmentParams augment;
  double split_ratio = 0.8;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  ModalityMask modalities = ModalityMask::all();
  TaskMode task = TaskMode::multitask;
  bool noisy = true;
  NoiseProtocol noise;
  std::vector<std::size_t> trunk{256, 256};
  std::vector<std::size_t> image_channels{8, 16, 32};
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  JointLossWeights loss_weights;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path output = "results";
};

/// Parses the JSON config format (see configs/). Unknown keys, wrong types and
/// out-of-range values raise ConfigError naming the field, e.g. "training.epochs".
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// Output directory after applying the BIOFUSE_OUTPUT_ROOT override (when set,
/// it replaces the config's output directory).
std::filesystem::path output_dir(const ExperimentConfig& cfg);
inline constexpr const char* kOutputRootEnv = "BIOFUSE_OUTPUT_ROOT";

// ---- results ----

enum class SweepKind { run, modalities, tasks, noise };
std::string_view to_string(SweepKind k) noexcept;
SweepKind parse_sweep_kind(std::string_view text);

struct Cell {
  ModalityMask modalities = ModalityMask::all();
  TaskMode task = TaskMode::multitask;
  bool noisy = true;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct ResultRow {
  Cell cell;
  std::uint64_t seed = 0;
  std::optional<double> id_accuracy;      // empty when the task has no ID head
  std::optional<double> gender_accuracy;  // empty when the task has no gender head
  std::optional<double> paper_id;         // percent, from the reference tables
  std::optional<double> paper_gender;
  double train_seconds = 0.0;             // reported on stdout only; varies run to run
};

struct ResultsTable {
  SweepKind kind = SweepKind::run;
  std::vector<ResultRow> rows;
};

/// The cells a sweep trains, in report order: 7, 3 or 8 per seed.
std::vector<Cell> sweep_cells(SweepKind kind, const ExperimentConfig& cfg);

/// Published reference accuracies (percent) for a cell, when its table has one.
std::pair<std::optional<double>, std::optional<double>> paper_reference(SweepKind kind, const Cell& cell);

// ---- running ----

/// Trains and evaluates cells. Datasets are built once per seed and finished cells
/// are remembered, so overlapping sweeps on one runner only train new cells.
class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig cfg);

  ResultRow run_cell(const Cell& cell, std::uint64_t seed);
  ResultsTable run(SweepKind kind);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  std::size_t trainings() const noexcept { return trainings_; }
  // Called after each finished cell; used by the CLI for progress lines.
  std::function<void(const ResultRow&, bool cached)> on_row;

 private:
  struct SeedData {
    DatasetSplit clean;
    DatasetSplit noisy;
  };
  const SeedData& data(std::uint64_t seed);

  ExperimentConfig cfg_;
  std::map<std::uint64_t, SeedData> data_;
  std::map<std::tuple<std::uint64_t, unsigned, int, bool>, ResultRow> done_;
  std::size_t trainings_ = 0;
};

/// Dataset for one seed exactly as the runner builds it (before noise).
Dataset build_experiment_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

// ---- reports ----

/// Columns: modalities, task, noise, seed, id_acc, gender_acc, paper_ref_id, paper_ref_gender.
/// Accuracies carry 4 decimals, reference values 2; "-" marks an empty cell.
std::string report_csv(const ResultsTable& table);
std::string report_json(const ResultsTable& table);
ResultsTable parse_report_csv(std::string_view text);
ResultsTable parse_report_json(std::string_view text);
/// Writes <dir>/<stem>.csv and <dir>/<stem>.json; returns the two paths.
std::vector<std::filesystem::path> write_reports(const ResultsTable& table, const std::filesystem::path& dir,
                                                 const std::string& stem);

struct CellSummary {
  Cell cell;
  std::optional<double> mean_id;
  std::optional<double> mean_gender;
  std::size_t seeds = 0;
};
/// Seed-averaged accuracies per cell, in first-appearance order.
std::vector<CellSummary> summarize(const ResultsTable& table);
std::string format_summary(const ResultsTable& table);

// ---- gradient suite ----

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
};
/// Finite-difference checks of every layer, loss and the assembled fused network.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace biofuse
