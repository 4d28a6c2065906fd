#include <chrono>
#include <random>

#include "biofuse/errors.hpp"
#include "biofuse/expctl.hpp"
#include "biofuse/seed.hpp"

namespace biofuse {

namespace {

constexpr std::uint64_t kMatchStream = 31;

unsigned mask_bits(ModalityMask m) { return (m.ecg ? 1u : 0u) | (m.face ? 2u : 0u) | (m.finger ? 4u : 0u); }

struct RefRow {
  ModalityMask mask;
  bool noisy;
  double id, gender;
};

constexpr ModalityMask kE{true, false, false}, kF{false, true, false}, kP{false, false, true};
constexpr ModalityMask kEF{true, true, false}, kEP{true, false, true}, kFP{false, true, true};
constexpr ModalityMask kEFP{true, true, true};

// Accuracy (%) tables of the reference experiments.
constexpr RefRow kModalityTable[] = {
    {kE, true, 77.49, 91.95},  {kF, true, 76.44, 88.51},  {kP, true, 83.91, 90.80},   {kEF, true, 95.98, 93.68},
    {kEP, true, 94.83, 95.40}, {kFP, true, 96.55, 94.83}, {kEFP, true, 98.28, 97.70},
};
constexpr RefRow kNoiseTable[] = {
    {kEF, true, 94.83, 95.02},  {kEP, true, 93.68, 95.21},  {kFP, true, 95.21, 92.91},   {kEFP, true, 98.97, 96.55},
    {kEF, false, 100.0, 100.0}, {kEP, false, 98.85, 96.55}, {kFP, false, 100.0, 98.85}, {kEFP, false, 100.0, 99.43},
};

using Ref = std::pair<std::optional<double>, std::optional<double>>;

Ref lookup(std::span<const RefRow> table, const Cell& c) {
  for (const auto& r : table)
    if (r.mask == c.modalities && r.noisy == c.noisy) return {r.id, r.gender};
  return {};
}

Ref task_reference(const Cell& c) {
  if (c.modalities != kEFP || !c.noisy) return {};
  switch (c.task) {
    case TaskMode::id_only: return {98.28, std::nullopt};
    case TaskMode::gender_only: return {std::nullopt, 97.70};
    case TaskMode::multitask: return {98.97, 96.55};
  }
  return {};
}

}  // namespace

std::string_view to_string(SweepKind k) noexcept {
  switch (k) {
    case SweepKind::run: return "run";
    case SweepKind::modalities: return "modalities";
    case SweepKind::tasks: return "tasks";
    case SweepKind::noise: return "noise";
  }
  return "?";
}

SweepKind parse_sweep_kind(std::string_view text) {
  for (auto k : {SweepKind::run, SweepKind::modalities, SweepKind::tasks, SweepKind::noise})
    if (text == to_string(k)) return k;
  throw ConfigError("unknown sweep \"" + std::string(text) + "\" (expected modalities, tasks or noise)");
}

std::vector<Cell> sweep_cells(SweepKind kind, const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  switch (kind) {
    case SweepKind::run:
      cells.push_back({cfg.modalities, cfg.task, cfg.noisy});
      break;
    case SweepKind::modalities:
      for (auto m : nonempty_modality_subsets()) cells.push_back({m, TaskMode::multitask, cfg.noisy});
      break;
    case SweepKind::tasks:
      for (auto t : {TaskMode::id_only, TaskMode::gender_only, TaskMode::multitask})
        cells.push_back({ModalityMask::all(), t, cfg.noisy});
      break;
    case SweepKind::noise:
      for (bool noisy : {true, false})
        for (auto m : {kEF, kEP, kFP, kEFP}) cells.push_back({m, TaskMode::multitask, noisy});
      break;
  }
  return cells;
}

std::pair<std::optional<double>, std::optional<double>> paper_reference(SweepKind kind, const Cell& c) {
  Ref r;
  switch (kind) {
    case SweepKind::modalities:
      if (c.task == TaskMode::multitask && c.noisy) r = lookup(kModalityTable, c);
      break;
    case SweepKind::tasks:
      r = task_reference(c);
      break;
    case SweepKind::noise:
      if (c.task == TaskMode::multitask) r = lookup(kNoiseTable, c);
      break;
    case SweepKind::run:
      if (c.task != TaskMode::multitask) r = task_reference(c);
      else if (c.noisy) r = lookup(kModalityTable, c);
      else r = lookup(kNoiseTable, c);
      break;
  }
  if (c.task == TaskMode::id_only) r.second.reset();
  if (c.task == TaskMode::gender_only) r.first.reset();
  return r;
}

Dataset build_experiment_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  ExpansionOptions ex;
  ex.target = cfg.data.samples_per_subject;
  ex.image_size = cfg.data.image_size;
  ex.augment = cfg.data.augment;
  if (cfg.data.kind == DataKind::synthetic) {
    const auto subjects = synth_generate(cfg.data.subjects, cfg.data.samples_per_subject, cfg.data.synth, seed);
    return build_dataset(subjects, ex, cfg.data.split_ratio, seed);
  }
  const SourcePools pools = load_source_pools(cfg.data.root);
  std::mt19937_64 rng(derive_seed(seed, {kMatchStream}));
  const auto subjects = build_virtual_subjects(pools, cfg.data.matching, rng);
  return build_dataset(subjects, ex, cfg.data.split_ratio, seed);
}

ExperimentRunner::ExperimentRunner(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (!cfg_.modalities.any()) throw ConfigError("modalities: must name at least one modality");
}

const ExperimentRunner::SeedData& ExperimentRunner::data(std::uint64_t seed) {
  auto it = data_.find(seed);
  if (it != data_.end()) return it->second;
  Dataset ds = build_experiment_dataset(cfg_, seed);
  SeedData sd;
  sd.noisy = apply_noise_protocol(ds.split, cfg_.noise, seed);
  sd.clean = std::move(ds.split);
  return data_.emplace(seed, std::move(sd)).first->second;
}

ResultRow ExperimentRunner::run_cell(const Cell& cell, std::uint64_t seed) {
  const auto key = std::make_tuple(seed, mask_bits(cell.modalities), static_cast<int>(cell.task), cell.noisy);
  if (auto it = done_.find(key); it != done_.end()) {
    if (on_row) on_row(it->second, true);
    return it->second;
  }
  const SeedData& sd = data(seed);
  const DatasetSplit& split = cell.noisy ? sd.noisy : sd.clean;

  std::size_t subjects = 0;
  for (const auto& s : split.train) subjects = std::max(subjects, s.person_label + 1);
  FusedModelConfig mc;
  mc.num_subjects = subjects;
  mc.image.input_size = cfg_.data.image_size;
  mc.image.channels = cfg_.image_channels;
  mc.trunk = cfg_.trunk;
  mc.task = cell.task;
  mc.modalities = cell.modalities;
  mc.seed = seed;
  FusedModel model(mc);

  TrainConfig tc;
  tc.epochs = cfg_.epochs;
  tc.batch_size = cfg_.batch_size;
  tc.seed = seed;
  tc.adam.learning_rate = cfg_.learning_rate;
  tc.loss_weights = cfg_.loss_weights;

  const auto t0 = std::chrono::steady_clock::now();
  train(model, split.train, tc);
  const EvalResult r = evaluate(model, split.test);
  ++trainings_;

  ResultRow row;
  row.cell = cell;
  row.seed = seed;
  if (cell.task != TaskMode::gender_only) row.id_accuracy = r.id_accuracy;
  if (cell.task != TaskMode::id_only) row.gender_accuracy = r.gender_accuracy;
  row.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  done_.emplace(key, row);
  if (on_row) on_row(row, false);
  return row;
}

ResultsTable ExperimentRunner::run(SweepKind kind) {
  ResultsTable table;
  table.kind = kind;
  const auto cells = sweep_cells(kind, cfg_);
  for (auto seed : cfg_.seeds)
    for (const auto& c : cells) {
      ResultRow row = run_cell(c, seed);
      std::tie(row.paper_id, row.paper_gender) = paper_reference(kind, c);
      table.rows.push_back(row);
    }
  return table;
}

}  // namespace biofuse
