// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "biofuse/ecg.hpp"
#include "biofuse/errors.hpp"
#include "biofuse/expctl.hpp"
#include "biofuse/fusion.hpp"

using namespace biofuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s  %2d  %-34s %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Runs one criterion; an exception counts as a failure rather than aborting the rest.
void criterion(int id, const std::string& what, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    auto [pass, detail] = body();
    verdict(id, pass, what, detail);
  } catch (const std::exception& e) {
    verdict(id, false, what, std::string("threw: ") + e.what());
  }
}

// ---- 1 ----

std::pair<bool, std::string> gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = run_gradient_suite();
  const double secs = seconds_since(t0);
  bool ok = secs < 30.0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : entries) {
    ok = ok && e.report.passed(1e-4);
    if (e.report.max_rel_error >= worst) {
      worst = e.report.max_rel_error;
      worst_name = e.name;
    }
  }
  return {ok, fmt("%zu checks, worst %.2e (%s), %.1f s", entries.size(), worst, worst_name.c_str(), secs)};
}

// ---- 2 ----

MultimodalSample random_sample(std::size_t label, ModalityMask mask, std::size_t side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MultimodalSample s;
  if (mask.ecg) {
    EcgSequence e;
    for (auto& q : e.complexes) {
      q.values.resize(kQrsLength);
      for (auto& v : q.values) v = u(rng);
    }
    s.ecg = e;
  }
  auto image = [&] {
    Image img(side, side);
    for (auto& v : img.pixels) v = u(rng);
    return img;
  };
  if (mask.face) s.face = image();
  if (mask.finger) s.finger = image();
  s.mask = mask;
  s.person_label = label;
  s.gender_label = static_cast<int>(label % 2);
  return s;
}

std::pair<bool, std::string> masking() {
  constexpr std::size_t kSide = 8, kSubjects = 4;
  FusedModelConfig mc;
  mc.num_subjects = kSubjects;
  mc.image.input_size = kSide;
  mc.image.channels = {2, 3, 4};
  mc.trunk = {16};
  mc.seed = 11;
  std::mt19937_64 rng(12);
  std::bernoulli_distribution coin(0.6);
  std::uniform_int_distribution<std::size_t> size(3, 12);
  double max_diff = 0.0;
  std::size_t batches = 0, compared = 0, nonzero_absent = 0, absent_checks = 0;
  for (int trial = 0; trial < 50; ++trial) {
    FusedModel model(mc);
    model.set_mode(Mode::train);
    std::vector<MultimodalSample> batch;
    const std::size_t n = size(rng);
    // every fourth batch drops one modality entirely, for the gradient half
    const int dropped = trial % 4 == 3 ? trial / 4 % 3 : -1;
    while (batch.size() < n) {
      ModalityMask m{coin(rng), coin(rng), coin(rng)};
      if (dropped >= 0) m.set(static_cast<Modality>(dropped), false);
      if (!m.any()) continue;
      batch.push_back(random_sample(batch.size() % kSubjects, m, kSide, rng));
    }
    std::vector<const MultimodalSample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    const Tensor fused = model.fuse(ptrs);
    const std::size_t d = FusedModelConfig::feature_dim;

    for (auto m : kAllModalities) {
      const auto mi = static_cast<std::size_t>(m);
      std::vector<std::size_t> rows;
      std::vector<MultimodalSample> sub;
      for (std::size_t b = 0; b < batch.size(); ++b)
        if (batch[b].mask.has(m)) {
          rows.push_back(b);
          MultimodalSample s = batch[b];
          s.mask = ModalityMask::only(m);
          if (m != Modality::ecg) s.ecg.reset();
          if (m != Modality::face) s.face.reset();
          if (m != Modality::finger) s.finger.reset();
          sub.push_back(std::move(s));
        }
      for (std::size_t b = 0; b < batch.size(); ++b)
        if (!batch[b].mask.has(m))
          for (std::size_t j = 0; j < d; ++j) max_diff = std::max(max_diff, std::abs(fused.at(b, mi * d + j)));
      if (rows.empty()) continue;
      FusedModel oracle(mc);
      oracle.set_mode(Mode::train);
      std::vector<const MultimodalSample*> sp;
      for (const auto& s : sub) sp.push_back(&s);
      const Tensor ref = oracle.fuse(sp);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) {
          max_diff = std::max(max_diff, std::abs(fused.at(rows[i], mi * d + j) - ref.at(i, mi * d + j)));
          ++compared;
        }
    }
    ++batches;

    if (dropped >= 0) {
      FusedModel::Cache cache;
      const auto out = model.forward(ptrs, &cache);
      std::vector<std::size_t> ids;
      std::vector<int> genders;
      for (const auto& s : batch) {
        ids.push_back(s.person_label);
        genders.push_back(s.gender_label);
      }
      model.zero_grad();
      model.backward(cache, softmax_cross_entropy(out.id_logits, ids).grad,
                     binary_cross_entropy(out.gender_logits, genders).grad);
      const std::string prefix = std::string(to_string(static_cast<Modality>(dropped)));
      for (const auto& v : model.parameters()) {
        if (v.name.rfind(prefix, 0) != 0 && v.name.rfind("bn." + prefix, 0) != 0) continue;
        ++absent_checks;
        for (double g : v.grad) nonzero_absent += g != 0.0 ? 1 : 0;
      }
    }
  }
  const bool ok = max_diff <= 1e-12 && nonzero_absent == 0 && absent_checks > 0;
  return {ok, fmt("%zu batches, %zu values, max diff %.1e; %zu absent tensors, %zu nonzero grads", batches, compared,
                  max_diff, absent_checks, nonzero_absent)};
}

// ---- 3 ----

std::pair<bool, std::string> preprocessing() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(kQrsLength, 4000);
  std::size_t bad_extract = 0, bad_minmax = 0;
  for (int t = 0; t < 10000; ++t) {
    SignalRecord rec;
    rec.samples.resize(len(rng));
    for (auto& v : rec.samples) v = n(rng);
    std::uniform_int_distribution<std::size_t> rpos(kQrsHalfWindow, rec.samples.size() - kQrsHalfWindow);
    const std::size_t r = rpos(rng);
    rec.samples[r] = 10.0;
    const QrsComplex q = extract_qrs(rec, r);
    if (q.values.size() != kQrsLength || q.values[kQrsHalfWindow] != 10.0 || q.r_index_in_source != r ||
        q.values.front() != rec.samples[r - kQrsHalfWindow] || q.values.back() != rec.samples[r + kQrsHalfWindow - 1])
      ++bad_extract;
    const auto z = minmax_normalize(q.values);
    const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
    if (*lo != 0.0 || *hi != 1.0 || z[kQrsHalfWindow] != 1.0) ++bad_minmax;
  }
  // all 3-subsets of 15 by enumeration, against the sampler
  std::set<std::array<std::size_t, 3>> enumerated, drawn;
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t j = i + 1; j < 15; ++j)
      for (std::size_t k = j + 1; k < 15; ++k) enumerated.insert({i, j, k});
  std::vector<QrsComplex> pool(15);
  for (std::size_t i = 0; i < 15; ++i) pool[i].r_index_in_source = i;
  std::mt19937_64 g(5);
  for (int t = 0; t < 20000; ++t) {
    const auto s = group_sequence(pool, g);
    drawn.insert({s.complexes[0].r_index_in_source, s.complexes[1].r_index_in_source,
                  s.complexes[2].r_index_in_source});
  }
  const bool ok = bad_extract == 0 && bad_minmax == 0 && enumerated.size() == 455 && sequence_count(15) == 455 &&
                  drawn == enumerated;
  return {ok, fmt("10000 windows, %zu bad; %zu bad min-max; C(15,3) enumerated %zu, sampled %zu", bad_extract,
                  bad_minmax, enumerated.size(), drawn.size())};
}

// ---- 4 ----

// P, Q, R, S and T waves as Gaussians; offsets in seconds from the R apex.
struct Wave {
  double offset, width, amplitude;
};
constexpr Wave kPqrst[] = {
    {-0.20, 0.025, 0.15}, {-0.030, 0.010, -0.12}, {0.0, 0.011, 1.0}, {0.030, 0.010, -0.25}, {0.28, 0.045, 0.30},
};

std::pair<bool, std::string> r_peaks() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> bpm_d(50.0, 120.0), snr_d(10.0, 20.0), u(-1.0, 1.0);
  const double fs = kEcgRate;
  std::size_t beats = 0, hits = 0, violations = 0, extra = 0;
  double detect_secs = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double bpm = bpm_d(rng), snr_db = t == 0 ? 10.0 : snr_d(rng);
    const std::size_t length = 10 * kEcgRate;
    std::vector<double> apex;
    for (double c = 0.4 + 0.3 * (u(rng) + 1.0); c * fs < static_cast<double>(length) - 0.4 * fs;
         c += 60.0 / bpm * (1.0 + 0.05 * u(rng)))
      apex.push_back(c);
    std::vector<double> clean(length, 0.0);
    const double wander = 0.1 * u(rng);
    for (std::size_t i = 0; i < length; ++i) {
      const double ts = static_cast<double>(i) / fs;
      clean[i] = wander * std::sin(2.0 * std::numbers::pi * 0.3 * ts);
      for (double c : apex)
        for (const auto& w : kPqrst) {
          const double z = (ts - c - w.offset) / w.width;
          if (std::abs(z) < 8.0) clean[i] += w.amplitude * std::exp(-0.5 * z * z);
        }
    }
    double power = 0.0;
    for (double v : clean) power += v * v;
    power /= static_cast<double>(length);
    std::normal_distribution<double> noise(0.0, std::sqrt(power / std::pow(10.0, snr_db / 10.0)));
    SignalRecord rec;
    rec.samples = clean;
    for (auto& v : rec.samples) v += noise(rng);

    const auto t0 = Clock::now();
    const auto peaks = detect_r_peaks(rec);
    detect_secs += seconds_since(t0);

    for (std::size_t k = 1; k < peaks.size(); ++k)
      if (peaks[k] - peaks[k - 1] < kRefractorySamples) ++violations;
    std::vector<bool> used(peaks.size(), false);
    for (double c : apex) {
      ++beats;
      const double truth = c * fs;
      for (std::size_t k = 0; k < peaks.size(); ++k)
        if (!used[k] && std::abs(static_cast<double>(peaks[k]) - truth) <= 10.0) {
          used[k] = true;
          ++hits;
          break;
        }
    }
    extra += static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(beats);
  const bool ok = rate >= 0.95 && violations == 0 && detect_secs < 10.0;
  return {ok, fmt("%zu/%zu beats (%.2f%%), %zu refractory violations, %zu unmatched peaks, %.2f s", hits, beats,
                  100.0 * rate, violations, extra, detect_secs)};
}

// ---- 5 ----

std::pair<bool, std::string> overfit() {
  ExperimentConfig cfg;
  cfg.data.subjects = 10;
  cfg.data.samples_per_subject = 40;
  cfg.data.image_size = 32;
  cfg.data.synth.image_side = 32;
  const auto t0 = Clock::now();
  const Dataset ds = build_experiment_dataset(cfg, 1);
  FusedModelConfig mc;
  mc.num_subjects = 10;
  mc.image.input_size = 32;
  mc.seed = 1;
  FusedModel model(mc);
  TrainConfig tc;
  tc.epochs = 200;
  tc.seed = 1;
  tc.target_train_accuracy = 0.99;
  const auto log = train(model, ds.split.train, tc);
  const double acc = evaluate(model, ds.split.train).id_accuracy;
  const double secs = seconds_since(t0);
  const bool ok = acc >= 0.99 && log.epochs.size() <= 200 && secs < 120.0;
  return {ok, fmt("train ID %.4f after %zu epochs on %zu samples, %.1f s", acc, log.epochs.size(),
                  ds.split.train.size(), secs)};
}

// ---- 6-8 ----

std::map<std::string, double> mean_id(const ResultsTable& t) {
  std::map<std::string, double> out;
  for (const auto& s : summarize(t))
    if (s.mean_id)
      out[s.cell.modalities.label() + "/" + std::string(to_string(s.cell.task)) + (s.cell.noisy ? "/noisy" : "/clean")] =
          *s.mean_id;
  return out;
}

std::pair<bool, std::string> modality_trend(const ResultsTable& t) {
  auto m = mean_id(t);
  const double tri = m.at("ecg+face+finger/multitask/noisy");
  const double best = std::max({m.at("ecg/multitask/noisy"), m.at("face/multitask/noisy"),
                                m.at("finger/multitask/noisy")});
  return {tri >= best + 0.05, fmt("trimodal %.4f vs best single %.4f (margin %+.1f pp)", tri, best,
                                  100.0 * (tri - best))};
}

std::pair<bool, std::string> per_seed_trend(const ResultsTable& t) {
  std::map<std::uint64_t, std::pair<double, double>> seeds;  // trimodal, best single
  for (const auto& r : t.rows) {
    auto& s = seeds[r.seed];
    if (r.cell.modalities == ModalityMask::all()) s.first = *r.id_accuracy;
    else if (r.cell.modalities.count() == 1) s.second = std::max(s.second, *r.id_accuracy);
  }
  bool ok = true;
  std::string detail;
  for (const auto& [seed, v] : seeds) {
    ok = ok && v.first > v.second;
    detail += fmt("seed %llu %.4f>%.4f ", static_cast<unsigned long long>(seed), v.first, v.second);
  }
  return {ok, detail};
}

std::pair<bool, std::string> task_trend(const ResultsTable& t) {
  auto m = mean_id(t);
  const double multi = m.at("ecg+face+finger/multitask/noisy"), single = m.at("ecg+face+finger/id_only/noisy");
  return {multi >= single - 0.01, fmt("multitask ID %.4f vs id_only %.4f", multi, single)};
}

std::pair<bool, std::string> noise_trend(const ResultsTable& t) {
  auto m = mean_id(t);
  double clean_g = 0.0, noisy_g = 0.0;
  for (const auto& s : summarize(t))
    if (s.cell.modalities == ModalityMask::all()) (s.cell.noisy ? noisy_g : clean_g) = *s.mean_gender;
  const double clean = m.at("ecg+face+finger/multitask/clean"), noisy = m.at("ecg+face+finger/multitask/noisy");
  const double pair = std::max({m.at("ecg+face/multitask/noisy"), m.at("ecg+finger/multitask/noisy"),
                                m.at("face+finger/multitask/noisy")});
  const bool ok = clean >= noisy && clean_g >= noisy_g && noisy >= pair;
  return {ok, fmt("clean %.4f/%.4f >= noisy %.4f/%.4f (id/gender); noisy trimodal ID %.4f vs best pair %.4f", clean,
                  clean_g, noisy, noisy_g, noisy, pair)};
}

// ---- 9 ----

std::pair<bool, std::string> score_oracle() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> classes(2, 30);
  std::size_t mismatches = 0, checks = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t c = classes(rng);
    std::vector<std::vector<double>> s(3, std::vector<double>(c));
    for (auto& row : s) {
      double tot = 0.0;
      for (auto& x : row) tot += x = u(rng);
      for (auto& x : row) x /= tot;
    }
    for (auto rule : {ScoreRule::sum, ScoreRule::product, ScoreRule::max}) {
      std::size_t best = 0;
      double best_v = -1.0;
      for (std::size_t k = 0; k < c; ++k) {
        double v = rule == ScoreRule::product ? 1.0 : 0.0;
        for (std::size_t m = 0; m < 3; ++m) {
          if (rule == ScoreRule::sum) v += s[m][k];
          else if (rule == ScoreRule::product) v *= s[m][k];
          else v = std::max(v, s[m][k]);
        }
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      ++checks;
      if (argmax(score_fusion(s, rule)) != best) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%zu decisions (sum, product, max), %zu mismatches", checks, mismatches)};
}

// ---- 10 ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<bool, std::string> determinism(const fs::path& config) {
  const ExperimentConfig cfg = load_config(config);
  const fs::path root = fs::temp_directory_path() / "biofuse_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> bytes[2];
  for (int pass = 0; pass < 2; ++pass) {
    ExperimentRunner runner(cfg);
    for (auto kind : {SweepKind::modalities, SweepKind::tasks, SweepKind::noise}) {
      const auto paths = write_reports(runner.run(kind), root / std::to_string(pass), cfg.name + "_" +
                                                                                          std::string(to_string(kind)));
      for (const auto& p : paths) bytes[pass].push_back(slurp(p));
    }
  }
  fs::remove_all(root);
  return {bytes[0] == bytes[1] && !bytes[0].empty(),
          fmt("%zu report files from %s, compared byte for byte", bytes[0].size(), config.filename().c_str())};
}

}  // namespace

int main() {
  const fs::path configs = BIOFUSE_SOURCE_DIR "/configs";
  const auto t0 = Clock::now();

  criterion(1, "gradient suite", gradient_suite);
  criterion(2, "masking soundness", masking);
  criterion(3, "preprocessing invariants", preprocessing);
  criterion(4, "R-peak detection", r_peaks);
  criterion(5, "overfit sanity", overfit);

  // One runner serves all three sweeps; the sweep configs differ only in their name.
  std::optional<ExperimentRunner> runner;
  std::optional<ResultsTable> mod, tasks, noise;
  try {
    const ExperimentConfig cfg = load_config(configs / "table1_modalities.json");
    for (const char* other : {"table2_tasks.json", "table3_noise.json"}) {
      ExperimentConfig o = load_config(configs / other);
      o.name = cfg.name;
      if (config_to_json(o) != config_to_json(cfg))
        throw Error(std::string(other) + " differs from table1_modalities.json beyond its name");
    }
    std::printf("trend sweeps: %zu subjects, %zu samples each, %zux%zu images, %zu epochs, seeds", cfg.data.subjects,
                cfg.data.samples_per_subject, cfg.data.image_size, cfg.data.image_size, cfg.epochs);
    for (auto s : cfg.seeds) std::printf(" %llu", static_cast<unsigned long long>(s));
    std::printf("\n");
    std::fflush(stdout);
    runner.emplace(cfg);
    mod = runner->run(SweepKind::modalities);
    std::printf("%s", format_summary(*mod).c_str());
    tasks = runner->run(SweepKind::tasks);
    std::printf("%s", format_summary(*tasks).c_str());
    noise = runner->run(SweepKind::noise);
    std::printf("%s", format_summary(*noise).c_str());
    std::printf("%zu trainings\n", runner->trainings());
  } catch (const std::exception& e) {
    std::printf("trend sweeps failed: %s\n", e.what());
  }
  auto need = [](const std::optional<ResultsTable>& t, auto f) {
    return [&t, f]() -> std::pair<bool, std::string> {
      if (!t) return {false, "sweep did not finish"};
      return f(*t);
    };
  };
  criterion(6, "modality trend", need(mod, modality_trend));
  criterion(6, "modality trend, every seed", need(mod, per_seed_trend));
  criterion(7, "multitask vs single task", need(tasks, task_trend));
  criterion(8, "noise trend", need(noise, noise_trend));

  criterion(9, "score-fusion oracle", score_oracle);
  criterion(10, "report determinism", [&] { return determinism(configs / "smoke.json"); });

  std::printf("summary: %d failed, %.0f s\n", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
