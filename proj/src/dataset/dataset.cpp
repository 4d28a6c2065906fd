#include "biofuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "biofuse/errors.hpp"
#include "biofuse/seed.hpp"
#include "json.hpp"

namespace biofuse {

namespace {

constexpr std::uint64_t kEcgExpand = 1;
constexpr std::uint64_t kFaceExpand = 2;
constexpr std::uint64_t kFingerExpand = 3;
constexpr std::uint64_t kSubjectStream = 4;
constexpr std::uint64_t kSplitStream = 5;
constexpr std::uint64_t kTrainNoise = 6;
constexpr std::uint64_t kTestNoise = 7;

template <class T>
std::size_t pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

}  // namespace

std::vector<VirtualSubject> build_virtual_subjects(const SourcePools& pools, const MatchingOptions& opt,
                                                   std::mt19937_64& rng) {
  if (opt.min_age > opt.max_age) throw ParameterError("age band is empty");
  if (opt.ecg_records == 0) throw ParameterError("ecg_records must be positive");
  std::size_t count = pools.faces.size();
  if (opt.target_count) {
    if (*opt.target_count > pools.faces.size())
      throw ConstructionError("requested " + std::to_string(*opt.target_count) + " virtual subjects but only " +
                              std::to_string(pools.faces.size()) + " face identities exist");
    count = *opt.target_count;
  }
  std::vector<bool> ecg_used(pools.ecg.size(), false), finger_used(pools.fingers.size(), false);
  std::vector<VirtualSubject> out;
  std::vector<std::string> unmatched;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& face = pools.faces[i];
    const auto it = pools.face_gender.find(face.identity);
    if (it == pools.face_gender.end() || it->second == Gender::unknown) {
      unmatched.push_back(face.identity + " (no gender annotation)");
      continue;
    }
    const Gender g = it->second;
    std::vector<std::size_t> ecg_candidates;
    for (std::size_t j = 0; j < pools.ecg.size(); ++j) {
      const auto& e = pools.ecg[j];
      if (ecg_used[j] || e.gender != g || !e.age || *e.age < opt.min_age || *e.age > opt.max_age) continue;
      if (e.records.empty()) continue;
      ecg_candidates.push_back(j);
    }
    if (ecg_candidates.empty()) {
      unmatched.push_back(face.identity + " (no unused " + std::string(to_string(g)) + " ECG subject aged " +
                          std::to_string(opt.min_age) + "-" + std::to_string(opt.max_age) + ")");
      continue;
    }
    std::vector<std::size_t> finger_candidates;
    for (std::size_t j = 0; j < pools.fingers.size(); ++j)
      if (!finger_used[j]) finger_candidates.push_back(j);
    if (finger_candidates.empty()) {
      unmatched.push_back(face.identity + " (fingerprint pool exhausted)");
      continue;
    }
    const std::size_t e = pick(ecg_candidates, rng);
    const std::size_t f = pick(finger_candidates, rng);
    ecg_used[e] = true;
    finger_used[f] = true;

    VirtualSubject v;
    v.id = out.size();
    v.gender = g;
    const auto& recs = pools.ecg[e].records;
    v.ecg_pool.assign(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(std::min(opt.ecg_records, recs.size())));
    v.face_pool = face.images;
    v.face_sources = face.sources;
    v.finger_pool = pools.fingers[f].images;
    v.finger_sources = pools.fingers[f].sources;
    v.provenance = {pools.ecg[e].subject_id, face.identity, pools.fingers[f].identity};
    out.push_back(std::move(v));
  }
  if (!unmatched.empty()) {
    std::string msg = "could not build virtual subjects for:";
    for (const auto& u : unmatched) msg += " " + u + ";";
    msg.pop_back();
    throw ConstructionError(msg);
  }
  return out;
}

std::size_t sequence_count(std::size_t n) noexcept { return n < 3 ? 0 : n * (n - 1) * (n - 2) / 6; }

ExpandedSubject expand_samples(const VirtualSubject& subject, const ExpansionOptions& opt, std::uint64_t seed) {
  if (opt.target == 0) throw ParameterError("expansion target must be positive");
  if (opt.image_size == 0) throw ParameterError("image size must be positive");
  ExpandedSubject e;
  e.id = subject.id;
  e.gender = subject.gender;
  const std::string who = "subject " + std::to_string(subject.id);

  std::vector<EcgDerivation> combos;
  for (std::size_t r = 0; r < subject.ecg_pool.size(); ++r) {
    const std::size_t n = subject.ecg_pool[r].size();
    if (n < kComplexesPerSequence) {
      e.warnings.push_back(who + ": ECG record " + std::to_string(r) + " has " + std::to_string(n) +
                           " complexes, skipped");
      continue;
    }
    if (n < 15)
      e.warnings.push_back(who + ": ECG record " + std::to_string(r) + " has only " + std::to_string(n) +
                           " complexes (15 expected)");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (std::size_t k = j + 1; k < n; ++k) combos.push_back({r, {i, j, k}});
  }
  if (combos.empty()) throw ConstructionError(who + ": no ECG record has at least 3 complexes");
  std::mt19937_64 rng(derive_seed(seed, {kEcgExpand}));
  std::shuffle(combos.begin(), combos.end(), rng);
  if (combos.size() < opt.target)
    e.warnings.push_back(who + ": only " + std::to_string(combos.size()) + " ECG sequences available, target " +
                         std::to_string(opt.target));
  combos.resize(std::min(combos.size(), opt.target));
  for (const auto& c : combos) {
    EcgSequence seq;
    for (std::size_t t = 0; t < kComplexesPerSequence; ++t) seq.complexes[t] = subject.ecg_pool[c.record][c.complexes[t]];
    e.ecg.push_back(std::move(seq));
  }
  e.ecg_from = std::move(combos);

  auto expand_images = [&](const std::vector<Image>& pool, std::uint64_t stream, const char* name,
                           std::vector<Image>& out, std::vector<ImageDerivation>& from) {
    if (pool.empty()) throw ConstructionError(who + ": empty " + name + " pool");
    std::vector<Image> base;
    for (const auto& img : pool) base.push_back(standardize(img, opt.image_size, opt.image_size));
    for (std::size_t i = 0; i < opt.target; ++i) {
      const ImageDerivation d{i % base.size(), derive_seed(seed, {stream, i})};
      std::mt19937_64 r(d.seed);
      out.push_back(augment(base[d.source], opt.augment, r));
      from.push_back(d);
    }
  };
  expand_images(subject.face_pool, kFaceExpand, "face", e.face, e.face_from);
  expand_images(subject.finger_pool, kFingerExpand, "finger", e.finger, e.finger_from);
  return e;
}

DatasetSplit make_split(std::span<const ExpandedSubject> subjects, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParameterError("split ratio must lie in (0, 1)");
  if (subjects.empty()) throw EmptyInputError("make_split: no subjects");
  DatasetSplit split;
  split.seed = seed;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const auto& sub = subjects[s];
    const std::size_t n = std::min({sub.ecg.size(), sub.face.size(), sub.finger.size()});
    if (n == 0) throw ConstructionError("subject " + std::to_string(s) + " has an empty modality pool");
    if (n < 5)
      split.warnings.push_back("subject " + std::to_string(s) + " has only " + std::to_string(n) +
                               " samples; split is best-effort");
    std::mt19937_64 rng(derive_seed(seed, {kSplitStream, s}));
    auto shuffled = [&](std::size_t size) {
      std::vector<std::size_t> p(size);
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), rng);
      return p;
    };
    const auto pe = shuffled(sub.ecg.size());
    const auto pf = shuffled(sub.face.size());
    const auto pp = shuffled(sub.finger.size());
    std::size_t n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    const int gl = gender_label(sub.gender);
    for (std::size_t k = 0; k < n; ++k) {
      MultimodalSample m;
      m.ecg = sub.ecg[pe[k]];
      m.face = sub.face[pf[k]];
      m.finger = sub.finger[pp[k]];
      m.mask = ModalityMask::all();
      m.person_label = s;
      m.gender_label = gl;
      const SampleRef ref{s, pe[k], pf[k], pp[k]};
      if (k < n_train) {
        split.train.push_back(std::move(m));
        split.train_refs.push_back(ref);
      } else {
        split.test.push_back(std::move(m));
        split.test_refs.push_back(ref);
      }
    }
  }
  return split;
}

DatasetSplit apply_noise_protocol(const DatasetSplit& split, const NoiseProtocol& p, std::uint64_t seed) {
  if (!(p.ecg_sigma >= 0.0)) throw ParameterError("ECG noise sigma must be non-negative");
  if (!(p.face_fraction >= 0.0 && p.face_fraction <= 1.0) || !(p.finger_fraction >= 0.0 && p.finger_fraction <= 1.0))
    throw ParameterError("pepper fractions must lie in [0, 1]");
  DatasetSplit out = split;
  auto corrupt = [&](std::vector<MultimodalSample>& samples, std::uint64_t stream) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto& s = samples[i];
      std::mt19937_64 rng(derive_seed(seed, {stream, i}));
      if (s.ecg && p.ecg_sigma > 0.0) s.ecg = add_ecg_noise(*s.ecg, p.ecg_sigma, rng);
      if (s.finger && p.finger_fraction > 0.0) s.finger = pepper_noise(*s.finger, p.finger_fraction, rng);
      if (s.face && p.face_fraction > 0.0) s.face = pepper_noise(*s.face, p.face_fraction, rng);
    }
  };
  if (!p.test_only) corrupt(out.train, kTrainNoise);
  corrupt(out.test, kTestNoise);
  return out;
}

Dataset build_dataset(std::span<const VirtualSubject> subjects, const ExpansionOptions& expansion, double ratio,
                      std::uint64_t seed) {
  Dataset ds;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    ds.subjects.push_back(expand_samples(subjects[s], expansion, derive_seed(seed, {kSubjectStream, s})));
    ds.subjects.back().id = s;
    ds.provenance.push_back(subjects[s].provenance);
    for (const auto& w : ds.subjects.back().warnings) ds.warnings.push_back(w);
  }
  ds.split = make_split(ds.subjects, ratio, derive_seed(seed, {kSplitStream}));
  for (const auto& w : ds.split.warnings) ds.warnings.push_back(w);
  return ds;
}

void write_dataset_manifest(const Dataset& ds, const std::filesystem::path& path) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["format"] = "biofuse-dataset";
  j["version"] = 1;
  j["split_seed"] = ds.split.seed;
  ordered_json subjects = ordered_json::array();
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const auto& e = ds.subjects[s];
    ordered_json o;
    o["id"] = e.id;
    o["gender"] = std::string(to_string(e.gender));
    if (s < ds.provenance.size())
      o["provenance"] = {{"ecg", ds.provenance[s].ecg_subject},
                         {"face", ds.provenance[s].face_identity},
                         {"finger", ds.provenance[s].finger_identity}};
    ordered_json ecg = ordered_json::array();
    for (const auto& d : e.ecg_from) ecg.push_back({d.record, d.complexes[0], d.complexes[1], d.complexes[2]});
    o["ecg"] = std::move(ecg);
    auto images = [](const std::vector<ImageDerivation>& from) {
      ordered_json a = ordered_json::array();
      for (const auto& d : from) a.push_back({d.source, d.seed});
      return a;
    };
    o["face"] = images(e.face_from);
    o["finger"] = images(e.finger_from);
    subjects.push_back(std::move(o));
  }
  j["subjects"] = std::move(subjects);
  auto refs = [](const std::vector<SampleRef>& v) {
    ordered_json a = ordered_json::array();
    for (const auto& r : v) a.push_back({r.subject, r.ecg, r.face, r.finger});
    return a;
  };
  j["train"] = refs(ds.split.train_refs);
  j["test"] = refs(ds.split.test_refs);
  j["warnings"] = ds.warnings;
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset manifest " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error("failed writing dataset manifest " + path.string());
}

}  // namespace biofuse
