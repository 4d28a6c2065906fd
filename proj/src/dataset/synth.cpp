#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "biofuse/dataset.hpp"
#include "biofuse/errors.hpp"
#include "biofuse/seed.hpp"
#include "synth_internal.hpp"

namespace biofuse {

namespace {

constexpr double kPi = std::numbers::pi;

struct BeatTemplate {
  // P, R, T waves: amplitude (mV), centre (samples from R), width (samples)
  std::array<double, 3> amp{};
  std::array<double, 3> centre{};
  std::array<double, 3> width{};
  double bpm = 70.0;
};

BeatTemplate ecg_template(std::size_t subject, Gender g, const SynthOptions& opt, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {synth::kEcgStream, subject}));
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = opt.ecg_separation;
  const bool female = g == Gender::female;
  BeatTemplate t;
  t.amp = {0.18 * std::max(0.2, 1.0 + 0.35 * s * z(rng)), 1.2,
           (female ? 0.30 : 0.38) * std::max(0.2, 1.0 + 0.35 * s * z(rng))};
  t.centre = {-85.0 + 10.0 * s * z(rng), 0.0, (female ? 138.0 : 128.0) + 12.0 * s * z(rng)};
  t.width = {9.0 * std::max(0.4, 1.0 + 0.2 * s * z(rng)), (female ? 4.6 : 5.2) * std::max(0.5, 1.0 + 0.15 * s * z(rng)),
             22.0 * std::max(0.4, 1.0 + 0.2 * s * z(rng))};
  t.bpm = 55.0 + 40.0 * u(rng);
  return t;
}

struct FaceParams {
  double background = 0.5;
  double skin = 0.5;
  double hair = 0.5;
  double cx = 0.5, cy = 0.5;
  double rx = 0.3, ry = 0.38;  // oval radii, fractions of the side
  double hair_line = 0.3;      // fraction of the oval covered by hair, from the top
};

FaceParams face_params(std::size_t subject, Gender g, const SynthOptions& opt, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {synth::kFaceStream, subject}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double s = opt.face_separation;
  const bool female = g == Gender::female;
  FaceParams p;
  p.background = std::clamp(0.5 + 0.4 * s * u(rng), 0.02, 0.98);
  p.skin = std::clamp((female ? 0.58 : 0.5) + 0.35 * s * u(rng), 0.02, 0.98);
  p.hair = std::clamp(0.5 + 0.4 * s * u(rng), 0.02, 0.98);
  p.cx = 0.5 + 0.05 * u(rng);
  p.cy = 0.52 + 0.05 * u(rng);
  p.rx = 0.27 + 0.04 * u(rng);
  p.ry = 0.36 + 0.04 * u(rng);
  p.hair_line = (female ? 0.42 : 0.28) + 0.06 * u(rng);
  return p;
}

struct FingerParams {
  double ridge = 0.2;
  double valley = 0.8;
  double frequency = 6.0;  // ridges per image side
  double orientation = 0.0;
  double ellipticity = 1.0;
  double cx = 0.5, cy = 0.5;
};

FingerParams finger_params(std::size_t subject, const SynthOptions& opt, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {synth::kFingerStream, subject}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double s = opt.finger_separation;
  FingerParams p;
  p.ridge = std::clamp(0.25 + 0.2 * s * u(rng), 0.0, 0.5);
  p.valley = std::clamp(0.75 + 0.2 * s * u(rng), 0.5, 1.0);
  p.frequency = 7.0 + 2.0 * s * u(rng);
  p.orientation = std::numbers::pi * 0.5 * (1.0 + u(rng));
  p.ellipticity = 1.0 + 0.25 * (1.0 + u(rng));
  p.cx = 0.5 + 0.1 * u(rng);
  p.cy = 0.5 + 0.1 * u(rng);
  return p;
}

double gaussian(double x, double c, double w) { return std::exp(-0.5 * (x - c) * (x - c) / (w * w)); }

}  // namespace

namespace synth {

Image face_image(std::size_t subject, Gender g, const SynthOptions& opt, std::uint64_t seed, std::size_t index) {
  const FaceParams p = face_params(subject, g, opt, seed);
  std::mt19937_64 rng(derive_seed(seed, {kFaceStream, subject, index + 1}));
  std::normal_distribution<double> z(0.0, 1.0);
  const double j = opt.face_jitter;
  // lighting and pose vary per capture
  const double gain = std::max(0.2, 1.0 + j * z(rng));
  const double bg = p.background + j * z(rng), skin = p.skin + j * z(rng), hair = p.hair + j * z(rng);
  const double cx = p.cx + 0.5 * j * z(rng), cy = p.cy + 0.5 * j * z(rng);
  const double rx = p.rx * std::max(0.5, 1.0 + j * z(rng)), ry = p.ry * std::max(0.5, 1.0 + j * z(rng));
  const std::size_t n = opt.image_side;
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(n);
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(n);
      const double ex = (fx - cx) / rx, ey = (fy - cy) / ry;
      double v = bg;
      if (ex * ex + ey * ey <= 1.0) v = (ey + 1.0) / 2.0 < p.hair_line ? hair : skin;
      v = gain * v + 0.02 * z(rng);
      img.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

Image finger_image(std::size_t subject, const SynthOptions& opt, std::uint64_t seed, std::size_t index) {
  const FingerParams p = finger_params(subject, opt, seed);
  std::mt19937_64 rng(derive_seed(seed, {kFingerStream, subject, index + 1}));
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double j = opt.finger_jitter;
  const double cx = p.cx + 2.0 * j * z(rng), cy = p.cy + 2.0 * j * z(rng);
  const double f = p.frequency * std::max(0.2, 1.0 + 0.5 * j * z(rng));
  const double th = p.orientation + kPi * j * z(rng);
  const double phase = 2.0 * kPi * u(rng);
  // finger pressure shifts both ink levels
  const double ridge = p.ridge + j * z(rng), valley = p.valley + j * z(rng);
  const std::size_t n = opt.image_side;
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = (static_cast<double>(x) + 0.5) / static_cast<double>(n) - cx;
      const double dy = (static_cast<double>(y) + 0.5) / static_cast<double>(n) - cy;
      const double a = dx * std::cos(th) + dy * std::sin(th);
      const double b = (-dx * std::sin(th) + dy * std::cos(th)) * p.ellipticity;
      const double r = std::sqrt(a * a + b * b);
      const double t = 0.5 + 0.5 * std::cos(2.0 * kPi * f * r + phase);
      const double v = ridge + (valley - ridge) * t + 0.02 * z(rng);
      img.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

}  // namespace synth

SignalRecord synth_ecg_record(std::size_t subject, Gender gender, const SynthOptions& opt, std::uint64_t seed) {
  if (opt.beats_per_record < 3) throw ParameterError("synthetic records need at least 3 beats");
  const BeatTemplate t = ecg_template(subject, gender, opt, seed);
  std::mt19937_64 rng(derive_seed(seed, {synth::kEcgStream, subject, 1}));
  std::normal_distribution<double> z(0.0, 1.0);
  const double rr = 60.0 / t.bpm * kEcgRate;
  const double j = opt.ecg_jitter;

  std::vector<double> r_times;
  double pos = 250.0;
  for (std::size_t b = 0; b < opt.beats_per_record; ++b) {
    r_times.push_back(pos);
    pos += rr * std::max(0.5, 1.0 + 0.03 * z(rng));
  }
  const std::size_t len = static_cast<std::size_t>(pos) + 250;

  SignalRecord rec;
  rec.rate = kEcgRate;
  rec.subject_id = "synthetic-" + std::to_string(subject);
  rec.gender = gender;
  rec.samples.assign(len, 0.0);
  for (double r : r_times) {
    std::array<double, 3> amp, centre, width;
    for (std::size_t w = 0; w < 3; ++w) {
      amp[w] = t.amp[w] * std::max(0.1, 1.0 + j * z(rng));
      centre[w] = r + t.centre[w] + (w == 1 ? 0.0 : 20.0 * j * z(rng));
      width[w] = t.width[w] * std::max(0.3, 1.0 + j * z(rng));
    }
    const auto lo = static_cast<std::size_t>(std::max(0.0, r - 200.0));
    const auto hi = std::min(len, static_cast<std::size_t>(r + 300.0));
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t w = 0; w < 3; ++w) rec.samples[i] += amp[w] * gaussian(static_cast<double>(i), centre[w], width[w]);
  }
  const double wander_phase = 6.28 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t i = 0; i < len; ++i)
    rec.samples[i] += 0.03 * std::sin(2.0 * kPi * 0.3 * static_cast<double>(i) / kEcgRate + wander_phase) + 0.01 * z(rng);
  return rec;
}

std::vector<VirtualSubject> synth_generate(std::size_t n_subjects, std::size_t samples_per_subject,
                                           const SynthOptions& opt, std::uint64_t seed) {
  if (n_subjects < 2) throw ParameterError("synth_generate needs at least 2 subjects");
  if (samples_per_subject == 0) throw ParameterError("synth_generate needs at least one sample per subject");
  if (opt.image_side < 4) throw ParameterError("synthetic image side must be at least 4");
  const std::size_t n_images = opt.images_per_subject ? opt.images_per_subject : samples_per_subject;
  std::vector<VirtualSubject> out;
  for (std::size_t s = 0; s < n_subjects; ++s) {
    VirtualSubject v;
    v.id = s;
    v.gender = s % 2 == 0 ? Gender::male : Gender::female;
    auto complexes = segment_record(synth_ecg_record(s, v.gender, opt, seed));
    if (complexes.size() < kComplexesPerSequence)
      throw ConstructionError("synthetic subject " + std::to_string(s) + " produced only " +
                              std::to_string(complexes.size()) + " complexes");
    v.ecg_pool.push_back(std::move(complexes));
    for (std::size_t i = 0; i < n_images; ++i) {
      v.face_pool.push_back(synth::face_image(s, v.gender, opt, seed, i));
      v.finger_pool.push_back(synth::finger_image(s, opt, seed, i));
      v.face_sources.push_back("synthetic-face-" + std::to_string(s) + "-" + std::to_string(i));
      v.finger_sources.push_back("synthetic-finger-" + std::to_string(s) + "-" + std::to_string(i));
    }
    v.provenance = {"synthetic-" + std::to_string(s), "synthetic-" + std::to_string(s), "synthetic-" + std::to_string(s)};
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace biofuse
