#include "biofuse/ecg.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>

#include "biofuse/errors.hpp"
#include "json.hpp"

namespace biofuse {

std::vector<double> EcgSequence::flatten() const {
  std::vector<double> out;
  out.reserve(kComplexesPerSequence * kQrsLength);
  for (const auto& c : complexes) out.insert(out.end(), c.values.begin(), c.values.end());
  return out;
}

SignalRecord resample(const SignalRecord& rec, int target_rate) {
  if (target_rate <= 0) throw ParameterError("resample: target rate must be positive, got " + std::to_string(target_rate));
  if (rec.rate <= 0) throw ParameterError("resample: source rate must be positive");
  if (rec.samples.empty()) throw EmptyInputError("resample: empty record");
  SignalRecord out = rec;
  out.rate = target_rate;
  if (target_rate == rec.rate) return out;

  const std::size_t n = rec.samples.size();
  const auto m = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / static_cast<double>(rec.rate)));
  out.samples.assign(m, 0.0);
  const double step = static_cast<double>(rec.rate) / static_cast<double>(target_rate);
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) {
      out.samples[i] = rec.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = rec.samples[lo] + frac * (rec.samples[lo + 1] - rec.samples[lo]);
  }
  return out;
}

namespace {

// Centred moving average with the window truncated at the record edges.
std::vector<double> centred_mean(std::span<const double> x, std::size_t half) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

std::vector<double> rolling_max(const std::vector<double>& x, std::size_t half) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  std::deque<std::size_t> q;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hi = std::min(n, i + half + 1);
    for (; next < hi; ++next) {
      while (!q.empty() && x[q.back()] <= x[next]) q.pop_back();
      q.push_back(next);
    }
    const std::size_t lo = i >= half ? i - half : 0;
    while (q.front() < lo) q.pop_front();
    out[i] = x[q.front()];
  }
  return out;
}

constexpr std::size_t kSmoothHalf = 4;       // 9-sample low-pass
constexpr std::size_t kDiffSpan = 4;         // lp[n+4] - lp[n-4]
constexpr std::size_t kIntegrateHalf = 37;   // 75 samples = 150 ms
constexpr std::size_t kThresholdHalf = 500;  // rolling max over +-1 s
constexpr double kThresholdFraction = 0.5;
constexpr double kFloorFraction = 0.2;       // of the 99th percentile, for beat-free stretches
constexpr std::size_t kRefineHalf = 25;      // +-50 ms search for the R apex

}  // namespace

std::vector<double> detection_envelope(std::span<const double> samples) {
  const std::size_t n = samples.size();
  const auto lp = centred_mean(samples, kSmoothHalf);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = std::min(n - 1, i + kDiffSpan);
    const std::size_t b = i >= kDiffSpan ? i - kDiffSpan : 0;
    const double d = lp[a] - lp[b];
    sq[i] = d * d;
  }
  return centred_mean(sq, kIntegrateHalf);
}

std::vector<std::size_t> detect_r_peaks(const SignalRecord& rec) {
  if (rec.rate != kEcgRate)
    throw ParameterError("detect_r_peaks: expects a 500 Hz record, got " + std::to_string(rec.rate) + " Hz");
  if (rec.samples.size() < static_cast<std::size_t>(kEcgRate))
    throw InsufficientSignalError("detect_r_peaks: record shorter than 1 s (" + std::to_string(rec.samples.size()) +
                                  " samples)");
  const auto env = detection_envelope(rec.samples);
  const auto thr = rolling_max(env, kThresholdHalf);
  const std::size_t n = env.size();

  std::vector<double> sorted = env;
  const auto q99 = sorted.begin() + static_cast<std::ptrdiff_t>((n - 1) * 99 / 100);
  std::nth_element(sorted.begin(), q99, sorted.end());
  const double floor = kFloorFraction * *q99;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (env[i] > env[i - 1] && env[i] >= env[i + 1] && env[i] > kThresholdFraction * thr[i] && env[i] > floor)
      candidates.push_back(i);
  }
  // Strongest first so a refractory conflict always keeps the larger peak.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return env[a] > env[b]; });
  // The envelope peak is smeared by the integration window; the apex of the
  // smoothed signal nearby is the R wave itself.
  const auto lp = centred_mean(rec.samples, kSmoothHalf);
  std::vector<std::size_t> accepted;
  for (auto c : candidates) {
    const std::size_t lo = c >= kRefineHalf ? c - kRefineHalf : 0;
    const std::size_t hi = std::min(n, c + kRefineHalf + 1);
    const auto r = static_cast<std::size_t>(std::max_element(lp.begin() + static_cast<std::ptrdiff_t>(lo),
                                                             lp.begin() + static_cast<std::ptrdiff_t>(hi)) -
                                            lp.begin());
    const bool clear = std::all_of(accepted.begin(), accepted.end(), [&](std::size_t a) {
      return (a > r ? a - r : r - a) >= kRefractorySamples;
    });
    if (clear) accepted.push_back(r);
  }
  std::sort(accepted.begin(), accepted.end());
  return accepted;
}

QrsComplex extract_qrs(const SignalRecord& rec, std::size_t r) {
  if (r < kQrsHalfWindow || r + kQrsHalfWindow > rec.samples.size())
    throw BoundaryError("extract_qrs: window around index " + std::to_string(r) + " leaves a record of " +
                        std::to_string(rec.samples.size()) + " samples");
  QrsComplex q;
  q.values.assign(rec.samples.begin() + static_cast<std::ptrdiff_t>(r - kQrsHalfWindow),
                  rec.samples.begin() + static_cast<std::ptrdiff_t>(r + kQrsHalfWindow));
  q.r_index_in_source = r;
  return q;
}

std::vector<double> minmax_normalize(std::span<const double> values) {
  if (values.empty()) throw EmptyInputError("minmax_normalize: empty input");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mn = *lo, mx = *hi;
  std::vector<double> out(values.size(), 0.0);
  if (mx == mn) return out;
  const double range = mx - mn;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mn) / range;
  // Guarantee exact endpoints regardless of rounding.
  out[static_cast<std::size_t>(lo - values.begin())] = 0.0;
  out[static_cast<std::size_t>(hi - values.begin())] = 1.0;
  return out;
}

std::vector<QrsComplex> segment_record(const SignalRecord& rec) {
  const SignalRecord at500 = rec.rate == kEcgRate ? rec : resample(rec, kEcgRate);
  std::vector<QrsComplex> out;
  for (auto r : detect_r_peaks(at500)) {
    if (r < kQrsHalfWindow || r + kQrsHalfWindow > at500.samples.size()) continue;
    QrsComplex q = extract_qrs(at500, r);
    q.values = minmax_normalize(q.values);
    out.push_back(std::move(q));
  }
  return out;
}

EcgSequence group_sequence(std::span<const QrsComplex> pool, std::mt19937_64& rng) {
  if (pool.size() < kComplexesPerSequence)
    throw InsufficientSignalError("group_sequence: need at least 3 complexes, pool has " +
                                  std::to_string(pool.size()));
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> pick;
  std::sample(idx.begin(), idx.end(), std::back_inserter(pick), kComplexesPerSequence, rng);
  EcgSequence seq;
  for (std::size_t k = 0; k < kComplexesPerSequence; ++k) seq.complexes[k] = pool[pick[k]];
  return seq;
}

EcgSequence add_ecg_noise(const EcgSequence& seq, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw ParameterError("add_ecg_noise: sigma must be non-negative");
  EcgSequence out = seq;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& c : out.complexes)
    for (auto& v : c.values) v += noise(rng);
  return out;
}

// ---------------------------------------------------------------- ingestion

std::vector<double> read_signal_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open signal file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<double> out;
  std::size_t i = 0;
  const auto is_sep = [](char c) { return c == ',' || c == ';' || std::isspace(static_cast<unsigned char>(c)); };
  while (i < text.size()) {
    while (i < text.size() && is_sep(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_sep(text[j])) ++j;
    const std::string tok = text.substr(i, j - i);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v))
      throw FormatError("signal file " + path.string() + ": bad value '" + tok + "'", i);
    out.push_back(v);
    i = j;
  }
  if (out.size() < 2) throw FormatError("signal file " + path.string() + ": fewer than 2 samples", text.size());
  return out;
}

SignalRecord load_signal_record(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw Error("cannot open signal metadata: " + meta_path.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("signal metadata " + meta_path.string() + ": " + e.what(), e.byte);
  }
  SignalRecord rec;
  rec.samples = read_signal_csv(csv_path);
  try {
    rec.subject_id = meta.at("subject_id").get<std::string>();
    rec.rate = meta.at("rate").get<int>();
    rec.gender = parse_gender(meta.value("gender", std::string("unknown")));
    if (meta.contains("age") && !meta["age"].is_null()) rec.age = meta["age"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("signal metadata " + meta_path.string() + ": " + e.what(), 0);
  }
  if (rec.rate <= 0) throw ParameterError("signal metadata " + meta_path.string() + ": rate must be positive");
  return rec;
}

void write_signal_record(const SignalRecord& rec, const std::filesystem::path& csv_path,
                         const std::filesystem::path& meta_path) {
  {
    std::ofstream out(csv_path);
    if (!out) throw Error("cannot write signal file: " + csv_path.string());
    out.precision(17);
    for (double v : rec.samples) out << v << "\n";
  }
  nlohmann::json meta{{"subject_id", rec.subject_id},
                      {"gender", std::string(to_string(rec.gender))},
                      {"rate", rec.rate},
                      {"age", rec.age ? nlohmann::json(*rec.age) : nlohmann::json(nullptr)}};
  std::ofstream out(meta_path);
  if (!out) throw Error("cannot write signal metadata: " + meta_path.string());
  out << meta.dump(2) << "\n";
}

}  // namespace biofuse
