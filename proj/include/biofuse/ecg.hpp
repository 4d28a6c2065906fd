#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "biofuse/layers.hpp"
#include "biofuse/subject.hpp"

namespace biofuse {

inline constexpr int kEcgRate = 500;
inline constexpr std::size_t kQrsHalfWindow = kQrsLength / 2;
inline constexpr std::size_t kRefractorySamples = 100;  // 200 ms at 500 Hz
inline constexpr std::size_t kComplexesPerSequence = 3;

struct SignalRecord {
  std::vector<double> samples;  // mV
  int rate = kEcgRate;          // Hz
  std::string subject_id;
  Gender gender = Gender::unknown;
  std::optional<int> age;
};

struct QrsComplex {
  std::vector<double> values;  // kQrsLength samples, R peak at kQrsHalfWindow
  std::size_t r_index_in_source = 0;

  friend bool operator==(const QrsComplex&, const QrsComplex&) = default;
};

/// Three complexes drawn from one record, kept in temporal order.
struct EcgSequence {
  std::array<QrsComplex, kComplexesPerSequence> complexes;

  /// Row-major copy of the 3 x 300 values.
  std::vector<double> flatten() const;

  friend bool operator==(const EcgSequence&, const EcgSequence&) = default;
};

/// Linear-interpolation resampling; output length is round(len * target / rate).
SignalRecord resample(const SignalRecord& rec, int target_rate);

/// Pan-Tompkins style detector for 500 Hz records. Envelope peaks are moved to the
/// apex of the lightly smoothed signal nearby. Returns strictly increasing indices
/// at least kRefractorySamples apart.
std::vector<std::size_t> detect_r_peaks(const SignalRecord& rec);

/// The detection envelope used by detect_r_peaks (moving-average differencing,
/// squaring, 150 ms centred integration).
std::vector<double> detection_envelope(std::span<const double> samples);

/// samples[r-150, r+150); throws BoundaryError when the window leaves the record.
QrsComplex extract_qrs(const SignalRecord& rec, std::size_t r);

/// (v - min) / (max - min); a constant input maps to all zeros.
std::vector<double> minmax_normalize(std::span<const double> values);

/// Resample to 500 Hz, detect R peaks, crop every in-bounds window and min-max normalize it.
std::vector<QrsComplex> segment_record(const SignalRecord& rec);

/// Draws 3 distinct complexes uniformly, preserving their order in the pool.
EcgSequence group_sequence(std::span<const QrsComplex> pool, std::mt19937_64& rng);

/// Adds i.i.d. N(0, sigma^2) to every value; results are not clamped to [0,1].
EcgSequence add_ecg_noise(const EcgSequence& seq, double sigma, std::mt19937_64& rng);

// ---- ingestion ----
// Signal file: numbers separated by commas, whitespace or newlines.
// Sidecar: JSON object {"subject_id": str, "gender": str, "age": int|null, "rate": int}.
std::vector<double> read_signal_csv(const std::filesystem::path& path);
SignalRecord load_signal_record(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path);
void write_signal_record(const SignalRecord& rec, const std::filesystem::path& csv_path,
                         const std::filesystem::path& meta_path);

}  // namespace biofuse
