#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biofuse/ecg.hpp"
#include "biofuse/fusion.hpp"
#include "biofuse/image.hpp"
#include "biofuse/subject.hpp"

namespace biofuse {

// ---- source pools ----

struct EcgSubjectSource {
  std::string subject_id;
  Gender gender = Gender::unknown;
  std::optional<int> age;
  std::vector<std::vector<QrsComplex>> records;  // segmented complexes, one list per record
  std::vector<std::string> record_names;
};

struct ImageIdentity {
  std::string identity;
  std::vector<Image> images;
  std::vector<std::string> sources;  // file names, or synthetic labels
};

struct SourcePools {
  std::vector<EcgSubjectSource> ecg;
  std::vector<ImageIdentity> faces;
  std::vector<ImageIdentity> fingers;
  std::map<std::string, Gender> face_gender;  // annotation: face identity -> gender
};

struct Provenance {
  std::string ecg_subject;
  std::string face_identity;
  std::string finger_identity;
};

struct VirtualSubject {
  std::size_t id = 0;
  Gender gender = Gender::unknown;
  std::vector<std::vector<QrsComplex>> ecg_pool;  // per record
  std::vector<Image> face_pool;
  std::vector<Image> finger_pool;
  Provenance provenance;
  std::vector<std::string> face_sources;
  std::vector<std::string> finger_sources;
};

struct MatchingOptions {
  int min_age = 13;  // "between their teens and thirties"
  int max_age = 39;
  std::optional<std::size_t> target_count;  // use only the first N face identities
  std::size_t ecg_records = 1;               // records per ECG subject feeding the complex pool
};

/// Pairs each face identity with an unused ECG subject of the same gender inside the
/// age band and a uniformly drawn unused fingerprint identity. Throws
/// ConstructionError naming every face identity that could not be matched.
std::vector<VirtualSubject> build_virtual_subjects(const SourcePools& pools, const MatchingOptions& opt,
                                                   std::mt19937_64& rng);

// ---- expansion ----

struct EcgDerivation {
  std::size_t record = 0;
  std::array<std::size_t, kComplexesPerSequence> complexes{};  // indices into the record, increasing
};

struct ImageDerivation {
  std::size_t source = 0;
  std::uint64_t seed = 0;  // seed of the augmentation draw
};

struct ExpansionOptions {
  std::size_t target = 400;
  std::size_t image_size = 64;
  AugmentParams augment;
};

struct ExpandedSubject {
  std::size_t id = 0;
  Gender gender = Gender::unknown;
  std::vector<EcgSequence> ecg;
  std::vector<EcgDerivation> ecg_from;
  std::vector<Image> face;
  std::vector<ImageDerivation> face_from;
  std::vector<Image> finger;
  std::vector<ImageDerivation> finger_from;
  std::vector<std::string> warnings;
};

/// ECG: every 3-subset of each usable record's complexes, shuffled, first `target` kept.
/// Images: target augmentations of the standardized pool, cycling through the sources.
ExpandedSubject expand_samples(const VirtualSubject& subject, const ExpansionOptions& opt, std::uint64_t seed);

/// Number of 3-subsets of n items.
std::size_t sequence_count(std::size_t n_complexes) noexcept;

// ---- split ----

struct SampleRef {
  std::size_t subject = 0;
  std::size_t ecg = 0;
  std::size_t face = 0;
  std::size_t finger = 0;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct DatasetSplit {
  std::vector<MultimodalSample> train;
  std::vector<MultimodalSample> test;
  std::vector<SampleRef> train_refs;
  std::vector<SampleRef> test_refs;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Per subject: pairs the k-th entries of independently shuffled modality pools into
/// samples, then sends round(ratio * n) of them to train and the rest to test.
DatasetSplit make_split(std::span<const ExpandedSubject> subjects, double ratio, std::uint64_t seed);

// ---- noise ----

struct NoiseProtocol {
  double ecg_sigma = 0.1;
  double finger_fraction = 0.05;
  double face_fraction = 0.97;
  bool test_only = false;

  static NoiseProtocol none() { return {0.0, 0.0, 0.0, false}; }
  bool is_clean() const noexcept { return ecg_sigma == 0.0 && finger_fraction == 0.0 && face_fraction == 0.0; }
};

/// Corrupts every sample of both splits (only test when test_only is set). Each sample's
/// noise comes from its own derived stream, so the result does not depend on order.
DatasetSplit apply_noise_protocol(const DatasetSplit& split, const NoiseProtocol& protocol, std::uint64_t seed);

// ---- synthetic data ----

struct SynthOptions {
  std::size_t image_side = 64;          // native size of generated images
  std::size_t images_per_subject = 0;   // 0: one source image per requested sample
  std::size_t beats_per_record = 24;
  double ecg_separation = 1.0;  // scale of between-subject template differences
  double ecg_jitter = 0.25;     // relative per-beat variation of the template
  double face_separation = 1.0;
  double face_jitter = 0.02;
  double finger_separation = 1.0;
  double finger_jitter = 0.03;
};

/// Desk-scale stand-in for the source databases: per-subject ECG beat templates,
/// face-like and fingerprint-like pattern images. Genders alternate (even ids male)
/// and shift the templates, so both tasks are learnable.
std::vector<VirtualSubject> synth_generate(std::size_t n_subjects, std::size_t samples_per_subject,
                                           const SynthOptions& opt, std::uint64_t seed);

/// Raw 500 Hz signal of one synthetic subject (used by synth_generate and the writer).
SignalRecord synth_ecg_record(std::size_t subject, Gender gender, const SynthOptions& opt, std::uint64_t seed);

// ---- ingestion ----
//
// <root>/annotations.csv               face_identity,gender rows (header optional)
// <root>/<id>/ecg/<rec>.csv            signal, with <rec>.json sidecar (subject_id, gender, age, rate)
// <root>/<id>/face/<img>               PGM/PPM or CSV grid
// <root>/<id>/finger/<img>
//
// Each <id> directory is one source identity per modality it holds. The source
// databases are disjoint, so an id usually has a single modality directory.

std::map<std::string, Gender> read_gender_annotations(const std::filesystem::path& path);
SourcePools load_source_pools(const std::filesystem::path& root);
/// Writes synthetic sources in the layout above; ages are drawn inside the default band.
void write_synthetic_sources(std::size_t n_subjects, std::size_t images_per_subject, const SynthOptions& opt,
                             std::uint64_t seed, const std::filesystem::path& root);

// ---- full pipeline ----

struct Dataset {
  std::vector<ExpandedSubject> subjects;
  std::vector<Provenance> provenance;
  DatasetSplit split;
  std::vector<std::string> warnings;
};

/// expand_samples for every subject with derived seeds, then make_split.
Dataset build_dataset(std::span<const VirtualSubject> subjects, const ExpansionOptions& expansion, double ratio,
                      std::uint64_t seed);

/// JSON manifest: subjects, provenance, derivations and split membership.
void write_dataset_manifest(const Dataset& ds, const std::filesystem::path& path);

}  // namespace biofuse
