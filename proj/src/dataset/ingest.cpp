#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "biofuse/dataset.hpp"
#include "biofuse/errors.hpp"
#include "biofuse/seed.hpp"
#include "synth_internal.hpp"

namespace biofuse {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

ImageIdentity load_identity(const fs::path& dir, const std::string& identity) {
  ImageIdentity id;
  id.identity = identity;
  for (const auto& f : sorted_entries(dir, false)) {
    if (f.filename().string().front() == '.') continue;
    id.images.push_back(load_image(f));
    id.sources.push_back(identity + "/" + dir.filename().string() + "/" + f.filename().string());
  }
  return id;
}

}  // namespace

std::map<std::string, Gender> read_gender_annotations(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open gender annotations: " + path.string());
  std::map<std::string, Gender> out;
  std::string line;
  std::size_t offset = 0, line_no = 0;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto comma = t.find(',');
    if (comma == std::string::npos) throw FormatError("annotation line " + std::to_string(line_no) + " has no comma", here);
    const std::string id = trim(t.substr(0, comma));
    const std::string g = trim(t.substr(comma + 1));
    if (line_no == 1 && id == "face_identity") continue;
    if (id.empty()) throw FormatError("annotation line " + std::to_string(line_no) + " has an empty identity", here);
    try {
      out[id] = parse_gender(g);
    } catch (const ParameterError& e) {
      throw FormatError("annotation line " + std::to_string(line_no) + ": " + e.what(), here + comma + 1);
    }
  }
  return out;
}

SourcePools load_source_pools(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error("source root is not a directory: " + root.string());
  SourcePools pools;
  pools.face_gender = read_gender_annotations(root / "annotations.csv");
  for (const auto& sub : sorted_entries(root, true)) {
    const std::string name = sub.filename().string();
    EcgSubjectSource src;
    src.subject_id = name;
    bool first = true;
    for (const auto& f : sorted_entries(sub / "ecg", false)) {
      if (f.extension() != ".csv") continue;
      fs::path meta = f;
      meta.replace_extension(".json");
      const SignalRecord rec = load_signal_record(f, meta);
      if (first) {
        if (!rec.subject_id.empty()) src.subject_id = rec.subject_id;
        src.gender = rec.gender;
        src.age = rec.age;
        first = false;
      }
      src.records.push_back(segment_record(rec));
      src.record_names.push_back(f.filename().string());
    }
    if (!src.records.empty()) pools.ecg.push_back(std::move(src));
    if (auto face = load_identity(sub / "face", name); !face.images.empty()) pools.faces.push_back(std::move(face));
    if (auto finger = load_identity(sub / "finger", name); !finger.images.empty())
      pools.fingers.push_back(std::move(finger));
  }
  if (pools.ecg.empty() || pools.faces.empty() || pools.fingers.empty())
    throw ConstructionError("source root " + root.string() + " lacks ecg, face or finger data");
  return pools;
}

void write_synthetic_sources(std::size_t n_subjects, std::size_t images_per_subject, const SynthOptions& opt,
                             std::uint64_t seed, const fs::path& root) {
  if (n_subjects < 2) throw ParameterError("need at least 2 synthetic subjects");
  if (images_per_subject == 0) throw ParameterError("need at least one image per subject");
  std::mt19937_64 ages(derive_seed(seed, {99}));
  std::uniform_int_distribution<int> age(18, 35);
  std::ostringstream annotations;
  annotations << "face_identity,gender\n";
  auto name = [](const char* prefix, std::size_t i) {
    std::string n = std::to_string(i);
    return std::string(prefix) + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
  };
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const Gender g = s % 2 == 0 ? Gender::male : Gender::female;
    SignalRecord rec = synth_ecg_record(s, g, opt, seed);
    rec.subject_id = name("E", s);
    rec.age = age(ages);
    const fs::path ecg_dir = root / rec.subject_id / "ecg";
    fs::create_directories(ecg_dir);
    write_signal_record(rec, ecg_dir / "rec0.csv", ecg_dir / "rec0.json");

    const std::string face_id = name("F", s), finger_id = name("P", s);
    fs::create_directories(root / face_id / "face");
    fs::create_directories(root / finger_id / "finger");
    for (std::size_t i = 0; i < images_per_subject; ++i) {
      write_pgm(synth::face_image(s, g, opt, seed, i), root / face_id / "face" / (name("img", i) + ".pgm"));
      write_pgm(synth::finger_image(s, opt, seed, i), root / finger_id / "finger" / (name("img", i) + ".pgm"));
    }
    annotations << face_id << ',' << to_string(g) << '\n';
  }
  std::ofstream out(root / "annotations.csv");
  if (!out) throw Error("cannot write " + (root / "annotations.csv").string());
  out << annotations.str();
}

}  // namespace biofuse
