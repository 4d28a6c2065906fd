#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "biofuse/errors.hpp"
#include "biofuse/expctl.hpp"
#include "json.hpp"

namespace biofuse {

namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were consumed so leftovers can be
// reported as unknown fields.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string where(std::string_view key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out, double lo, double hi) {
    if (auto v = get(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
      const double d = v->get<double>();
      if (!(d >= lo && d <= hi))
        throw ConfigError(where(key) + ": " + std::to_string(d) + " is outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
      out = d;
    }
  }

  void count(const std::string& key, std::size_t& out, std::size_t lo) {
    if (auto v = get(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
      const auto n = v->get<std::size_t>();
      if (n < lo) throw ConfigError(where(key) + ": must be at least " + std::to_string(lo));
      out = n;
    }
  }

  void integer(const std::string& key, int& out) {
    if (auto v = get(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
      out = v->get<int>();
    }
  }

  void flag(const std::string& key, bool& out) {
    if (auto v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  std::optional<std::string> text(const std::string& key) {
    if (auto v = get(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
      return v->get<std::string>();
    }
    return std::nullopt;
  }

  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (auto v = get(key)) {
      if (!v->is_array() || v->empty()) throw ConfigError(where(key) + ": expected a non-empty array of integers");
      std::vector<std::size_t> r;
      for (const auto& e : *v) {
        if (!e.is_number_unsigned() || e.get<std::size_t>() == 0)
          throw ConfigError(where(key) + ": entries must be positive integers");
        r.push_back(e.get<std::size_t>());
      }
      out = std::move(r);
    }
  }

  template <class F>
  void object(const std::string& key, F&& body) {
    if (auto v = get(key)) {
      Fields sub(*v, where(key));
      body(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown field");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto as_field(const std::string& field, F&& parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("config: not valid JSON (byte " + std::to_string(e.byte) + ")");
  }
  ExperimentConfig cfg;
  Fields f(root, "");
  if (auto name = f.text("name")) {
    if (name->empty() || name->find_first_of("/\\") != std::string::npos)
      throw ConfigError("name: must be a non-empty file stem");
    cfg.name = *name;
  }

  bool native_given = false;
  f.object("data", [&](Fields& d) {
    if (auto src = d.text("source")) {
      if (*src == "synthetic") cfg.data.kind = DataKind::synthetic;
      else if (*src == "ingested") cfg.data.kind = DataKind::ingested;
      else throw ConfigError("data.source: expected \"synthetic\" or \"ingested\", got \"" + *src + "\"");
    }
    d.count("subjects", cfg.data.subjects, 2);
    if (auto root_path = d.text("root")) cfg.data.root = *root_path;
    d.integer("min_age", cfg.data.matching.min_age);
    d.integer("max_age", cfg.data.matching.max_age);
    d.count("ecg_records", cfg.data.matching.ecg_records, 1);
    if (d.get("max_subjects")) {
      std::size_t n = 0;
      d.count("max_subjects", n, 2);
      cfg.data.matching.target_count = n;
    }
    d.count("samples_per_subject", cfg.data.samples_per_subject, 2);
    d.count("image_size", cfg.data.image_size, 4);
    if (d.get("native_image_size")) {
      d.count("native_image_size", cfg.data.synth.image_side, 4);
      native_given = true;
    }
    d.number("split_ratio", cfg.data.split_ratio, 1e-9, 1.0 - 1e-9);
    d.object("synthetic", [&](Fields& s) {
      s.number("ecg_separation", cfg.data.synth.ecg_separation, 0.0, 10.0);
      s.number("ecg_jitter", cfg.data.synth.ecg_jitter, 0.0, 10.0);
      s.number("face_separation", cfg.data.synth.face_separation, 0.0, 10.0);
      s.number("face_jitter", cfg.data.synth.face_jitter, 0.0, 10.0);
      s.number("finger_separation", cfg.data.synth.finger_separation, 0.0, 10.0);
      s.number("finger_jitter", cfg.data.synth.finger_jitter, 0.0, 10.0);
      s.count("beats_per_record", cfg.data.synth.beats_per_record, 3);
      s.count("images_per_subject", cfg.data.synth.images_per_subject, 0);
    });
    d.object("augment", [&](Fields& a) {
      a.number("max_rotation_deg", cfg.data.augment.max_rotation_deg, 0.0, 180.0);
      a.number("max_shift_px", cfg.data.augment.max_shift_px, 0.0, 1e6);
      a.number("crop_fraction", cfg.data.augment.crop_fraction, 1e-9, 1.0);
    });
  });
  if (!native_given) cfg.data.synth.image_side = cfg.data.image_size;
  if (cfg.data.matching.min_age > cfg.data.matching.max_age)
    throw ConfigError("data.min_age: larger than data.max_age");
  if (cfg.data.kind == DataKind::ingested && cfg.data.root.empty())
    throw ConfigError("data.root: required when data.source is \"ingested\"");

  if (auto m = f.text("modalities")) {
    cfg.modalities = as_field("modalities", [&] { return ModalityMask::parse(*m); });
    if (!cfg.modalities.any()) throw ConfigError("modalities: must name at least one modality");
  }
  if (auto t = f.text("task")) cfg.task = as_field("task", [&] { return parse_task_mode(*t); });

  f.object("noise", [&](Fields& n) {
    n.flag("enabled", cfg.noisy);
    n.number("ecg_sigma", cfg.noise.ecg_sigma, 0.0, 1e6);
    n.number("finger_fraction", cfg.noise.finger_fraction, 0.0, 1.0);
    n.number("face_fraction", cfg.noise.face_fraction, 0.0, 1.0);
    n.flag("test_only", cfg.noise.test_only);
  });
  f.object("model", [&](Fields& m) {
    m.sizes("trunk", cfg.trunk);
    m.sizes("image_channels", cfg.image_channels);
  });
  f.object("training", [&](Fields& t) {
    t.count("epochs", cfg.epochs, 1);
    t.count("batch_size", cfg.batch_size, 1);
    t.number("learning_rate", cfg.learning_rate, 1e-12, 10.0);
    t.number("id_weight", cfg.loss_weights.id, 0.0, 1e6);
    t.number("gender_weight", cfg.loss_weights.gender, 0.0, 1e6);
  });
  if (auto s = f.get("seeds")) {
    if (!s->is_array() || s->empty()) throw ConfigError("seeds: expected a non-empty array of integers");
    cfg.seeds.clear();
    for (const auto& e : *s) {
      if (!e.is_number_unsigned()) throw ConfigError("seeds: entries must be non-negative integers");
      cfg.seeds.push_back(e.get<std::uint64_t>());
    }
  }
  if (auto out = f.text("output")) {
    if (out->empty()) throw ConfigError("output: must not be empty");
    cfg.output = *out;
  }
  f.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  auto& d = j["data"];
  d["source"] = cfg.data.kind == DataKind::synthetic ? "synthetic" : "ingested";
  if (cfg.data.kind == DataKind::synthetic) {
    d["subjects"] = cfg.data.subjects;
    d["native_image_size"] = cfg.data.synth.image_side;
    d["synthetic"] = {{"ecg_separation", cfg.data.synth.ecg_separation},
                      {"ecg_jitter", cfg.data.synth.ecg_jitter},
                      {"face_separation", cfg.data.synth.face_separation},
                      {"face_jitter", cfg.data.synth.face_jitter},
                      {"finger_separation", cfg.data.synth.finger_separation},
                      {"finger_jitter", cfg.data.synth.finger_jitter},
                      {"beats_per_record", cfg.data.synth.beats_per_record},
                      {"images_per_subject", cfg.data.synth.images_per_subject}};
  } else {
    d["root"] = cfg.data.root.string();
    d["min_age"] = cfg.data.matching.min_age;
    d["max_age"] = cfg.data.matching.max_age;
    d["ecg_records"] = cfg.data.matching.ecg_records;
    if (cfg.data.matching.target_count) d["max_subjects"] = *cfg.data.matching.target_count;
  }
  d["samples_per_subject"] = cfg.data.samples_per_subject;
  d["image_size"] = cfg.data.image_size;
  d["split_ratio"] = cfg.data.split_ratio;
  d["augment"] = {{"max_rotation_deg", cfg.data.augment.max_rotation_deg},
                  {"max_shift_px", cfg.data.augment.max_shift_px},
                  {"crop_fraction", cfg.data.augment.crop_fraction}};
  j["modalities"] = cfg.modalities.label();
  j["task"] = std::string(to_string(cfg.task));
  j["noise"] = {{"enabled", cfg.noisy},
                {"ecg_sigma", cfg.noise.ecg_sigma},
                {"finger_fraction", cfg.noise.finger_fraction},
                {"face_fraction", cfg.noise.face_fraction},
                {"test_only", cfg.noise.test_only}};
  j["model"] = {{"trunk", cfg.trunk}, {"image_channels", cfg.image_channels}};
  j["training"] = {{"epochs", cfg.epochs},
                   {"batch_size", cfg.batch_size},
                   {"learning_rate", cfg.learning_rate},
                   {"id_weight", cfg.loss_weights.id},
                   {"gender_weight", cfg.loss_weights.gender}};
  j["seeds"] = cfg.seeds;
  j["output"] = cfg.output.string();
  return j.dump(2) + "\n";
}

std::filesystem::path output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return cfg.output;
}

}  // namespace biofuse
