#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "biofuse/errors.hpp"
#include "biofuse/expctl.hpp"
#include "json.hpp"

namespace biofuse {

namespace {

constexpr const char* kColumns[] = {"modalities", "task",       "noise",        "seed",
                                    "id_acc",     "gender_acc", "paper_ref_id", "paper_ref_gender"};

std::string fixed(std::optional<double> v, int decimals) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
  return buf;
}

std::optional<double> parse_cell(const std::string& s, const std::string& column) {
  if (s == "-") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("report column " + column + ": \"" + s + "\" is not a number", 0);
  }
}

bool parse_noise(const std::string& s) {
  if (s == "noisy") return true;
  if (s == "clean") return false;
  throw FormatError("report column noise: \"" + s + "\" is neither noisy nor clean", 0);
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

void require_rows(const ResultsTable& t) {
  if (t.rows.empty()) throw EmptyInputError("cannot write a report for an empty results table");
}

}  // namespace

std::string report_csv(const ResultsTable& table) {
  require_rows(table);
  std::ostringstream out;
  for (std::size_t i = 0; i < std::size(kColumns); ++i) out << (i ? "," : "") << kColumns[i];
  out << '\n';
  for (const auto& r : table.rows)
    out << r.cell.modalities.label() << ',' << to_string(r.cell.task) << ',' << (r.cell.noisy ? "noisy" : "clean")
        << ',' << r.seed << ',' << fixed(r.id_accuracy, 4) << ',' << fixed(r.gender_accuracy, 4) << ','
        << fixed(r.paper_id, 2) << ',' << fixed(r.paper_gender, 2) << '\n';
  return out.str();
}

std::string report_json(const ResultsTable& table) {
  require_rows(table);
  using nlohmann::ordered_json;
  auto num = [](std::optional<double> v, bool round) -> ordered_json {
    if (!v) return nullptr;
    return round ? round4(*v) : *v;
  };
  ordered_json j;
  j["sweep"] = std::string(to_string(table.kind));
  j["columns"] = kColumns;
  ordered_json rows = ordered_json::array();
  for (const auto& r : table.rows) {
    ordered_json o;
    o["modalities"] = r.cell.modalities.label();
    o["task"] = std::string(to_string(r.cell.task));
    o["noise"] = r.cell.noisy ? "noisy" : "clean";
    o["seed"] = r.seed;
    o["id_acc"] = num(r.id_accuracy, true);
    o["gender_acc"] = num(r.gender_accuracy, true);
    o["paper_ref_id"] = num(r.paper_id, false);
    o["paper_ref_gender"] = num(r.paper_gender, false);
    rows.push_back(std::move(o));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

ResultsTable parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report is empty", 0);
  std::string header;
  for (std::size_t i = 0; i < std::size(kColumns); ++i) header += std::string(i ? "," : "") + kColumns[i];
  if (line != header) throw FormatError("report header does not match the expected columns", 0);
  ResultsTable t;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != std::size(kColumns))
      throw FormatError("report row has " + std::to_string(f.size()) + " fields", here);
    ResultRow r;
    try {
      r.cell.modalities = ModalityMask::parse(f[0]);
      r.cell.task = parse_task_mode(f[1]);
    } catch (const Error& e) {
      throw FormatError(std::string("report row: ") + e.what(), here);
    }
    r.cell.noisy = parse_noise(f[2]);
    r.seed = static_cast<std::uint64_t>(parse_cell(f[3], "seed").value_or(0));
    r.id_accuracy = parse_cell(f[4], "id_acc");
    r.gender_accuracy = parse_cell(f[5], "gender_acc");
    r.paper_id = parse_cell(f[6], "paper_ref_id");
    r.paper_gender = parse_cell(f[7], "paper_ref_gender");
    t.rows.push_back(r);
  }
  return t;
}

ResultsTable parse_report_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("report is not valid JSON", e.byte);
  }
  ResultsTable t;
  try {
    t.kind = parse_sweep_kind(j.at("sweep").get<std::string>());
    auto opt = [](const nlohmann::json& v) -> std::optional<double> {
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    for (const auto& o : j.at("rows")) {
      ResultRow r;
      r.cell.modalities = ModalityMask::parse(o.at("modalities").get<std::string>());
      r.cell.task = parse_task_mode(o.at("task").get<std::string>());
      r.cell.noisy = parse_noise(o.at("noise").get<std::string>());
      r.seed = o.at("seed").get<std::uint64_t>();
      r.id_accuracy = opt(o.at("id_acc"));
      r.gender_accuracy = opt(o.at("gender_acc"));
      r.paper_id = opt(o.at("paper_ref_id"));
      r.paper_gender = opt(o.at("paper_ref_gender"));
      t.rows.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON: ") + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("report JSON: ") + e.what(), 0);
  }
  return t;
}

std::vector<std::filesystem::path> write_reports(const ResultsTable& table, const std::filesystem::path& dir,
                                                 const std::string& stem) {
  const std::string csv = report_csv(table), json = report_json(table);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> paths{dir / (stem + ".csv"), dir / (stem + ".json")};
  for (std::size_t i = 0; i < 2; ++i) {
    std::ofstream out(paths[i], std::ios::binary);
    out << (i == 0 ? csv : json);
    if (!out) throw Error("cannot write report " + paths[i].string());
  }
  return paths;
}

std::vector<CellSummary> summarize(const ResultsTable& table) {
  std::vector<CellSummary> out;
  std::vector<std::pair<double, std::size_t>> id_sum, g_sum;
  for (const auto& r : table.rows) {
    std::size_t i = 0;
    while (i < out.size() && !(out[i].cell == r.cell)) ++i;
    if (i == out.size()) {
      out.push_back({r.cell, std::nullopt, std::nullopt, 0});
      id_sum.emplace_back(0.0, 0);
      g_sum.emplace_back(0.0, 0);
    }
    ++out[i].seeds;
    if (r.id_accuracy) id_sum[i] = {id_sum[i].first + *r.id_accuracy, id_sum[i].second + 1};
    if (r.gender_accuracy) g_sum[i] = {g_sum[i].first + *r.gender_accuracy, g_sum[i].second + 1};
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (id_sum[i].second) out[i].mean_id = id_sum[i].first / static_cast<double>(id_sum[i].second);
    if (g_sum[i].second) out[i].mean_gender = g_sum[i].first / static_cast<double>(g_sum[i].second);
  }
  return out;
}

std::string format_summary(const ResultsTable& table) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %-12s %-6s %5s %8s %8s %9s %9s\n", "modalities", "task", "noise", "seeds",
                "id_acc", "gen_acc", "paper_id", "paper_gen");
  out << buf;
  for (const auto& s : summarize(table)) {
    const auto ref = paper_reference(table.kind, s.cell);
    std::snprintf(buf, sizeof buf, "%-16s %-12s %-6s %5zu %8s %8s %9s %9s\n", s.cell.modalities.label().c_str(),
                  std::string(to_string(s.cell.task)).c_str(), s.cell.noisy ? "noisy" : "clean", s.seeds,
                  fixed(s.mean_id, 4).c_str(), fixed(s.mean_gender, 4).c_str(), fixed(ref.first, 2).c_str(),
                  fixed(ref.second, 2).c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace biofuse
