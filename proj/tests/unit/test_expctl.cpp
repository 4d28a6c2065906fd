#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biofuse/errors.hpp"
#include "biofuse/expctl.hpp"
#include "doctest.h"

using namespace biofuse;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.name = "tiny";
  cfg.data.subjects = 2;
  cfg.data.samples_per_subject = 20;
  cfg.data.image_size = 16;
  cfg.data.synth.image_side = 16;
  cfg.epochs = 20;
  return cfg;
}

ResultsTable sample_table() {
  ResultsTable t;
  t.kind = SweepKind::tasks;
  ResultRow a;
  a.cell = {ModalityMask::all(), TaskMode::id_only, true};
  a.seed = 1;
  a.id_accuracy = 0.123456;
  a.paper_id = 98.28;
  ResultRow b;
  b.cell = {ModalityMask::parse("ecg+finger"), TaskMode::gender_only, false};
  b.seed = 2;
  b.gender_accuracy = 1.0;
  b.paper_gender = 97.7;
  ResultRow c;
  c.cell = {ModalityMask::parse("face"), TaskMode::multitask, true};
  c.seed = 3;
  c.id_accuracy = 0.5;
  c.gender_accuracy = 0.98765;
  t.rows = {a, b, c};
  return t;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty object keeps the defaults") {
    const auto cfg = parse_config("{}");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.modalities == ModalityMask::all());
    CHECK(cfg.task == TaskMode::multitask);
    CHECK(cfg.noisy);
    CHECK(cfg.learning_rate == 1e-3);
    CHECK(cfg.trunk == std::vector<std::size_t>{256, 256});
    CHECK(cfg.data.synth.image_side == cfg.data.image_size);
  }
  SUBCASE("fields land where they belong") {
    const auto cfg = parse_config(R"({
      "name": "x", "modalities": "ecg+face", "task": "gender_only",
      "data": {"subjects": 5, "image_size": 24, "native_image_size": 48,
               "synthetic": {"face_jitter": 0.5}, "augment": {"max_shift_px": 2}},
      "noise": {"enabled": false, "face_fraction": 0.5},
      "model": {"trunk": [16], "image_channels": [2, 4]},
      "training": {"epochs": 3, "batch_size": 8, "learning_rate": 0.01, "gender_weight": 2},
      "seeds": [9], "output": "out"})");
    CHECK(cfg.name == "x");
    CHECK(cfg.modalities == ModalityMask::parse("ecg+face"));
    CHECK(cfg.task == TaskMode::gender_only);
    CHECK(cfg.data.subjects == 5);
    CHECK(cfg.data.image_size == 24);
    CHECK(cfg.data.synth.image_side == 48);
    CHECK(cfg.data.synth.face_jitter == 0.5);
    CHECK(cfg.data.augment.max_shift_px == 2.0);
    CHECK_FALSE(cfg.noisy);
    CHECK(cfg.noise.face_fraction == 0.5);
    CHECK(cfg.trunk == std::vector<std::size_t>{16});
    CHECK(cfg.image_channels == std::vector<std::size_t>{2, 4});
    CHECK(cfg.epochs == 3);
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.learning_rate == 0.01);
    CHECK(cfg.loss_weights.gender == 2.0);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{9});
    CHECK(cfg.output == fs::path("out"));
  }
  SUBCASE("errors name the offending field") {
    CHECK(config_error(R"({"training": {"epochs": "many"}})").find("training.epochs") == 0);
    CHECK(config_error(R"({"training": {"epochs": 0}})").find("training.epochs") == 0);
    CHECK(config_error(R"({"data": {"synthetic": {"bogus": 1}}})").find("data.synthetic.bogus: unknown field") == 0);
    CHECK(config_error(R"({"colour": "red"})").find("colour: unknown field") == 0);
    CHECK(config_error(R"({"modalities": "ecg+iris"})").find("modalities") == 0);
    CHECK(config_error(R"({"task": "both"})").find("task") == 0);
    CHECK(config_error(R"({"seeds": []})").find("seeds") == 0);
    CHECK(config_error(R"({"noise": {"face_fraction": 1.5}})").find("noise.face_fraction") == 0);
    CHECK(config_error(R"({"data": {"source": "ingested"}})").find("data.root") == 0);
    CHECK(config_error(R"({"data": {"min_age": 40}})").find("data.min_age") == 0);
    CHECK(config_error(R"({"name": "a/b"})").find("name") == 0);
    CHECK(config_error("{\"seeds\": [1,").find("not valid JSON") != std::string::npos);
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
  }
  SUBCASE("config_to_json round trip") {
    auto cfg = parse_config(R"({"name": "rt", "modalities": "finger", "training": {"epochs": 7}, "seeds": [4, 5]})");
    const auto again = parse_config(config_to_json(cfg));
    CHECK(config_to_json(again) == config_to_json(cfg));
    CHECK(again.epochs == 7);
    CHECK(again.modalities == ModalityMask::parse("finger"));
  }
  SUBCASE("shipped configs parse") {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(BIOFUSE_SOURCE_DIR "/configs")) {
      if (e.path().extension() != ".json") continue;
      CAPTURE(e.path().string());
      CHECK_NOTHROW(load_config(e.path()));
      ++n;
    }
    CHECK(n >= 4);
  }
}

TEST_CASE("output root override") {
  ExperimentConfig cfg;
  cfg.output = "from_config";
  ::unsetenv(kOutputRootEnv);
  CHECK(output_dir(cfg) == fs::path("from_config"));
  ::setenv(kOutputRootEnv, "/tmp/elsewhere", 1);
  CHECK(output_dir(cfg) == fs::path("/tmp/elsewhere"));
  ::setenv(kOutputRootEnv, "", 1);
  CHECK(output_dir(cfg) == fs::path("from_config"));
  ::unsetenv(kOutputRootEnv);
}

TEST_CASE("sweep cells and reference values") {
  ExperimentConfig cfg;
  CHECK(sweep_cells(SweepKind::run, cfg).size() == 1);
  const auto mod = sweep_cells(SweepKind::modalities, cfg);
  const auto tasks = sweep_cells(SweepKind::tasks, cfg);
  const auto noise = sweep_cells(SweepKind::noise, cfg);
  REQUIRE(mod.size() == 7);
  REQUIRE(tasks.size() == 3);
  REQUIRE(noise.size() == 8);
  for (const auto& c : mod) CHECK(c.task == TaskMode::multitask);
  for (const auto& c : tasks) CHECK(c.modalities == ModalityMask::all());
  std::size_t clean = 0;
  for (const auto& c : noise) {
    CHECK(c.modalities.count() >= 2);
    clean += c.noisy ? 0 : 1;
  }
  CHECK(clean == 4);

  const Cell efp{ModalityMask::all(), TaskMode::multitask, true};
  auto r = paper_reference(SweepKind::modalities, efp);
  CHECK(r.first == 98.28);
  CHECK(r.second == 97.70);
  r = paper_reference(SweepKind::modalities, {ModalityMask::parse("finger"), TaskMode::multitask, true});
  CHECK(r.first == 83.91);
  CHECK(r.second == 90.80);

  r = paper_reference(SweepKind::tasks, efp);
  CHECK(r.first == 98.97);
  CHECK(r.second == 96.55);
  r = paper_reference(SweepKind::tasks, {ModalityMask::all(), TaskMode::id_only, true});
  CHECK(r.first == 98.28);
  CHECK_FALSE(r.second);
  r = paper_reference(SweepKind::tasks, {ModalityMask::all(), TaskMode::gender_only, true});
  CHECK_FALSE(r.first);
  CHECK(r.second == 97.70);

  r = paper_reference(SweepKind::noise, {ModalityMask::all(), TaskMode::multitask, false});
  CHECK(r.first == 100.0);
  CHECK(r.second == 99.43);
  r = paper_reference(SweepKind::noise, efp);
  CHECK(r.first == 98.97);
  CHECK(r.second == 96.55);
  r = paper_reference(SweepKind::noise, {ModalityMask::parse("face+finger"), TaskMode::multitask, true});
  CHECK(r.first == 95.21);
  CHECK(r.second == 92.91);

  // no table has a clean single-modality cell
  r = paper_reference(SweepKind::run, {ModalityMask::parse("ecg"), TaskMode::multitask, false});
  CHECK_FALSE(r.first);
  CHECK_FALSE(r.second);

  CHECK(parse_sweep_kind("noise") == SweepKind::noise);
  CHECK_THROWS_AS(parse_sweep_kind("everything"), ConfigError);
}

TEST_CASE("reports") {
  const ResultsTable t = sample_table();
  const std::string csv = report_csv(t);
  CHECK(csv.rfind("modalities,task,noise,seed,id_acc,gender_acc,paper_ref_id,paper_ref_gender\n", 0) == 0);
  CHECK(csv.find("ecg+face+finger,id_only,noisy,1,0.1235,-,98.28,-\n") != std::string::npos);
  CHECK(csv.find("ecg+finger,gender_only,clean,2,-,1.0000,-,97.70\n") != std::string::npos);
  CHECK(csv.find("face,multitask,noisy,3,0.5000,0.9877,-,-\n") != std::string::npos);

  SUBCASE("csv round trip") {
    const auto back = parse_report_csv(csv);
    REQUIRE(back.rows.size() == 3);
    CHECK(report_csv(back) == csv);
    CHECK(*back.rows[0].id_accuracy == 0.1235);
    CHECK_FALSE(back.rows[0].gender_accuracy);
    CHECK(back.rows[1].cell.modalities == ModalityMask::parse("ecg+finger"));
    CHECK_FALSE(back.rows[1].cell.noisy);
  }
  SUBCASE("json round trip") {
    const std::string json = report_json(t);
    const auto back = parse_report_json(json);
    REQUIRE(back.rows.size() == 3);
    CHECK(back.kind == SweepKind::tasks);
    CHECK(report_json(back) == json);
    CHECK(report_csv(back) == csv);
    CHECK(json.find("\"id_acc\": 0.1235") != std::string::npos);
    CHECK(json.find("\"gender_acc\": null") != std::string::npos);
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(report_csv(ResultsTable{}), EmptyInputError);
    CHECK_THROWS_AS(report_json(ResultsTable{}), EmptyInputError);
    CHECK_THROWS_AS(parse_report_csv(""), FormatError);
    CHECK_THROWS_AS(parse_report_csv("a,b\n"), FormatError);
    auto broken = csv;
    broken.replace(broken.find("0.5000"), 6, "half");
    CHECK_THROWS_AS(parse_report_csv(broken), FormatError);
    CHECK_THROWS_AS(parse_report_json("{"), FormatError);
    CHECK_THROWS_AS(parse_report_json(R"({"sweep": "tasks"})"), FormatError);
  }
  SUBCASE("files") {
    const fs::path dir = fs::temp_directory_path() / "biofuse_test_reports";
    fs::remove_all(dir);
    const auto paths = write_reports(t, dir / "nested", "t_tasks");
    REQUIRE(paths.size() == 2);
    CHECK(slurp(paths[0]) == csv);
    CHECK(parse_report_json(slurp(paths[1])).rows.size() == 3);
    fs::remove_all(dir);
    std::ofstream(dir.string() + "_file") << "x";
    CHECK_THROWS_AS(write_reports(t, dir.string() + "_file", "t"), Error);
    fs::remove(dir.string() + "_file");
  }
  SUBCASE("summary averages over seeds") {
    ResultsTable s;
    s.kind = SweepKind::modalities;
    for (std::uint64_t seed : {1, 2}) {
      ResultRow r;
      r.cell = {ModalityMask::all(), TaskMode::multitask, true};
      r.seed = seed;
      r.id_accuracy = seed == 1 ? 0.5 : 1.0;
      r.gender_accuracy = 0.25;
      s.rows.push_back(r);
    }
    const auto sum = summarize(s);
    REQUIRE(sum.size() == 1);
    CHECK(sum[0].seeds == 2);
    CHECK(*sum[0].mean_id == doctest::Approx(0.75));
    CHECK(*sum[0].mean_gender == doctest::Approx(0.25));
    CHECK(format_summary(s).find("0.7500") != std::string::npos);
  }
}

TEST_CASE("minimal synthetic run") {
  const ExperimentConfig cfg = tiny_config();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentRunner runner(cfg);
  const auto table = runner.run(SweepKind::run);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  REQUIRE(table.rows.size() == cfg.seeds.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    CHECK(r.seed == cfg.seeds[i]);
    REQUIRE(r.id_accuracy);
    REQUIRE(r.gender_accuracy);
    CHECK(*r.id_accuracy >= 0.0);
    CHECK(*r.id_accuracy <= 1.0);
    CHECK(*r.gender_accuracy >= 0.0);
    CHECK(*r.gender_accuracy <= 1.0);
    CHECK(r.paper_id == 98.28);
  }

  SUBCASE("rerun gives identical report bytes") {
    ExperimentRunner again(cfg);
    const auto t2 = again.run(SweepKind::run);
    CHECK(report_csv(t2) == report_csv(table));
    CHECK(report_json(t2) == report_json(table));
  }
  SUBCASE("finished cells are reused") {
    const std::size_t before = runner.trainings();
    std::size_t cached = 0;
    runner.on_row = [&](const ResultRow&, bool c) { cached += c ? 1 : 0; };
    runner.run(SweepKind::run);
    CHECK(runner.trainings() == before);
    CHECK(cached == cfg.seeds.size());
  }
  SUBCASE("single-task cells leave the other column empty") {
    ExperimentRunner r(cfg);
    const auto id_only = r.run_cell({ModalityMask::all(), TaskMode::id_only, true}, 1);
    CHECK(id_only.id_accuracy);
    CHECK_FALSE(id_only.gender_accuracy);
    const auto g_only = r.run_cell({ModalityMask::parse("ecg"), TaskMode::gender_only, false}, 1);
    CHECK_FALSE(g_only.id_accuracy);
    CHECK(g_only.gender_accuracy);
  }
}

TEST_CASE("runner rejects empty seeds or modalities") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds.clear();
  CHECK_THROWS_AS(ExperimentRunner{cfg}, ConfigError);
  cfg = tiny_config();
  cfg.modalities = ModalityMask{};
  CHECK_THROWS_AS(ExperimentRunner{cfg}, ConfigError);
}
