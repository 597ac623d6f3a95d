#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mtml/harness.hpp"

using namespace mtml;
namespace fs = std::filesystem;

namespace {

HarnessConfig mini_config(const std::string& out_dir) {
  HarnessConfig cfg;
  cfg.seeds = {1, 2};
  cfg.n_train = 64;
  cfg.n_val = 32;
  cfg.n_test = 32;
  cfg.train.max_epochs = 8;
  cfg.train.max_meta_epochs = 5;
  cfg.train.task_patience = 4;
  cfg.train.global_patience = 6;
  cfg.train.support_size = 8;
  cfg.train.query_size = 8;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("default_grid: families, counts, and leave-one-out completeness") {
  GridManifest m = default_grid(mini_config("unused"));

  int singles = 0;
  std::set<char> families;
  for (const auto& s : m.specs) {
    families.insert(s.id[0]);
    if (s.paradigm == Paradigm::Single) ++singles;
    if (s.paradigm == Paradigm::Single || s.paradigm == Paradigm::Mtl) {
      CHECK(s.added.empty());  // added tasks only on finetune variants
    }
  }
  CHECK(singles == 4);
  for (char f : {'1', '2', '3', '4', '5', '6', '7'}) CHECK(families.count(f) == 1);

  auto find = [&](const std::string& id) -> const ExperimentSpec& {
    for (const auto& s : m.specs) {
      if (s.id == id) return s;
    }
    FAIL("missing spec ", id);
    return m.specs[0];
  };
  CHECK(find("7.1").trained == std::vector<TaskId>{TaskId::T2, TaskId::T3, TaskId::T4});
  CHECK(find("7.1").added == std::vector<TaskId>{TaskId::T1});
  CHECK(find("4.4").added.empty());
  CHECK(find("4.1").allow_two_sources);
  CHECK_FALSE(find("4.3").allow_two_sources);

  // each leave-one-out family covers every task exactly once as the left-out
  for (char family : {'5', '6', '7'}) {
    std::set<TaskId> left_out;
    for (const auto& s : m.specs) {
      if (s.id[0] != family) continue;
      for (TaskId t : kAllTasks) {
        if (std::find(s.trained.begin(), s.trained.end(), t) == s.trained.end()) {
          left_out.insert(t);
        }
      }
    }
    CHECK(left_out.size() == 4);
  }
}

TEST_CASE("config hash covers hyper-parameters but not the output location") {
  HarnessConfig a = mini_config("dir_a");
  HarnessConfig b = mini_config("dir_b");
  CHECK(a.config_hash() == b.config_hash());
  b.train.adamw.lr *= 2.0;
  CHECK(a.config_hash() != b.config_hash());
  HarnessConfig c = mini_config("dir_c");
  c.noise_std = 0.5;
  CHECK(a.config_hash() != c.config_hash());

  HarnessConfig back = HarnessConfig::from_json_string(a.to_json_string());
  CHECK(back.config_hash() == a.config_hash());
  CHECK(back.seeds == a.seeds);
}

TEST_CASE("manifest round-trips through disk") {
  TempDir tmp("mtml_manifest_test");
  GridManifest m = default_grid(mini_config((tmp.path / "out").string()));
  write_manifest(m, (tmp.path / "grid.json").string());
  GridManifest back = load_manifest((tmp.path / "grid.json").string());
  CHECK(back.specs.size() == m.specs.size());
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.specs[10].id == m.specs[10].id);
  CHECK(back.specs[10].trained == m.specs[10].trained);

  std::ostringstream table;
  print_grid_table(back, table);
  CHECK(table.str().find("7.4") != std::string::npos);
}

TEST_CASE("run_grid: filter, idempotence, and force" * doctest::timeout(300)) {
  TempDir tmp("mtml_rungrid_test");
  GridManifest m = default_grid(mini_config((tmp.path / "out").string()));
  std::ostringstream log;

  GridResult r1 = run_grid(m, "1.", false, 1, log);
  CHECK(r1.completed == 8);  // 4 single specs x 2 seeds
  CHECK(r1.skipped == 0);
  CHECK(r1.failed == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "out" / "runs")) {
    ++files;
    CHECK(e.path().filename().string().rfind("1.", 0) == 0);
  }
  CHECK(files == 8);

  // a second run performs zero training
  GridResult r2 = run_grid(m, "1.", false, 1, log);
  CHECK(r2.completed == 0);
  CHECK(r2.skipped == 8);

  // force re-runs and reproduces byte-identical run documents
  std::string before = slurp(tmp.path / "out" / "runs" / "1.2_s1.json");
  GridResult r3 = run_grid(m, "1.2", true, 1, log);
  CHECK(r3.completed == 2);
  CHECK(slurp(tmp.path / "out" / "runs" / "1.2_s1.json") == before);

  // a changed config hash invalidates the cache
  GridManifest changed = m;
  changed.config.train.adamw.lr *= 0.5;
  changed.config_hash = changed.config.config_hash();
  GridResult r4 = run_grid(changed, "1.2", false, 1, log);
  CHECK(r4.completed == 2);
  CHECK(r4.skipped == 0);
}

TEST_CASE("run documents round-trip and the CSV reconciles with raw files" *
          doctest::timeout(600)) {
  TempDir tmp("mtml_report_test");
  HarnessConfig cfg = mini_config((tmp.path / "out").string());
  GridManifest m = default_grid(cfg);
  std::ostringstream log;
  // a small cross-family slice: singles, one mtl, one mtl+finetune, one mtml+finetune
  run_grid(m, "1.", false, 2, log);
  run_grid(m, "2.1", false, 2, log);
  run_grid(m, "3.3", false, 2, log);
  run_grid(m, "7.2", false, 2, log);

  // round-trip one document
  std::string text = slurp(tmp.path / "out" / "runs" / "7.2_s1.json");
  RunDocument doc = run_document_from_json(text);
  CHECK(doc.exp_id == "7.2");
  CHECK(doc.report.finetuned_tasks == std::vector<TaskId>{TaskId::T2});
  CHECK(doc.report.epochs_finetune > 0);
  REQUIRE(doc.report.test_pre_finetune.has_value());
  CHECK(run_document_from_json(run_document_to_json(doc)).report.test.values ==
        doc.report.test.values);

  std::ostringstream os;
  REQUIRE(write_report((tmp.path / "out").string(), os));

  // row count == sum over completed runs of their metric count
  std::size_t expected_rows = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "out" / "runs")) {
    RunDocument d = run_document_from_json(slurp(e.path()));
    if (d.report.failed) continue;
    for (const auto& [t, metrics] : d.report.test.values) expected_rows += metrics.size();
  }
  std::istringstream csv(slurp(tmp.path / "out" / "report" / "aggregate.csv"));
  std::string line;
  std::getline(csv, line);  // header
  CHECK(line == "exp_id,paradigm,seed,task,metric,value,epochs_total,epochs_finetune");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == expected_rows);

  // mean±std in summary.csv matches a recomputation from the raw files
  std::map<std::string, std::vector<double>> raw;  // exp|task|metric -> values
  for (const auto& e : fs::directory_iterator(tmp.path / "out" / "runs")) {
    RunDocument d = run_document_from_json(slurp(e.path()));
    if (d.report.failed) continue;
    for (const auto& [t, metrics] : d.report.test.values) {
      for (const auto& [name, v] : metrics) {
        raw[d.exp_id + "|" + to_string(t) + "|" + name].push_back(v);
      }
    }
  }
  std::istringstream sum(slurp(tmp.path / "out" / "report" / "summary.csv"));
  std::getline(sum, line);
  int checked = 0;
  while (std::getline(sum, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 7);
    const auto& vals = raw.at(cells[0] + "|" + cells[2] + "|" + cells[3]);
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double sd = 0.0;
    for (double v : vals) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / static_cast<double>(vals.size()));
    CHECK(std::stod(cells[4]) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(std::stod(cells[5]) == doctest::Approx(sd).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked == static_cast<int>(raw.size()));

  // epochs.csv: non-finetune experiments report zero fine-tune epochs
  std::istringstream ep(slurp(tmp.path / "out" / "report" / "epochs.csv"));
  std::getline(ep, line);
  bool saw_single = false;
  while (std::getline(ep, line)) {
    if (line.rfind("1.", 0) == 0) {
      saw_single = true;
      std::stringstream ls(line);
      std::vector<std::string> cells;
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      CHECK(std::stod(cells[4]) == 0.0);
    }
  }
  CHECK(saw_single);

  // summary.txt renders "-" for tasks absent from an experiment
  std::string txt = slurp(tmp.path / "out" / "report" / "summary.txt");
  CHECK(txt.find(" -") != std::string::npos);
  CHECK(txt.find("2.1") != std::string::npos);
}

TEST_CASE("reproducibility: the same grid writes byte-identical aggregate CSVs" *
          doctest::timeout(600)) {
  TempDir tmp("mtml_repro_test");
  std::ostringstream log;
  HarnessConfig ca = mini_config((tmp.path / "a").string());
  HarnessConfig cb = mini_config((tmp.path / "b").string());
  // jobs=4 on one side: scheduling must not affect results
  run_grid(default_grid(ca), "", false, 1, log);
  run_grid(default_grid(cb), "", false, 4, log);
  std::ostringstream os;
  REQUIRE(write_report((tmp.path / "a").string(), os));
  REQUIRE(write_report((tmp.path / "b").string(), os));
  CHECK(slurp(tmp.path / "a" / "report" / "aggregate.csv") ==
        slurp(tmp.path / "b" / "report" / "aggregate.csv"));
  CHECK(slurp(tmp.path / "a" / "report" / "summary.csv") ==
        slurp(tmp.path / "b" / "report" / "summary.csv"));
}
