#include "mtml/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mtml {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::Single: return "single";
    case Paradigm::Mtl: return "mtl";
    case Paradigm::MtlFinetune: return "mtl_finetune";
    case Paradigm::Mtml: return "mtml";
    case Paradigm::MtmlFinetune: return "mtml_finetune";
  }
  return "?";
}

Paradigm paradigm_from_string(const std::string& s) {
  for (Paradigm p : {Paradigm::Single, Paradigm::Mtl, Paradigm::MtlFinetune,
                     Paradigm::Mtml, Paradigm::MtmlFinetune}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown paradigm: " + s);
}

// --- config ---------------------------------------------------------------

WorldConfig HarnessConfig::world_config() const {
  WorldConfig wc;
  wc.seed = world_seed;
  wc.d_in = d_in;
  wc.d_z = d_z;
  wc.num_classes = num_classes;
  wc.noise_std = noise_std;
  return wc;
}

namespace {

json tasks_to_json(const std::vector<TaskId>& tasks) {
  json arr = json::array();
  for (TaskId t : tasks) arr.push_back(to_string(t));
  return arr;
}

std::vector<TaskId> tasks_from_json(const json& arr) {
  std::vector<TaskId> out;
  for (const auto& v : arr) out.push_back(task_from_string(v.get<std::string>()));
  return out;
}

json train_config_to_json(const TrainConfig& t) {
  json heads = json::object();
  for (const auto& [id, h] : t.net.heads) {
    heads[to_string(id)] = {{"hidden", h.hidden}, {"out_dim", h.out_dim}};
  }
  return {
      {"net",
       {{"d_in", t.net.d_in},
        {"trunk_widths", t.net.trunk_widths},
        {"d_repr", t.net.d_repr},
        {"heads", heads}}},
      {"adamw",
       {{"lr", t.adamw.lr},
        {"beta1", t.adamw.beta1},
        {"beta2", t.adamw.beta2},
        {"eps", t.adamw.eps},
        {"weight_decay", t.adamw.weight_decay}}},
      {"meta",
       {{"inner_lr", t.meta.inner_lr},
        {"inner_scope",
         t.meta.inner_scope == InnerScope::TrunkAndHeads ? "trunk_and_heads"
                                                         : "heads_only"},
        {"exact_h", t.meta.exact_h}}},
      {"support_size", t.support_size},
      {"query_size", t.query_size},
      {"k_per_combo", t.k_per_combo},
      {"max_epochs", t.max_epochs},
      {"max_meta_epochs", t.max_meta_epochs},
      {"task_patience", t.task_patience},
      {"global_patience", t.global_patience},
      {"uncertainty_weighting", t.uncertainty_weighting},
  };
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  const json& net = j.at("net");
  t.net.d_in = net.at("d_in").get<int>();
  t.net.trunk_widths = net.at("trunk_widths").get<std::vector<int>>();
  t.net.d_repr = net.at("d_repr").get<int>();
  t.net.heads.clear();
  for (const auto& [name, h] : net.at("heads").items()) {
    t.net.heads[task_from_string(name)] = {h.at("hidden").get<std::vector<int>>(),
                                           h.at("out_dim").get<int>()};
  }
  const json& a = j.at("adamw");
  t.adamw = {a.at("lr"), a.at("beta1"), a.at("beta2"), a.at("eps"),
             a.at("weight_decay")};
  const json& m = j.at("meta");
  t.meta.inner_lr = m.at("inner_lr").get<double>();
  t.meta.inner_scope = m.at("inner_scope") == "heads_only"
                           ? InnerScope::HeadsOnly
                           : InnerScope::TrunkAndHeads;
  t.meta.exact_h = m.at("exact_h").get<double>();
  t.support_size = j.at("support_size").get<int>();
  t.query_size = j.at("query_size").get<int>();
  t.k_per_combo = j.at("k_per_combo").get<int>();
  t.max_epochs = j.at("max_epochs").get<int>();
  t.max_meta_epochs = j.at("max_meta_epochs").get<int>();
  t.task_patience = j.at("task_patience").get<int>();
  t.global_patience = j.at("global_patience").get<int>();
  t.uncertainty_weighting = j.at("uncertainty_weighting").get<bool>();
  return t;
}

json harness_config_to_json(const HarnessConfig& c) {
  return {
      {"world_seed", c.world_seed}, {"seeds", c.seeds},
      {"noise_std", c.noise_std},   {"d_in", c.d_in},
      {"d_z", c.d_z},               {"num_classes", c.num_classes},
      {"n_train", c.n_train},       {"n_val", c.n_val},
      {"n_test", c.n_test},         {"train", train_config_to_json(c.train)},
      {"out_dir", c.out_dir},
  };
}

HarnessConfig harness_config_from_json(const json& j) {
  HarnessConfig c;
  c.world_seed = j.at("world_seed").get<std::uint64_t>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.noise_std = j.at("noise_std").get<double>();
  c.d_in = j.at("d_in").get<int>();
  c.d_z = j.at("d_z").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.n_train = j.at("n_train").get<int>();
  c.n_val = j.at("n_val").get<int>();
  c.n_test = j.at("n_test").get<int>();
  c.train = train_config_from_json(j.at("train"));
  c.out_dir = j.at("out_dir").get<std::string>();
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string HarnessConfig::to_json_string() const {
  return harness_config_to_json(*this).dump(2);  // object keys are sorted
}

HarnessConfig HarnessConfig::from_json_string(const std::string& text) {
  return harness_config_from_json(json::parse(text));
}

HarnessConfig HarnessConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  return harness_config_from_json(json::parse(in));
}

std::string HarnessConfig::config_hash() const {
  // out_dir is a location, not a hyper-parameter
  json j = harness_config_to_json(*this);
  j.erase("out_dir");
  return hex64(fnv1a(j.dump()));
}

// --- grid -------------------------------------------------------------------

GridManifest default_grid(const HarnessConfig& cfg) {
  using enum TaskId;
  GridManifest m;
  m.config = cfg;
  m.config_hash = cfg.config_hash();
  {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    m.created_at = buf;
  }

  auto add = [&](std::string id, Paradigm p, std::vector<TaskId> trained,
                 std::vector<TaskId> added = {}, bool allow_two = false) {
    ExperimentSpec s;
    s.id = std::move(id);
    s.paradigm = p;
    s.trained = std::move(trained);
    s.added = std::move(added);
    s.allow_two_sources = allow_two;
    m.specs.push_back(std::move(s));
  };

  // 1: single task baselines
  add("1.1", Paradigm::Single, {T1});
  add("1.2", Paradigm::Single, {T2});
  add("1.3", Paradigm::Single, {T3});
  add("1.4", Paradigm::Single, {T4});
  // 2: joint multi-task
  add("2.1", Paradigm::Mtl, {T1, T2});
  add("2.2", Paradigm::Mtl, {T1, T2, T3});
  add("2.3", Paradigm::Mtl, {T1, T2, T3, T4});
  // 3: multi-task, addition of new task(s)
  add("3.1", Paradigm::MtlFinetune, {T1, T2}, {T3});
  add("3.2", Paradigm::MtlFinetune, {T1, T2}, {T3, T4});
  add("3.3", Paradigm::MtlFinetune, {T1, T2, T3}, {T4});
  // 4: meta-trained, addition of new task(s); 4.4 refines with no new task
  add("4.1", Paradigm::MtmlFinetune, {T1, T2}, {T3}, true);
  add("4.2", Paradigm::MtmlFinetune, {T1, T2}, {T3, T4}, true);
  add("4.3", Paradigm::MtmlFinetune, {T1, T2, T3}, {T4});
  add("4.4", Paradigm::MtmlFinetune, {T1, T2, T3, T4}, {});
  // 5: leave-one-out multi-task
  add("5.1", Paradigm::Mtl, {T2, T3, T4});
  add("5.2", Paradigm::Mtl, {T1, T3, T4});
  add("5.3", Paradigm::Mtl, {T1, T2, T4});
  add("5.4", Paradigm::Mtl, {T1, T2, T3});
  // 6: leave-one-out multi-task, addition of the left-out task
  add("6.1", Paradigm::MtlFinetune, {T2, T3, T4}, {T1});
  add("6.2", Paradigm::MtlFinetune, {T1, T3, T4}, {T2});
  add("6.3", Paradigm::MtlFinetune, {T1, T2, T4}, {T3});
  add("6.4", Paradigm::MtlFinetune, {T1, T2, T3}, {T4});
  // 7: leave-one-out meta-trained, addition of the left-out task
  add("7.1", Paradigm::MtmlFinetune, {T2, T3, T4}, {T1});
  add("7.2", Paradigm::MtmlFinetune, {T1, T3, T4}, {T2});
  add("7.3", Paradigm::MtmlFinetune, {T1, T2, T4}, {T3});
  add("7.4", Paradigm::MtmlFinetune, {T1, T2, T3}, {T4});
  return m;
}

namespace {

json spec_to_json(const ExperimentSpec& s) {
  return {{"id", s.id},
          {"paradigm", to_string(s.paradigm)},
          {"trained", tasks_to_json(s.trained)},
          {"added", tasks_to_json(s.added)},
          {"finetune_mode", to_string(s.finetune_mode)},
          {"allow_two_sources", s.allow_two_sources}};
}

ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  s.id = j.at("id").get<std::string>();
  s.paradigm = paradigm_from_string(j.at("paradigm").get<std::string>());
  s.trained = tasks_from_json(j.at("trained"));
  s.added = tasks_from_json(j.at("added"));
  s.finetune_mode = finetune_mode_from_string(j.at("finetune_mode").get<std::string>());
  s.allow_two_sources = j.at("allow_two_sources").get<bool>();
  return s;
}

}  // namespace

void write_manifest(const GridManifest& manifest, const std::string& path) {
  json specs = json::array();
  for (const auto& s : manifest.specs) specs.push_back(spec_to_json(s));
  json j = {{"specs", specs},
            {"config", harness_config_to_json(manifest.config)},
            {"created_at", manifest.created_at},
            {"config_hash", manifest.config_hash}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

GridManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path);
  json j = json::parse(in);
  GridManifest m;
  for (const auto& s : j.at("specs")) m.specs.push_back(spec_from_json(s));
  m.config = harness_config_from_json(j.at("config"));
  m.created_at = j.at("created_at").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  return m;
}

void print_grid_table(const GridManifest& manifest, std::ostream& os) {
  os << "id     paradigm        trained              added       mode\n";
  for (const auto& s : manifest.specs) {
    std::string trained, added;
    for (TaskId t : s.trained) trained += (trained.empty() ? "" : ",") + to_string(t);
    for (TaskId t : s.added) added += (added.empty() ? "" : ",") + to_string(t);
    if (added.empty()) added = "-";
    char line[160];
    std::snprintf(line, sizeof(line), "%-6s %-15s %-20s %-11s %s\n", s.id.c_str(),
                  to_string(s.paradigm).c_str(), trained.c_str(), added.c_str(),
                  s.paradigm == Paradigm::MtlFinetune || s.paradigm == Paradigm::MtmlFinetune
                      ? to_string(s.finetune_mode).c_str()
                      : "-");
    os << line;
  }
  os << manifest.specs.size() << " specs, " << manifest.config.seeds.size()
     << " seeds each, config " << manifest.config_hash << "\n";
}

// --- run report JSON --------------------------------------------------------

namespace {

json metric_report_to_json(const MetricReport& r) {
  json j = json::object();
  for (const auto& [t, metrics] : r.values) {
    json m = json::object();
    for (const auto& [name, v] : metrics) m[name] = v;
    j[to_string(t)] = m;
  }
  return j;
}

MetricReport metric_report_from_json(const json& j) {
  MetricReport r;
  for (const auto& [task, metrics] : j.items()) {
    for (const auto& [name, v] : metrics.items()) {
      r.values[task_from_string(task)][name] = v.get<double>();
    }
  }
  return r;
}

json loss_map_to_json(const std::map<TaskId, double>& m) {
  json j = json::object();
  for (const auto& [t, v] : m) j[to_string(t)] = v;
  return j;
}

std::map<TaskId, double> loss_map_from_json(const json& j) {
  std::map<TaskId, double> m;
  for (const auto& [task, v] : j.items()) m[task_from_string(task)] = v.get<double>();
  return m;
}

json epoch_to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"train_loss", loss_map_to_json(e.train_loss)},
          {"val_loss", loss_map_to_json(e.val_loss)},
          {"train_metrics", metric_report_to_json(e.train_metrics)},
          {"val_metrics", metric_report_to_json(e.val_metrics)},
          {"meta_val_proxy", e.meta_val_proxy},
          {"meta_episodes", e.meta_episodes},
          {"meta_query_loss", e.meta_query_loss},
          {"meta_grad_norm", e.meta_grad_norm}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<int>();
  e.train_loss = loss_map_from_json(j.at("train_loss"));
  e.val_loss = loss_map_from_json(j.at("val_loss"));
  e.train_metrics = metric_report_from_json(j.at("train_metrics"));
  e.val_metrics = metric_report_from_json(j.at("val_metrics"));
  e.meta_val_proxy = j.at("meta_val_proxy").get<double>();
  e.meta_episodes = j.at("meta_episodes").get<int>();
  e.meta_query_loss = j.at("meta_query_loss").get<double>();
  e.meta_grad_norm = j.at("meta_grad_norm").get<double>();
  return e;
}

json report_to_json(const RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back(epoch_to_json(e));
  json ft_epochs = json::array();
  for (const auto& e : r.finetune_epochs) ft_epochs.push_back(epoch_to_json(e));
  json j = {{"paradigm", r.paradigm},
            {"trained_tasks", tasks_to_json(r.trained_tasks)},
            {"finetuned_tasks", tasks_to_json(r.finetuned_tasks)},
            {"epochs", epochs},
            {"finetune_epochs", ft_epochs},
            {"epochs_total", r.epochs_total},
            {"epochs_finetune", r.epochs_finetune},
            {"test", metric_report_to_json(r.test)},
            {"seed", r.seed},
            {"splits_hash", r.splits_hash},
            {"failed", r.failed},
            {"failure", r.failure}};
  if (r.test_pre_finetune) {
    j["test_pre_finetune"] = metric_report_to_json(*r.test_pre_finetune);
  }
  return j;
}

RunReport report_from_json(const json& j) {
  RunReport r;
  r.paradigm = j.at("paradigm").get<std::string>();
  r.trained_tasks = tasks_from_json(j.at("trained_tasks"));
  r.finetuned_tasks = tasks_from_json(j.at("finetuned_tasks"));
  for (const auto& e : j.at("epochs")) r.epochs.push_back(epoch_from_json(e));
  for (const auto& e : j.at("finetune_epochs")) {
    r.finetune_epochs.push_back(epoch_from_json(e));
  }
  r.epochs_total = j.at("epochs_total").get<int>();
  r.epochs_finetune = j.at("epochs_finetune").get<int>();
  r.test = metric_report_from_json(j.at("test"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.splits_hash = j.at("splits_hash").get<std::uint64_t>();
  r.failed = j.at("failed").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  if (j.contains("test_pre_finetune")) {
    r.test_pre_finetune = metric_report_from_json(j.at("test_pre_finetune"));
  }
  return r;
}

}  // namespace

std::string run_report_to_json(const RunReport& report) {
  return report_to_json(report).dump();
}

RunReport run_report_from_json(const std::string& text) {
  return report_from_json(json::parse(text));
}

std::string run_document_to_json(const RunDocument& doc) {
  json j = {{"exp_id", doc.exp_id},
            {"paradigm", doc.paradigm},
            {"seed", doc.seed},
            {"config_hash", doc.config_hash},
            {"finetune_mode", doc.finetune_mode},
            {"report", report_to_json(doc.report)}};
  return j.dump();
}

RunDocument run_document_from_json(const std::string& text) {
  json j = json::parse(text);
  RunDocument doc;
  doc.exp_id = j.at("exp_id").get<std::string>();
  doc.paradigm = j.at("paradigm").get<std::string>();
  doc.seed = j.at("seed").get<std::uint64_t>();
  doc.config_hash = j.at("config_hash").get<std::string>();
  doc.finetune_mode = j.at("finetune_mode").get<std::string>();
  doc.report = report_from_json(j.at("report"));
  return doc;
}

// --- execution --------------------------------------------------------------

RunDocument execute_spec(const ExperimentSpec& spec, std::uint64_t seed,
                         const Splits& splits, const HarnessConfig& cfg,
                         ParamSet* final_params) {
  TrainConfig train = cfg.train;
  train.allow_two_source_tasks = spec.allow_two_sources;

  RunDocument doc;
  doc.exp_id = spec.id;
  doc.paradigm = to_string(spec.paradigm);
  doc.seed = seed;
  doc.config_hash = cfg.config_hash();
  doc.finetune_mode = to_string(spec.finetune_mode);

  auto finish = [&](TrainResult&& result) {
    if (final_params) *final_params = std::move(result.params);
    doc.report = std::move(result.report);
  };

  switch (spec.paradigm) {
    case Paradigm::Single:
      finish(train_single(spec.trained.at(0), splits, train, seed));
      break;
    case Paradigm::Mtl:
      finish(train_mtl(spec.trained, splits, train, seed));
      break;
    case Paradigm::Mtml:
      finish(meta_train(spec.trained, splits, train, seed));
      break;
    case Paradigm::MtlFinetune:
    case Paradigm::MtmlFinetune: {
      auto base = spec.paradigm == Paradigm::MtlFinetune
                      ? train_mtl(spec.trained, splits, train, seed)
                      : meta_train(spec.trained, splits, train, seed);
      if (base.report.failed) {
        finish(std::move(base));
        break;
      }
      auto ft = finetune(base.params, spec.trained, spec.added, spec.finetune_mode,
                         splits, train, seed);
      RunReport merged = merge_finetune(std::move(base.report), ft.report);
      if (final_params) *final_params = std::move(ft.params);
      doc.report = std::move(merged);
      break;
    }
  }
  return doc;
}

namespace {

std::string run_file_name(const ExperimentSpec& spec, std::uint64_t seed) {
  return spec.id + "_s" + std::to_string(seed) + ".json";
}

bool can_skip(const fs::path& file, const std::string& config_hash) {
  if (!fs::exists(file)) return false;
  try {
    std::ifstream in(file);
    json j = json::parse(in);
    return j.at("config_hash").get<std::string>() == config_hash;
  } catch (...) {
    return false;
  }
}

}  // namespace

GridResult run_grid(const GridManifest& manifest, const std::string& filter,
                    bool force, int jobs, std::ostream& log) {
  const HarnessConfig& cfg = manifest.config;
  fs::path out(cfg.out_dir);
  fs::create_directories(out / "runs");
  fs::create_directories(out / "checkpoints");

  {
    json mf = {{"config_hash", manifest.config_hash},
               {"created_at", manifest.created_at},
               {"mtml_version", "0.1.0"}};
    std::ofstream f(out / "MANIFEST.json");
    f << mf.dump(2) << "\n";
  }
  write_manifest(manifest, (out / "grid.json").string());

  struct Job {
    const ExperimentSpec* spec;
    std::uint64_t seed;
  };
  std::vector<Job> todo;
  for (const auto& spec : manifest.specs) {
    if (!filter.empty() && spec.id.rfind(filter, 0) != 0) continue;
    for (std::uint64_t seed : cfg.seeds) todo.push_back({&spec, seed});
  }

  WorldFn world(cfg.world_config());
  Splits splits = make_splits(world, all_task_specs(cfg.num_classes), cfg.n_train,
                              cfg.n_val, cfg.n_test, cfg.world_seed);

  GridResult result;
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  std::atomic<int> completed{0}, skipped{0}, failed{0};

  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const Job& job = todo[i];
      fs::path file = out / "runs" / run_file_name(*job.spec, job.seed);
      if (!force && can_skip(file, manifest.config_hash)) {
        ++skipped;
        std::lock_guard lk(log_mu);
        log << "skip " << job.spec->id << " seed " << job.seed << " (up to date)\n";
        continue;
      }
      RunDocument doc;
      ParamSet final_params;
      try {
        doc = execute_spec(*job.spec, job.seed, splits, cfg, &final_params);
      } catch (const std::exception& e) {
        doc.exp_id = job.spec->id;
        doc.paradigm = to_string(job.spec->paradigm);
        doc.seed = job.seed;
        doc.config_hash = manifest.config_hash;
        doc.report.failed = true;
        doc.report.failure = e.what();
      }
      {
        std::ofstream f(file);
        f << run_document_to_json(doc) << "\n";
      }
      if (!doc.report.failed && !final_params.trunk.empty()) {
        std::string stem = (out / "checkpoints" /
                            (job.spec->id + "_s" + std::to_string(job.seed)))
                               .string();
        save_checkpoint(final_params, cfg.train.net, job.seed, stem);
      }
      if (doc.report.failed) {
        ++failed;
        std::lock_guard lk(log_mu);
        log << "FAIL " << job.spec->id << " seed " << job.seed << ": "
            << doc.report.failure << "\n";
      } else {
        ++completed;
        std::lock_guard lk(log_mu);
        log << "done " << job.spec->id << " seed " << job.seed << " ("
            << doc.report.epochs_total << "+" << doc.report.epochs_finetune
            << " epochs)\n";
      }
    }
  };

  int n_workers = std::max(1, jobs);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  result.completed = completed;
  result.skipped = skipped;
  result.failed = failed;
  return result;
}

// --- reporting ----------------------------------------------------------------

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_cell(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f±%.4f", mean, sd);
  return buf;
}

struct Agg {
  std::vector<double> values;
  double mean() const {
    double m = 0.0;
    for (double v : values) m += v;
    return m / static_cast<double>(values.size());
  }
  double stddev() const {
    if (values.size() < 2) return 0.0;
    double m = mean(), s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size()));
  }
};

std::string sparkline(const std::vector<double>& ys) {
  static const char* levels[] = {"▁", "▂", "▃", "▄",
                                 "▅", "▆", "▇", "█"};
  if (ys.empty()) return "";
  double lo = ys[0], hi = ys[0];
  for (double y : ys) {
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  // downsample long trajectories to at most 60 cells
  std::vector<double> pts;
  std::size_t stride = std::max<std::size_t>(1, ys.size() / 60);
  for (std::size_t i = 0; i < ys.size(); i += stride) pts.push_back(ys[i]);
  std::string out;
  for (double y : pts) {
    int lvl = hi > lo ? static_cast<int>((y - lo) / (hi - lo) * 7.0) : 0;
    out += levels[std::clamp(lvl, 0, 7)];
  }
  return out;
}

}  // namespace

bool write_report(const std::string& out_dir, std::ostream& os) {
  fs::path out(out_dir);
  fs::path runs = out / "runs";
  if (!fs::exists(runs)) {
    os << "no runs directory under " << out_dir << "\n";
    return false;
  }
  std::vector<RunDocument> docs;
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(runs)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    docs.push_back(run_document_from_json(ss.str()));
  }
  if (docs.empty()) {
    os << "no completed runs under " << out_dir << "\n";
    return false;
  }

  fs::create_directories(out / "report");
  fs::create_directories(out / "report" / "curves");

  // aggregate.csv: one row per (exp, seed, task, metric), sorted, completed only
  {
    std::ofstream csv(out / "report" / "aggregate.csv");
    csv << "exp_id,paradigm,seed,task,metric,value,epochs_total,epochs_finetune\n";
    for (const auto& doc : docs) {
      if (doc.report.failed) continue;
      for (const auto& [t, metrics] : doc.report.test.values) {
        for (const auto& [name, v] : metrics) {
          csv << doc.exp_id << "," << doc.paradigm << "," << doc.seed << ","
              << to_string(t) << "," << name << "," << fmt_g(v) << ","
              << doc.report.epochs_total << "," << doc.report.epochs_finetune << "\n";
        }
      }
    }
  }

  // per-(exp, task, metric) aggregation over seeds
  std::map<std::string, std::map<TaskId, std::map<std::string, Agg>>> by_exp;
  std::map<std::string, Agg> train_epochs, ft_epochs;
  std::map<std::string, std::string> exp_paradigm;
  std::vector<std::pair<std::string, std::string>> failures;
  for (const auto& doc : docs) {
    if (doc.report.failed) {
      failures.emplace_back(doc.exp_id + "_s" + std::to_string(doc.seed),
                            doc.report.failure);
      continue;
    }
    exp_paradigm[doc.exp_id] = doc.paradigm;
    for (const auto& [t, metrics] : doc.report.test.values) {
      for (const auto& [name, v] : metrics) by_exp[doc.exp_id][t][name].values.push_back(v);
    }
    train_epochs[doc.exp_id].values.push_back(doc.report.epochs_total);
    ft_epochs[doc.exp_id].values.push_back(doc.report.epochs_finetune);
  }

  // summary.csv
  {
    std::ofstream csv(out / "report" / "summary.csv");
    csv << "exp_id,paradigm,task,metric,mean,std,seeds\n";
    for (const auto& [exp, tasks] : by_exp) {
      for (const auto& [t, metrics] : tasks) {
        for (const auto& [name, agg] : metrics) {
          csv << exp << "," << exp_paradigm[exp] << "," << to_string(t) << "," << name
              << "," << fmt_g(agg.mean()) << "," << fmt_g(agg.stddev()) << ","
              << agg.values.size() << "\n";
        }
      }
    }
  }

  // epochs.csv: training vs fine-tuning epochs per experiment
  {
    std::ofstream csv(out / "report" / "epochs.csv");
    csv << "exp_id,paradigm,train_epochs_mean,train_epochs_std,finetune_epochs_mean,"
           "finetune_epochs_std\n";
    for (const auto& [exp, agg] : train_epochs) {
      csv << exp << "," << exp_paradigm[exp] << "," << fmt_g(agg.mean()) << ","
          << fmt_g(agg.stddev()) << "," << fmt_g(ft_epochs[exp].mean()) << ","
          << fmt_g(ft_epochs[exp].stddev()) << "\n";
    }
  }

  // summary.txt: one table per experiment family with "-" for absent tasks
  {
    std::ofstream txt(out / "report" / "summary.txt");
    txt << "Test metrics, mean±std over seeds. '-' marks tasks absent from a run.\n\n";
    std::vector<std::pair<TaskId, std::string>> columns = {
        {TaskId::T1, "accuracy"},          {TaskId::T2, "mae"},
        {TaskId::T3, "angular_mean_deg"},  {TaskId::T3, "cosine_sim"},
        {TaskId::T4, "mae"},
    };
    txt << "exp     paradigm        ";
    for (const auto& [t, name] : columns) {
      txt << to_string(t) << ":" << name << "  ";
    }
    txt << "\n";
    for (const auto& [exp, tasks] : by_exp) {
      char head[64];
      std::snprintf(head, sizeof(head), "%-7s %-15s", exp.c_str(),
                    exp_paradigm[exp].c_str());
      txt << head;
      for (const auto& [t, name] : columns) {
        auto ti = tasks.find(t);
        if (ti == tasks.end() || !ti->second.count(name)) {
          txt << " -               ";
        } else {
          const Agg& agg = ti->second.at(name);
          txt << " " << fmt_cell(agg.mean(), agg.stddev());
        }
      }
      txt << "\n";
    }
    txt << "\nEpochs (train / fine-tune), mean over seeds:\n";
    for (const auto& [exp, agg] : train_epochs) {
      char line[96];
      std::snprintf(line, sizeof(line), "%-7s %8.1f %8.1f\n", exp.c_str(), agg.mean(),
                    ft_epochs[exp].mean());
      txt << line;
    }
    if (!failures.empty()) {
      txt << "\nFAILURES (excluded from every aggregate):\n";
      for (const auto& [run, why] : failures) txt << "  " << run << ": " << why << "\n";
    }
  }

  // curves: validation-loss sparkline per experiment and task (first seed)
  {
    std::set<std::string> done;
    for (const auto& doc : docs) {
      if (doc.report.failed || done.count(doc.exp_id)) continue;
      done.insert(doc.exp_id);
      std::ofstream cf(out / "report" / "curves" / (doc.exp_id + ".txt"));
      cf << "validation loss per epoch, seed " << doc.seed << "\n";
      std::map<TaskId, std::vector<double>> series;
      for (const auto& e : doc.report.epochs) {
        for (const auto& [t, v] : e.val_loss) series[t].push_back(v);
      }
      for (const auto& [t, ys] : series) {
        cf << to_string(t) << " " << sparkline(ys) << "\n";
      }
      if (!doc.report.finetune_epochs.empty()) {
        cf << "fine-tune phase:\n";
        std::map<TaskId, std::vector<double>> ft_series;
        for (const auto& e : doc.report.finetune_epochs) {
          for (const auto& [t, v] : e.val_loss) ft_series[t].push_back(v);
        }
        for (const auto& [t, ys] : ft_series) {
          cf << to_string(t) << " " << sparkline(ys) << "\n";
        }
      }
    }
  }

  int n_failed = static_cast<int>(failures.size());
  os << "report written to " << (out / "report").string() << " (" << docs.size()
     << " runs, " << n_failed << " failed)\n";
  return true;
}

}  // namespace mtml
