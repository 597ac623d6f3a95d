#include "mtml/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace mtml {

NetConfig NetConfig::defaults(int num_classes) {
  NetConfig cfg;
  cfg.heads[TaskId::T1] = {{16}, num_classes};
  cfg.heads[TaskId::T2] = {{16}, 1};
  cfg.heads[TaskId::T3] = {{16}, 3};
  cfg.heads[TaskId::T4] = {{16}, 1};
  return cfg;
}

namespace {

std::vector<std::pair<int, int>> layer_dims(int d_in, const std::vector<int>& widths,
                                            int d_out) {
  std::vector<std::pair<int, int>> dims;
  int prev = d_in;
  for (int w : widths) {
    dims.emplace_back(prev, w);
    prev = w;
  }
  dims.emplace_back(prev, d_out);
  return dims;
}

std::vector<std::pair<int, int>> trunk_dims(const NetConfig& cfg) {
  return layer_dims(cfg.d_in, cfg.trunk_widths, cfg.d_repr);
}

std::vector<std::pair<int, int>> head_dims(const NetConfig& cfg, TaskId t) {
  const HeadConfig& h = cfg.heads.at(t);
  return layer_dims(cfg.d_repr, h.hidden, h.out_dim);
}

std::vector<Layer> init_layers(const std::vector<std::pair<int, int>>& dims, Rng& rng) {
  std::vector<Layer> layers;
  for (auto [fan_in, fan_out] : dims) {
    double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    Layer l;
    l.w = Tensor::uniform({static_cast<std::size_t>(fan_in),
                           static_cast<std::size_t>(fan_out)},
                          rng, -s, s, true);
    l.b = Tensor::zeros({static_cast<std::size_t>(fan_out)}, true);
    layers.push_back(std::move(l));
  }
  return layers;
}

}  // namespace

int NetConfig::param_count(const std::vector<TaskId>& tasks) const {
  auto count = [](const std::vector<std::pair<int, int>>& dims) {
    int n = 0;
    for (auto [fi, fo] : dims) n += (fi + 1) * fo;
    return n;
  };
  int total = count(trunk_dims(*this));
  for (TaskId t : tasks) total += count(head_dims(*this, t));
  total += static_cast<int>(tasks.size());  // logvars
  return total;
}

std::vector<TaskId> ParamSet::task_ids() const {
  std::vector<TaskId> ids;
  for (const auto& [t, _] : heads) ids.push_back(t);
  return ids;
}

ParamSet ParamSet::deep_copy() const {
  ParamSet out;
  for (const Layer& l : trunk) out.trunk.push_back({l.w.clone(), l.b.clone()});
  for (const auto& [t, layers] : heads) {
    std::vector<Layer> copy;
    for (const Layer& l : layers) copy.push_back({l.w.clone(), l.b.clone()});
    out.heads.emplace(t, std::move(copy));
  }
  for (const auto& [t, lv] : logvars) out.logvars.emplace(t, lv.clone());
  out.frozen = frozen;
  return out;
}

std::vector<ParamRef> ParamSet::params() {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    refs.push_back({"trunk." + std::to_string(i) + ".w", ParamKind::TrunkWeight,
                    std::nullopt, trunk[i].w});
    refs.push_back({"trunk." + std::to_string(i) + ".b", ParamKind::TrunkBias,
                    std::nullopt, trunk[i].b});
  }
  for (auto& [t, layers] : heads) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      std::string base = "head." + to_string(t) + "." + std::to_string(i);
      refs.push_back({base + ".w", ParamKind::HeadWeight, t, layers[i].w});
      refs.push_back({base + ".b", ParamKind::HeadBias, t, layers[i].b});
    }
  }
  for (auto& [t, lv] : logvars) {
    refs.push_back({"logvar." + to_string(t), ParamKind::LogVar, t, lv});
  }
  return refs;
}

std::vector<ParamRef> ParamSet::params() const {
  return const_cast<ParamSet*>(this)->params();
}

std::size_t ParamSet::param_count() const {
  std::size_t n = 0;
  for (const ParamRef& r : params()) n += r.tensor.size();
  return n;
}

void ParamSet::zero_grad() {
  for (ParamRef& r : params()) r.tensor.zero_grad();
}

void ParamSet::clear_frozen_grads() {
  for (ParamRef& r : params()) {
    if (r.task && r.kind != ParamKind::LogVar && frozen.count(*r.task)) {
      r.tensor.zero_grad();
    }
  }
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (const ParamRef& r : params()) {
    flat.insert(flat.end(), r.tensor.data().begin(), r.tensor.data().end());
  }
  return flat;
}

void ParamSet::unflatten(std::span<const double> flat) {
  if (flat.size() != param_count()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(param_count()) +
                                " values, got " + std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (ParamRef& r : params()) {
    auto dst = r.tensor.data_mut();
    std::copy(flat.begin() + off, flat.begin() + off + dst.size(), dst.begin());
    off += dst.size();
  }
}

ParamSet init_params(const NetConfig& cfg, const std::vector<TaskId>& tasks,
                     std::uint64_t seed) {
  ParamSet p;
  Rng trunk_rng(mix_seed(seed, "trunk"));
  p.trunk = init_layers(trunk_dims(cfg), trunk_rng);
  for (TaskId t : tasks) {
    if (!cfg.heads.count(t)) {
      throw std::invalid_argument("init_params: no head config for " + to_string(t));
    }
    Rng head_rng(mix_seed(seed, "head." + to_string(t)));
    p.heads.emplace(t, init_layers(head_dims(cfg, t), head_rng));
    p.logvars.emplace(t, Tensor::zeros({1}, true));
  }
  return p;
}

void add_task_head(ParamSet& params, const NetConfig& cfg, TaskId task,
                   std::uint64_t seed) {
  if (params.has_task(task)) {
    throw std::invalid_argument("add_task_head: " + to_string(task) + " already present");
  }
  Rng head_rng(mix_seed(seed, "head." + to_string(task)));
  params.heads.emplace(task, init_layers(head_dims(cfg, task), head_rng));
  params.logvars.emplace(task, Tensor::zeros({1}, true));
}

namespace {

// x.W + b, with the bias row broadcast via an explicit outer product so the
// engine needs no rowwise broadcasting.
Tensor affine(const Tensor& x, const Layer& layer) {
  const std::size_t batch = x.shape()[0];
  const std::size_t out = layer.b.size();
  Tensor ones_col = Tensor::full({batch, 1}, 1.0);
  return add(matmul(x, layer.w), matmul(ones_col, reshape(layer.b, {1, out})));
}

}  // namespace

std::map<TaskId, Tensor> forward(const ParamSet& params, const Tensor& x,
                                 const std::vector<TaskId>& tasks) {
  std::map<TaskId, Tensor> out;
  if (tasks.empty()) return out;
  for (TaskId t : tasks) {
    if (!params.has_task(t)) {
      throw std::invalid_argument("forward: unknown task " + to_string(t));
    }
  }
  Tensor h = x;
  for (const Layer& l : params.trunk) h = tanh(affine(h, l));
  for (TaskId t : tasks) {
    const auto& layers = params.heads.at(t);
    Tensor y = h;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) y = tanh(affine(y, layers[i]));
    out.emplace(t, affine(y, layers.back()));
  }
  return out;
}

// --- checkpoints --------------------------------------------------------

namespace {

using nlohmann::json;

json config_to_json(const NetConfig& cfg) {
  json heads = json::object();
  for (const auto& [t, h] : cfg.heads) {
    heads[to_string(t)] = {{"hidden", h.hidden}, {"out_dim", h.out_dim}};
  }
  return {{"d_in", cfg.d_in},
          {"trunk_widths", cfg.trunk_widths},
          {"d_repr", cfg.d_repr},
          {"heads", heads}};
}

NetConfig config_from_json(const json& j) {
  NetConfig cfg;
  cfg.d_in = j.at("d_in").get<int>();
  cfg.trunk_widths = j.at("trunk_widths").get<std::vector<int>>();
  cfg.d_repr = j.at("d_repr").get<int>();
  for (const auto& [name, h] : j.at("heads").items()) {
    cfg.heads[task_from_string(name)] = {h.at("hidden").get<std::vector<int>>(),
                                         h.at("out_dim").get<int>()};
  }
  return cfg;
}

void write_le_doubles(std::ostream& os, std::span<const double> vals) {
  for (double v : vals) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) {
      bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
    }
    os.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

std::vector<double> read_le_doubles(std::istream& is, std::size_t n) {
  std::vector<double> vals(n);
  for (std::size_t k = 0; k < n; ++k) {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated parameter file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    std::memcpy(&vals[k], &bits, sizeof(double));
  }
  return vals;
}

}  // namespace

void save_checkpoint(const ParamSet& params, const NetConfig& cfg, std::uint64_t seed,
                     const std::string& path_stem) {
  std::vector<std::string> tasks;
  std::vector<std::string> ordering;
  for (const ParamRef& r : params.params()) ordering.push_back(r.name);
  for (TaskId t : params.task_ids()) tasks.push_back(to_string(t));

  json manifest = {{"format", "mtml-checkpoint-v1"},
                   {"seed", seed},
                   {"net", config_to_json(cfg)},
                   {"tasks", tasks},
                   {"ordering", ordering},
                   {"param_count", params.param_count()}};
  std::ofstream mf(path_stem + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot write " + path_stem + ".json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(path_stem + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot write " + path_stem + ".bin");
  write_le_doubles(bf, params.flatten());
}

Checkpoint load_checkpoint(const std::string& path_stem) {
  std::ifstream mf(path_stem + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot read " + path_stem + ".json");
  json manifest = json::parse(mf);
  if (manifest.at("format") != "mtml-checkpoint-v1") {
    throw std::runtime_error("checkpoint: unrecognized format");
  }
  Checkpoint ck;
  ck.config = config_from_json(manifest.at("net"));
  ck.seed = manifest.at("seed").get<std::uint64_t>();
  for (const auto& name : manifest.at("tasks")) {
    ck.tasks.push_back(task_from_string(name.get<std::string>()));
  }
  ck.params = init_params(ck.config, ck.tasks, 0);
  std::ifstream bf(path_stem + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot read " + path_stem + ".bin");
  auto flat = read_le_doubles(bf, ck.params.param_count());
  ck.params.unflatten(flat);
  return ck;
}

}  // namespace mtml
