#include "mtml/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace mtml {

std::string to_string(TaskId id) {
  switch (id) {
    case TaskId::T1: return "T1";
    case TaskId::T2: return "T2";
    case TaskId::T3: return "T3";
    case TaskId::T4: return "T4";
  }
  return "?";
}

TaskId task_from_string(const std::string& name) {
  for (TaskId t : kAllTasks) {
    if (to_string(t) == name) return t;
  }
  throw std::invalid_argument("unknown task id: " + name);
}

TaskSpec TaskSpec::standard(TaskId id, int num_classes) {
  switch (id) {
    case TaskId::T1:
      return {id, TaskKind::Classification, num_classes, "cross_entropy", {"accuracy"}};
    case TaskId::T2:
      return {id, TaskKind::ScalarRegression, 1, "mse", {"mae"}};
    case TaskId::T3:
      return {id,
              TaskKind::UnitVecRegression,
              3,
              "inv_cosine",
              {"cosine_sim", "angular_mean_deg", "angular_median_deg",
               "pct_within_11_25", "pct_within_22_5", "pct_within_30"}};
    case TaskId::T4:
      return {id, TaskKind::RobustRegression, 1, "huber", {"mae"}};
  }
  throw std::logic_error("unreachable");
}

std::vector<TaskSpec> all_task_specs(int num_classes) {
  std::vector<TaskSpec> specs;
  for (TaskId t : kAllTasks) specs.push_back(TaskSpec::standard(t, num_classes));
  return specs;
}

Batch Batch::gather_rows(const std::vector<std::size_t>& idx,
                         const std::vector<TaskId>& keep_tasks) const {
  const std::size_t d = x.shape()[1];
  std::vector<double> xd(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) xd[r * d + c] = x.at(idx[r], c);
  }
  Batch out;
  out.x = Tensor({idx.size(), d}, std::move(xd));
  for (TaskId t : keep_tasks) {
    auto it = targets.find(t);
    if (it == targets.end()) {
      throw std::invalid_argument("gather_rows: batch has no targets for " + to_string(t));
    }
    const Tensor& src = it->second;
    const std::size_t w = src.rank() == 2 ? src.shape()[1] : 1;
    std::vector<double> td(idx.size() * w);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < w; ++c) td[r * w + c] = src.data()[idx[r] * w + c];
    }
    Shape shape = src.rank() == 2 ? Shape{idx.size(), w} : Shape{idx.size()};
    out.targets.emplace(t, Tensor(std::move(shape), std::move(td)));
  }
  return out;
}

Batch Batch::slice_rows(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
  std::vector<TaskId> keep;
  for (const auto& [t, _] : targets) keep.push_back(t);
  return gather_rows(idx, keep);
}

namespace {

// matrix [rows x cols] . vec [cols]
std::vector<double> matvec(std::span<const double> m, std::span<const double> v,
                           std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += m[i * cols + j] * v[j];
    out[i] = acc;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

WorldFn::WorldFn(const WorldConfig& cfg) : cfg_(cfg) {
  if (cfg.d_in < 1 || cfg.d_z < 1) {
    throw std::invalid_argument("WorldFn: d_in and d_z must be >= 1");
  }
  const std::size_t d_in = static_cast<std::size_t>(cfg.d_in);
  const std::size_t d_z = static_cast<std::size_t>(cfg.d_z);
  const std::size_t C = static_cast<std::size_t>(cfg.num_classes);

  Rng rng(mix_seed(cfg.seed, "world"));
  auto draw = [&rng](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
  };
  draw(w1_, d_z * d_in);
  draw(b1_, d_z);
  draw(w2_, d_z * d_z);
  draw(b2_, d_z);
  draw(class_proj_, C * d_z);
  draw(depth_proj_, d_z);
  depth_bias_ = rng.uniform(-1.0, 1.0);
  draw(normal_proj_, 3 * d_z);
  draw(edge_proj_, d_z);

  const int kRefSamples = 4096;

  // Standardize the class scores against a reference sample so the argmax
  // label distribution is balanced for every seed; raw uniform projections
  // can make one class dominate. Scores stay affine in z.
  {
    Rng ref(mix_seed(cfg.seed, "class-calib"));
    std::vector<double> mu(C, 0.0), m2(C, 0.0);
    std::vector<double> x(d_in);
    for (int s = 0; s < kRefSamples; ++s) {
      for (double& v : x) v = ref.uniform(-1.0, 1.0);
      auto z = latent(x);
      auto scores = matvec(class_proj_, z, C, d_z);
      for (std::size_t c = 0; c < C; ++c) {
        mu[c] += scores[c];
        m2[c] += scores[c] * scores[c];
      }
    }
    class_offset_.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] /= kRefSamples;
      double var = m2[c] / kRefSamples - mu[c] * mu[c];
      double sigma = std::sqrt(std::max(var, 1e-12));
      for (std::size_t j = 0; j < d_z; ++j) class_proj_[c * d_z + j] /= sigma;
      class_offset_[c] = -mu[c] / sigma;
    }
  }

  // Clip constant for the edge task: 90th percentile (nearest rank) of
  // |edge_proj . z| over a fixed reference sample, giving the target the
  // outlier-then-saturate structure Huber is meant for.
  {
    Rng ref(mix_seed(cfg.seed, "edge-clip"));
    std::vector<double> mags(kRefSamples);
    std::vector<double> x(d_in);
    for (int s = 0; s < kRefSamples; ++s) {
      for (double& v : x) v = ref.uniform(-1.0, 1.0);
      auto z = latent(x);
      mags[s] = std::fabs(dot(edge_proj_, z));
    }
    std::sort(mags.begin(), mags.end());
    edge_clip_ = mags[static_cast<std::size_t>(std::ceil(0.9 * kRefSamples)) - 1];
  }
}

std::vector<double> WorldFn::latent(std::span<const double> x) const {
  const std::size_t d_in = static_cast<std::size_t>(cfg_.d_in);
  const std::size_t d_z = static_cast<std::size_t>(cfg_.d_z);
  auto h = matvec(w1_, x, d_z, d_in);
  for (std::size_t i = 0; i < d_z; ++i) h[i] = std::tanh(h[i] + b1_[i]);
  auto z = matvec(w2_, h, d_z, d_z);
  for (std::size_t i = 0; i < d_z; ++i) z[i] = std::tanh(z[i] + b2_[i]);
  return z;
}

Batch sample_batch(const WorldFn& world, const std::vector<TaskSpec>& tasks,
                   int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  if (tasks.empty()) throw std::invalid_argument("sample_batch: task set is empty");
  const auto& cfg = world.cfg_;
  const std::size_t B = static_cast<std::size_t>(batch_size);
  const std::size_t d_in = static_cast<std::size_t>(cfg.d_in);
  const std::size_t d_z = static_cast<std::size_t>(cfg.d_z);
  const std::size_t C = static_cast<std::size_t>(cfg.num_classes);

  Rng xs(mix_seed(seed, "x"));
  Rng noise(mix_seed(seed, "noise"));

  std::vector<double> xd(B * d_in);
  for (double& v : xd) v = xs.uniform(-1.0, 1.0);

  std::map<TaskId, std::vector<double>> td;
  for (const TaskSpec& spec : tasks) td[spec.id] = {};
  auto wants = [&](TaskId t) { return td.count(t) != 0; };
  if (wants(TaskId::T1)) td[TaskId::T1].resize(B);
  if (wants(TaskId::T2)) td[TaskId::T2].resize(B);
  if (wants(TaskId::T3)) td[TaskId::T3].resize(B * 3);
  if (wants(TaskId::T4)) td[TaskId::T4].resize(B);

  for (std::size_t r = 0; r < B; ++r) {
    auto z = world.latent(std::span<const double>(&xd[r * d_in], d_in));
    if (wants(TaskId::T1)) {
      auto scores = matvec(world.class_proj_, z, C, d_z);
      std::size_t best = 0;
      for (std::size_t c = 0; c < C; ++c) {
        scores[c] += world.class_offset_[c];
        if (scores[c] > scores[best]) best = c;
      }
      td[TaskId::T1][r] = static_cast<double>(best);
    }
    if (wants(TaskId::T2)) {
      double y = dot(world.depth_proj_, z) + world.depth_bias_;
      if (cfg.noise_std > 0.0) y += cfg.noise_std * noise.gaussian();
      td[TaskId::T2][r] = y;
    }
    if (wants(TaskId::T3)) {
      auto v = matvec(world.normal_proj_, z, 3, d_z);
      if (cfg.noise_std > 0.0) {
        for (double& u : v) u += cfg.noise_std * noise.gaussian();
      }
      double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      for (std::size_t c = 0; c < 3; ++c) td[TaskId::T3][r * 3 + c] = v[c] / norm;
    }
    if (wants(TaskId::T4)) {
      double y = std::min(std::fabs(dot(world.edge_proj_, z)), world.edge_clip_);
      if (cfg.noise_std > 0.0) y += cfg.noise_std * noise.gaussian();
      td[TaskId::T4][r] = y;
    }
  }

  Batch out;
  out.x = Tensor({B, d_in}, std::move(xd));
  for (auto& [t, vals] : td) {
    Shape shape = (t == TaskId::T1)   ? Shape{B}
                  : (t == TaskId::T3) ? Shape{B, 3}
                                      : Shape{B, 1};
    out.targets.emplace(t, Tensor(std::move(shape), std::move(vals)));
  }
  return out;
}

Splits make_splits(const WorldFn& world, const std::vector<TaskSpec>& tasks,
                   int n_train, int n_val, int n_test, std::uint64_t seed) {
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw std::invalid_argument("make_splits: all sizes must be >= 1");
  }
  Batch all = sample_batch(world, tasks, n_train + n_val + n_test,
                           mix_seed(seed, "splits"));
  const auto a = static_cast<std::size_t>(n_train);
  const auto b = a + static_cast<std::size_t>(n_val);
  const auto c = b + static_cast<std::size_t>(n_test);
  return Splits{all.slice_rows(0, a), all.slice_rows(a, b), all.slice_rows(b, c)};
}

void write_batch_columnar(const Batch& batch, std::ostream& os) {
  const std::size_t d = batch.x.shape()[1];
  os << "row";
  for (std::size_t c = 0; c < d; ++c) os << " x" << c;
  for (const auto& [t, tgt] : batch.targets) {
    const std::size_t w = tgt.rank() == 2 ? tgt.shape()[1] : 1;
    std::string base = to_string(t);
    std::transform(base.begin(), base.end(), base.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (w == 1) {
      os << " " << base << (t == TaskId::T1 ? "_label" : "_y");
    } else {
      for (std::size_t c = 0; c < w; ++c) os << " " << base << "_y" << c;
    }
  }
  os << "\n";
  char buf[64];
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    os << r;
    for (std::size_t c = 0; c < d; ++c) {
      std::snprintf(buf, sizeof(buf), " %.17g", batch.x.at(r, c));
      os << buf;
    }
    for (const auto& [t, tgt] : batch.targets) {
      const std::size_t w = tgt.rank() == 2 ? tgt.shape()[1] : 1;
      for (std::size_t c = 0; c < w; ++c) {
        std::snprintf(buf, sizeof(buf), " %.17g", tgt.data()[r * w + c]);
        os << buf;
      }
    }
    os << "\n";
  }
}

namespace {

std::uint64_t fnv1a_doubles(std::uint64_t h, std::span<const double> vals) {
  for (double v : vals) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace

std::uint64_t hash_batch(const Batch& batch) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = fnv1a_doubles(h, batch.x.data());
  for (const auto& [t, tgt] : batch.targets) {
    h ^= static_cast<std::uint64_t>(task_index(t)) + 1;
    h *= 0x100000001b3ull;
    h = fnv1a_doubles(h, tgt.data());
  }
  return h;
}

std::uint64_t hash_splits(const Splits& splits) {
  std::uint64_t h = hash_batch(splits.train);
  h = mix_seed(h, hash_batch(splits.val));
  h = mix_seed(h, hash_batch(splits.test));
  return h;
}

}  // namespace mtml
