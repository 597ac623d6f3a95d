#include "mtml/episodes.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <stdexcept>

#include "mtml/rng.hpp"

namespace mtml {

std::string EpisodeCombo::label() const {
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i) out += "+";
    out += to_string(tasks[i]);
  }
  return out;
}

std::vector<std::vector<int>> subset_indices_min2(int n) {
  if (n < 2) {
    throw std::invalid_argument("subset_indices_min2: need at least 2 items, got " +
                                std::to_string(n));
  }
  std::vector<std::vector<int>> subsets;
  for (std::uint64_t bits = 0; bits < (1ull << n); ++bits) {
    if (std::popcount(bits) < 2) continue;
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      if (bits & (1ull << i)) idx.push_back(i);
    }
    subsets.push_back(std::move(idx));
  }
  std::sort(subsets.begin(), subsets.end());  // lexicographic over index sequences
  return subsets;
}

ComboFamily generate_combos(const std::vector<TaskId>& source_tasks) {
  ComboFamily family;
  auto subsets = subset_indices_min2(static_cast<int>(source_tasks.size()));
  for (const auto& idx : subsets) {
    EpisodeCombo combo;
    for (int i : idx) combo.tasks.push_back(source_tasks[static_cast<std::size_t>(i)]);
    family.combos.push_back(std::move(combo));
  }
  family.insufficient = source_tasks.size() == 2;
  return family;
}

Episode sample_episode(const EpisodeCombo& combo, const Batch& train_split,
                       int support_size, int query_size, std::uint64_t seed) {
  const std::size_t need = static_cast<std::size_t>(support_size) +
                           static_cast<std::size_t>(query_size);
  if (support_size < 1 || query_size < 1 || need > train_split.rows()) {
    throw std::invalid_argument(
        "sample_episode: support " + std::to_string(support_size) + " + query " +
        std::to_string(query_size) + " exceeds available rows " +
        std::to_string(train_split.rows()));
  }
  std::vector<std::size_t> order(train_split.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, "episode-rows"));
  rng.shuffle(order);

  std::vector<std::size_t> sup(order.begin(), order.begin() + support_size);
  std::vector<std::size_t> qry(order.begin() + support_size,
                               order.begin() + static_cast<long>(need));
  Episode ep;
  ep.combo = combo;
  ep.support = train_split.gather_rows(sup, combo.tasks);
  ep.query = train_split.gather_rows(qry, combo.tasks);
  return ep;
}

std::vector<Episode> meta_batch(const ComboFamily& family, int k_per_combo,
                                const Batch& train_split, int support_size,
                                int query_size, std::uint64_t seed) {
  if (k_per_combo < 1) {
    throw std::invalid_argument("meta_batch: k_per_combo must be >= 1");
  }
  std::vector<Episode> eps;
  eps.reserve(family.combos.size() * static_cast<std::size_t>(k_per_combo));
  for (int round = 0; round < k_per_combo; ++round) {
    for (std::size_t c = 0; c < family.combos.size(); ++c) {
      std::uint64_t ep_seed =
          mix_seed(seed, static_cast<std::uint64_t>(round) * 7919u + c);
      eps.push_back(sample_episode(family.combos[c], train_split, support_size,
                                   query_size, ep_seed));
    }
  }
  return eps;
}

void print_combo_table(const ComboFamily& family, std::ostream& os) {
  os << "combo  tasks\n";
  for (std::size_t i = 0; i < family.combos.size(); ++i) {
    os << i << "      " << family.combos[i].label() << "\n";
  }
  if (family.insufficient) {
    os << "warning: only one combination; insufficient for meta-training\n";
  }
}

}  // namespace mtml
