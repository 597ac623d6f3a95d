#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "mtml/tasks.hpp"

namespace mtml {

struct EpisodeCombo {
  std::vector<TaskId> tasks;  // ordered, |tasks| >= 2

  bool operator==(const EpisodeCombo&) const = default;
  std::string label() const;  // e.g. "T1+T3"
};

// All multi-task combinations of the source tasks: the power set minus
// singletons and the empty set, 2^N - N - 1 of them, in lexicographic order.
// With exactly two source tasks there is only one combination, which is too
// few for meta-training; that case is flagged rather than rejected.
struct ComboFamily {
  std::vector<EpisodeCombo> combos;
  bool insufficient = false;  // set when N == 2
};

ComboFamily generate_combos(const std::vector<TaskId>& source_tasks);

// Index-level enumeration used by generate_combos; exposed so the counting
// law can be checked for any N without needing N distinct task ids.
std::vector<std::vector<int>> subset_indices_min2(int n);

struct Episode {
  EpisodeCombo combo;
  Batch support;  // inner-adaptation data
  Batch query;    // outer-evaluation data, disjoint rows from support
};

Episode sample_episode(const EpisodeCombo& combo, const Batch& train_split,
                       int support_size, int query_size, std::uint64_t seed);

// k_per_combo rounds over the family in generation order, so every combo
// appears equally often per meta-epoch.
std::vector<Episode> meta_batch(const ComboFamily& family, int k_per_combo,
                                const Batch& train_split, int support_size,
                                int query_size, std::uint64_t seed);

void print_combo_table(const ComboFamily& family, std::ostream& os);

}  // namespace mtml
