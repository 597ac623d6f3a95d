#include <set>
#include <sstream>

#include "doctest.h"
#include "mtml/episodes.hpp"

using namespace mtml;

namespace {

// Independent combo enumerator: recursive descent, lexicographic by
// construction. Kept apart from the bitmask implementation it checks.
void enumerate_rec(int n, int start, std::vector<int>& cur,
                   std::vector<std::vector<int>>& out) {
  if (cur.size() >= 2) out.push_back(cur);
  for (int i = start; i < n; ++i) {
    cur.push_back(i);
    enumerate_rec(n, i + 1, cur, out);
    cur.pop_back();
  }
}

std::vector<std::vector<int>> combos_oracle(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  enumerate_rec(n, 0, cur, out);
  return out;
}

}  // namespace

TEST_CASE("generate_combos: N=4 yields the paper count of 11") {
  std::vector<TaskId> all(kAllTasks.begin(), kAllTasks.end());
  ComboFamily f = generate_combos(all);
  CHECK(f.combos.size() == 11);  // 2^4 - 4 - 1
  CHECK_FALSE(f.insufficient);
}

TEST_CASE("generate_combos: N=3 enumerates {12,13,23,123}") {
  ComboFamily f = generate_combos({TaskId::T1, TaskId::T2, TaskId::T3});
  REQUIRE(f.combos.size() == 4);
  CHECK(f.combos[0].tasks == std::vector<TaskId>{TaskId::T1, TaskId::T2});
  CHECK(f.combos[1].tasks == std::vector<TaskId>{TaskId::T1, TaskId::T2, TaskId::T3});
  CHECK(f.combos[2].tasks == std::vector<TaskId>{TaskId::T1, TaskId::T3});
  CHECK(f.combos[3].tasks == std::vector<TaskId>{TaskId::T2, TaskId::T3});
}

TEST_CASE("generate_combos: N=2 gives one combo and the insufficiency flag") {
  ComboFamily f = generate_combos({TaskId::T2, TaskId::T4});
  CHECK(f.combos.size() == 1);
  CHECK(f.insufficient);
  CHECK_THROWS_AS(generate_combos({TaskId::T1}), std::invalid_argument);
  CHECK_THROWS_AS(generate_combos({}), std::invalid_argument);
}

TEST_CASE("combo-count law: |combos(N)| == 2^N - N - 1 for N in [2,10]") {
  for (int n = 2; n <= 10; ++n) {
    auto got = subset_indices_min2(n);
    auto expect = combos_oracle(n);
    CHECK(got.size() == (1ull << n) - static_cast<std::size_t>(n) - 1);
    CHECK(got == expect);  // same sets, same lexicographic order
    // no singletons, no duplicates
    std::set<std::vector<int>> uniq(got.begin(), got.end());
    CHECK(uniq.size() == got.size());
    for (const auto& s : got) CHECK(s.size() >= 2);
  }
}

TEST_CASE("sample_episode: disjoint support/query of the stated sizes") {
  WorldFn w = make_world(1, 8, 16);
  Splits s = make_splits(w, all_task_specs(), 512, 128, 256, 1);
  EpisodeCombo combo{{TaskId::T1, TaskId::T3}};
  Episode ep = sample_episode(combo, s.train, 16, 16, 77);
  CHECK(ep.support.rows() == 16);
  CHECK(ep.query.rows() == 16);
  CHECK(ep.support.targets.count(TaskId::T1) == 1);
  CHECK(ep.support.targets.count(TaskId::T2) == 0);  // restricted to the combo

  // row disjointness via raw input bytes
  auto keys = [](const Batch& b) {
    std::set<std::string> out;
    const std::size_t d = b.x.shape()[1];
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const char* p = reinterpret_cast<const char*>(&b.x.data()[r * d]);
      out.emplace(p, d * sizeof(double));
    }
    return out;
  };
  auto sk = keys(ep.support), qk = keys(ep.query);
  CHECK(sk.size() == 16);
  for (const auto& k : qk) CHECK(sk.count(k) == 0);

  Episode ep2 = sample_episode(combo, s.train, 16, 16, 77);
  CHECK(hash_batch(ep.support) == hash_batch(ep2.support));
  CHECK(hash_batch(ep.query) == hash_batch(ep2.query));

  CHECK_THROWS_AS(sample_episode(combo, s.train, 400, 200, 1), std::invalid_argument);
}

TEST_CASE("sample_episode: every train row appears in some episode over 1000 draws") {
  WorldFn w = make_world(2, 8, 16);
  Splits s = make_splits(w, all_task_specs(), 128, 16, 16, 2);
  EpisodeCombo combo{{TaskId::T2, TaskId::T4}};
  std::set<std::string> seen;
  const std::size_t d = s.train.x.shape()[1];
  for (std::uint64_t draw = 0; draw < 1000; ++draw) {
    Episode ep = sample_episode(combo, s.train, 16, 16, draw);
    for (const Batch* b : {&ep.support, &ep.query}) {
      for (std::size_t r = 0; r < b->rows(); ++r) {
        const char* p = reinterpret_cast<const char*>(&b->x.data()[r * d]);
        seen.emplace(p, d * sizeof(double));
      }
    }
  }
  CHECK(seen.size() == 128);  // full coverage
}

TEST_CASE("meta_batch: round-robin counts and reseeding") {
  WorldFn w = make_world(3, 8, 16);
  Splits s = make_splits(w, all_task_specs(), 256, 32, 32, 3);

  ComboFamily f3 = generate_combos({TaskId::T1, TaskId::T2, TaskId::T3});
  auto eps3 = meta_batch(f3, 1, s.train, 16, 16, 5);
  CHECK(eps3.size() == 4);

  std::vector<TaskId> all(kAllTasks.begin(), kAllTasks.end());
  ComboFamily f4 = generate_combos(all);
  auto eps4 = meta_batch(f4, 2, s.train, 16, 16, 5);
  CHECK(eps4.size() == 22);  // 11 combos x 2
  // every combo appears exactly twice
  std::map<std::string, int> counts;
  for (const Episode& ep : eps4) counts[ep.combo.label()]++;
  for (const auto& [_, c] : counts) CHECK(c == 2);

  // different seeds: same combo family, different support rows
  auto epsA = meta_batch(f3, 1, s.train, 16, 16, 100);
  auto epsB = meta_batch(f3, 1, s.train, 16, 16, 101);
  CHECK(epsA[0].combo == epsB[0].combo);
  CHECK(hash_batch(epsA[0].support) != hash_batch(epsB[0].support));

  CHECK_THROWS_AS(meta_batch(f3, 0, s.train, 16, 16, 5), std::invalid_argument);
}

TEST_CASE("combo table prints one line per combo") {
  ComboFamily f = generate_combos({TaskId::T1, TaskId::T2, TaskId::T3});
  std::ostringstream os;
  print_combo_table(f, os);
  CHECK(os.str().find("T1+T2+T3") != std::string::npos);

  std::ostringstream os2;
  print_combo_table(generate_combos({TaskId::T1, TaskId::T2}), os2);
  CHECK(os2.str().find("insufficient") != std::string::npos);
}
