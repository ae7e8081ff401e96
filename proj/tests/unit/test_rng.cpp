#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "drcvr/rng.hpp"

using drcvr::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("draws are pure functions of (seed, label path, position)") {
  // Re-creating the stream after drawing from an unrelated one must not
  // change anything; this is what batch-order reproducibility rests on.
  Rng root(7);
  Rng x = root.split("x");
  uint64_t first = x.next_u64();
  Rng noise = root.split("y");
  for (int i = 0; i < 17; ++i) noise.next_u64();
  CHECK(root.split("x").next_u64() == first);
}

TEST_CASE("split by label and by index give distinct streams") {
  Rng root(1);
  std::set<uint64_t> firsts;
  firsts.insert(root.split("alpha").next_u64());
  firsts.insert(root.split("beta").next_u64());
  firsts.insert(root.split(uint64_t(0)).next_u64());
  firsts.insert(root.split(uint64_t(1)).next_u64());
  firsts.insert(root.next_u64());
  CHECK(firsts.size() == 5);
}

TEST_CASE("next_double lies in [0,1) and looks uniform") {
  Rng r(3);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = r.next_double();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
    sum += v;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);  // se ~ 0.002
}

TEST_CASE("next_below stays in range and hits every residue") {
  Rng r(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    uint64_t v = r.next_below(7);
    REQUIRE(v < 7);
    ++counts[size_t(v)];
  }
  for (int c : counts) CHECK(c > 800);  // expectation 1000
}

TEST_CASE("bernoulli frequency matches p") {
  Rng r(11);
  int hits = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) hits += r.next_bernoulli(0.3) ? 1 : 0;
  CHECK(std::abs(double(hits) / n - 0.3) < 0.01);  // se ~ 0.002
}

TEST_CASE("gaussian moments are right") {
  Rng r(13);
  double s1 = 0.0, s2 = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double g = r.next_gaussian();
    s1 += g;
    s2 += g * g;
  }
  CHECK(std::abs(s1 / n) < 0.02);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("shuffle is a permutation and is seed-deterministic") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng(5).split("s").shuffle(v);
  Rng(5).split("s").shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
  CHECK(v != expect);  // astronomically unlikely to be the identity
}

TEST_CASE("frozen stream values guard cross-platform drift") {
  // These constants pin the exact output; any change to the mixing breaks
  // byte-level reproducibility of checkpoints and reports.
  Rng r(0);
  CHECK(r.next_u64() == 12035550249420947055ull);
  CHECK(Rng(123).split("streams").next_u64() == 15676270179483109420ull);
}
