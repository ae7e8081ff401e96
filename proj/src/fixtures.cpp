#include "drcvr/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "drcvr/rng.hpp"

namespace drcvr {

namespace {

struct LatentWorld {
  int num_users = 0, num_items = 0, rank = 0;
  std::vector<double> bu, bi, p, q, pop;  // pop: standardized item popularity

  double affinity(int u, int i) const {
    double s = bu[size_t(u)] + bi[size_t(i)];
    const double* pu = &p[size_t(u) * size_t(rank)];
    const double* qi = &q[size_t(i) * size_t(rank)];
    for (int f = 0; f < rank; ++f) s += pu[f] * qi[f];
    return s;
  }
};

// Item popularity couples into the item bias, so "popular" and "good" are
// correlated the way they are in organic rating logs.
LatentWorld make_world(int num_users, int num_items, int rank, double user_sd, double item_sd,
                       double factor_var, double pop_in_bias, Rng rng) {
  LatentWorld w;
  w.num_users = num_users;
  w.num_items = num_items;
  w.rank = rank;
  w.bu.resize(size_t(num_users));
  w.bi.resize(size_t(num_items));
  w.pop.resize(size_t(num_items));
  w.p.resize(size_t(num_users) * size_t(rank));
  w.q.resize(size_t(num_items) * size_t(rank));
  Rng r_bu = rng.split("bu"), r_bi = rng.split("bi"), r_pop = rng.split("pop");
  Rng r_p = rng.split("p"), r_q = rng.split("q");
  for (auto& v : w.pop) v = r_pop.next_gaussian();
  for (auto& v : w.bu) v = user_sd * r_bu.next_gaussian();
  for (size_t i = 0; i < w.bi.size(); ++i)
    w.bi[i] = pop_in_bias * w.pop[i] + item_sd * r_bi.next_gaussian();
  double fsd = std::sqrt(factor_var / double(rank));
  for (auto& v : w.p) v = fsd * r_p.next_gaussian();
  for (auto& v : w.q) v = fsd * r_q.next_gaussian();
  return w;
}

int to_rating(double raw) {
  int r = int(std::lround(raw));
  return std::min(5, std::max(1, r));
}

// Weighted sample of `count` distinct items: smallest Exp(1)/w keys win.
std::vector<int> weighted_sample(const std::vector<double>& weights, int count, Rng rng) {
  size_t n = weights.size();
  std::vector<std::pair<double, int>> keys(n);
  for (size_t i = 0; i < n; ++i) {
    double e = -std::log(1.0 - rng.next_double());
    keys[i] = {e / weights[i], int(i)};
  }
  size_t k = std::min(size_t(count), n);
  std::partial_sort(keys.begin(), keys.begin() + std::ptrdiff_t(k), keys.end());
  std::vector<int> out(k);
  for (size_t i = 0; i < k; ++i) out[i] = keys[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

void write_dense(const std::string& path, int num_users, int num_items,
                 const std::vector<int>& ratings) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  std::string line;
  for (int u = 0; u < num_users; ++u) {
    line.clear();
    for (int i = 0; i < num_items; ++i) {
      if (i) line += ' ';
      line += char('0' + ratings[size_t(u) * size_t(num_items) + size_t(i)]);
    }
    line += '\n';
    f << line;
  }
  if (!f) throw std::runtime_error("write failed for " + path);
}

}  // namespace

void write_coat_like(const std::string& dir, uint64_t seed) {
  const int num_users = 290, num_items = 300, per_user_mnar = 24, per_user_mar = 16;
  Rng root = Rng(seed).split("coat-like");
  LatentWorld w = make_world(num_users, num_items, 6, 0.30, 0.35, 0.35, 0.45,
                             root.split("world"));

  std::vector<int> mnar(size_t(num_users) * size_t(num_items), 0);
  std::vector<int> mar(mnar.size(), 0);
  Rng r_noise = root.split("rating-noise");
  std::vector<double> weights(size_t(num_items), 0.0);
  for (int u = 0; u < num_users; ++u) {
    std::vector<double> z(size_t(num_items), 0.0);
    std::vector<int> rating(size_t(num_items), 0);
    for (int i = 0; i < num_items; ++i) {
      z[size_t(i)] = w.affinity(u, i);
      double raw = 2.8 + 1.05 * z[size_t(i)] + 1.00 * r_noise.next_gaussian();
      rating[size_t(i)] = to_rating(raw);
    }
    // Self-selection: popular items and items the user likes get rated.
    for (int i = 0; i < num_items; ++i)
      weights[size_t(i)] = std::exp(0.9 * w.pop[size_t(i)] + 0.9 * z[size_t(i)]);
    std::vector<int> chosen =
        weighted_sample(weights, per_user_mnar, root.split("mnar").split(uint64_t(u)));
    std::vector<uint8_t> taken(size_t(num_items), 0);
    for (int i : chosen) {
      mnar[size_t(u) * size_t(num_items) + size_t(i)] = rating[size_t(i)];
      taken[size_t(i)] = 1;
    }
    // MAR probe: uniform over the items this user did not self-select.
    std::vector<int> pool;
    pool.reserve(size_t(num_items));
    for (int i = 0; i < num_items; ++i)
      if (!taken[size_t(i)]) pool.push_back(i);
    Rng r_mar = root.split("mar").split(uint64_t(u));
    for (int k = 0; k < per_user_mar; ++k) {
      size_t pick = size_t(r_mar.next_below(pool.size()));
      int i = pool[pick];
      pool[pick] = pool.back();
      pool.pop_back();
      mar[size_t(u) * size_t(num_items) + size_t(i)] = rating[size_t(i)];
    }
  }
  write_dense(dir + "/train.ascii", num_users, num_items, mnar);
  write_dense(dir + "/test.ascii", num_users, num_items, mar);
}

void write_ml100k_like(const std::string& path, uint64_t seed) {
  const int num_users = 943, num_items = 1682;
  const long long total = 100000;
  Rng root = Rng(seed).split("ml100k-like");
  LatentWorld w = make_world(num_users, num_items, 8, 0.30, 0.40, 0.40, 0.35,
                             root.split("world"));

  // Zipf-ish popularity over a random item order, standardized into w.pop so
  // the same popularity drives both exposure and the bias coupling above.
  {
    std::vector<uint32_t> order(size_t(num_items), 0);
    std::iota(order.begin(), order.end(), 0u);
    Rng r_ord = root.split("pop-order");
    r_ord.shuffle(order);
    std::vector<double> logw(size_t(num_items), 0.0);
    double mean = 0.0;
    for (int rank_pos = 0; rank_pos < num_items; ++rank_pos) {
      double v = -0.85 * std::log(double(rank_pos) + 3.0);
      logw[size_t(order[size_t(rank_pos)])] = v;
      mean += v;
    }
    mean /= double(num_items);
    double var = 0.0;
    for (double v : logw) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / double(num_items));
    for (int i = 0; i < num_items; ++i) {
      double z = (logw[size_t(i)] - mean) / sd;
      w.bi[size_t(i)] += 0.35 * (z - w.pop[size_t(i)]);  // rebase bias on Zipf pop
      w.pop[size_t(i)] = z;
    }
  }

  // Heavy-tailed per-user activity, floor 20, summing exactly to `total`.
  std::vector<long long> n_u(size_t(num_users), 20);
  {
    Rng r_act = root.split("activity");
    std::vector<double> wu(size_t(num_users), 0.0);
    double sum = 0.0;
    for (auto& v : wu) {
      v = std::exp(1.1 * r_act.next_gaussian());
      sum += v;
    }
    long long spare = total - 20LL * num_users;
    long long assigned = 0;
    for (int u = 0; u < num_users; ++u) {
      long long add = (long long)(double(spare) * wu[size_t(u)] / sum);
      add = std::min(add, (long long)(num_items - 20));
      n_u[size_t(u)] += add;
      assigned += add;
    }
    // Distribute the rounding remainder one rating at a time.
    int u = 0;
    while (assigned < spare) {
      if (n_u[size_t(u)] < num_items) {
        ++n_u[size_t(u)];
        ++assigned;
      }
      u = (u + 1) % num_users;
    }
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  Rng r_noise = root.split("rating-noise");
  std::vector<double> weights(size_t(num_items), 0.0);
  long long ts = 874724710;
  char line[64];
  for (int u = 0; u < num_users; ++u) {
    std::vector<double> z(size_t(num_items), 0.0);
    for (int i = 0; i < num_items; ++i) {
      z[size_t(i)] = w.affinity(u, i);
      weights[size_t(i)] = std::exp(0.55 * w.pop[size_t(i)] + 0.80 * z[size_t(i)]);
    }
    std::vector<int> chosen =
        weighted_sample(weights, int(n_u[size_t(u)]), root.split("mnar").split(uint64_t(u)));
    for (int i : chosen) {
      double raw = 3.1 + 1.25 * z[size_t(i)] + 0.6 * r_noise.next_gaussian();
      int rating = to_rating(raw);
      int n = std::snprintf(line, sizeof line, "%d\t%d\t%d\t%lld\n", u + 1, i + 1, rating, ts++);
      f.write(line, n);
    }
  }
  if (!f) throw std::runtime_error("write failed for " + path);
}

}  // namespace drcvr
