#include "drcvr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "drcvr/fm.hpp"
#include "drcvr/rng.hpp"

namespace drcvr {

std::vector<double> BiasedMf::predict_full() const {
  std::vector<double> out(size_t(num_users) * size_t(num_items));
  for (int u = 0; u < num_users; ++u)
    for (int i = 0; i < num_items; ++i)
      out[size_t(u) * size_t(num_items) + size_t(i)] = predict(u, i);
  return out;
}

namespace {

BiasedMf init_mf(int num_users, int num_items, const MfFitConfig& cfg, double mu) {
  BiasedMf mf;
  mf.num_users = num_users;
  mf.num_items = num_items;
  mf.rank = cfg.rank;
  mf.mu = mu;
  mf.bu.assign(size_t(num_users), 0.0);
  mf.bi.assign(size_t(num_items), 0.0);
  Rng rng = Rng(cfg.seed).split("mf-init");
  mf.p.resize(size_t(num_users) * size_t(cfg.rank));
  mf.q.resize(size_t(num_items) * size_t(cfg.rank));
  for (auto& v : mf.p) v = cfg.init_scale * rng.next_gaussian();
  for (auto& v : mf.q) v = cfg.init_scale * rng.next_gaussian();
  return mf;
}

[[noreturn]] void diverged() {
  throw std::runtime_error("matrix factorization diverged; reduce the learning rate");
}

}  // namespace

BiasedMf fit_rating_mf(const RatingTable& ratings, const MfFitConfig& cfg,
                       std::vector<double>* epoch_rmse) {
  if (ratings.triples.empty()) throw std::invalid_argument("fit_rating_mf: no ratings");
  double mu = 0.0;
  for (const auto& t : ratings.triples) mu += t.rating;
  mu /= double(ratings.triples.size());

  BiasedMf mf = init_mf(ratings.num_users, ratings.num_items, cfg, mu);
  std::vector<uint32_t> order(ratings.triples.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng shuffle_rng = Rng(cfg.seed).split("mf-epochs");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng er = shuffle_rng.split(uint64_t(epoch));
    er.shuffle(order);
    double sq = 0.0;
    for (uint32_t idx : order) {
      const RatingTriple& t = ratings.triples[idx];
      double* pu = &mf.p[size_t(t.user) * size_t(mf.rank)];
      double* qi = &mf.q[size_t(t.item) * size_t(mf.rank)];
      double pred = mf.mu + mf.bu[size_t(t.user)] + mf.bi[size_t(t.item)];
      for (int f = 0; f < mf.rank; ++f) pred += pu[f] * qi[f];
      double err = double(t.rating) - pred;
      if (!std::isfinite(err)) diverged();
      sq += err * err;
      mf.bu[size_t(t.user)] += cfg.lr * (err - cfg.l2 * mf.bu[size_t(t.user)]);
      mf.bi[size_t(t.item)] += cfg.lr * (err - cfg.l2 * mf.bi[size_t(t.item)]);
      for (int f = 0; f < mf.rank; ++f) {
        double pf = pu[f], qf = qi[f];
        pu[f] += cfg.lr * (err * qf - cfg.l2 * pf);
        qi[f] += cfg.lr * (err * pf - cfg.l2 * qf);
      }
    }
    double rmse = std::sqrt(sq / double(ratings.triples.size()));
    if (!std::isfinite(rmse) || rmse > 1e3) diverged();
    if (epoch_rmse) epoch_rmse->push_back(rmse);
  }
  return mf;
}

BiasedMf fit_logistic_mf(const std::vector<uint8_t>& observed, int num_users, int num_items,
                         const MfFitConfig& cfg, std::vector<double>* epoch_loss) {
  if (observed.size() != size_t(num_users) * size_t(num_items))
    throw std::invalid_argument("fit_logistic_mf: indicator size mismatch");
  BiasedMf mf = init_mf(num_users, num_items, cfg, 0.0);
  std::vector<uint32_t> order(observed.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng shuffle_rng = Rng(cfg.seed).split("logmf-epochs");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng er = shuffle_rng.split(uint64_t(epoch));
    er.shuffle(order);
    double nll = 0.0;
    for (uint32_t idx : order) {
      int u = int(idx / uint32_t(num_items));
      int i = int(idx % uint32_t(num_items));
      double* pu = &mf.p[size_t(u) * size_t(mf.rank)];
      double* qi = &mf.q[size_t(i) * size_t(mf.rank)];
      double s = mf.mu + mf.bu[size_t(u)] + mf.bi[size_t(i)];
      for (int f = 0; f < mf.rank; ++f) s += pu[f] * qi[f];
      double prob = sigmoid(s);
      double y = double(observed[idx]);
      nll += y > 0.5 ? -std::log(std::max(prob, 1e-12)) : -std::log(std::max(1.0 - prob, 1e-12));
      double err = y - prob;  // -d nll / d s
      if (!std::isfinite(err)) diverged();
      mf.mu += cfg.lr * err;
      mf.bu[size_t(u)] += cfg.lr * (err - cfg.l2 * mf.bu[size_t(u)]);
      mf.bi[size_t(i)] += cfg.lr * (err - cfg.l2 * mf.bi[size_t(i)]);
      for (int f = 0; f < mf.rank; ++f) {
        double pf = pu[f], qf = qi[f];
        pu[f] += cfg.lr * (err * qf - cfg.l2 * pf);
        qi[f] += cfg.lr * (err * pf - cfg.l2 * qf);
      }
    }
    double mean_nll = nll / double(observed.size());
    if (!std::isfinite(mean_nll)) diverged();
    if (epoch_loss) epoch_loss->push_back(mean_nll);
  }
  return mf;
}

double held_out_rmse(const BiasedMf& mf, const std::vector<RatingTriple>& triples) {
  if (triples.empty()) throw std::invalid_argument("held_out_rmse: no triples");
  double sq = 0.0;
  for (const auto& t : triples) {
    double d = double(t.rating) - mf.predict(t.user, t.item);
    sq += d * d;
  }
  return std::sqrt(sq / double(triples.size()));
}

double GroundTruthWorld::mean_p_ctr() const {
  double s = 0.0;
  for (double v : p_ctr) s += v;
  return s / double(p_ctr.size());
}

GroundTruthWorld make_world(const std::vector<double>& r_hat, const std::vector<double>& o_hat,
                            int num_users, int num_items, double rho, double epsilon) {
  size_t cells = size_t(num_users) * size_t(num_items);
  if (r_hat.size() != cells || o_hat.size() != cells)
    throw std::invalid_argument("make_world: matrix size mismatch");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be > 0");
  GroundTruthWorld w;
  w.num_users = num_users;
  w.num_items = num_items;
  w.p_ctr.resize(cells);
  w.p_cvr.resize(cells);
  for (size_t k = 0; k < cells; ++k) {
    double o = o_hat[k];
    if (!(o >= 0.0) || !(o <= 1.0)) throw std::invalid_argument("make_world: O_hat outside [0,1]");
    w.p_ctr[k] = std::pow(o, rho);
    w.p_cvr[k] = sigmoid(r_hat[k] - epsilon);
  }
  return w;
}

InteractionDataset sample_semisynthetic(const GroundTruthWorld& world, const SynthConfig& cfg) {
  int m = world.num_users, n = world.num_items;
  size_t cells = size_t(m) * size_t(n);
  if (world.p_ctr.size() != cells || world.p_cvr.size() != cells)
    throw std::invalid_argument("sample_semisynthetic: bad world");
  if (cfg.test_items_per_user <= 0)
    throw std::invalid_argument("test_items_per_user must be > 0");

  Rng root(cfg.seed);
  Rng click_rng = root.split("clicks");
  Rng conv_rng = root.split("conversions");
  Rng split_rng = root.split("train-val-split");
  Rng test_rng = root.split("test-items");

  std::vector<uint8_t> clicked(cells), converted(cells);
  for (size_t k = 0; k < cells; ++k) clicked[k] = click_rng.next_bernoulli(world.p_ctr[k]);
  for (size_t k = 0; k < cells; ++k) converted[k] = conv_rng.next_bernoulli(world.p_cvr[k]);

  InteractionDataset ds;
  ds.num_users = m;
  ds.num_items = n;
  ds.seed = cfg.seed;
  ds.extra = {{"rho", cfg.rho}, {"epsilon", cfg.epsilon},
              {"test_items_per_user", cfg.test_items_per_user}};

  std::vector<Interaction> clicks;
  for (int u = 0; u < m; ++u)
    for (int i = 0; i < n; ++i) {
      size_t k = size_t(u) * size_t(n) + size_t(i);
      if (clicked[k]) clicks.push_back({u, i, int(converted[k])});
    }
  split_rng.shuffle(clicks);
  size_t n_val = size_t(cfg.val_fraction * double(clicks.size()));
  ds.validation.assign(clicks.end() - long(n_val), clicks.end());
  ds.train.assign(clicks.begin(), clicks.end() - long(n_val));

  std::vector<int> pool;
  pool.reserve(size_t(n));
  for (int u = 0; u < m; ++u) {
    pool.clear();
    for (int i = 0; i < n; ++i)
      if (!clicked[size_t(u) * size_t(n) + size_t(i)]) pool.push_back(i);
    size_t take = std::min(size_t(cfg.test_items_per_user), pool.size());
    // Partial Fisher-Yates: the first `take` entries are a uniform sample
    // without replacement.
    for (size_t j = 0; j < take; ++j) {
      size_t swap_with = j + size_t(test_rng.next_below(uint64_t(pool.size() - j)));
      std::swap(pool[j], pool[swap_with]);
      int item = pool[j];
      size_t k = size_t(u) * size_t(n) + size_t(item);
      ds.test.push_back({u, item, int(converted[k])});
    }
  }
  return ds;
}

}  // namespace drcvr
