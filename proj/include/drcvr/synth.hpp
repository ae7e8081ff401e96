#pragma once
// Semi-synthetic world construction. A rating matrix completed by biased MF
// gives conversion probabilities p_cvr = sigmoid(R_hat - epsilon); a logistic
// MF fit of the "was rated" indicator gives O_hat, and click probabilities
// are p_ctr = O_hat^rho (larger rho = sparser, more skewed exposure). Clicks
// and conversions are then sampled independently per pair; clicked events
// form the 90/10 train/validation splits and the test split holds
// test_items_per_user unclicked items per user (without replacement) labeled
// by the same sampled conversions.

#include <cstdint>
#include <vector>

#include "drcvr/data.hpp"

namespace drcvr {

struct BiasedMf {
  int num_users = 0, num_items = 0, rank = 0;
  double mu = 0.0;
  std::vector<double> bu, bi;  // user/item biases
  std::vector<double> p, q;    // num_users*rank, num_items*rank

  double predict(int u, int i) const {
    double s = mu + bu[size_t(u)] + bi[size_t(i)];
    const double* pu = &p[size_t(u) * size_t(rank)];
    const double* qi = &q[size_t(i) * size_t(rank)];
    for (int f = 0; f < rank; ++f) s += pu[f] * qi[f];
    return s;
  }
  std::vector<double> predict_full() const;  // num_users x num_items, row-major
};

struct MfFitConfig {
  int rank = 8;
  int epochs = 20;
  double lr = 5e-3;
  double l2 = 1e-5;
  double init_scale = 0.01;
  uint64_t seed = 0;
};

// Squared-loss SGD on observed triples; errors if the fit diverges and
// reports per-epoch training RMSE (monotone decrease is a tested property).
BiasedMf fit_rating_mf(const RatingTable& ratings, const MfFitConfig& cfg,
                       std::vector<double>* epoch_rmse = nullptr);

// Logistic-loss SGD over all cells of a dense 0/1 interaction indicator.
BiasedMf fit_logistic_mf(const std::vector<uint8_t>& observed, int num_users, int num_items,
                         const MfFitConfig& cfg, std::vector<double>* epoch_loss = nullptr);

double held_out_rmse(const BiasedMf& mf, const std::vector<RatingTriple>& triples);

struct GroundTruthWorld {
  int num_users = 0, num_items = 0;
  std::vector<double> p_ctr, p_cvr;  // row-major num_users x num_items
  double mean_p_ctr() const;
};

struct SynthConfig {
  double rho = 1.0;
  double epsilon = 5.0;
  int test_items_per_user = 50;
  double val_fraction = 0.1;
  uint64_t seed = 0;
};

GroundTruthWorld make_world(const std::vector<double>& r_hat, const std::vector<double>& o_hat,
                            int num_users, int num_items, double rho, double epsilon);

// Samples one dataset realization from the world. The world is fixed by the
// MF fits; only the Bernoulli draws and splits depend on cfg.seed.
InteractionDataset sample_semisynthetic(const GroundTruthWorld& world, const SynthConfig& cfg);

}  // namespace drcvr
