#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <vector>

#include "drcvr/estimators.hpp"
#include "drcvr/rng.hpp"

using namespace drcvr;

namespace {

SampleBundle random_bundle(uint64_t seed, int n, double click_rate = 0.5) {
  Rng r = Rng(seed).split("bundle");
  SampleBundle b;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.user = i;
    s.item = i;
    s.o = r.next_bernoulli(click_rate) ? 1 : 0;
    s.r = r.next_bernoulli(0.4) ? 1 : 0;
    s.r_hat = 0.05 + 0.9 * r.next_double();
    s.e_hat = 2.0 * r.next_double();
    s.p_hat = 0.05 + 0.95 * r.next_double();
    b.samples.push_back(s);
  }
  if (b.clicked_count() == 0) b.samples[0].o = 1;
  return b;
}

}  // namespace

TEST_CASE("cross entropy at exact labels and at the clip boundary") {
  CHECK(cross_entropy_error(1, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy_error(0, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // Perfectly wrong prediction is clipped at 1e-7: -log(1e-7).
  CHECK(cross_entropy_error(1, 0.0) == doctest::Approx(16.11809565095832).epsilon(1e-14));
  // The mirrored direction goes through 1 - (1 - 1e-7), which is not the
  // double 1e-7, so it is pinned to its own value (differs in digit 10).
  CHECK(cross_entropy_error(0, 1.0) == doctest::Approx(16.118095651484676).epsilon(1e-14));
  // Perfectly right prediction: -log(1 - 1e-7).
  CHECK(cross_entropy_error(1, 1.0) == doctest::Approx(1.00000005e-07).epsilon(1e-6));
  CHECK(cross_entropy_error(1, 0.75) ==
        doctest::Approx(0.2876820724517809).epsilon(1e-15));
}

TEST_CASE("propensity clipping floors small values and validates input") {
  CHECK(clip_propensity(0.5) == 0.5);
  CHECK(clip_propensity(0.01) == 0.03);
  CHECK(clip_propensity(0.03) == 0.03);
  CHECK(clip_propensity(1.0) == 1.0);
  CHECK(clip_propensity(0.2, 0.25) == 0.25);
  CHECK_THROWS_AS(clip_propensity(0.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_propensity(1.5), std::invalid_argument);
  CHECK_THROWS_AS(clip_propensity(0.5, 0.0), std::invalid_argument);
}

TEST_CASE("worked three-sample example for every full-bundle loss") {
  // Three impressions: clicked converting, clicked non-converting, unclicked.
  SampleBundle b;
  b.samples = {
      {0, 0, 1, 1, 0.8, 0.10, 0.5},
      {0, 1, 1, 0, 0.2, 0.30, 0.4},
      {0, 2, 0, 0, 0.6, 0.25, 0.9},
  };
  double e0 = -std::log(0.8);
  double e1 = -std::log(0.8);  // r=0, r_hat=0.2 -> -log(1-0.2)
  CHECK(loss_naive(b) == doctest::Approx((e0 + e1) / 2.0).epsilon(1e-14));
  CHECK(loss_ips(b) == doctest::Approx((e0 / 0.5 + e1 / 0.4) / 3.0).epsilon(1e-14));
  CHECK(loss_eib(b) == doctest::Approx((e0 + e1 + 0.25) / 3.0).epsilon(1e-14));
  double dr = (0.10 + (e0 - 0.10) / 0.5) + (0.30 + (e1 - 0.30) / 0.4) + 0.25;
  CHECK(loss_dr(b) == doctest::Approx(dr / 3.0).epsilon(1e-14));

  double ctr = -(std::log(0.5) + std::log(0.4) + std::log(1.0 - 0.9));
  CHECK(loss_ctr(b) == doctest::Approx(ctr).epsilon(1e-14));
  CHECK(loss_ctcvr(b) == doctest::Approx(dr + ctr).epsilon(1e-14));
}

TEST_CASE("naive loss requires a clicked sample") {
  SampleBundle b;
  b.samples = {{0, 0, 0, 0, 0.5, 0.1, 0.5}};
  CHECK_THROWS_AS(loss_naive(b), std::runtime_error);
}

TEST_CASE("denominator override stands in for the full-population size") {
  SampleBundle b = random_bundle(1, 10);
  double by_size = loss_dr(b);
  b.denom_override = 40.0;
  CHECK(loss_dr(b) == doctest::Approx(by_size * 10.0 / 40.0).epsilon(1e-12));
}

TEST_CASE("estimators are permutation invariant") {
  SampleBundle b = random_bundle(2, 40);
  double n0 = loss_naive(b), e0 = loss_eib(b), i0 = loss_ips(b), d0 = loss_dr(b);
  double m0 = imp_loss_mrdr(b);
  Rng(77).split("perm").shuffle(b.samples);
  CHECK(loss_naive(b) == doctest::Approx(n0).epsilon(1e-13));
  CHECK(loss_eib(b) == doctest::Approx(e0).epsilon(1e-13));
  CHECK(loss_ips(b) == doctest::Approx(i0).epsilon(1e-13));
  CHECK(loss_dr(b) == doctest::Approx(d0).epsilon(1e-13));
  CHECK(imp_loss_mrdr(b) == doctest::Approx(m0).epsilon(1e-13));
}

TEST_CASE("dr with perfect imputation reduces to eib exactly") {
  SampleBundle b = random_bundle(3, 25);
  for (auto& s : b.samples) s.e_hat = cross_entropy_error(s.r, s.r_hat);
  CHECK(loss_dr(b) == doctest::Approx(loss_eib(b)).epsilon(1e-13));
}

TEST_CASE("dr with trivial propensity one reduces to eib") {
  SampleBundle b = random_bundle(4, 25);
  for (auto& s : b.samples) s.p_hat = 1.0;
  CHECK(loss_dr(b) == doctest::Approx(loss_eib(b)).epsilon(1e-13));
}

TEST_CASE("imputation weights at p_hat = 0.25") {
  CHECK(imp_weight_drjl(0.25) == 1.0);
  CHECK(imp_weight_mrdr(0.25) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(imp_weight_drbias(0.25) == doctest::Approx(9.0).epsilon(1e-15));
  CHECK(imp_weight_drmse(0.25, 0.5) == doctest::Approx(6.0).epsilon(1e-15));
  // Convexity endpoints are bitwise exact.
  CHECK(imp_weight_drmse(0.25, 0.0) == imp_weight_mrdr(0.25));
  CHECK(imp_weight_drmse(0.25, 1.0) == imp_weight_drbias(0.25));
  // At p_hat = 1/2 both branch weights are 1, so lambda has no effect.
  CHECK(imp_weight_drmse(0.5, 0.3) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("imputation losses agree with the per-sample weights") {
  SampleBundle b = random_bundle(5, 30);
  double jl = 0.0, mr = 0.0, bi = 0.0, ms = 0.0;
  const double lambda = 0.37;
  for (const auto& s : b.samples) {
    if (!s.o) continue;
    double e = cross_entropy_error(s.r, s.r_hat);
    double sq = (s.e_hat - e) * (s.e_hat - e) / s.p_hat;
    jl += sq;
    mr += imp_weight_mrdr(s.p_hat) * sq;
    bi += imp_weight_drbias(s.p_hat) * sq;
    ms += imp_weight_drmse(s.p_hat, lambda) * sq;
  }
  CHECK(imp_loss_drjl(b) == doctest::Approx(jl).epsilon(1e-13));
  CHECK(imp_loss_mrdr(b) == doctest::Approx(mr).epsilon(1e-13));
  CHECK(imp_loss_drbias(b) == doctest::Approx(bi).epsilon(1e-13));
  CHECK(imp_loss_drmse(b, lambda) == doctest::Approx(ms).epsilon(1e-13));
  double n = double(b.clicked_count());
  CHECK(imp_loss_mrdr(b, true) == doctest::Approx(mr / n).epsilon(1e-13));
}

TEST_CASE("drmse endpoints are bitwise equal to the branch losses") {
  SampleBundle b = random_bundle(6, 30);
  CHECK(imp_loss_drmse(b, 0.0) == imp_loss_mrdr(b));
  CHECK(imp_loss_drmse(b, 1.0) == imp_loss_drbias(b));
}

TEST_CASE("drmse loss is linear in lambda") {
  SampleBundle b = random_bundle(7, 30);
  double l0 = imp_loss_drmse(b, 0.0);
  double l1 = imp_loss_drmse(b, 1.0);
  for (double lam : {0.2, 0.5, 0.9})
    CHECK(imp_loss_drmse(b, lam) ==
          doctest::Approx(lam * l1 + (1 - lam) * l0).epsilon(1e-12));
}

TEST_CASE("per-sample lambda vector matches scalar when constant") {
  SampleBundle b = random_bundle(8, 20);
  std::vector<double> lam(b.samples.size(), 0.42);
  CHECK(imp_loss_drmse(b, lam) == doctest::Approx(imp_loss_drmse(b, 0.42)).epsilon(1e-14));
  lam.pop_back();
  CHECK_THROWS_AS(imp_loss_drmse(b, lam), std::invalid_argument);
}

TEST_CASE("ctcvr decomposes into the unnormalized dr and ctr parts") {
  SampleBundle b = random_bundle(9, 15);
  CHECK(loss_ctcvr(b) ==
        doctest::Approx(loss_dr(b) * b.denom() + loss_ctr(b)).epsilon(1e-12));
}
