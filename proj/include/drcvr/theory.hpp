#pragma once
// Finite-population analysis of the doubly robust estimator. An instance is a
// list of (u,i) pairs abstracted to (p, p_hat, e, e_hat): true click
// probability, estimated propensity, true prediction error, imputed error.
// Clicks are independent Bernoulli(p). The DR estimate of a click realization
// o is |D|^-1 sum [e_hat + o*(e - e_hat)/p_hat]; the ideal loss is mean(e).
//
// Closed forms:
//   bias      = |D|^-1 |sum (p - p_hat)(e - e_hat)/p_hat|
//   variance  = |D|^-2 sum p(1-p)(e - e_hat)^2/p_hat^2
// and both are checked against enumerate_dr_distribution, which brute-forces
// all 2^n click vectors and serves as the independent oracle.
//
// The hypotheses field holds candidate imputed-error vectors e_hat^h. The
// generalization bound for a chosen hypothesis is
//   dr_value + |D|^-1 sum (|p - p_hat|/p_hat)|e - e_hat^*|
//            + sqrt( log(2|H|/eta) / (2|D|^2) * sum ((e - e_hat^dagger)/p_hat)^2 )
// with dagger = argmax_h sum ((e - e_hat^h)/p_hat)^2.

#include <cstdint>
#include <vector>

namespace drcvr {

struct TheoryPair {
  double p = 0.5;      // true click probability, in [0,1]
  double p_hat = 0.5;  // estimated propensity, in (0,1]
  double e = 0.0;      // true prediction error, finite and >= 0
  double e_hat = 0.0;  // imputed error, finite and >= 0
};

struct TheoryInstance {
  std::vector<TheoryPair> pairs;
  std::vector<std::vector<double>> hypotheses;  // candidate e_hat vectors, optional

  void validate() const;
};

inline constexpr size_t kEnumerationLimit = 20;

// DR estimate for one click realization (clicks.size() == pairs.size()).
double dr_value(const TheoryInstance& inst, const std::vector<int>& clicks);
double ideal_value(const TheoryInstance& inst);

double bias_closed_form(const TheoryInstance& inst);
double variance_closed_form(const TheoryInstance& inst);

struct DrMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Exact moments over all 2^n click vectors. Errors when n > kEnumerationLimit
// (use monte_carlo_dr instead).
DrMoments enumerate_dr_distribution(const TheoryInstance& inst);

struct McMoments {
  double mean = 0.0;
  double variance = 0.0;
  double se_mean = 0.0;
  double se_variance = 0.0;
  uint64_t trials = 0;
};

// Sample-moment estimates over independent click realizations; deterministic
// in (instance, trials, seed). Draws are organized in fixed-size chunks with
// per-chunk derived seeds so results do not depend on how work is batched.
McMoments monte_carlo_dr(const TheoryInstance& inst, uint64_t trials, uint64_t seed);

// Two-sided Hoeffding tail 2*exp(-2 eps^2 / sum widths^2) for variables with
// per-variable ranges widths[i] = M_i - m_i.
double hoeffding_tail(const std::vector<double>& widths, double eps);

struct GeneralizationBound {
  double bound = 0.0;
  double bias_term = 0.0;
  double deviation_term = 0.0;
  size_t dagger_index = 0;
};

// Bound on the ideal loss for hypothesis `chosen` of inst.hypotheses, valid
// with probability >= 1 - eta simultaneously over the hypothesis list.
// dr_value_chosen is the realized DR estimate of that hypothesis.
GeneralizationBound generalization_bound(const TheoryInstance& inst, size_t chosen,
                                         double dr_value_chosen, double eta);

// Coverage simulation for the bound: per trial, sample clicks, select the
// hypothesis with the smallest DR estimate, and test ideal <= bound(selected).
// Returns the fraction of trials where the bound held.
double simulate_bound_coverage(const TheoryInstance& inst, uint64_t trials, double eta,
                               uint64_t seed);

}  // namespace drcvr
