#include "drcvr/theory.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "drcvr/rng.hpp"

namespace drcvr {

void TheoryInstance::validate() const {
  if (pairs.empty()) throw std::invalid_argument("theory instance has no pairs");
  for (size_t i = 0; i < pairs.size(); ++i) {
    const TheoryPair& t = pairs[i];
    auto fail = [&](const std::string& what) {
      throw std::invalid_argument("pair " + std::to_string(i) + ": " + what);
    };
    if (!(t.p >= 0.0) || !(t.p <= 1.0)) fail("p must lie in [0,1]");
    if (!(t.p_hat > 0.0) || !(t.p_hat <= 1.0)) fail("p_hat must lie in (0,1]");
    if (!std::isfinite(t.e) || t.e < 0.0) fail("e must be finite and >= 0");
    if (!std::isfinite(t.e_hat) || t.e_hat < 0.0) fail("e_hat must be finite and >= 0");
  }
  for (size_t h = 0; h < hypotheses.size(); ++h) {
    if (hypotheses[h].size() != pairs.size())
      throw std::invalid_argument("hypothesis " + std::to_string(h) + " has wrong length");
    for (double v : hypotheses[h])
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("hypothesis " + std::to_string(h) +
                                    " has a non-finite or negative error");
  }
}

double dr_value(const TheoryInstance& inst, const std::vector<int>& clicks) {
  if (clicks.size() != inst.pairs.size())
    throw std::invalid_argument("clicks length must match pair count");
  double sum = 0.0;
  for (size_t i = 0; i < inst.pairs.size(); ++i) {
    const TheoryPair& t = inst.pairs[i];
    sum += t.e_hat;
    if (clicks[i]) sum += (t.e - t.e_hat) / t.p_hat;
  }
  return sum / double(inst.pairs.size());
}

double ideal_value(const TheoryInstance& inst) {
  double sum = 0.0;
  for (const auto& t : inst.pairs) sum += t.e;
  return sum / double(inst.pairs.size());
}

double bias_closed_form(const TheoryInstance& inst) {
  inst.validate();
  double sum = 0.0;
  for (const auto& t : inst.pairs) sum += (t.p - t.p_hat) * (t.e - t.e_hat) / t.p_hat;
  return std::fabs(sum) / double(inst.pairs.size());
}

double variance_closed_form(const TheoryInstance& inst) {
  inst.validate();
  double sum = 0.0;
  for (const auto& t : inst.pairs) {
    double d = (t.e - t.e_hat) / t.p_hat;
    sum += t.p * (1.0 - t.p) * d * d;
  }
  double n = double(inst.pairs.size());
  return sum / (n * n);
}

DrMoments enumerate_dr_distribution(const TheoryInstance& inst) {
  inst.validate();
  size_t n = inst.pairs.size();
  if (n > kEnumerationLimit)
    throw std::invalid_argument("enumeration supports at most " +
                                std::to_string(kEnumerationLimit) +
                                " pairs; use monte_carlo_dr for larger instances");
  uint64_t total = uint64_t(1) << n;

  // Per-outcome value and probability; the value of outcome mask is
  // base + sum over set bits of per-pair increments.
  std::vector<double> incr(n), prob1(n);
  double base = 0.0;
  for (size_t i = 0; i < n; ++i) {
    base += inst.pairs[i].e_hat;
    incr[i] = (inst.pairs[i].e - inst.pairs[i].e_hat) / inst.pairs[i].p_hat;
    prob1[i] = inst.pairs[i].p;
  }

  auto outcome = [&](uint64_t mask, double* value, double* prob) {
    double v = base, pr = 1.0;
    for (size_t i = 0; i < n; ++i) {
      if ((mask >> i) & 1) {
        v += incr[i];
        pr *= prob1[i];
      } else {
        pr *= 1.0 - prob1[i];
      }
    }
    *value = v / double(n);
    *prob = pr;
  };

  // Two passes: exact mean first, then central second moment, to keep the
  // variance accurate near zero.
  double mean = 0.0;
  for (uint64_t mask = 0; mask < total; ++mask) {
    double v, pr;
    outcome(mask, &v, &pr);
    mean += pr * v;
  }
  double var = 0.0;
  for (uint64_t mask = 0; mask < total; ++mask) {
    double v, pr;
    outcome(mask, &v, &pr);
    var += pr * (v - mean) * (v - mean);
  }
  return DrMoments{mean, var};
}

McMoments monte_carlo_dr(const TheoryInstance& inst, uint64_t trials, uint64_t seed) {
  inst.validate();
  if (trials < 2) throw std::invalid_argument("monte_carlo_dr needs at least 2 trials");
  constexpr uint64_t kChunk = 65536;
  Rng root = Rng(seed).split("mc-dr");
  size_t n = inst.pairs.size();

  std::vector<double> values;
  values.reserve(size_t(trials));
  std::vector<int> clicks(n);
  uint64_t chunk_index = 0;
  while (values.size() < trials) {
    Rng rng = root.split(chunk_index++);
    uint64_t in_chunk = std::min<uint64_t>(kChunk, trials - values.size());
    for (uint64_t t = 0; t < in_chunk; ++t) {
      for (size_t i = 0; i < n; ++i) clicks[i] = rng.next_bernoulli(inst.pairs[i].p) ? 1 : 0;
      values.push_back(dr_value(inst, clicks));
    }
  }

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= double(trials);
  double m2 = 0.0, m4 = 0.0;
  for (double v : values) {
    double d = v - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  double tn = double(trials);
  double var = m2 / (tn - 1.0);  // sample variance
  m2 /= tn;
  m4 /= tn;
  McMoments out;
  out.mean = mean;
  out.variance = var;
  out.se_mean = std::sqrt(var / tn);
  // Standard error of the sample variance from the fourth central moment.
  double se2 = (m4 - (tn - 3.0) / (tn - 1.0) * m2 * m2) / tn;
  out.se_variance = se2 > 0.0 ? std::sqrt(se2) : 0.0;
  out.trials = trials;
  return out;
}

double hoeffding_tail(const std::vector<double>& widths, double eps) {
  if (eps < 0.0) throw std::invalid_argument("eps must be >= 0");
  double ssq = 0.0;
  for (double w : widths) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("range widths must be finite and >= 0");
    ssq += w * w;
  }
  if (eps == 0.0) return 2.0;
  if (ssq == 0.0) return 0.0;  // degenerate variables never deviate
  return 2.0 * std::exp(-2.0 * eps * eps / ssq);
}

GeneralizationBound generalization_bound(const TheoryInstance& inst, size_t chosen,
                                         double dr_value_chosen, double eta) {
  inst.validate();
  if (inst.hypotheses.empty())
    throw std::invalid_argument("generalization_bound requires a hypothesis list");
  if (chosen >= inst.hypotheses.size()) throw std::invalid_argument("chosen index out of range");
  if (!(eta > 0.0) || !(eta < 1.0)) throw std::invalid_argument("eta must lie in (0,1)");

  size_t n = inst.pairs.size();
  double bias = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const TheoryPair& t = inst.pairs[i];
    bias += std::fabs(t.p - t.p_hat) / t.p_hat * std::fabs(t.e - inst.hypotheses[chosen][i]);
  }
  bias /= double(n);

  size_t dagger = 0;
  double best = -1.0;
  for (size_t h = 0; h < inst.hypotheses.size(); ++h) {
    double ssq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d = (inst.pairs[i].e - inst.hypotheses[h][i]) / inst.pairs[i].p_hat;
      ssq += d * d;
    }
    if (ssq > best) {
      best = ssq;
      dagger = h;
    }
  }
  double dev = std::sqrt(std::log(2.0 * double(inst.hypotheses.size()) / eta) /
                         (2.0 * double(n) * double(n)) * best);

  GeneralizationBound out;
  out.bias_term = bias;
  out.deviation_term = dev;
  out.dagger_index = dagger;
  out.bound = dr_value_chosen + bias + dev;
  return out;
}

double simulate_bound_coverage(const TheoryInstance& inst, uint64_t trials, double eta,
                               uint64_t seed) {
  inst.validate();
  if (inst.hypotheses.empty())
    throw std::invalid_argument("coverage simulation requires a hypothesis list");
  if (trials == 0) throw std::invalid_argument("trials must be > 0");

  size_t n = inst.pairs.size();
  double ideal = ideal_value(inst);
  Rng root = Rng(seed).split("bound-coverage");
  std::vector<int> clicks(n);
  uint64_t held = 0;
  for (uint64_t t = 0; t < trials; ++t) {
    Rng rng = root.split(t);
    for (size_t i = 0; i < n; ++i) clicks[i] = rng.next_bernoulli(inst.pairs[i].p) ? 1 : 0;

    size_t best_h = 0;
    double best_dr = 0.0;
    for (size_t h = 0; h < inst.hypotheses.size(); ++h) {
      double sum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double eh = inst.hypotheses[h][i];
        sum += eh;
        if (clicks[i]) sum += (inst.pairs[i].e - eh) / inst.pairs[i].p_hat;
      }
      double dr = sum / double(n);
      if (h == 0 || dr < best_dr) {
        best_dr = dr;
        best_h = h;
      }
    }
    GeneralizationBound gb = generalization_bound(inst, best_h, best_dr, eta);
    if (ideal <= gb.bound) ++held;
  }
  return double(held) / double(trials);
}

}  // namespace drcvr
