#include "drcvr/estimators.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace drcvr {

namespace {

void validate_sample(const Sample& s, size_t idx) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("sample " + std::to_string(idx) + ": " + what);
  };
  if (s.o != 0 && s.o != 1) fail("click indicator must be 0 or 1");
  if (s.o == 1 && s.r != 0 && s.r != 1) fail("conversion label must be 0 or 1");
  if (!(s.r_hat > 0.0) || !(s.r_hat < 1.0)) fail("r_hat must lie in (0,1)");
  if (!(s.e_hat >= 0.0) || !std::isfinite(s.e_hat)) fail("e_hat must be finite and >= 0");
  if (!(s.p_hat > 0.0) || !(s.p_hat <= 1.0)) fail("p_hat must lie in (0,1]");
}

void validate(const SampleBundle& b) {
  if (b.samples.empty()) throw std::invalid_argument("empty sample bundle");
  for (size_t i = 0; i < b.samples.size(); ++i) validate_sample(b.samples[i], i);
}

double clicked_error(const Sample& s) { return cross_entropy_error(double(s.r), s.r_hat); }

void check_lambda(double lam) {
  if (!(lam >= 0.0) || !(lam <= 1.0))
    throw std::invalid_argument("lambda must lie in [0,1], got " + std::to_string(lam));
}

}  // namespace

double cross_entropy_error(double r, double r_hat) {
  if (!(r == 0.0 || r == 1.0)) throw std::invalid_argument("label must be 0 or 1");
  double p = r_hat;
  if (p < kProbClip) p = kProbClip;
  if (p > 1.0 - kProbClip) p = 1.0 - kProbClip;
  return -r * std::log(p) - (1.0 - r) * std::log(1.0 - p);
}

double clip_propensity(double p, double floor) {
  if (!(floor > 0.0) || !(floor < 1.0))
    throw std::invalid_argument("propensity floor must lie in (0,1)");
  if (!(p > 0.0) || !(p <= 1.0)) throw std::invalid_argument("propensity must lie in (0,1]");
  return p < floor ? floor : p;
}

size_t SampleBundle::clicked_count() const {
  size_t n = 0;
  for (const auto& s : samples) n += size_t(s.o == 1);
  return n;
}

double loss_naive(const SampleBundle& b) {
  validate(b);
  double sum = 0.0;
  size_t n = 0;
  for (const auto& s : b.samples) {
    if (s.o != 1) continue;
    sum += clicked_error(s);
    ++n;
  }
  if (n == 0) throw std::runtime_error("loss_naive: bundle has no clicked samples");
  return sum / double(n);
}

double loss_eib(const SampleBundle& b) {
  validate(b);
  double sum = 0.0;
  for (const auto& s : b.samples)
    sum += (s.o == 1) ? clicked_error(s) : s.e_hat;
  return sum / b.denom();
}

double loss_ips(const SampleBundle& b) {
  validate(b);
  double sum = 0.0;
  for (const auto& s : b.samples)
    if (s.o == 1) sum += clicked_error(s) / s.p_hat;
  return sum / b.denom();
}

double loss_dr(const SampleBundle& b) {
  validate(b);
  double sum = 0.0;
  for (const auto& s : b.samples) {
    sum += s.e_hat;
    if (s.o == 1) sum += (clicked_error(s) - s.e_hat) / s.p_hat;
  }
  return sum / b.denom();
}

double imp_weight_drjl(double) { return 1.0; }

double imp_weight_mrdr(double p_hat) { return (1.0 - p_hat) / p_hat; }

double imp_weight_drbias(double p_hat) {
  double w = (1.0 - p_hat) / p_hat;
  return w * w;
}

double imp_weight_drmse(double p_hat, double lambda) {
  // Linear in lambda; lambda = 0 and 1 recover the endpoint weights bitwise.
  return lambda * imp_weight_drbias(p_hat) + (1.0 - lambda) * imp_weight_mrdr(p_hat);
}

namespace {

template <typename WeightFn>
double imp_loss(const SampleBundle& b, bool mean, WeightFn&& weight) {
  validate(b);
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < b.samples.size(); ++i) {
    const Sample& s = b.samples[i];
    if (s.o != 1) continue;
    double d = s.e_hat - clicked_error(s);
    sum += weight(i, s.p_hat) * d * d / s.p_hat;
    ++n;
  }
  if (mean && n > 0) sum /= double(n);
  return sum;
}

}  // namespace

double imp_loss_drjl(const SampleBundle& b, bool mean) {
  return imp_loss(b, mean, [](size_t, double p) { return imp_weight_drjl(p); });
}

double imp_loss_mrdr(const SampleBundle& b, bool mean) {
  return imp_loss(b, mean, [](size_t, double p) { return imp_weight_mrdr(p); });
}

double imp_loss_drbias(const SampleBundle& b, bool mean) {
  return imp_loss(b, mean, [](size_t, double p) { return imp_weight_drbias(p); });
}

double imp_loss_drmse(const SampleBundle& b, double lambda, bool mean) {
  check_lambda(lambda);
  return imp_loss(b, mean, [&](size_t, double p) { return imp_weight_drmse(p, lambda); });
}

double imp_loss_drmse(const SampleBundle& b, const std::vector<double>& lambda, bool mean) {
  if (lambda.size() != b.samples.size())
    throw std::invalid_argument("imp_loss_drmse: need one lambda per sample");
  for (size_t i = 0; i < b.samples.size(); ++i)
    if (b.samples[i].o == 1) check_lambda(lambda[i]);
  return imp_loss(b, mean, [&](size_t i, double p) { return imp_weight_drmse(p, lambda[i]); });
}

double loss_ctr(const SampleBundle& b) {
  validate(b);
  double sum = 0.0;
  for (const auto& s : b.samples)
    sum += cross_entropy_error(double(s.o), s.p_hat);
  return sum;
}

double loss_ctcvr(const SampleBundle& b) { return loss_dr(b) * b.denom() + loss_ctr(b); }

}  // namespace drcvr
