#pragma once
// Post-click conversion loss estimators over a bundle of impression samples.
// Each sample carries the click indicator o, the conversion label r (only
// meaningful when o = 1), the conversion prediction r_hat in (0,1), the
// imputed error e_hat >= 0 and the propensity p_hat in (0,1]. The prediction
// error of a clicked sample is e = cross_entropy_error(r, r_hat).
//
// Full-bundle losses divide by denom() (bundle size unless overridden, so a
// minibatch stands in for |D|). Imputation losses are plain sums over clicked
// samples; pass mean = true to normalize by the clicked count instead.

#include <cstdint>
#include <vector>

namespace drcvr {

inline constexpr double kProbClip = 1e-7;       // probability clip inside cross entropy
inline constexpr double kPropensityFloor = 0.03;  // default propensity clip threshold

// -r log(r_hat) - (1-r) log(1-r_hat), r_hat clipped into [kProbClip, 1-kProbClip].
double cross_entropy_error(double r, double r_hat);

// max(floor, p). Errors on p <= 0, p > 1 or floor outside (0,1).
double clip_propensity(double p, double floor = kPropensityFloor);

struct Sample {
  int user = 0;
  int item = 0;
  int o = 0;       // click indicator, 0 or 1
  int r = 0;       // conversion label, used only when o = 1
  double r_hat = 0.5;
  double e_hat = 0.0;
  double p_hat = 1.0;
};

struct SampleBundle {
  std::vector<Sample> samples;
  // When > 0, used as |D| in place of samples.size() by the full-bundle losses.
  double denom_override = 0.0;

  double denom() const { return denom_override > 0.0 ? denom_override : double(samples.size()); }
  size_t clicked_count() const;
};

// Full-bundle estimators.
double loss_naive(const SampleBundle& b);  // mean error over clicked; errors if none
double loss_eib(const SampleBundle& b);    // |D|^-1 sum [o*e + (1-o)*e_hat]
double loss_ips(const SampleBundle& b);    // |D|^-1 sum [o*e/p_hat]
double loss_dr(const SampleBundle& b);     // |D|^-1 sum [e_hat + o*(e - e_hat)/p_hat]

// Imputation-model losses (sums over clicked samples).
double imp_loss_drjl(const SampleBundle& b, bool mean = false);
double imp_loss_mrdr(const SampleBundle& b, bool mean = false);
double imp_loss_drbias(const SampleBundle& b, bool mean = false);
// lambda in [0,1]: scalar or one value per sample (unclicked entries ignored).
double imp_loss_drmse(const SampleBundle& b, double lambda, bool mean = false);
double imp_loss_drmse(const SampleBundle& b, const std::vector<double>& lambda, bool mean = false);

// Per-sample imputation weight w such that the clicked-sample term is
// w * (e_hat - e)^2 / p_hat. Shared by the losses above and the trainers.
double imp_weight_drjl(double p_hat);
double imp_weight_mrdr(double p_hat);
double imp_weight_drbias(double p_hat);
double imp_weight_drmse(double p_hat, double lambda);

// Click-model losses. p_hat is read as the CTR prediction.
double loss_ctr(const SampleBundle& b);  // -sum [o log p_hat + (1-o) log(1-p_hat)]
double loss_ctcvr(const SampleBundle& b);  // loss_dr * |D| + loss_ctr

}  // namespace drcvr
