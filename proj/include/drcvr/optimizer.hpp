#pragma once
// Adam over named parameter blocks, with bias-corrected moments. Two exact
// degenerations are part of the contract:
//   beta2 == 0 disables the adaptive denominator entirely (denom = 1), and
//   beta1 == 0 makes the first moment the raw gradient,
// so beta1 == beta2 == 0 performs p -= lr * g exactly (not sign-SGD, which is
// what literal Adam with beta2 = 0 would give via g / (|g| + eps)).

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace drcvr {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // weight_decay adds wd * p to the gradient (coupled L2).
  void step(const std::string& block, std::vector<double>& p, const std::vector<double>& g,
            double weight_decay = 0.0) {
    if (p.size() != g.size()) throw std::invalid_argument("optimizer: shape mismatch in " + block);
    State& st = states_[block];
    if (st.m.size() != p.size()) {
      st.m.assign(p.size(), 0.0);
      st.v.assign(p.size(), 0.0);
      st.t = 0;
    }
    ++st.t;
    double bc1 = (cfg_.beta1 == 0.0) ? 1.0 : 1.0 - std::pow(cfg_.beta1, double(st.t));
    double bc2 = (cfg_.beta2 == 0.0) ? 1.0 : 1.0 - std::pow(cfg_.beta2, double(st.t));
    for (size_t i = 0; i < p.size(); ++i) {
      double gi = g[i] + weight_decay * p[i];
      if (!std::isfinite(gi))
        throw std::runtime_error("optimizer: non-finite gradient in block '" + block + "'");
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
      double mhat = st.m[i] / bc1;
      double update;
      if (cfg_.beta2 == 0.0) {
        update = mhat;
      } else {
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        double vhat = st.v[i] / bc2;
        update = mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p[i] -= cfg_.lr * update;
    }
  }

  void step_scalar(const std::string& block, double& p, double g, double weight_decay = 0.0) {
    std::vector<double> pv{p}, gv{g};
    step(block, pv, gv, weight_decay);
    p = pv[0];
  }

  struct State {
    std::vector<double> m, v;
    int64_t t = 0;
  };
  const std::map<std::string, State>& states() const { return states_; }
  std::map<std::string, State>& states() { return states_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, State> states_;
};

}  // namespace drcvr
