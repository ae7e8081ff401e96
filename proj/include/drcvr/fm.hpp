#pragma once
// Second-order factorization machine over sparse binary features.
// score(x) = bias + sum_a w[a] + 0.5 * sum_f [(sum_a v[a,f])^2 - sum_a v[a,f]^2]
// for the active feature indices a (all feature values are 1 here; interactions
// use the usual sum-of-squares rearrangement). Factors are stored row-major,
// factors[a*rank + f].

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "drcvr/rng.hpp"

namespace drcvr {

inline double sigmoid(double z) {
  if (z >= 0) {
    double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) {
  // log(1+exp(z)) without overflow.
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

// Gradient (or any cotangent/direction) with the same shape as an FmModel.
struct FmGrad {
  double bias = 0.0;
  std::vector<double> linear;
  std::vector<double> factors;

  void resize_like(size_t num_features, int rank) {
    linear.assign(num_features, 0.0);
    factors.assign(num_features * size_t(rank), 0.0);
    bias = 0.0;
  }
  void zero() {
    bias = 0.0;
    std::fill(linear.begin(), linear.end(), 0.0);
    std::fill(factors.begin(), factors.end(), 0.0);
  }
};

struct FmModel {
  int num_features = 0;
  int rank = 0;
  double bias = 0.0;
  std::vector<double> linear;   // num_features
  std::vector<double> factors;  // num_features * rank

  static FmModel init(int num_features, int rank, double init_scale, Rng rng) {
    if (num_features <= 0 || rank < 0) throw std::invalid_argument("fm: bad shape");
    FmModel m;
    m.num_features = num_features;
    m.rank = rank;
    m.bias = 0.0;
    m.linear.assign(size_t(num_features), 0.0);
    m.factors.resize(size_t(num_features) * size_t(rank));
    for (auto& v : m.factors) v = init_scale * rng.next_gaussian();
    return m;
  }

  double score(const int* idx, int n_active) const {
    double s = bias;
    for (int a = 0; a < n_active; ++a) s += linear[size_t(idx[a])];
    for (int f = 0; f < rank; ++f) {
      double sum = 0.0, sumsq = 0.0;
      for (int a = 0; a < n_active; ++a) {
        double v = factors[size_t(idx[a]) * size_t(rank) + size_t(f)];
        sum += v;
        sumsq += v * v;
      }
      s += 0.5 * (sum * sum - sumsq);
    }
    return s;
  }

  // Accumulates upstream * d score / d params into g (shape must match).
  void grad_accum(const int* idx, int n_active, double upstream, FmGrad& g) const {
    g.bias += upstream;
    for (int a = 0; a < n_active; ++a) g.linear[size_t(idx[a])] += upstream;
    for (int f = 0; f < rank; ++f) {
      double sum = 0.0;
      for (int a = 0; a < n_active; ++a) sum += factors[size_t(idx[a]) * size_t(rank) + size_t(f)];
      for (int a = 0; a < n_active; ++a) {
        size_t off = size_t(idx[a]) * size_t(rank) + size_t(f);
        g.factors[off] += upstream * (sum - factors[off]);
      }
    }
  }

  // Directional derivative: <d score / d params, dir>, evaluated at this model.
  double grad_dot(const int* idx, int n_active, const FmGrad& dir) const {
    double d = dir.bias;
    for (int a = 0; a < n_active; ++a) d += dir.linear[size_t(idx[a])];
    for (int f = 0; f < rank; ++f) {
      double sum = 0.0;
      for (int a = 0; a < n_active; ++a) sum += factors[size_t(idx[a]) * size_t(rank) + size_t(f)];
      for (int a = 0; a < n_active; ++a) {
        size_t off = size_t(idx[a]) * size_t(rank) + size_t(f);
        d += dir.factors[off] * (sum - factors[off]);
      }
    }
    return d;
  }

  // params = params + scale * g, used for plain-SGD pseudo updates.
  void axpy(double scale, const FmGrad& g) {
    bias += scale * g.bias;
    for (size_t i = 0; i < linear.size(); ++i) linear[i] += scale * g.linear[i];
    for (size_t i = 0; i < factors.size(); ++i) factors[i] += scale * g.factors[i];
  }

  size_t num_params() const { return 1 + linear.size() + factors.size(); }
};

// Feature layout shared by every model in this project: one-hot user id
// followed by one-hot item id, so exactly two active indices per example.
struct FeatureSpace {
  int num_users = 0;
  int num_items = 0;
  int num_features() const { return num_users + num_items; }
  void active(int user, int item, int out[2]) const {
    out[0] = user;
    out[1] = num_users + item;
  }
};

}  // namespace drcvr
