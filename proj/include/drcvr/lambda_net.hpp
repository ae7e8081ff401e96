#pragma once
// Per-sample weighting network lambda_xi(u, i) in (0, 1). Input is the user
// and item embedding (own tables, independent of the FM models), one tanh
// hidden layer, scalar sigmoid output. The sigmoid is squashed affinely into
// [kLambdaEps, 1 - kLambdaEps] so the output provably never reaches 0 or 1
// while a zero-initialized output layer still gives exactly 0.5.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "drcvr/rng.hpp"

namespace drcvr {

inline constexpr double kLambdaEps = 1e-3;

struct LambdaGrad {
  std::vector<double> user_emb, item_emb, w1, b1, w2;
  double b2 = 0.0;
  void resize_like(int num_users, int num_items, int embed, int hidden) {
    user_emb.assign(size_t(num_users) * size_t(embed), 0.0);
    item_emb.assign(size_t(num_items) * size_t(embed), 0.0);
    w1.assign(size_t(hidden) * size_t(2 * embed), 0.0);
    b1.assign(size_t(hidden), 0.0);
    w2.assign(size_t(hidden), 0.0);
    b2 = 0.0;
  }
  void zero() {
    auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    z(user_emb);
    z(item_emb);
    z(w1);
    z(b1);
    z(w2);
    b2 = 0.0;
  }
};

struct LambdaNet {
  int num_users = 0, num_items = 0;
  int embed = 8, hidden = 16;
  std::vector<double> user_emb, item_emb;  // num_users*embed, num_items*embed
  std::vector<double> w1, b1;              // hidden x (2*embed), hidden
  std::vector<double> w2;                  // hidden
  double b2 = 0.0;

  static LambdaNet init(int num_users, int num_items, int embed, int hidden, double init_scale,
                        Rng rng) {
    LambdaNet n;
    n.num_users = num_users;
    n.num_items = num_items;
    n.embed = embed;
    n.hidden = hidden;
    n.user_emb.resize(size_t(num_users) * size_t(embed));
    n.item_emb.resize(size_t(num_items) * size_t(embed));
    n.w1.resize(size_t(hidden) * size_t(2 * embed));
    for (auto& v : n.user_emb) v = init_scale * rng.next_gaussian();
    for (auto& v : n.item_emb) v = init_scale * rng.next_gaussian();
    for (auto& v : n.w1) v = init_scale * rng.next_gaussian();
    n.b1.assign(size_t(hidden), 0.0);
    // Output layer starts at zero: lambda == 0.5 everywhere before training.
    n.w2.assign(size_t(hidden), 0.0);
    n.b2 = 0.0;
    return n;
  }

  struct Tape {
    std::vector<double> h;  // tanh activations
    double z_out = 0.0;
    double lambda = 0.5;
  };

  double forward(int user, int item, Tape* tape = nullptr) const {
    const double* ue = &user_emb[size_t(user) * size_t(embed)];
    const double* ie = &item_emb[size_t(item) * size_t(embed)];
    std::vector<double> h(static_cast<size_t>(hidden), 0.0);
    for (int j = 0; j < hidden; ++j) {
      double z = b1[size_t(j)];
      const double* row = &w1[size_t(j) * size_t(2 * embed)];
      for (int f = 0; f < embed; ++f) z += row[f] * ue[f] + row[embed + f] * ie[f];
      h[size_t(j)] = std::tanh(z);
    }
    double z_out = b2;
    for (int j = 0; j < hidden; ++j) z_out += w2[size_t(j)] * h[size_t(j)];
    double lam = kLambdaEps + (1.0 - 2.0 * kLambdaEps) * sigmoid_(z_out);
    if (tape) {
      tape->h = std::move(h);
      tape->z_out = z_out;
      tape->lambda = lam;
    }
    return lam;
  }

  // Accumulates upstream * d lambda / d params into g.
  void backward(int user, int item, const Tape& tape, double upstream, LambdaGrad& g) const {
    double sig = sigmoid_(tape.z_out);
    double dz = upstream * (1.0 - 2.0 * kLambdaEps) * sig * (1.0 - sig);
    g.b2 += dz;
    const double* ue = &user_emb[size_t(user) * size_t(embed)];
    const double* ie = &item_emb[size_t(item) * size_t(embed)];
    double* gue = &g.user_emb[size_t(user) * size_t(embed)];
    double* gie = &g.item_emb[size_t(item) * size_t(embed)];
    for (int j = 0; j < hidden; ++j) {
      double hj = tape.h[size_t(j)];
      g.w2[size_t(j)] += dz * hj;
      double dh = dz * w2[size_t(j)] * (1.0 - hj * hj);
      g.b1[size_t(j)] += dh;
      double* grow = &g.w1[size_t(j) * size_t(2 * embed)];
      const double* row = &w1[size_t(j) * size_t(2 * embed)];
      for (int f = 0; f < embed; ++f) {
        grow[f] += dh * ue[f];
        grow[embed + f] += dh * ie[f];
        gue[f] += dh * row[f];
        gie[f] += dh * row[embed + f];
      }
    }
  }

  size_t num_params() const {
    return user_emb.size() + item_emb.size() + w1.size() + b1.size() + w2.size() + 1;
  }

 private:
  static double sigmoid_(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
  }
};

}  // namespace drcvr
