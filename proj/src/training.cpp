#include "drcvr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "drcvr/evaluation.hpp"
#include "drcvr/rng.hpp"

namespace drcvr {

EstimatorKind estimator_kind_from_string(const std::string& s) {
  if (s == "naive") return EstimatorKind::naive;
  if (s == "eib") return EstimatorKind::eib;
  if (s == "ips") return EstimatorKind::ips;
  if (s == "drjl") return EstimatorKind::drjl;
  if (s == "mrdr") return EstimatorKind::mrdr;
  if (s == "drbias") return EstimatorKind::drbias;
  if (s == "drmse") return EstimatorKind::drmse;
  if (s == "drmse-trilevel") return EstimatorKind::drmse_trilevel;
  throw std::invalid_argument("unknown estimator kind: " + s);
}

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::naive: return "naive";
    case EstimatorKind::eib: return "eib";
    case EstimatorKind::ips: return "ips";
    case EstimatorKind::drjl: return "drjl";
    case EstimatorKind::mrdr: return "mrdr";
    case EstimatorKind::drbias: return "drbias";
    case EstimatorKind::drmse: return "drmse";
    case EstimatorKind::drmse_trilevel: return "drmse-trilevel";
  }
  throw std::logic_error("bad estimator kind");
}

bool kind_uses_imputation(EstimatorKind k) {
  return k == EstimatorKind::eib || k == EstimatorKind::drjl || k == EstimatorKind::mrdr ||
         k == EstimatorKind::drbias || k == EstimatorKind::drmse ||
         k == EstimatorKind::drmse_trilevel;
}

bool kind_uses_propensity(EstimatorKind k) {
  return k == EstimatorKind::ips || k == EstimatorKind::drjl || k == EstimatorKind::mrdr ||
         k == EstimatorKind::drbias || k == EstimatorKind::drmse ||
         k == EstimatorKind::drmse_trilevel;
}

namespace {

constexpr double kCeClip = kProbClip;

double clip01(double p) {
  if (p < kCeClip) return kCeClip;
  if (p > 1.0 - kCeClip) return 1.0 - kCeClip;
  return p;
}

// e_hat and its score derivatives for one event, given the imputation score
// s_imp and the CVR score s_phi.
struct HeadEval {
  double e_hat = 0.0;
  double d_dsimp = 0.0;  // d e_hat / d s_imp
  double d_dsphi = 0.0;  // d e_hat / d s_phi
  double g = 0.0;        // pseudo-label (label head)
};

HeadEval eval_head(ImputationHead head, double s_imp, double s_phi) {
  HeadEval h;
  if (head == ImputationHead::error) {
    h.e_hat = softplus(s_imp);
    h.d_dsimp = sigmoid(s_imp);
    h.d_dsphi = 0.0;
    return h;
  }
  double g = sigmoid(s_imp);
  double r_raw = sigmoid(s_phi);
  double r = clip01(r_raw);
  bool clipped = r != r_raw;
  h.g = g;
  h.e_hat = -g * std::log(r) - (1.0 - g) * std::log(1.0 - r);
  h.d_dsimp = std::log((1.0 - r) / r) * g * (1.0 - g);
  h.d_dsphi = clipped ? 0.0 : (r_raw - g);
  return h;
}

// CE(r, sigmoid(s_phi)) and its s_phi derivative.
double true_error(int r, double s_phi, double* d_dsphi) {
  double p_raw = sigmoid(s_phi);
  double p = clip01(p_raw);
  bool clipped = p != p_raw;
  if (d_dsphi) *d_dsphi = clipped ? 0.0 : (p_raw - double(r));
  return -double(r) * std::log(p) - (1.0 - double(r)) * std::log(1.0 - p);
}

struct Ctx {
  const InteractionDataset* ds = nullptr;
  const FmModel* fixed_prop = nullptr;
  const TrainConfig* cfg = nullptr;
  FeatureSpace fs;
  std::unordered_set<uint64_t> clicked;  // train + validation cells
  std::vector<uint32_t> unclicked_cells;  // built only for sample_ratio == -1
  Rng root{0};

  uint64_t cell(int u, int i) const { return uint64_t(u) * uint64_t(ds->num_items) + uint64_t(i); }
};

Ctx make_ctx(const InteractionDataset& ds, const FmModel* fixed_prop, const TrainConfig& cfg) {
  Ctx ctx;
  ctx.ds = &ds;
  ctx.fixed_prop = fixed_prop;
  ctx.cfg = &cfg;
  ctx.fs = FeatureSpace{ds.num_users, ds.num_items};
  ctx.root = Rng(cfg.seed);
  for (const auto& t : ds.train) ctx.clicked.insert(ctx.cell(t.user, t.item));
  for (const auto& t : ds.validation) ctx.clicked.insert(ctx.cell(t.user, t.item));
  if (cfg.sample_ratio < 0) {
    size_t cells = size_t(ds.num_users) * size_t(ds.num_items);
    ctx.unclicked_cells.reserve(cells - ctx.clicked.size());
    for (size_t k = 0; k < cells; ++k)
      if (!ctx.clicked.count(uint64_t(k))) ctx.unclicked_cells.push_back(uint32_t(k));
  }
  if (kind_uses_propensity(cfg.kind) && !cfg.propensity_joint && fixed_prop == nullptr)
    throw std::invalid_argument("estimator '" + to_string(cfg.kind) +
                                "' needs a pretrained propensity model "
                                "(or propensity_joint=true)");
  return ctx;
}

// Propensity of an event: frozen pretrained model by default, live zeta in
// joint mode. d_dszeta is the derivative through the live score (zero when
// frozen or floor-clipped).
double propensity(const Ctx& ctx, const Models& m, int u, int i, double* d_dszeta = nullptr) {
  const FmModel& src = ctx.cfg->propensity_joint ? m.ctr : *ctx.fixed_prop;
  int idx[2];
  ctx.fs.active(u, i, idx);
  double s = src.score(idx, 2);
  double raw = sigmoid(s);
  double clipped = raw < ctx.cfg->clip_floor ? ctx.cfg->clip_floor : raw;
  if (d_dszeta)
    *d_dszeta = (ctx.cfg->propensity_joint && raw >= ctx.cfg->clip_floor)
                    ? raw * (1.0 - raw)
                    : 0.0;
  return clipped;
}

double lambda_of(const Models& m, const TrainConfig& cfg, int u, int i,
                 LambdaNet::Tape* tape = nullptr) {
  if (cfg.kind == EstimatorKind::drmse) {
    if (tape) *tape = LambdaNet::Tape{};
    return cfg.fixed_lambda;
  }
  return m.lam.forward(u, i, tape);
}

// ---- batching ---------------------------------------------------------------

std::vector<Event> slice_clicked(const Ctx& ctx, const std::vector<uint32_t>& perm, size_t step) {
  const auto& train = ctx.ds->train;
  size_t b = size_t(ctx.cfg->batch_clicked);
  size_t lo = step * b, hi = std::min(train.size(), lo + b);
  std::vector<Event> out;
  out.reserve(hi - lo);
  for (size_t k = lo; k < hi; ++k) {
    const Interaction& t = train[perm[k]];
    out.push_back(Event{t.user, t.item, 1, t.label});
  }
  return out;
}

void append_negatives(const Ctx& ctx, Rng rng, size_t count, std::vector<Event>& batch) {
  int m = ctx.ds->num_users, n = ctx.ds->num_items;
  size_t cells = size_t(m) * size_t(n);
  if (ctx.clicked.size() >= cells)
    throw std::runtime_error("no unclicked cells available for negative sampling");
  size_t guard = 0;
  for (size_t k = 0; k < count; ++k) {
    for (;;) {
      if (++guard > 1000 * (count + 8))
        throw std::runtime_error("negative sampling stalled; clicked set too dense");
      uint64_t c = rng.next_below(cells);
      if (ctx.clicked.count(c)) continue;
      batch.push_back(Event{int(c / uint64_t(n)), int(c % uint64_t(n)), 0, 0});
      break;
    }
  }
}

// Mixed batch for one real step: the clicked slice plus sampled negatives
// (ratio * |slice|, or an even share of all unclicked cells when ratio = -1,
// reshuffled per epoch).
std::vector<Event> mixed_batch(const Ctx& ctx, const std::vector<Event>& clicked_slice,
                               const std::vector<uint32_t>& unclicked_perm, size_t step,
                               size_t steps, int epoch) {
  std::vector<Event> batch = clicked_slice;
  if (ctx.cfg->sample_ratio == 0) return batch;
  if (ctx.cfg->sample_ratio > 0) {
    Rng rng = ctx.root.split("batch-neg").split(uint64_t(epoch)).split(step);
    append_negatives(ctx, rng, size_t(ctx.cfg->sample_ratio) * clicked_slice.size(), batch);
    return batch;
  }
  size_t total = unclicked_perm.size();
  size_t lo = step * total / steps, hi = (step + 1) * total / steps;
  int n = ctx.ds->num_items;
  for (size_t k = lo; k < hi; ++k) {
    uint32_t c = unclicked_perm[k];
    batch.push_back(Event{int(c / uint32_t(n)), int(c % uint32_t(n)), 0, 0});
  }
  return batch;
}

std::vector<Event> sample_clicked_with_replacement(const Ctx& ctx, Rng rng, size_t count) {
  const auto& train = ctx.ds->train;
  std::vector<Event> out;
  out.reserve(count);
  for (size_t k = 0; k < count; ++k) {
    const Interaction& t = train[rng.next_below(train.size())];
    out.push_back(Event{t.user, t.item, 1, t.label});
  }
  return out;
}

// ---- real steps -------------------------------------------------------------

// Imputation weight on a clicked event; eib uses weight 1 with no propensity.
double imp_weight(const Models& m, const TrainConfig& cfg, const Event& ev,
                  double p_hat, double* lambda_out) {
  switch (cfg.kind) {
    case EstimatorKind::eib:
      return 1.0;
    case EstimatorKind::drjl:
      return imp_weight_drjl(p_hat);
    case EstimatorKind::mrdr:
      return imp_weight_mrdr(p_hat);
    case EstimatorKind::drbias:
      return imp_weight_drbias(p_hat);
    case EstimatorKind::drmse:
    case EstimatorKind::drmse_trilevel: {
      double lam = lambda_of(m, cfg, ev.user, ev.item);
      if (lambda_out) *lambda_out = lam;
      return imp_weight_drmse(p_hat, lam);
    }
    default:
      throw std::logic_error("imp_weight: kind has no imputation model");
  }
}

// One theta step against the kind's imputation loss (phi frozen). Returns the
// loss value; accumulates mean lambda for logging.
double theta_step(const Ctx& ctx, Models& m, Adam& opt, const std::vector<Event>& clicked,
                  double* lambda_sum, size_t* lambda_count) {
  const TrainConfig& cfg = *ctx.cfg;
  FmGrad g;
  g.resize_like(size_t(m.imp.num_features), m.imp.rank);
  double norm = cfg.imp_loss_mean && !clicked.empty() ? 1.0 / double(clicked.size()) : 1.0;
  double loss = 0.0;
  int idx[2];
  for (const Event& ev : clicked) {
    ctx.fs.active(ev.user, ev.item, idx);
    double s_phi = m.cvr.score(idx, 2);
    double s_imp = m.imp.score(idx, 2);
    HeadEval h = eval_head(cfg.head, s_imp, s_phi);
    double e = true_error(ev.r, s_phi, nullptr);
    double p_hat = cfg.kind == EstimatorKind::eib ? 1.0 : propensity(ctx, m, ev.user, ev.item);
    double lam = 0.0;
    double w = imp_weight(m, cfg, ev, p_hat, &lam);
    if (cfg.kind == EstimatorKind::drmse || cfg.kind == EstimatorKind::drmse_trilevel) {
      if (lambda_sum) *lambda_sum += lam;
      if (lambda_count) ++*lambda_count;
    }
    double d = h.e_hat - e;
    loss += norm * w * d * d / p_hat;
    m.imp.grad_accum(idx, 2, norm * w * 2.0 * d / p_hat * h.d_dsimp, g);
  }
  opt.step_scalar("imp.bias", m.imp.bias, g.bias);
  opt.step("imp.linear", m.imp.linear, g.linear, cfg.l2);
  opt.step("imp.factors", m.imp.factors, g.factors, cfg.l2);
  return loss;
}

// One phi (and, for DR kinds, zeta) step on the mixed batch. Losses are
// normalized by the batch size (the minibatch stands in for |D|).
double main_step(const Ctx& ctx, Models& m, Adam& opt, const std::vector<Event>& batch) {
  const TrainConfig& cfg = *ctx.cfg;
  bool dr_kind = kind_uses_imputation(cfg.kind) && cfg.kind != EstimatorKind::eib;
  bool with_zeta = dr_kind;
  FmGrad g_phi, g_zeta;
  g_phi.resize_like(size_t(m.cvr.num_features), m.cvr.rank);
  if (with_zeta) g_zeta.resize_like(size_t(m.ctr.num_features), m.ctr.rank);

  double inv_b = 1.0 / double(batch.size());
  double n_clicked = 0.0;
  for (const Event& ev : batch) n_clicked += ev.o;
  double loss = 0.0;
  int idx[2];
  for (const Event& ev : batch) {
    ctx.fs.active(ev.user, ev.item, idx);
    double s_phi = m.cvr.score(idx, 2);
    double de_true = 0.0;
    double dphi = 0.0;

    switch (cfg.kind) {
      case EstimatorKind::naive: {
        if (ev.o == 1) {
          double e = true_error(ev.r, s_phi, &de_true);
          loss += e / n_clicked;
          dphi += de_true / n_clicked;
        }
        break;
      }
      case EstimatorKind::ips: {
        if (ev.o == 1) {
          double p_hat = propensity(ctx, m, ev.user, ev.item);
          double e = true_error(ev.r, s_phi, &de_true);
          loss += e / p_hat * inv_b;
          dphi += de_true / p_hat * inv_b;
        }
        break;
      }
      case EstimatorKind::eib: {
        double s_imp = m.imp.score(idx, 2);
        HeadEval h = eval_head(cfg.head, s_imp, s_phi);
        if (ev.o == 1) {
          double e = true_error(ev.r, s_phi, &de_true);
          loss += e * inv_b;
          dphi += de_true * inv_b;
        } else {
          loss += h.e_hat * inv_b;
          dphi += h.d_dsphi * inv_b;
        }
        break;
      }
      default: {  // DR family: loss_dr + normalized CTR loss
        double dz = 0.0;
        double p_hat = propensity(ctx, m, ev.user, ev.item, &dz);
        double s_imp = m.imp.score(idx, 2);
        HeadEval h = eval_head(cfg.head, s_imp, s_phi);
        loss += h.e_hat * inv_b;
        dphi += h.d_dsphi * inv_b;
        if (ev.o == 1) {
          double e = true_error(ev.r, s_phi, &de_true);
          loss += (e - h.e_hat) / p_hat * inv_b;
          dphi += (de_true - h.d_dsphi) / p_hat * inv_b;
        }
        if (with_zeta) {
          double s_zeta = m.ctr.score(idx, 2);
          double p_raw = sigmoid(s_zeta);
          double p_ce = clip01(p_raw);
          loss += (-double(ev.o) * std::log(p_ce) - (1.0 - double(ev.o)) * std::log(1.0 - p_ce)) *
                  inv_b;
          double dzeta = (p_ce == p_raw ? (p_raw - double(ev.o)) : 0.0) * inv_b;
          if (cfg.propensity_joint && ev.o == 1) {
            double e = true_error(ev.r, s_phi, nullptr);
            dzeta += -(e - h.e_hat) / (p_hat * p_hat) * dz * inv_b;
          }
          m.ctr.grad_accum(idx, 2, dzeta, g_zeta);
        }
        break;
      }
    }
    if (dphi != 0.0) m.cvr.grad_accum(idx, 2, dphi, g_phi);
  }

  opt.step_scalar("cvr.bias", m.cvr.bias, g_phi.bias);
  opt.step("cvr.linear", m.cvr.linear, g_phi.linear, cfg.l2);
  opt.step("cvr.factors", m.cvr.factors, g_phi.factors, cfg.l2);
  if (with_zeta) {
    opt.step_scalar("ctr.bias", m.ctr.bias, g_zeta.bias);
    opt.step("ctr.linear", m.ctr.linear, g_zeta.linear, cfg.l2);
    opt.step("ctr.factors", m.ctr.factors, g_zeta.factors, cfg.l2);
  }
  return loss;
}

// ---- pseudo updates and the hypergradient -----------------------------------

struct PseudoForward {
  FmModel theta_plus, phi_plus, zeta_plus;
  bool has_zeta_plus = false;
  // per lower event: tape, and c_j with d lambda_j -> theta+ = c_j * grad s_theta(x_j)|theta_s
  std::vector<LambdaNet::Tape> tapes;
  std::vector<double> c;
  // per mixed event: kappa_i = d(phi-step coefficient)/d s_theta+, and the
  // joint-mode analogue mu_i for the zeta step
  std::vector<double> kappa, mu;
  double upper_value = 0.0;
};

PseudoForward pseudo_forward(const Models& m, const Ctx& ctx, const TriBatches& b) {
  const TrainConfig& cfg = *ctx.cfg;
  if (b.lower.empty() || b.upper.empty() || b.mixed.empty())
    throw std::invalid_argument("pseudo batches must be non-empty");
  PseudoForward out;
  double eta = cfg.pseudo_lr;
  int idx[2];

  // theta+ from the lower batch, lambda taken from the current xi.
  FmGrad g_theta;
  g_theta.resize_like(size_t(m.imp.num_features), m.imp.rank);
  double norm = cfg.imp_loss_mean ? 1.0 / double(b.lower.size()) : 1.0;
  out.tapes.resize(b.lower.size());
  out.c.resize(b.lower.size());
  for (size_t j = 0; j < b.lower.size(); ++j) {
    const Event& ev = b.lower[j];
    ctx.fs.active(ev.user, ev.item, idx);
    double s_phi = m.cvr.score(idx, 2);
    double s_imp = m.imp.score(idx, 2);
    HeadEval h = eval_head(cfg.head, s_imp, s_phi);
    double e = true_error(ev.r, s_phi, nullptr);
    double p_hat = propensity(ctx, m, ev.user, ev.item);
    double lam = m.lam.forward(ev.user, ev.item, &out.tapes[j]);
    double wm = imp_weight_mrdr(p_hat), wb = imp_weight_drbias(p_hat);
    double w = lam * wb + (1.0 - lam) * wm;
    double d = h.e_hat - e;
    double gcoef = norm * 2.0 * d / p_hat * h.d_dsimp;
    m.imp.grad_accum(idx, 2, w * gcoef, g_theta);
    out.c[j] = -eta * (wb - wm) * gcoef;
  }
  out.theta_plus = m.imp;
  out.theta_plus.axpy(-eta, g_theta);

  // phi+ (and zeta+ in joint mode) on the mixed batch, evaluated with theta+.
  FmGrad g_phi, g_zeta;
  g_phi.resize_like(size_t(m.cvr.num_features), m.cvr.rank);
  out.has_zeta_plus = cfg.propensity_joint;
  if (out.has_zeta_plus) g_zeta.resize_like(size_t(m.ctr.num_features), m.ctr.rank);
  double inv_b = 1.0 / double(b.mixed.size());
  out.kappa.assign(b.mixed.size(), 0.0);
  out.mu.assign(b.mixed.size(), 0.0);
  for (size_t i = 0; i < b.mixed.size(); ++i) {
    const Event& ev = b.mixed[i];
    ctx.fs.active(ev.user, ev.item, idx);
    double s_phi = m.cvr.score(idx, 2);
    double s_imp = out.theta_plus.score(idx, 2);
    HeadEval h = eval_head(cfg.head, s_imp, s_phi);
    double dz = 0.0;
    double p_hat = kind_uses_propensity(cfg.kind) ? propensity(ctx, m, ev.user, ev.item, &dz) : 1.0;
    double o_over_p = double(ev.o) / p_hat;
    double de_true = 0.0;
    double e = ev.o == 1 ? true_error(ev.r, s_phi, &de_true) : 0.0;
    double coef = h.d_dsphi * (1.0 - o_over_p) + de_true * o_over_p;
    m.cvr.grad_accum(idx, 2, coef * inv_b, g_phi);
    // d coef / d s_theta+: only e_hat depends on theta (label head).
    if (cfg.head == ImputationHead::label) {
      double r_raw = sigmoid(s_phi);
      bool clipped = clip01(r_raw) != r_raw;
      out.kappa[i] = (clipped ? 0.0 : -h.g * (1.0 - h.g)) * (1.0 - o_over_p) * inv_b;
    }
    if (out.has_zeta_plus) {
      double s_zeta = m.ctr.score(idx, 2);
      double p_raw = sigmoid(s_zeta);
      double p_ce = clip01(p_raw);
      double dzeta = (p_ce == p_raw ? (p_raw - double(ev.o)) : 0.0) * inv_b;
      if (ev.o == 1) {
        dzeta += -(e - h.e_hat) / (p_hat * p_hat) * dz * inv_b;
        out.mu[i] = dz / (p_hat * p_hat) * h.d_dsimp * inv_b;
      }
      m.ctr.grad_accum(idx, 2, dzeta, g_zeta);
    }
  }
  out.phi_plus = m.cvr;
  out.phi_plus.axpy(-eta, g_phi);
  if (out.has_zeta_plus) {
    out.zeta_plus = m.ctr;
    out.zeta_plus.axpy(-eta, g_zeta);
  }

  // Upper DR loss at (phi+, zeta+, theta+); all upper events are clicked.
  double inv_u = 1.0 / double(b.upper.size());
  double value = 0.0;
  for (const Event& ev : b.upper) {
    ctx.fs.active(ev.user, ev.item, idx);
    double s_phi = out.phi_plus.score(idx, 2);
    double s_imp = out.theta_plus.score(idx, 2);
    HeadEval h = eval_head(cfg.head, s_imp, s_phi);
    double e = true_error(ev.r, s_phi, nullptr);
    double p_hat;
    if (cfg.propensity_joint) {
      int jdx[2];
      ctx.fs.active(ev.user, ev.item, jdx);
      double raw = sigmoid(out.zeta_plus.score(jdx, 2));
      p_hat = raw < cfg.clip_floor ? cfg.clip_floor : raw;
    } else {
      p_hat = propensity(ctx, m, ev.user, ev.item);
    }
    value += (h.e_hat + (e - h.e_hat) / p_hat) * inv_u;
  }
  out.upper_value = value;
  return out;
}

}  // namespace

double unrolled_upper_loss(const Models& models, const FmModel* fixed_prop,
                           const TriBatches& batches, const TrainConfig& cfg) {
  Ctx ctx;  // only the feature space and propensity hook are needed here
  ctx.fixed_prop = fixed_prop;
  ctx.cfg = &cfg;
  ctx.fs = FeatureSpace{models.lam.num_users, models.lam.num_items};
  return pseudo_forward(models, ctx, batches).upper_value;
}

LambdaGrad hypergradient_xi(const Models& m, const FmModel* fixed_prop, const TriBatches& b,
                            const TrainConfig& cfg, double* upper_value) {
  Ctx ctx;
  ctx.fixed_prop = fixed_prop;
  ctx.cfg = &cfg;
  ctx.fs = FeatureSpace{m.lam.num_users, m.lam.num_items};

  PseudoForward fwd = pseudo_forward(m, ctx, b);
  if (upper_value) *upper_value = fwd.upper_value;
  double eta = cfg.pseudo_lr;
  int idx[2];

  // Upper-loss cotangents at the pseudo points.
  FmGrad u_phi, u_theta, u_zeta;
  u_phi.resize_like(size_t(m.cvr.num_features), m.cvr.rank);
  u_theta.resize_like(size_t(m.imp.num_features), m.imp.rank);
  if (fwd.has_zeta_plus) u_zeta.resize_like(size_t(m.ctr.num_features), m.ctr.rank);
  double inv_u = 1.0 / double(b.upper.size());
  for (const Event& ev : b.upper) {
    ctx.fs.active(ev.user, ev.item, idx);
    double s_phi = fwd.phi_plus.score(idx, 2);
    double s_imp = fwd.theta_plus.score(idx, 2);
    HeadEval h = eval_head(cfg.head, s_imp, s_phi);
    double de_true = 0.0;
    double e = true_error(ev.r, s_phi, &de_true);
    double p_hat, dz = 0.0;
    if (cfg.propensity_joint) {
      double raw = sigmoid(fwd.zeta_plus.score(idx, 2));
      p_hat = raw < cfg.clip_floor ? cfg.clip_floor : raw;
      dz = raw >= cfg.clip_floor ? raw * (1.0 - raw) : 0.0;
    } else {
      p_hat = propensity(ctx, m, ev.user, ev.item);
    }
    double inv_p = 1.0 / p_hat;
    fwd.phi_plus.grad_accum(idx, 2,
                            (h.d_dsphi * (1.0 - inv_p) + de_true * inv_p) * inv_u, u_phi);
    fwd.theta_plus.grad_accum(idx, 2, h.d_dsimp * (1.0 - inv_p) * inv_u, u_theta);
    if (fwd.has_zeta_plus)
      fwd.zeta_plus.grad_accum(idx, 2, -(e - h.e_hat) * inv_p * inv_p * dz * inv_u, u_zeta);
  }

  // Pull the phi+ (and zeta+) cotangents back to theta+ through the mixed
  // batch: d phi+ / d theta+ = -eta * sum_i grad s_phi(x_i)|phi_s (x) kappa_i
  // * grad s_theta(x_i)|theta+.
  for (size_t i = 0; i < b.mixed.size(); ++i) {
    const Event& ev = b.mixed[i];
    ctx.fs.active(ev.user, ev.item, idx);
    if (fwd.kappa[i] != 0.0) {
      double t = m.cvr.grad_dot(idx, 2, u_phi);
      fwd.theta_plus.grad_accum(idx, 2, -eta * t * fwd.kappa[i], u_theta);
    }
    if (fwd.has_zeta_plus && fwd.mu[i] != 0.0) {
      double t = m.ctr.grad_dot(idx, 2, u_zeta);
      fwd.theta_plus.grad_accum(idx, 2, -eta * t * fwd.mu[i], u_theta);
    }
  }

  // d L / d lambda_j = c_j * <grad s_theta(x_j)|theta_s, u_theta>, then back
  // through the lambda network.
  LambdaGrad gxi;
  gxi.resize_like(m.lam.num_users, m.lam.num_items, m.lam.embed, m.lam.hidden);
  for (size_t j = 0; j < b.lower.size(); ++j) {
    const Event& ev = b.lower[j];
    ctx.fs.active(ev.user, ev.item, idx);
    double dlam = fwd.c[j] * m.imp.grad_dot(idx, 2, u_theta);
    if (dlam != 0.0) m.lam.backward(ev.user, ev.item, fwd.tapes[j], dlam, gxi);
  }
  return gxi;
}

// ---- public entry points -----------------------------------------------------

Models init_models(const InteractionDataset& ds, const TrainConfig& cfg) {
  FeatureSpace fs{ds.num_users, ds.num_items};
  Rng root(cfg.seed);
  Models m{
      FmModel::init(fs.num_features(), cfg.rank, cfg.init_scale, root.split("init-cvr")),
      FmModel::init(fs.num_features(), cfg.rank, cfg.init_scale, root.split("init-ctr")),
      FmModel::init(fs.num_features(), cfg.rank, cfg.init_scale, root.split("init-imp")),
      LambdaNet::init(ds.num_users, ds.num_items, 8, 16, cfg.init_scale, root.split("init-lam"))};
  return m;
}

std::vector<double> score_rows(const FmModel& cvr, const FeatureSpace& fs,
                               const std::vector<Interaction>& rows) {
  std::vector<double> out(rows.size());
  int idx[2];
  for (size_t k = 0; k < rows.size(); ++k) {
    fs.active(rows[k].user, rows[k].item, idx);
    out[k] = cvr.score(idx, 2);
  }
  return out;
}

namespace {

double validation_metric(const Ctx& ctx, const Models& m) {
  const auto& val = ctx.ds->validation;
  if (val.empty()) throw std::runtime_error("training requires a validation split");
  std::vector<ScoredRow> rows(val.size());
  int idx[2];
  for (size_t k = 0; k < val.size(); ++k) {
    ctx.fs.active(val[k].user, val[k].item, idx);
    rows[k] = ScoredRow{val[k].user, val[k].item, val[k].label, m.cvr.score(idx, 2)};
  }
  const std::string& metric = ctx.cfg->eval_metric;
  if (metric == "auc") {
    try {
      return auc(rows);
    } catch (const std::runtime_error&) {
      return -log_loss(rows);  // single-class validation labels
    }
  }
  if (metric.rfind("dcg@", 0) == 0) {
    int k = std::stoi(metric.substr(4));
    MetricRequest req;
    req.dcg_k = {k};
    req.recall_k = {};
    req.with_auc = false;
    req.with_logloss = false;
    return evaluate_rows(rows, req).at(metric);
  }
  throw std::invalid_argument("unknown eval_metric: " + metric);
}

TrainOutput run_training(const InteractionDataset& ds, const FmModel* fixed_prop,
                         const TrainConfig& cfg, bool trilevel) {
  if (ds.train.empty()) throw std::invalid_argument("training split is empty");
  Ctx ctx = make_ctx(ds, fixed_prop, cfg);
  Models m = init_models(ds, cfg);
  Adam opt_main(cfg.adam);
  AdamConfig lam_cfg = cfg.adam;
  lam_cfg.lr = cfg.lr_lambda;
  Adam opt_lam(lam_cfg);

  TrainOutput out;
  out.models = m;
  out.final_adam = opt_main;
  int patience_left = cfg.patience;
  size_t steps = (ds.train.size() + size_t(cfg.batch_clicked) - 1) / size_t(cfg.batch_clicked);
  int T = std::max(1, cfg.inner_T);
  bool uses_theta = kind_uses_imputation(cfg.kind);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<uint32_t> perm(ds.train.size());
    std::iota(perm.begin(), perm.end(), 0u);
    {
      Rng r = ctx.root.split("batch-clicked").split(uint64_t(epoch));
      r.shuffle(perm);
    }
    std::vector<uint32_t> unclicked_perm;
    if (cfg.sample_ratio < 0) {
      unclicked_perm = ctx.unclicked_cells;
      Rng r = ctx.root.split("batch-unclicked-all").split(uint64_t(epoch));
      r.shuffle(unclicked_perm);
    }

    double imp_loss_sum = 0.0, main_loss_sum = 0.0, lambda_sum = 0.0;
    size_t imp_steps = 0, main_steps = 0, lambda_count = 0;

    for (size_t step = 0; step < steps;) {
      size_t block = std::min<size_t>(size_t(T), steps - step);
      if (trilevel && !cfg.freeze_xi) {
        Rng lower_rng = ctx.root.split("pseudo-lower").split(uint64_t(epoch)).split(step);
        Rng upper_rng = ctx.root.split("pseudo-upper").split(uint64_t(epoch)).split(step);
        Rng mixneg_rng = ctx.root.split("pseudo-neg").split(uint64_t(epoch)).split(step);
        TriBatches pb;
        size_t bsz = std::min<size_t>(size_t(cfg.batch_clicked), ds.train.size());
        pb.lower = sample_clicked_with_replacement(ctx, lower_rng, bsz);
        pb.upper = sample_clicked_with_replacement(ctx, upper_rng, bsz);
        pb.mixed = pb.lower;
        if (cfg.sample_ratio > 0)
          append_negatives(ctx, mixneg_rng, size_t(cfg.sample_ratio) * pb.lower.size(), pb.mixed);
        LambdaGrad gxi = hypergradient_xi(m, fixed_prop, pb, cfg, nullptr);
        opt_lam.step("lam.user_emb", m.lam.user_emb, gxi.user_emb, cfg.l2);
        opt_lam.step("lam.item_emb", m.lam.item_emb, gxi.item_emb, cfg.l2);
        opt_lam.step("lam.w1", m.lam.w1, gxi.w1, cfg.l2);
        opt_lam.step("lam.b1", m.lam.b1, gxi.b1);
        opt_lam.step("lam.w2", m.lam.w2, gxi.w2, cfg.l2);
        opt_lam.step_scalar("lam.b2", m.lam.b2, gxi.b2);
      }

      if (uses_theta) {
        for (size_t t = 0; t < block; ++t) {
          std::vector<Event> clicked = slice_clicked(ctx, perm, step + t);
          imp_loss_sum += theta_step(ctx, m, opt_main, clicked, &lambda_sum, &lambda_count);
          ++imp_steps;
        }
      }
      for (size_t t = 0; t < block; ++t) {
        std::vector<Event> clicked = slice_clicked(ctx, perm, step + t);
        std::vector<Event> batch =
            cfg.kind == EstimatorKind::naive
                ? clicked
                : mixed_batch(ctx, clicked, unclicked_perm, step + t, steps, epoch);
        main_loss_sum += main_step(ctx, m, opt_main, batch);
        ++main_steps;
      }
      step += block;
    }

    EpochLog log;
    log.epoch = epoch;
    log.imp_loss = imp_steps ? imp_loss_sum / double(imp_steps) : 0.0;
    log.main_loss = main_steps ? main_loss_sum / double(main_steps) : 0.0;
    log.mean_lambda = lambda_count ? lambda_sum / double(lambda_count) : 0.0;
    log.val_metric = validation_metric(ctx, m);
    if (out.best_epoch < 0 || log.val_metric > out.best_val) {
      out.best_val = log.val_metric;
      out.best_epoch = epoch;
      out.models = m;
      out.final_adam = opt_main;
      patience_left = cfg.patience;
      log.improved = true;
    } else if (--patience_left <= 0) {
      out.log.push_back(log);
      break;
    }
    out.log.push_back(log);
  }
  out.final_models = m;
  return out;
}

}  // namespace

TrainOutput joint_learn(const InteractionDataset& ds, const FmModel* fixed_prop,
                        const TrainConfig& cfg) {
  if (cfg.kind == EstimatorKind::drmse_trilevel)
    throw std::invalid_argument("joint_learn does not run the tri-level kind; "
                                "use trilevel_train");
  return run_training(ds, fixed_prop, cfg, false);
}

TrainOutput trilevel_train(const InteractionDataset& ds, const FmModel* fixed_prop,
                           const TrainConfig& cfg) {
  if (cfg.kind != EstimatorKind::drmse_trilevel)
    throw std::invalid_argument("trilevel_train requires kind = drmse-trilevel");
  return run_training(ds, fixed_prop, cfg, true);
}

FmModel pretrain_propensity(const InteractionDataset& ds, const PropensityConfig& cfg) {
  FeatureSpace fs{ds.num_users, ds.num_items};
  std::unordered_set<uint64_t> clicked;
  for (const auto& t : ds.train) clicked.insert(uint64_t(t.user) * uint64_t(ds.num_items) + uint64_t(t.item));
  for (const auto& t : ds.validation)
    clicked.insert(uint64_t(t.user) * uint64_t(ds.num_items) + uint64_t(t.item));

  FmModel fm = FmModel::init(fs.num_features(), cfg.rank, cfg.init_scale,
                             Rng(cfg.seed).split("init-prop"));
  size_t cells = size_t(ds.num_users) * size_t(ds.num_items);
  std::vector<uint32_t> order(cells);
  std::iota(order.begin(), order.end(), 0u);
  Rng epochs_rng = Rng(cfg.seed).split("prop-epochs");

  int idx[2];
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng r = epochs_rng.split(uint64_t(epoch));
    r.shuffle(order);
    for (uint32_t c : order) {
      int u = int(c / uint32_t(ds.num_items));
      int i = int(c % uint32_t(ds.num_items));
      fs.active(u, i, idx);
      double s = fm.score(idx, 2);
      double y = clicked.count(uint64_t(c)) ? 1.0 : 0.0;
      double err = sigmoid(s) - y;
      if (!std::isfinite(err))
        throw std::runtime_error("propensity pretraining diverged; reduce the learning rate");
      // Manual sparse SGD update: bias, two linear weights, two factor rows.
      fm.bias -= cfg.lr * err;
      for (int a = 0; a < 2; ++a)
        fm.linear[size_t(idx[a])] -= cfg.lr * (err + cfg.l2 * fm.linear[size_t(idx[a])]);
      for (int f = 0; f < fm.rank; ++f) {
        size_t o0 = size_t(idx[0]) * size_t(fm.rank) + size_t(f);
        size_t o1 = size_t(idx[1]) * size_t(fm.rank) + size_t(f);
        double v0 = fm.factors[o0], v1 = fm.factors[o1];
        fm.factors[o0] -= cfg.lr * (err * v1 + cfg.l2 * v0);
        fm.factors[o1] -= cfg.lr * (err * v0 + cfg.l2 * v1);
      }
    }
  }
  return fm;
}

Checkpoint TrainOutput::to_checkpoint(const TrainConfig& cfg, const Adam& adam_state) const {
  Checkpoint ck;
  ck.seed = cfg.seed;
  ck.hyper = {{"kind", to_string(cfg.kind)},
              {"rank", cfg.rank},
              {"l2", cfg.l2},
              {"lr", cfg.adam.lr},
              {"num_users", models.lam.num_users},
              {"num_items", models.lam.num_items},
              {"best_epoch", best_epoch}};
  auto add_fm = [&](const std::string& name, const FmModel& fm) {
    ck.add(name + ".bias", {fm.bias});
    ck.add(name + ".linear", fm.linear);
    ck.add(name + ".factors", fm.factors);
  };
  add_fm("cvr", models.cvr);
  add_fm("ctr", models.ctr);
  add_fm("imp", models.imp);
  ck.add("lam.user_emb", models.lam.user_emb);
  ck.add("lam.item_emb", models.lam.item_emb);
  ck.add("lam.w1", models.lam.w1);
  ck.add("lam.b1", models.lam.b1);
  ck.add("lam.w2", models.lam.w2);
  ck.add("lam.b2", {models.lam.b2});
  for (const auto& [name, st] : adam_state.states()) {
    ck.add("opt." + name + ".m", st.m);
    ck.add("opt." + name + ".v", st.v);
    ck.add("opt." + name + ".t", {double(st.t)});
  }
  return ck;
}

}  // namespace drcvr
