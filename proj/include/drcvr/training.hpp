#pragma once
// Joint and tri-level training of the conversion model.
//
// Models: phi (CVR FM), zeta (CTR FM), theta (imputation FM), xi (per-sample
// lambda network). Propensities default to a frozen pretrained CTR FM passed
// clipped through clip_propensity; config can switch to the live zeta
// (joint mode), in which case gradients flow through the propensity too.
//
// The imputation head:
//   label (default): g = sigmoid(FM_theta), e_hat = CE(g, r_hat_phi); e_hat
//     couples theta and phi, so unclicked events carry imputation signal into
//     the CVR model.
//   error: e_hat = softplus(FM_theta), independent of phi; kept for the pure
//     estimator view (with this head the CVR gradient reduces to IPS).
//
// joint_learn alternates per step: (a) theta on a clicked batch against the
// kind's imputation loss, (b) phi (and zeta for DR kinds) on a mixed batch
// against loss_ctcvr / |batch|. trilevel_train prepends, per outer step, the
// one-step-unrolled pseudo updates (plain SGD with pseudo_lr)
//   theta+ (lambda)  on a clicked lower batch,
//   phi+, zeta+      on a mixed batch, both from the pre-step parameters,
// evaluates the DR loss of (phi+, zeta+, theta+) on a clicked upper batch,
// and updates xi with the exact hypergradient of that composition; then run
// T real theta steps (with refreshed lambda) and T real zeta+phi steps with
// theta frozen. Pseudo batches draw from dedicated RNG streams, so freezing
// xi makes the real-step trajectory bitwise equal to joint_learn.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "drcvr/checkpoint.hpp"
#include "drcvr/data.hpp"
#include "drcvr/estimators.hpp"
#include "drcvr/fm.hpp"
#include "drcvr/lambda_net.hpp"
#include "drcvr/optimizer.hpp"

namespace drcvr {

enum class EstimatorKind { naive, eib, ips, drjl, mrdr, drbias, drmse, drmse_trilevel };

EstimatorKind estimator_kind_from_string(const std::string& s);
std::string to_string(EstimatorKind k);
bool kind_uses_imputation(EstimatorKind k);
bool kind_uses_propensity(EstimatorKind k);

enum class ImputationHead { label, error };

struct TrainConfig {
  EstimatorKind kind = EstimatorKind::drmse_trilevel;
  ImputationHead head = ImputationHead::label;
  int rank = 16;
  double init_scale = 0.01;
  double l2 = 1e-5;
  AdamConfig adam;            // real updates for phi/zeta/theta
  double lr_lambda = 1e-3;    // real xi update (Adam with this lr)
  double pseudo_lr = 1e-3;    // eta of the plain-SGD pseudo updates
  int batch_clicked = 512;
  int sample_ratio = 4;       // unclicked per clicked in mixed batches; -1 = all
  int epochs = 30;
  int patience = 5;
  int inner_T = 1;
  double fixed_lambda = 0.5;  // kind == drmse
  bool freeze_xi = false;
  bool propensity_joint = false;
  double clip_floor = kPropensityFloor;
  bool imp_loss_mean = false;
  std::string eval_metric = "auc";  // "auc" or "dcg@K"
  uint64_t seed = 0;
};

struct Event {
  int user = 0;
  int item = 0;
  int o = 0;
  int r = 0;
};

struct Models {
  FmModel cvr, ctr, imp;
  LambdaNet lam;
};

struct EpochLog {
  int epoch = 0;
  double imp_loss = 0.0;
  double main_loss = 0.0;
  double val_metric = 0.0;
  double mean_lambda = 0.0;
  bool improved = false;
};

struct TrainOutput {
  Models models;        // best-validation snapshot
  Models final_models;  // state when the loop stopped (gradient checks)
  int best_epoch = -1;
  double best_val = 0.0;
  std::vector<EpochLog> log;
  Checkpoint to_checkpoint(const TrainConfig& cfg, const Adam& adam_state) const;
  Adam final_adam;  // optimizer state at the best snapshot
};

// Frozen-propensity pretraining: logistic FM on the click indicator over all
// cells (clicked rows from train+validation are the positives).
struct PropensityConfig {
  int rank = 16;
  int epochs = 5;
  double lr = 0.05;
  double l2 = 1e-5;
  double init_scale = 0.01;
  uint64_t seed = 0;
};
FmModel pretrain_propensity(const InteractionDataset& ds, const PropensityConfig& cfg);

// fixed_prop may be null for kinds that do not use propensities and must be
// non-null otherwise unless cfg.propensity_joint is set.
TrainOutput joint_learn(const InteractionDataset& ds, const FmModel* fixed_prop,
                        const TrainConfig& cfg);
TrainOutput trilevel_train(const InteractionDataset& ds, const FmModel* fixed_prop,
                           const TrainConfig& cfg);

// Pseudo-update probe used by the trainer and by finite-difference tests.
struct TriBatches {
  std::vector<Event> lower;  // clicked, drives theta+
  std::vector<Event> upper;  // clicked, upper DR loss
  std::vector<Event> mixed;  // clicked + unclicked, drives phi+/zeta+
};

// Value of the one-step-unrolled upper DR loss as a function of xi (all other
// parameters held at `models`).
double unrolled_upper_loss(const Models& models, const FmModel* fixed_prop,
                           const TriBatches& batches, const TrainConfig& cfg);

// Exact gradient of unrolled_upper_loss with respect to every xi parameter.
LambdaGrad hypergradient_xi(const Models& models, const FmModel* fixed_prop,
                            const TriBatches& batches, const TrainConfig& cfg,
                            double* upper_value = nullptr);

// Model scores for evaluation: raw CVR logits for (user, item) rows.
std::vector<double> score_rows(const FmModel& cvr, const FeatureSpace& fs,
                               const std::vector<Interaction>& rows);

Models init_models(const InteractionDataset& ds, const TrainConfig& cfg);

}  // namespace drcvr
