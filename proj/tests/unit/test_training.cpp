#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "drcvr/rng.hpp"
#include "drcvr/training.hpp"

using namespace drcvr;

namespace {

InteractionDataset toy_dataset(uint64_t seed, int users = 12, int items = 12) {
  Rng r = Rng(seed).split("toy-ds");
  InteractionDataset ds;
  ds.num_users = users;
  ds.num_items = items;
  ds.seed = seed;
  for (int u = 0; u < users; ++u)
    for (int i = 0; i < items; ++i) {
      if (!r.next_bernoulli(0.35)) continue;
      int label = r.next_bernoulli((u + i) % 2 ? 0.8 : 0.2) ? 1 : 0;
      if (int(ds.validation.size()) < 8 && u >= users - 2)
        ds.validation.push_back({u, i, int(ds.validation.size()) % 2});
      else
        ds.train.push_back({u, i, label});
    }
  return ds;
}

TrainConfig fast_config(EstimatorKind kind, uint64_t seed) {
  TrainConfig tc;
  tc.kind = kind;
  tc.rank = 4;
  tc.init_scale = 0.05;
  tc.adam.lr = 0.05;
  tc.batch_clicked = 16;
  tc.sample_ratio = 2;
  tc.epochs = 3;
  tc.patience = 10;
  tc.seed = seed;
  return tc;
}

FmModel flat_propensity(int num_features) {
  // All-zero FM scores sigmoid(0) = 0.5 for every pair.
  FmModel m;
  m.num_features = num_features;
  m.rank = 0;
  m.linear.assign(size_t(num_features), 0.0);
  return m;
}

std::string tmp_file(const char* tag) {
  return "/tmp/drcvr_train_" + std::to_string(::getpid()) + "_" + tag + ".ckpt";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("estimator names round-trip and reject junk") {
  for (const char* name :
       {"naive", "eib", "ips", "drjl", "mrdr", "drbias", "drmse", "drmse-trilevel"}) {
    CHECK(to_string(estimator_kind_from_string(name)) == name);
  }
  CHECK_THROWS_AS(estimator_kind_from_string("snips"), std::invalid_argument);
  CHECK(kind_uses_propensity(EstimatorKind::naive) == false);
  CHECK(kind_uses_propensity(EstimatorKind::eib) == false);
  CHECK(kind_uses_propensity(EstimatorKind::ips) == true);
  CHECK(kind_uses_propensity(EstimatorKind::drmse_trilevel) == true);
  CHECK(kind_uses_imputation(EstimatorKind::ips) == false);
  CHECK(kind_uses_imputation(EstimatorKind::naive) == false);
  CHECK(kind_uses_imputation(EstimatorKind::eib) == true);
  CHECK(kind_uses_imputation(EstimatorKind::drjl) == true);
}

TEST_CASE("model initialization is estimator independent and lambda starts at half") {
  InteractionDataset ds = toy_dataset(1);
  TrainConfig a = fast_config(EstimatorKind::naive, 5);
  TrainConfig b = fast_config(EstimatorKind::drmse_trilevel, 5);
  Models ma = init_models(ds, a);
  Models mb = init_models(ds, b);
  CHECK(ma.cvr.factors == mb.cvr.factors);
  CHECK(ma.ctr.factors == mb.ctr.factors);
  CHECK(ma.imp.factors == mb.imp.factors);
  CHECK(ma.lam.user_emb == mb.lam.user_emb);
  CHECK(ma.lam.forward(0, 0) == 0.5);
  // Different seeds give different factors.
  TrainConfig c = fast_config(EstimatorKind::naive, 6);
  CHECK(init_models(ds, c).cvr.factors != ma.cvr.factors);
}

TEST_CASE("score_rows matches direct FM evaluation") {
  InteractionDataset ds = toy_dataset(2);
  TrainConfig tc = fast_config(EstimatorKind::naive, 3);
  Models m = init_models(ds, tc);
  FeatureSpace fs{ds.num_users, ds.num_items};
  std::vector<Interaction> rows = {{0, 1, 0}, {3, 7, 1}, {11, 0, 0}};
  std::vector<double> s = score_rows(m.cvr, fs, rows);
  REQUIRE(s.size() == 3);
  for (size_t k = 0; k < rows.size(); ++k) {
    int idx[2];
    fs.active(rows[k].user, rows[k].item, idx);
    CHECK(s[k] == m.cvr.score(idx, 2));
  }
}

TEST_CASE("propensity pretraining fits click frequency and validates lr") {
  InteractionDataset ds = toy_dataset(3, 16, 16);
  PropensityConfig pc;
  pc.rank = 4;
  pc.epochs = 8;
  pc.seed = 1;
  FmModel prop = pretrain_propensity(ds, pc);
  CHECK(prop.num_features == ds.num_users + ds.num_items);
  // Mean predicted click probability should be near the empirical click rate.
  FeatureSpace fs{ds.num_users, ds.num_items};
  double mean = 0.0;
  for (int u = 0; u < ds.num_users; ++u)
    for (int i = 0; i < ds.num_items; ++i) {
      int idx[2];
      fs.active(u, i, idx);
      mean += sigmoid(prop.score(idx, 2));
    }
  mean /= double(ds.num_users) * double(ds.num_items);
  double clicks = double(ds.train.size() + ds.validation.size());
  double rate = clicks / (double(ds.num_users) * double(ds.num_items));
  CHECK(std::abs(mean - rate) < 0.1);

  PropensityConfig wild = pc;
  wild.lr = 50.0;
  CHECK_THROWS_AS(pretrain_propensity(ds, wild), std::runtime_error);
}

TEST_CASE("propensity-using kinds demand a propensity model") {
  InteractionDataset ds = toy_dataset(4);
  TrainConfig tc = fast_config(EstimatorKind::ips, 1);
  CHECK_THROWS_AS(joint_learn(ds, nullptr, tc), std::invalid_argument);
  tc.propensity_joint = true;  // live CTR model replaces the frozen one
  CHECK_NOTHROW(joint_learn(ds, nullptr, tc));
}

TEST_CASE("trilevel entry point rejects plain kinds and vice versa") {
  InteractionDataset ds = toy_dataset(5);
  FmModel prop = flat_propensity(ds.num_users + ds.num_items);
  TrainConfig tc = fast_config(EstimatorKind::drmse, 1);
  CHECK_THROWS_AS(trilevel_train(ds, &prop, tc), std::invalid_argument);
  TrainConfig tri = fast_config(EstimatorKind::drmse_trilevel, 1);
  CHECK_THROWS_AS(joint_learn(ds, &prop, tri), std::invalid_argument);
}

TEST_CASE("training is deterministic: same config, same checkpoint bytes") {
  InteractionDataset ds = toy_dataset(6);
  FmModel prop = flat_propensity(ds.num_users + ds.num_items);
  TrainConfig tc = fast_config(EstimatorKind::drmse_trilevel, 9);
  tc.epochs = 2;
  TrainOutput a = trilevel_train(ds, &prop, tc);
  TrainOutput b = trilevel_train(ds, &prop, tc);
  std::string pa = tmp_file("det_a"), pb = tmp_file("det_b");
  save_checkpoint(a.to_checkpoint(tc, a.final_adam), pa);
  save_checkpoint(b.to_checkpoint(tc, b.final_adam), pb);
  CHECK(slurp(pa) == slurp(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("frozen xi reproduces fixed-lambda joint training exactly") {
  // With xi frozen at its init (lambda = 1/2 everywhere), the tri-level outer
  // loop must not disturb the real-update trajectory: parameters match the
  // plain joint run with fixed_lambda = 1/2 to the last bit.
  InteractionDataset ds = toy_dataset(7);
  FmModel prop = flat_propensity(ds.num_users + ds.num_items);

  TrainConfig joint_cfg = fast_config(EstimatorKind::drmse, 11);
  joint_cfg.fixed_lambda = 0.5;
  TrainOutput joint = joint_learn(ds, &prop, joint_cfg);

  TrainConfig tri_cfg = fast_config(EstimatorKind::drmse_trilevel, 11);
  tri_cfg.freeze_xi = true;
  TrainOutput tri = trilevel_train(ds, &prop, tri_cfg);

  CHECK(joint.models.cvr.bias == tri.models.cvr.bias);
  CHECK(joint.models.cvr.linear == tri.models.cvr.linear);
  CHECK(joint.models.cvr.factors == tri.models.cvr.factors);
  CHECK(joint.models.ctr.factors == tri.models.ctr.factors);
  CHECK(joint.models.imp.factors == tri.models.imp.factors);
  CHECK(joint.best_epoch == tri.best_epoch);
  CHECK(joint.best_val == tri.best_val);
}

TEST_CASE("hypergradient vanishes when every propensity is one half") {
  // At p_hat = 1/2 the two branch weights coincide, so lambda cannot affect
  // the unrolled objective: the exact hypergradient must be identically zero.
  InteractionDataset ds = toy_dataset(8);
  FmModel prop = flat_propensity(ds.num_users + ds.num_items);
  TrainConfig tc = fast_config(EstimatorKind::drmse_trilevel, 13);
  tc.pseudo_lr = 0.05;
  Models m = init_models(ds, tc);
  // Give the lambda net nonzero output weights so this is not trivially zero.
  Rng rw = Rng(99).split("w2");
  for (auto& v : m.lam.w2) v = 0.3 * rw.next_gaussian();
  m.lam.b2 = 0.3 * rw.next_gaussian();

  TriBatches b;
  for (size_t k = 0; k < 8 && k < ds.train.size(); ++k)
    b.lower.push_back({ds.train[k].user, ds.train[k].item, 1, ds.train[k].label});
  b.upper = b.lower;
  b.mixed = b.lower;
  b.mixed.push_back({0, 0, 0, 0});

  double upper = 0.0;
  LambdaGrad g = hypergradient_xi(m, &prop, b, tc, &upper);
  CHECK(std::isfinite(upper));
  double norm = std::abs(g.b2);
  for (const auto* vec : {&g.user_emb, &g.item_emb, &g.w1, &g.b1, &g.w2})
    for (double v : *vec) norm += std::abs(v);
  CHECK(norm == 0.0);
}

TEST_CASE("hypergradient_xi reports the same value unrolled_upper_loss computes") {
  InteractionDataset ds = toy_dataset(9);
  PropensityConfig pc;
  pc.rank = 3;
  pc.epochs = 3;
  pc.seed = 2;
  FmModel prop = pretrain_propensity(ds, pc);
  TrainConfig tc = fast_config(EstimatorKind::drmse_trilevel, 17);
  tc.pseudo_lr = 0.05;
  Models m = init_models(ds, tc);
  TriBatches b;
  for (size_t k = 0; k < 10 && k < ds.train.size(); ++k)
    b.lower.push_back({ds.train[k].user, ds.train[k].item, 1, ds.train[k].label});
  b.upper = b.lower;
  b.mixed = b.lower;
  double upper = 0.0;
  hypergradient_xi(m, &prop, b, tc, &upper);
  CHECK(upper == doctest::Approx(unrolled_upper_loss(m, &prop, b, tc)).epsilon(1e-12));
}

TEST_CASE("early stopping keeps the best epoch and restores its snapshot") {
  InteractionDataset ds = toy_dataset(10);
  TrainConfig tc = fast_config(EstimatorKind::naive, 19);
  tc.epochs = 6;
  tc.patience = 2;
  TrainOutput out = joint_learn(ds, nullptr, tc);
  REQUIRE(!out.log.empty());
  CHECK(out.log.size() <= 6);
  CHECK(out.best_epoch >= 0);  // 0-based epoch index
  double best = -1e300;
  for (const auto& el : out.log) best = std::max(best, el.val_metric);
  CHECK(out.best_val == doctest::Approx(best).epsilon(1e-14));
  CHECK(out.log[size_t(out.best_epoch)].val_metric == doctest::Approx(out.best_val));
  CHECK(out.log[size_t(out.best_epoch)].improved);
  // Training stops at most `patience` epochs after the best one.
  CHECK(int(out.log.size()) - 1 - out.best_epoch <= 2);
}

TEST_CASE("ranking validation metric is accepted") {
  InteractionDataset ds = toy_dataset(11);
  TrainConfig tc = fast_config(EstimatorKind::eib, 23);
  tc.eval_metric = "dcg@2";
  tc.epochs = 2;
  TrainOutput out = joint_learn(ds, nullptr, tc);
  CHECK(out.best_val >= 0.0);
  TrainConfig bad = tc;
  bad.eval_metric = "ndcg@2";
  CHECK_THROWS_AS(joint_learn(ds, nullptr, bad), std::invalid_argument);
}

TEST_CASE("checkpoints carry every model block plus optimizer state") {
  InteractionDataset ds = toy_dataset(12);
  FmModel prop = flat_propensity(ds.num_users + ds.num_items);
  TrainConfig tc = fast_config(EstimatorKind::drmse_trilevel, 29);
  tc.epochs = 2;
  TrainOutput out = trilevel_train(ds, &prop, tc);
  Checkpoint ck = out.to_checkpoint(tc, out.final_adam);
  for (const char* name : {"cvr.bias", "cvr.linear", "cvr.factors", "ctr.linear", "imp.linear",
                           "lam.user_emb", "lam.item_emb", "lam.w1", "lam.b1", "lam.w2", "lam.b2"})
    CHECK(ck.find(name) != nullptr);
  CHECK(ck.hyper.at("kind") == "drmse-trilevel");
  CHECK(ck.hyper.at("num_users") == ds.num_users);
  CHECK(ck.hyper.at("best_epoch") == out.best_epoch);
  bool has_opt = false;
  for (const auto& blk : ck.blocks)
    if (blk.name.rfind("opt.", 0) == 0) has_opt = true;
  CHECK(has_opt);
  CHECK(ck.find("cvr.factors")->values == out.models.cvr.factors);
}

TEST_CASE("every estimator kind trains end to end on the toy dataset") {
  InteractionDataset ds = toy_dataset(13);
  FmModel prop = flat_propensity(ds.num_users + ds.num_items);
  for (EstimatorKind kind : {EstimatorKind::naive, EstimatorKind::eib, EstimatorKind::ips,
                             EstimatorKind::drjl, EstimatorKind::mrdr, EstimatorKind::drbias,
                             EstimatorKind::drmse}) {
    TrainConfig tc = fast_config(kind, 31);
    tc.epochs = 2;
    const FmModel* p = kind_uses_propensity(kind) ? &prop : nullptr;
    TrainOutput out = joint_learn(ds, p, tc);
    CHECK(!out.log.empty());
    for (const auto& el : out.log) {
      CHECK(std::isfinite(el.main_loss));
      CHECK(std::isfinite(el.val_metric));
    }
  }
  TrainConfig tri = fast_config(EstimatorKind::drmse_trilevel, 31);
  tri.epochs = 2;
  TrainOutput out = trilevel_train(ds, &prop, tri);
  CHECK(!out.log.empty());
  // The error head variant also runs.
  TrainConfig err = fast_config(EstimatorKind::drjl, 31);
  err.head = ImputationHead::error;
  err.epochs = 2;
  CHECK_NOTHROW(joint_learn(ds, &prop, err));
}

TEST_CASE("mean lambda is logged and moves only when xi is trainable") {
  InteractionDataset ds = toy_dataset(14);
  // A flat propensity model scores every cell at exactly 1/2, where the two
  // weight branches coincide and the hypergradient vanishes identically, so
  // lambda must stay put even with xi live.
  FmModel flat = flat_propensity(ds.num_users + ds.num_items);
  TrainConfig frozen = fast_config(EstimatorKind::drmse_trilevel, 37);
  frozen.freeze_xi = true;
  frozen.epochs = 2;
  TrainOutput f = trilevel_train(ds, &flat, frozen);
  for (const auto& el : f.log) CHECK(el.mean_lambda == 0.5);

  TrainConfig stuck = fast_config(EstimatorKind::drmse_trilevel, 37);
  stuck.epochs = 2;
  TrainOutput s = trilevel_train(ds, &flat, stuck);
  for (const auto& el : s.log) CHECK(el.mean_lambda == 0.5);

  // Varied propensities separate the branches; now the xi updates bite.
  PropensityConfig pc;
  pc.rank = 4;
  pc.epochs = 3;
  pc.seed = 37;
  FmModel prop = pretrain_propensity(ds, pc);
  TrainConfig live = fast_config(EstimatorKind::drmse_trilevel, 37);
  live.epochs = 3;
  live.lr_lambda = 0.05;
  live.pseudo_lr = 0.05;
  TrainOutput l = trilevel_train(ds, &prop, live);
  bool moved = false;
  for (const auto& el : l.log)
    if (el.mean_lambda != 0.5) moved = true;
  CHECK(moved);
}
