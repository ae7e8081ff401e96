#include "drcvr/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "drcvr/estimators.hpp"
#include "drcvr/evaluation.hpp"
#include "drcvr/fixtures.hpp"
#include "drcvr/rng.hpp"
#include "drcvr/synth.hpp"
#include "drcvr/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace drcvr {

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed for " + path);
}

bool numeric(const json& v) { return v.is_number(); }

// Recursive merge of user values over the defaults; every user key must
// already exist in the defaults with a compatible type.
void merge_validate(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object())
    throw std::invalid_argument("config section '" + (prefix.empty() ? "<root>" : prefix) +
                                "' must be an object");
  for (const auto& [k, v] : user.items()) {
    if (!base.contains(k)) throw std::invalid_argument("unknown config key: " + prefix + k);
    json& b = base[k];
    if (prefix == "sweep." && k == "grid") {
      b = v;  // open mapping of dotted paths -> value lists, validated below
      continue;
    }
    if (b.is_object()) {
      merge_validate(b, v, prefix + k + ".");
      continue;
    }
    bool ok = (numeric(b) && numeric(v)) || (b.is_string() && v.is_string()) ||
              (b.is_boolean() && v.is_boolean()) || (b.is_array() && v.is_array());
    if (!ok)
      throw std::invalid_argument("config key " + prefix + k + " has the wrong type (expected " +
                                  std::string(b.type_name()) + ")");
    b = v;
  }
}

const json* walk(const json& cfg, const std::string& dotted) {
  const json* cur = &cfg;
  size_t pos = 0;
  while (pos <= dotted.size()) {
    size_t dot = dotted.find('.', pos);
    std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return cur;
}

void check_range(const json& cfg) {
  std::string est = cfg["estimator"].get<std::string>();
  estimator_kind_from_string(est);  // throws on junk

  std::string head = cfg["train"]["head"].get<std::string>();
  if (head != "label" && head != "error")
    throw std::invalid_argument("train.head must be 'label' or 'error'");

  const json& seeds = cfg["seeds"];
  if (!seeds.is_array() || seeds.empty())
    throw std::invalid_argument("seeds must be a non-empty array");
  for (const auto& s : seeds)
    if (!s.is_number_integer() || s.get<int64_t>() < 0)
      throw std::invalid_argument("seeds must be non-negative integers");

  int ratio = cfg["train"]["sample_ratio"].get<int>();
  static const std::set<int> allowed = {-1, 0, 2, 4, 6, 8};
  if (!allowed.count(ratio))
    throw std::invalid_argument("train.sample_ratio must be one of 0,2,4,6,8 or -1 (= all)");

  if (cfg["train"]["batch_clicked"].get<int>() < 1 || cfg["train"]["epochs"].get<int>() < 1 ||
      cfg["train"]["inner_T"].get<int>() < 1 || cfg["train"]["patience"].get<int>() < 1)
    throw std::invalid_argument("train.batch_clicked/epochs/inner_T/patience must be >= 1");

  double lam = cfg["train"]["fixed_lambda"].get<double>();
  if (lam < 0.0 || lam > 1.0)
    throw std::invalid_argument("train.fixed_lambda must be in [0,1]");

  std::string dk = cfg["dataset"]["kind"].get<std::string>();
  if (dk != "coat" && dk != "dump")
    throw std::invalid_argument("dataset.kind must be 'coat' or 'dump'");

  std::string fx = cfg["fixture"]["name"].get<std::string>();
  if (fx != "coat" && fx != "ml100k")
    throw std::invalid_argument("fixture.name must be 'coat' or 'ml100k'");

  std::string bk = cfg["synth"]["base_kind"].get<std::string>();
  if (bk != "coat" && bk != "ml100k")
    throw std::invalid_argument("synth.base_kind must be 'coat' or 'ml100k'");
  for (const auto& r : cfg["synth"]["rho"])
    if (!r.is_number() || r.get<double>() <= 0.0)
      throw std::invalid_argument("synth.rho entries must be positive numbers");

  for (const char* key : {"dcg_k", "recall_k"})
    for (const auto& k : cfg["eval"][key])
      if (!k.is_number_integer() || k.get<int>() < 1)
        throw std::invalid_argument(std::string("eval.") + key + " entries must be >= 1");

  const json& grid = cfg["sweep"]["grid"];
  if (!grid.is_object()) throw std::invalid_argument("sweep.grid must be an object");
  for (const auto& [path, values] : grid.items()) {
    if (!values.is_array() || values.empty())
      throw std::invalid_argument("sweep.grid." + path + " must be a non-empty array");
    if (walk(cfg, path) == nullptr)
      throw std::invalid_argument("sweep.grid key does not name a config entry: " + path);
  }
}

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

FmModel fm_from_checkpoint(const Checkpoint& ck, const std::string& prefix) {
  const CheckpointBlock* bias = ck.find(prefix + ".bias");
  const CheckpointBlock* linear = ck.find(prefix + ".linear");
  const CheckpointBlock* factors = ck.find(prefix + ".factors");
  if (!bias || !linear || !factors || bias->values.size() != 1)
    throw std::runtime_error("checkpoint misses blocks for model '" + prefix + "'");
  FmModel m;
  m.num_features = int(linear->values.size());
  m.linear = linear->values;
  m.factors = factors->values;
  m.bias = bias->values[0];
  m.rank = m.num_features ? int(factors->values.size() / linear->values.size()) : 0;
  if (m.factors.size() != size_t(m.num_features) * size_t(m.rank))
    throw std::runtime_error("checkpoint factor block has inconsistent shape for '" + prefix + "'");
  return m;
}

}  // namespace

json default_config() {
  json j;
  j["dataset"] = {{"kind", "dump"}, {"path", ""}, {"val_fraction", 0.1}};
  j["estimator"] = "drmse-trilevel";
  j["seeds"] = json::array({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  j["out"] = "runs/out";
  j["train"] = {{"rank", 16},
                {"init_scale", 0.01},
                {"l2", 1e-5},
                {"lr", 0.01},
                {"beta1", 0.9},
                {"beta2", 0.999},
                {"eps", 1e-8},
                {"lr_lambda", 1e-3},
                {"pseudo_lr", 1e-3},
                {"batch_clicked", 512},
                {"sample_ratio", 4},
                {"epochs", 30},
                {"patience", 5},
                {"inner_T", 1},
                {"fixed_lambda", 0.5},
                {"head", "label"},
                {"freeze_xi", false},
                {"propensity_joint", false},
                {"clip_floor", kPropensityFloor},
                {"imp_loss_mean", false},
                {"eval_metric", "auc"}};
  j["propensity"] = {{"rank", 8}, {"epochs", 5}, {"lr", 0.05}, {"l2", 1e-5}, {"init_scale", 0.01}};
  j["synth"] = {{"base_kind", "ml100k"},
                {"base_path", ""},
                {"rho", json::array({1.0})},
                {"epsilon", 5.0},
                {"test_items_per_user", 50},
                {"val_fraction", 0.1},
                {"seed", 1},
                {"rating_rank", 8},
                {"rating_epochs", 30},
                {"rating_lr", 0.01},
                {"rating_l2", 0.02},
                {"ctr_rank", 8},
                {"ctr_epochs", 10},
                {"ctr_lr", 0.05},
                {"ctr_l2", 1e-4}};
  j["eval"] = {{"dcg_k", json::array({2, 4, 6})},
               {"recall_k", json::array({2, 4, 6})},
               {"classic_recall", false},
               {"auc", true},
               {"logloss", true},
               {"baseline_report", ""}};
  j["fixture"] = {{"name", "coat"}, {"seed", 1}};
  j["verify"] = {{"lemma1_instances", 200},
                 {"lemma1_max_pairs", 12},
                 {"tol", 1e-12},
                 {"dr_instances", 100},
                 {"coverage_trials", 10000},
                 {"coverage_eta", 0.1},
                 {"coverage_hypotheses", 4},
                 {"coverage_pairs", 8},
                 {"hoeffding_trials", 100000},
                 {"fd_outer_steps", 100},
                 {"seed", 1}};
  j["sweep"] = {{"grid", json::object()}, {"metric", "val"}};
  return j;
}

json resolve_config(const json& user_cfg) {
  json cfg = default_config();
  merge_validate(cfg, user_cfg, "");
  // A scalar rho is accepted and normalized to a one-element list.
  if (cfg["synth"]["rho"].is_number()) cfg["synth"]["rho"] = json::array({cfg["synth"]["rho"]});
  check_range(cfg);
  return cfg;
}

void apply_override(json& cfg, const std::string& dotted) {
  size_t eq = dotted.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("--set expects key.path=value, got: " + dotted);
  std::string path = dotted.substr(0, eq);
  std::string raw = dotted.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted strings

  json* cur = &cfg;
  size_t pos = 0;
  for (;;) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw std::invalid_argument("--set has an empty path segment: " + dotted);
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

std::string config_hash(const json& resolved) {
  std::string dump = resolved.dump();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

TrainConfig train_config_from(const json& cfg, uint64_t seed) {
  const json& t = cfg["train"];
  TrainConfig tc;
  tc.kind = estimator_kind_from_string(cfg["estimator"].get<std::string>());
  tc.head = t["head"].get<std::string>() == "label" ? ImputationHead::label : ImputationHead::error;
  tc.rank = t["rank"].get<int>();
  tc.init_scale = t["init_scale"].get<double>();
  tc.l2 = t["l2"].get<double>();
  tc.adam.lr = t["lr"].get<double>();
  tc.adam.beta1 = t["beta1"].get<double>();
  tc.adam.beta2 = t["beta2"].get<double>();
  tc.adam.eps = t["eps"].get<double>();
  tc.lr_lambda = t["lr_lambda"].get<double>();
  tc.pseudo_lr = t["pseudo_lr"].get<double>();
  tc.batch_clicked = t["batch_clicked"].get<int>();
  tc.sample_ratio = t["sample_ratio"].get<int>();
  tc.epochs = t["epochs"].get<int>();
  tc.patience = t["patience"].get<int>();
  tc.inner_T = t["inner_T"].get<int>();
  tc.fixed_lambda = t["fixed_lambda"].get<double>();
  tc.freeze_xi = t["freeze_xi"].get<bool>();
  tc.propensity_joint = t["propensity_joint"].get<bool>();
  tc.clip_floor = t["clip_floor"].get<double>();
  tc.imp_loss_mean = t["imp_loss_mean"].get<bool>();
  tc.eval_metric = t["eval_metric"].get<std::string>();
  tc.seed = seed;
  return tc;
}

PropensityConfig propensity_config_from(const json& cfg, uint64_t seed) {
  const json& p = cfg["propensity"];
  PropensityConfig pc;
  pc.rank = p["rank"].get<int>();
  pc.epochs = p["epochs"].get<int>();
  pc.lr = p["lr"].get<double>();
  pc.l2 = p["l2"].get<double>();
  pc.init_scale = p["init_scale"].get<double>();
  pc.seed = seed;
  return pc;
}

std::string resolve_data_path(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("dataset path is empty");
  if (fs::exists(path)) return path;
  const char* root = std::getenv("DRCVR_DATA_ROOT");
  if (root && *root && fs::path(path).is_relative()) {
    fs::path alt = fs::path(root) / path;
    if (fs::exists(alt)) return alt.string();
  }
  std::string msg = "dataset path not found: " + path;
  if (root && *root) msg += " (also tried " + (fs::path(root) / path).string() + ")";
  throw std::runtime_error(msg);
}

InteractionDataset load_dataset(const json& cfg, uint64_t seed) {
  std::string kind = cfg["dataset"]["kind"].get<std::string>();
  std::string path = cfg["dataset"]["path"].get<std::string>();
  if (kind == "coat") {
    std::string dir = resolve_data_path(path);
    RatingTable mnar = load_ratings_dense(dir + "/train.ascii");
    RatingTable mar = load_ratings_dense(dir + "/test.ascii");
    return build_real_dataset(mnar, mar, cfg["dataset"]["val_fraction"].get<double>(), seed);
  }
  return load_dataset_dump(resolve_data_path(path));
}

// ---- commands ----------------------------------------------------------------

CommandResult cmd_fixture(const json& cfg) {
  std::string out = cfg["out"].get<std::string>();
  std::string name = cfg["fixture"]["name"].get<std::string>();
  uint64_t seed = cfg["fixture"]["seed"].get<uint64_t>();
  ensure_dir(out);
  json files = json::array();
  if (name == "coat") {
    write_coat_like(out, seed);
    files = {out + "/train.ascii", out + "/test.ascii"};
  } else {
    write_ml100k_like(out + "/u.data", seed);
    files = {out + "/u.data"};
  }
  std::printf("fixture %s (seed %llu) -> %s\n", name.c_str(), (unsigned long long)seed,
              out.c_str());
  return {0, {{"files", files}}};
}

CommandResult cmd_synth(const json& cfg) {
  const json& s = cfg["synth"];
  std::string out = cfg["out"].get<std::string>();
  ensure_dir(out);
  write_json_file(out + "/config.resolved.json", cfg);

  RatingTable base;
  if (s["base_kind"].get<std::string>() == "ml100k") {
    base = load_ratings_tsv(resolve_data_path(s["base_path"].get<std::string>()));
  } else {
    base = load_ratings_dense(resolve_data_path(s["base_path"].get<std::string>()) +
                              "/train.ascii");
  }
  uint64_t seed = s["seed"].get<uint64_t>();

  MfFitConfig rmf;
  rmf.rank = s["rating_rank"].get<int>();
  rmf.epochs = s["rating_epochs"].get<int>();
  rmf.lr = s["rating_lr"].get<double>();
  rmf.l2 = s["rating_l2"].get<double>();
  rmf.seed = seed;
  std::vector<double> rmse;
  BiasedMf rating_mf = fit_rating_mf(base, rmf, &rmse);
  std::vector<double> r_hat = rating_mf.predict_full();

  std::vector<uint8_t> observed(size_t(base.num_users) * size_t(base.num_items), 0);
  for (const auto& t : base.triples)
    observed[size_t(t.user) * size_t(base.num_items) + size_t(t.item)] = 1;
  MfFitConfig cmf;
  cmf.rank = s["ctr_rank"].get<int>();
  cmf.epochs = s["ctr_epochs"].get<int>();
  cmf.lr = s["ctr_lr"].get<double>();
  cmf.l2 = s["ctr_l2"].get<double>();
  cmf.seed = seed + 1;
  BiasedMf click_mf = fit_logistic_mf(observed, base.num_users, base.num_items, cmf, nullptr);
  std::vector<double> o_hat = click_mf.predict_full();
  for (double& v : o_hat) v = sigmoid(v);

  std::string hash = config_hash(cfg);
  json meta;
  meta["config_hash"] = hash;
  meta["base"] = {{"users", base.num_users},
                  {"items", base.num_items},
                  {"ratings", base.triples.size()},
                  {"rating_rmse", rmse.empty() ? 0.0 : rmse.back()}};
  json per_rho = json::object();
  json dirs = json::array();
  for (const auto& rj : s["rho"]) {
    double rho = rj.get<double>();
    GroundTruthWorld world =
        make_world(r_hat, o_hat, base.num_users, base.num_items, rho, s["epsilon"].get<double>());
    SynthConfig sc;
    sc.rho = rho;
    sc.epsilon = s["epsilon"].get<double>();
    sc.test_items_per_user = s["test_items_per_user"].get<int>();
    sc.val_fraction = s["val_fraction"].get<double>();
    sc.seed = seed;
    InteractionDataset ds = sample_semisynthetic(world, sc);
    std::string dir = out + "/rho-" + format_g(rho);
    ensure_dir(dir);
    dump_dataset(ds, dir, hash);
    per_rho["rho-" + format_g(rho)] = {{"train", ds.train.size()},
                                       {"validation", ds.validation.size()},
                                       {"test", ds.test.size()},
                                       {"mean_p_ctr", world.mean_p_ctr()}};
    dirs.push_back(dir);
    std::printf("synth rho=%s: %zu train / %zu val / %zu test -> %s\n", format_g(rho).c_str(),
                ds.train.size(), ds.validation.size(), ds.test.size(), dir.c_str());
  }
  meta["datasets"] = per_rho;
  write_json_file(out + "/synth.meta.json", meta);
  return {0, {{"dirs", dirs}}};
}

CommandResult cmd_train(const json& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  std::string out = cfg["out"].get<std::string>();
  ensure_dir(out + "/checkpoints");
  write_json_file(out + "/config.resolved.json", cfg);

  EstimatorKind kind = estimator_kind_from_string(cfg["estimator"].get<std::string>());
  std::ofstream log(out + "/log.tsv", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + out + "/log.tsv");
  log << "seed\tepoch\timp_loss\tmain_loss\tval_metric\tmean_lambda\timproved\n";

  json per_seed = json::array();
  json failures = json::array();
  for (const auto& sj : cfg["seeds"]) {
    uint64_t seed = sj.get<uint64_t>();
    try {
      InteractionDataset ds = load_dataset(cfg, seed);
      TrainConfig tc = train_config_from(cfg, seed);
      FmModel prop;
      bool have_prop = false;
      if (kind_uses_propensity(kind) && !tc.propensity_joint) {
        prop = pretrain_propensity(ds, propensity_config_from(cfg, seed));
        have_prop = true;
        Checkpoint pck;
        pck.seed = seed;
        pck.hyper = {{"kind", "propensity"},
                     {"rank", prop.rank},
                     {"num_users", ds.num_users},
                     {"num_items", ds.num_items}};
        pck.add("prop.bias", {prop.bias});
        pck.add("prop.linear", prop.linear);
        pck.add("prop.factors", prop.factors);
        save_checkpoint(pck, out + "/checkpoints/prop_seed" + std::to_string(seed) + ".ckpt");
      }
      TrainOutput to = kind == EstimatorKind::drmse_trilevel
                           ? trilevel_train(ds, have_prop ? &prop : nullptr, tc)
                           : joint_learn(ds, have_prop ? &prop : nullptr, tc);
      save_checkpoint(to.to_checkpoint(tc, to.final_adam),
                      out + "/checkpoints/seed" + std::to_string(seed) + ".ckpt");
      char row[256];
      for (const EpochLog& el : to.log) {
        std::snprintf(row, sizeof row, "%llu\t%d\t%.17g\t%.17g\t%.17g\t%.17g\t%d\n",
                      (unsigned long long)seed, el.epoch, el.imp_loss, el.main_loss, el.val_metric,
                      el.mean_lambda, el.improved ? 1 : 0);
        log << row;
      }
      per_seed.push_back({{"seed", seed},
                          {"best_epoch", to.best_epoch},
                          {"best_val", to.best_val},
                          {"epochs_run", to.log.size()}});
      std::printf("train %s seed %llu: best epoch %d, val %s = %.6f (%zu epochs)\n",
                  to_string(kind).c_str(), (unsigned long long)seed, to.best_epoch,
                  cfg["train"]["eval_metric"].get<std::string>().c_str(), to.best_val,
                  to.log.size());
    } catch (const std::exception& e) {
      failures.push_back({{"seed", seed}, {"error", e.what()}});
      std::fprintf(stderr, "train seed %llu failed: %s\n", (unsigned long long)seed, e.what());
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json_file(out + "/run.meta.json",
                  {{"command", "train"}, {"wall_clock_sec", secs}, {"failures", failures}});
  return {failures.empty() ? 0 : 2,
          {{"seeds", per_seed}, {"failures", failures}, {"out", out}}};
}

CommandResult cmd_eval(const json& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  std::string out = cfg["out"].get<std::string>();
  ensure_dir(out);

  const json& e = cfg["eval"];
  MetricRequest req;
  req.dcg_k = e["dcg_k"].get<std::vector<int>>();
  req.recall_k = e["recall_k"].get<std::vector<int>>();
  req.classic_recall = e["classic_recall"].get<bool>();
  req.with_auc = e["auc"].get<bool>();
  req.with_logloss = e["logloss"].get<bool>();

  ExperimentReport report;
  report.estimator = cfg["estimator"].get<std::string>();
  report.dataset = cfg["dataset"]["kind"].get<std::string>() + ":" +
                   cfg["dataset"]["path"].get<std::string>();
  report.config_hash = config_hash(cfg);

  for (const auto& sj : cfg["seeds"]) {
    uint64_t seed = sj.get<uint64_t>();
    std::string ck_path = out + "/checkpoints/seed" + std::to_string(seed) + ".ckpt";
    if (!fs::exists(ck_path))
      throw std::runtime_error("missing checkpoint for seed " + std::to_string(seed) + ": " +
                               ck_path);
    Checkpoint ck = load_checkpoint(ck_path);
    FmModel cvr = fm_from_checkpoint(ck, "cvr");
    int num_users = ck.hyper.at("num_users").get<int>();
    int num_items = ck.hyper.at("num_items").get<int>();
    if (cvr.num_features != num_users + num_items)
      throw std::runtime_error("checkpoint shape mismatch in " + ck_path);
    FeatureSpace fsp{num_users, num_items};

    InteractionDataset ds = load_dataset(cfg, seed);
    std::vector<double> scores = score_rows(cvr, fsp, ds.test);
    std::vector<ScoredRow> rows(ds.test.size());
    for (size_t k = 0; k < ds.test.size(); ++k)
      rows[k] = ScoredRow{ds.test[k].user, ds.test[k].item, ds.test[k].label, scores[k]};
    for (const auto& [name, value] : evaluate_rows(rows, req))
      report.metrics[name].push_back(value);
    report.seeds.push_back(seed);
  }

  std::string baseline = e["baseline_report"].get<std::string>();
  if (!baseline.empty()) {
    ExperimentReport base = report_from_json(read_json_file(baseline));
    for (const auto& [name, values] : report.metrics) {
      auto it = base.metrics.find(name);
      if (it == base.metrics.end() || it->second.size() != values.size()) continue;
      TTestResult tt = paired_t_test(values, it->second);
      report.significance["vs " + base.estimator + ":" + name] = tt.p;
    }
  }

  json j = report.to_json();
  j["version"] = kVersion;
  write_json_file(out + "/report.json", j);

  json summary = {{"out", out}, {"metrics", json::object()}};
  for (const auto& [name, values] : report.metrics) {
    Aggregate agg = aggregate(values);
    summary["metrics"][name] = {{"mean", agg.mean}, {"std", agg.stddev}};
    std::printf("eval %s: %s = %.6f +/- %.6f\n", report.estimator.c_str(), name.c_str(), agg.mean,
                agg.stddev);
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json_file(out + "/run.meta.json", {{"command", "eval"}, {"wall_clock_sec", secs}});
  return {0, summary};
}

CommandResult cmd_verify(const json& cfg) {
  const json& v = cfg["verify"];
  uint64_t seed = v["seed"].get<uint64_t>();
  double tol = v["tol"].get<double>();

  std::vector<CheckResult> checks;
  auto take = [&](std::vector<CheckResult> more) {
    for (auto& c : more) checks.push_back(std::move(c));
  };
  take(verify_lemma1(v["lemma1_instances"].get<int>(), v["lemma1_max_pairs"].get<int>(), tol,
                     seed));
  take(verify_double_robustness(v["dr_instances"].get<int>(), tol, seed));
  checks.push_back(verify_coverage(v["coverage_trials"].get<int>(), v["coverage_eta"].get<double>(),
                                   v["coverage_hypotheses"].get<int>(),
                                   v["coverage_pairs"].get<int>(), seed));
  take(verify_hoeffding(v["hoeffding_trials"].get<int>(), seed));
  take(verify_hypergradient_fd(v["fd_outer_steps"].get<int>(), seed));

  bool all_pass = true;
  json rows = json::array();
  for (const CheckResult& c : checks) {
    all_pass = all_pass && c.pass;
    rows.push_back({{"name", c.name},
                    {"pass", c.pass},
                    {"computed", c.computed},
                    {"reference", c.reference},
                    {"tolerance", c.tolerance},
                    {"detail", c.detail}});
    std::printf("%s  %-44s computed=%.6g reference=%.6g tol=%.3g\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.computed, c.reference, c.tolerance);
  }
  json report = {{"pass", all_pass}, {"checks", rows}, {"version", kVersion}};
  std::string out = cfg["out"].get<std::string>();
  ensure_dir(out);
  write_json_file(out + "/verify.json", report);
  std::printf("verify: %s (%zu checks)\n", all_pass ? "all passed" : "FAILURES", checks.size());
  return {all_pass ? 0 : 3, report};
}

CommandResult cmd_sweep(const json& cfg) {
  const json& grid = cfg["sweep"]["grid"];
  if (grid.empty()) throw std::invalid_argument("sweep.grid is empty");
  std::string out = cfg["out"].get<std::string>();
  ensure_dir(out);
  write_json_file(out + "/config.resolved.json", cfg);

  std::vector<std::string> keys;
  for (const auto& [k, vals] : grid.items()) keys.push_back(k);  // sorted by json object order
  std::vector<size_t> sizes, idx(keys.size(), 0);
  for (const auto& k : keys) sizes.push_back(grid[k].size());

  json points = json::array();
  int exit_code = 0;
  size_t point = 0;
  for (;;) {
    json overrides = json::object();
    json cfg_i = cfg;
    for (size_t k = 0; k < keys.size(); ++k) {
      const json& val = grid[keys[k]][idx[k]];
      overrides[keys[k]] = val;
      apply_override(cfg_i, keys[k] + "=" + val.dump());
    }
    cfg_i["sweep"]["grid"] = json::object();
    std::string sub = out + "/points/" + std::to_string(point);
    cfg_i["out"] = sub;
    json entry = {{"point", point}, {"overrides", overrides}, {"dir", sub}};
    try {
      json probe = cfg_i;
      probe.erase("out");
      resolve_config(probe);  // re-check ranges with the overrides applied
      CommandResult tr = cmd_train(cfg_i);
      if (tr.exit_code != 0) throw std::runtime_error("training failed for a sweep point");
      double val_sum = 0.0;
      for (const auto& s : tr.summary["seeds"]) val_sum += s["best_val"].get<double>();
      entry["val_mean"] = val_sum / double(tr.summary["seeds"].size());
      CommandResult ev = cmd_eval(cfg_i);
      entry["metrics"] = ev.summary["metrics"];
    } catch (const std::exception& e) {
      entry["error"] = e.what();
      exit_code = 2;
      std::fprintf(stderr, "sweep point %zu failed: %s\n", point, e.what());
    }
    points.push_back(entry);
    ++point;
    size_t k = 0;
    for (; k < keys.size(); ++k) {
      if (++idx[k] < sizes[k]) break;
      idx[k] = 0;
    }
    if (k == keys.size()) break;
  }

  // Winner: highest validation metric, ties to the lexicographically smallest
  // override string.
  int winner = -1;
  std::string winner_key;
  for (const auto& p : points) {
    if (!p.contains("val_mean")) continue;
    std::string key = p["overrides"].dump();
    if (winner < 0 || p["val_mean"].get<double>() > points[size_t(winner)]["val_mean"].get<double>() ||
        (p["val_mean"].get<double>() == points[size_t(winner)]["val_mean"].get<double>() &&
         key < winner_key)) {
      winner = p["point"].get<int>();
      winner_key = key;
    }
  }
  json sweep_report = {{"points", points}, {"winner", winner}, {"version", kVersion}};
  write_json_file(out + "/sweep.json", sweep_report);

  std::ofstream tsv(out + "/sweep.tsv", std::ios::binary);
  tsv << "point";
  for (const auto& k : keys) tsv << '\t' << k;
  tsv << "\tval_mean";
  std::vector<std::string> metric_names;
  for (const auto& p : points)
    if (p.contains("metrics")) {
      for (const auto& [mn, mv] : p["metrics"].items()) metric_names.push_back(mn);
      break;
    }
  for (const auto& mn : metric_names) tsv << '\t' << mn;
  tsv << '\n';
  for (const auto& p : points) {
    tsv << p["point"].get<int>();
    for (const auto& k : keys) tsv << '\t' << p["overrides"][k].dump();
    if (p.contains("val_mean"))
      tsv << '\t' << format_g(p["val_mean"].get<double>());
    else
      tsv << "\tfailed";
    for (const auto& mn : metric_names) {
      if (p.contains("metrics") && p["metrics"].contains(mn))
        tsv << '\t' << format_g(p["metrics"][mn]["mean"].get<double>());
      else
        tsv << "\t-";
    }
    tsv << '\n';
  }
  tsv.close();

  if (winner >= 0) {
    json wcfg = cfg;
    for (const auto& [k, v] : points[size_t(winner)]["overrides"].items())
      apply_override(wcfg, k + "=" + v.dump());
    wcfg["sweep"]["grid"] = json::object();
    write_json_file(out + "/winner.config.json", wcfg);
    std::printf("sweep winner: point %d %s (val %.6f)\n", winner,
                points[size_t(winner)]["overrides"].dump().c_str(),
                points[size_t(winner)]["val_mean"].get<double>());
  }
  return {exit_code, sweep_report};
}

// ---- verification checks ------------------------------------------------------

namespace {

TheoryInstance random_instance(Rng rng, int num_pairs, int num_hypotheses) {
  TheoryInstance inst;
  inst.pairs.resize(size_t(num_pairs));
  Rng rp = rng.split("p"), rph = rng.split("p-hat"), re = rng.split("e"), reh = rng.split("e-hat");
  for (auto& pr : inst.pairs) {
    pr.p = 0.05 + 0.90 * rp.next_double();
    pr.p_hat = 0.05 + 0.95 * rph.next_double();
    pr.e = 2.0 * re.next_double();
    pr.e_hat = 2.0 * reh.next_double();
  }
  Rng rh = rng.split("hyp");
  for (int h = 0; h < num_hypotheses; ++h) {
    std::vector<double> v(size_t(num_pairs), 0.0);
    for (auto& x : v) x = 2.0 * rh.next_double();
    inst.hypotheses.push_back(std::move(v));
  }
  return inst;
}

}  // namespace

std::vector<CheckResult> verify_lemma1(int instances, int max_pairs, double tol, uint64_t seed) {
  Rng root = Rng(seed).split("verify-lemma1");
  double max_bias_dev = 0.0, max_var_dev = 0.0;
  for (int t = 0; t < instances; ++t) {
    int n = 1 + int(root.split("size").split(uint64_t(t)).next_below(uint64_t(max_pairs)));
    TheoryInstance inst = random_instance(root.split("inst").split(uint64_t(t)), n, 0);
    DrMoments mom = enumerate_dr_distribution(inst);
    double bias = std::abs(mom.mean - ideal_value(inst));
    max_bias_dev = std::max(max_bias_dev, std::abs(bias - bias_closed_form(inst)));
    max_var_dev = std::max(max_var_dev, std::abs(mom.variance - variance_closed_form(inst)));
  }
  json detail = {{"instances", instances}, {"max_pairs", max_pairs}};
  return {
      {"lemma1/bias-matches-enumeration", max_bias_dev <= tol, max_bias_dev, 0.0, tol, detail},
      {"lemma1/variance-matches-enumeration", max_var_dev <= tol, max_var_dev, 0.0, tol, detail},
  };
}

std::vector<CheckResult> verify_double_robustness(int instances, double tol, uint64_t seed) {
  Rng root = Rng(seed).split("verify-dr");
  double max_mean_dev = 0.0;   // p_hat = p: expectation equals ideal
  double max_point_dev = 0.0;  // e_hat = e: every realization equals ideal
  for (int t = 0; t < instances; ++t) {
    int n = 1 + int(root.split("size").split(uint64_t(t)).next_below(10));
    TheoryInstance inst = random_instance(root.split("inst").split(uint64_t(t)), n, 0);

    TheoryInstance exact_p = inst;
    for (auto& pr : exact_p.pairs) pr.p_hat = pr.p;
    DrMoments mom = enumerate_dr_distribution(exact_p);
    max_mean_dev = std::max(max_mean_dev, std::abs(mom.mean - ideal_value(exact_p)));

    TheoryInstance exact_e = inst;
    for (auto& pr : exact_e.pairs) pr.e_hat = pr.e;
    double ideal = ideal_value(exact_e);
    std::vector<int> clicks(size_t(n), 0);
    for (uint64_t mask = 0; mask < (uint64_t(1) << n); ++mask) {
      for (int k = 0; k < n; ++k) clicks[size_t(k)] = int((mask >> k) & 1u);
      max_point_dev = std::max(max_point_dev, std::abs(dr_value(exact_e, clicks) - ideal));
    }
  }
  json detail = {{"instances", instances}};
  return {
      {"double-robustness/exact-propensity-mean", max_mean_dev <= tol, max_mean_dev, 0.0, tol,
       detail},
      {"double-robustness/exact-imputation-pointwise", max_point_dev <= tol, max_point_dev, 0.0,
       tol, detail},
  };
}

CheckResult verify_coverage(int trials, double eta, int hypotheses, int pairs, uint64_t seed) {
  Rng root = Rng(seed).split("verify-coverage");
  const int per_instance = 500;
  uint64_t done = 0, held = 0;
  int inst_count = 0;
  while (done < uint64_t(trials)) {
    uint64_t chunk = std::min<uint64_t>(per_instance, uint64_t(trials) - done);
    TheoryInstance inst =
        random_instance(root.split("inst").split(uint64_t(inst_count)), pairs, hypotheses);
    double freq = simulate_bound_coverage(inst, chunk, eta, seed + uint64_t(inst_count));
    held += uint64_t(std::llround(freq * double(chunk)));
    done += chunk;
    ++inst_count;
  }
  double coverage = double(held) / double(done);
  json detail = {{"trials", done}, {"instances", inst_count}, {"eta", eta},
                 {"hypotheses", hypotheses}, {"pairs", pairs}};
  return {"lemma2/bound-coverage", coverage >= 1.0 - eta, coverage, 1.0 - eta, 0.0, detail};
}

std::vector<CheckResult> verify_hoeffding(int trials, uint64_t seed) {
  Rng root = Rng(seed).split("verify-hoeffding");
  const int n = 10;
  std::vector<double> p(size_t(n), 0.0);
  Rng rp = root.split("p");
  double mean_sum = 0.0;
  for (auto& v : p) {
    v = 0.1 + 0.8 * rp.next_double();
    mean_sum += v;
  }
  std::vector<double> widths(size_t(n), 1.0);
  std::vector<double> eps_grid;
  for (int k = 1; k <= 10; ++k) eps_grid.push_back(0.1 * double(k) * double(n));
  std::vector<uint64_t> exceed(eps_grid.size(), 0);
  Rng rt = root.split("trials");
  for (int t = 0; t < trials; ++t) {
    Rng r = rt.split(uint64_t(t));
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += r.next_bernoulli(p[size_t(k)]) ? 1.0 : 0.0;
    double dev = std::abs(s - mean_sum);
    for (size_t g = 0; g < eps_grid.size(); ++g)
      if (dev >= eps_grid[g]) ++exceed[g];
  }
  double worst_gap = -1.0;
  json rows = json::array();
  for (size_t g = 0; g < eps_grid.size(); ++g) {
    double freq = double(exceed[g]) / double(trials);
    double bound = hoeffding_tail(widths, eps_grid[g]);
    worst_gap = std::max(worst_gap, freq - bound);
    rows.push_back({{"eps", eps_grid[g]}, {"empirical", freq}, {"bound", bound}});
  }
  json detail = {{"trials", trials}, {"grid", rows}};
  return {{"lemma3/empirical-tail-below-bound", worst_gap <= 0.0, worst_gap, 0.0, 0.0, detail}};
}

namespace {

std::vector<double*> lambda_param_ptrs(LambdaNet& n) {
  std::vector<double*> out;
  for (auto* vec : {&n.user_emb, &n.item_emb, &n.w1, &n.b1, &n.w2})
    for (double& v : *vec) out.push_back(&v);
  out.push_back(&n.b2);
  return out;
}

std::vector<double> flatten_lambda_grad(const LambdaGrad& g) {
  std::vector<double> out;
  for (const auto* vec : {&g.user_emb, &g.item_emb, &g.w1, &g.b1, &g.w2})
    out.insert(out.end(), vec->begin(), vec->end());
  out.push_back(g.b2);
  return out;
}

CheckResult fd_check(const std::string& name, const Models& models, const FmModel* prop,
                     const TriBatches& batches, const TrainConfig& cfg) {
  const double h = 1e-4;
  LambdaGrad analytic = hypergradient_xi(models, prop, batches, cfg, nullptr);
  std::vector<double> ga = flatten_lambda_grad(analytic);

  Models probe = models;
  std::vector<double*> params = lambda_param_ptrs(probe.lam);
  if (params.size() != ga.size())
    throw std::logic_error("hypergradient flattening disagrees with the parameter count");
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < params.size(); ++k) {
    double saved = *params[k];
    *params[k] = saved + h;
    double up = unrolled_upper_loss(probe, prop, batches, cfg);
    *params[k] = saved - h;
    double dn = unrolled_upper_loss(probe, prop, batches, cfg);
    *params[k] = saved;
    double fd = (up - dn) / (2.0 * h);
    num += (ga[k] - fd) * (ga[k] - fd);
    den += fd * fd;
  }
  double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
  json detail = {{"params", params.size()}, {"grad_norm", std::sqrt(den)}};
  return {name, rel < 1e-3, rel, 0.0, 1e-3, detail};
}

}  // namespace

std::vector<CheckResult> verify_hypergradient_fd(int outer_steps, uint64_t seed) {
  Rng root = Rng(seed).split("verify-hypergrad");

  InteractionDataset toy;
  toy.num_users = 8;
  toy.num_items = 8;
  toy.seed = seed;
  Rng cells = root.split("cells");
  std::vector<uint32_t> order(64);
  std::iota(order.begin(), order.end(), 0u);
  cells.shuffle(order);
  for (int k = 0; k < 10; ++k)
    toy.train.push_back(
        Interaction{int(order[size_t(k)] / 8), int(order[size_t(k)] % 8), k % 2});
  for (int k = 10; k < 16; ++k)
    toy.validation.push_back(
        Interaction{int(order[size_t(k)] / 8), int(order[size_t(k)] % 8), k % 2});

  TrainConfig tc;
  tc.kind = EstimatorKind::drmse_trilevel;
  tc.rank = 3;
  tc.init_scale = 0.1;
  tc.adam.lr = 0.03;
  tc.lr_lambda = 0.05;
  tc.pseudo_lr = 0.05;
  tc.batch_clicked = int(toy.train.size());
  tc.sample_ratio = 2;
  tc.epochs = std::max(1, outer_steps);
  tc.patience = 1 << 20;
  tc.eval_metric = "auc";
  tc.seed = seed;

  PropensityConfig pc;
  pc.rank = 3;
  pc.epochs = 3;
  pc.seed = seed;
  FmModel prop = pretrain_propensity(toy, pc);

  TriBatches b;
  for (const auto& t : toy.train) b.lower.push_back(Event{t.user, t.item, 1, t.label});
  b.upper = b.lower;
  b.mixed = b.lower;
  for (int k = 16; k < 21; ++k)
    b.mixed.push_back(Event{int(order[size_t(k)] / 8), int(order[size_t(k)] % 8), 0, 0});

  Models m0 = init_models(toy, tc);
  std::vector<CheckResult> out;
  out.push_back(fd_check("hypergradient/fd-at-init", m0, &prop, b, tc));

  TrainConfig joint_cfg = tc;
  joint_cfg.propensity_joint = true;
  // Joint mode routes part of the hypergradient through zeta's pseudo-step;
  // randomize the output layer so every lambda block carries signal, and give
  // zeta the pretrained propensities: a freshly initialized click model scores
  // everything near 1/2, where the two weight branches coincide and the true
  // hypergradient degenerates to zero.
  Models mj = m0;
  Rng rw = root.split("w2");
  for (double& v : mj.lam.w2) v = 0.2 * rw.next_gaussian();
  mj.lam.b2 = 0.2 * rw.next_gaussian();
  mj.ctr = prop;
  out.push_back(fd_check("hypergradient/fd-joint-propensity", mj, nullptr, b, joint_cfg));

  TrainOutput trained = trilevel_train(toy, &prop, tc);
  out.push_back(fd_check("hypergradient/fd-after-" + std::to_string(outer_steps) + "-steps",
                         trained.final_models, &prop, b, tc));
  return out;
}

}  // namespace drcvr
