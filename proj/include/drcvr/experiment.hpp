#pragma once
// Experiment orchestration behind the CLI: JSON configs (schema-validated,
// unknown keys rejected, dotted --set overrides), run directories with
// resolved config + deterministic report.json (volatile data like wall clock
// goes to run.meta.json), and the verification suite for the estimator
// theory and the hypergradient.
//
// Commands:
//   fixture  write a surrogate benchmark dataset
//   synth    fit base MFs, build the ground-truth world, dump sampled datasets
//   train    per-seed propensity pretraining + joint/tri-level training
//   eval     score checkpoints on the test split, aggregate, significance
//   verify   theory + gradient checks, JSON report, nonzero exit on failure
//   sweep    Cartesian grid over config overrides, validation-based winner
//
// Exit codes: 0 ok, 1 config/validation error, 2 runtime failure,
// 3 verification failure.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "drcvr/data.hpp"
#include "drcvr/training.hpp"

namespace drcvr {

inline constexpr const char* kVersion = "drcvr 0.1.0";

nlohmann::json default_config();

// Merges user config over the defaults; throws std::invalid_argument on
// unknown keys, type mismatches, or out-of-range values.
nlohmann::json resolve_config(const nlohmann::json& user_cfg);

// "train.lr=0.01"; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& cfg, const std::string& dotted);

// FNV-1a 64 over the canonical dump of the resolved config.
std::string config_hash(const nlohmann::json& resolved);

TrainConfig train_config_from(const nlohmann::json& resolved, uint64_t seed);
PropensityConfig propensity_config_from(const nlohmann::json& resolved, uint64_t seed);

// dataset.kind: "coat" (dense MNAR/MAR pair), "dump" (synth/dump directory).
// Relative paths that do not exist are retried under $DRCVR_DATA_ROOT.
InteractionDataset load_dataset(const nlohmann::json& resolved, uint64_t seed);
std::string resolve_data_path(const std::string& path);

struct CommandResult {
  int exit_code = 0;
  nlohmann::json summary;
};

CommandResult cmd_fixture(const nlohmann::json& resolved);
CommandResult cmd_synth(const nlohmann::json& resolved);
CommandResult cmd_train(const nlohmann::json& resolved);
CommandResult cmd_eval(const nlohmann::json& resolved);
CommandResult cmd_verify(const nlohmann::json& resolved);
CommandResult cmd_sweep(const nlohmann::json& resolved);

// ---- verification checks (shared by cmd_verify and the acceptance gate) ----

struct CheckResult {
  std::string name;
  bool pass = false;
  double computed = 0.0;
  double reference = 0.0;  // oracle value or threshold
  double tolerance = 0.0;
  nlohmann::json detail;
};

// Closed-form bias/variance vs exact enumeration on random instances.
std::vector<CheckResult> verify_lemma1(int instances, int max_pairs, double tol, uint64_t seed);

// p_hat = p  => enumerated E[L_DR] = ideal; e_hat = e => pointwise equality.
std::vector<CheckResult> verify_double_robustness(int instances, double tol, uint64_t seed);

// Frequency of "ideal loss of the empirical-DR minimizer <= bound".
CheckResult verify_coverage(int trials, double eta, int hypotheses, int pairs, uint64_t seed);

// Empirical tail of sum-of-Bernoulli deviations never exceeds the bound.
std::vector<CheckResult> verify_hoeffding(int trials, uint64_t seed);

// Hypergradient vs central finite differences (h = 1e-4) on a small
// instance, at initialization and after `outer_steps` tri-level steps.
std::vector<CheckResult> verify_hypergradient_fd(int outer_steps, uint64_t seed);

}  // namespace drcvr
