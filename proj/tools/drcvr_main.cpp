// Command-line front end: debiased CVR training, evaluation, dataset
// synthesis, and verification of the estimator theory.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "drcvr/experiment.hpp"

using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file (merged over defaults)");
  cmd->add_option("--set", opts.overrides, "override a config entry, e.g. --set train.lr=0.02")
      ->take_all();
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--seed", opts.seed, "shorthand for a single-seed run");
}

json build_config(const CommonOpts& opts) {
  json user = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream f(opts.config_path);
    if (!f) throw std::invalid_argument("cannot read config file: " + opts.config_path);
    try {
      f >> user;
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(opts.config_path + ": " + e.what());
    }
  }
  for (const std::string& ov : opts.overrides) drcvr::apply_override(user, ov);
  if (!opts.out.empty()) user["out"] = opts.out;
  if (opts.seed >= 0) user["seeds"] = json::array({opts.seed});
  return drcvr::resolve_config(user);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(drcvr::kVersion) +
               " - doubly robust conversion-rate training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", drcvr::kVersion);

  CommonOpts opts;
  CLI::App* c_fixture =
      app.add_subcommand("fixture", "write a surrogate benchmark dataset (fixture.name)");
  CLI::App* c_synth =
      app.add_subcommand("synth", "build bias-controlled datasets from a rating table");
  CLI::App* c_train = app.add_subcommand("train", "train one estimator across seeds");
  CLI::App* c_eval = app.add_subcommand("eval", "score checkpoints and write report.json");
  CLI::App* c_verify = app.add_subcommand("verify", "run the estimator/theory checks");
  CLI::App* c_sweep = app.add_subcommand("sweep", "grid-search config overrides");
  for (CLI::App* c : {c_fixture, c_synth, c_train, c_eval, c_verify, c_sweep})
    add_common(c, opts);

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = build_config(opts);
    drcvr::CommandResult res;
    if (c_fixture->parsed()) res = drcvr::cmd_fixture(cfg);
    if (c_synth->parsed()) res = drcvr::cmd_synth(cfg);
    if (c_train->parsed()) res = drcvr::cmd_train(cfg);
    if (c_eval->parsed()) res = drcvr::cmd_eval(cfg);
    if (c_verify->parsed()) res = drcvr::cmd_verify(cfg);
    if (c_sweep->parsed()) res = drcvr::cmd_sweep(cfg);
    return res.exit_code;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
