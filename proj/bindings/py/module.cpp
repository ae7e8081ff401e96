// Python bindings for the core operations: estimator losses, imputation
// weights, the finite-population analysis tools, config handling, and the
// CLI-equivalent commands (fixture/synth/train/eval/verify/sweep). Configs
// cross the boundary as JSON strings; the drcvr package wraps them in dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "drcvr/estimators.hpp"
#include "drcvr/evaluation.hpp"
#include "drcvr/experiment.hpp"
#include "drcvr/fixtures.hpp"
#include "drcvr/theory.hpp"

namespace py = pybind11;
using namespace drcvr;
using nlohmann::json;

namespace {

SampleBundle make_bundle(const std::vector<int>& o, const std::vector<int>& r,
                         const std::vector<double>& r_hat, const std::vector<double>& e_hat,
                         const std::vector<double>& p_hat, double denom_override) {
  size_t n = o.size();
  if (r.size() != n || r_hat.size() != n || e_hat.size() != n || p_hat.size() != n)
    throw std::invalid_argument("bundle arrays must have equal length");
  SampleBundle b;
  b.denom_override = denom_override;
  b.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    b.samples[i].o = o[i];
    b.samples[i].r = r[i];
    b.samples[i].r_hat = r_hat[i];
    b.samples[i].e_hat = e_hat[i];
    b.samples[i].p_hat = p_hat[i];
  }
  return b;
}

TheoryInstance make_instance(const std::vector<double>& p, const std::vector<double>& p_hat,
                             const std::vector<double>& e, const std::vector<double>& e_hat,
                             const std::vector<std::vector<double>>& hypotheses) {
  size_t n = p.size();
  if (p_hat.size() != n || e.size() != n || e_hat.size() != n)
    throw std::invalid_argument("instance arrays must have equal length");
  TheoryInstance inst;
  inst.pairs.resize(n);
  for (size_t i = 0; i < n; ++i) inst.pairs[i] = {p[i], p_hat[i], e[i], e_hat[i]};
  inst.hypotheses = hypotheses;
  inst.validate();
  return inst;
}

json parse_config(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
}

py::tuple run_command(const std::string& name, const std::string& config_json) {
  json resolved = resolve_config(parse_config(config_json));
  CommandResult res;
  {
    py::gil_scoped_release release;
    if (name == "fixture")
      res = cmd_fixture(resolved);
    else if (name == "synth")
      res = cmd_synth(resolved);
    else if (name == "train")
      res = cmd_train(resolved);
    else if (name == "eval")
      res = cmd_eval(resolved);
    else if (name == "verify")
      res = cmd_verify(resolved);
    else if (name == "sweep")
      res = cmd_sweep(resolved);
    else
      throw std::invalid_argument("unknown command: " + name);
  }
  return py::make_tuple(res.exit_code, res.summary.dump());
}

}  // namespace

PYBIND11_MODULE(_drcvr, m) {
  m.doc() = "doubly robust conversion-rate estimation core";
  m.attr("__version__") = std::string(kVersion).substr(std::string(kVersion).rfind(' ') + 1);
  m.def("version", [] { return std::string(kVersion); });

  // ---- estimator primitives ----
  m.def("cross_entropy_error", &cross_entropy_error, py::arg("r"), py::arg("r_hat"),
        "clipped cross entropy of a conversion prediction against its label");
  m.def("clip_propensity", &clip_propensity, py::arg("p"), py::arg("floor") = kPropensityFloor);
  m.def("imp_weight_drjl", &imp_weight_drjl, py::arg("p_hat"));
  m.def("imp_weight_mrdr", &imp_weight_mrdr, py::arg("p_hat"));
  m.def("imp_weight_drbias", &imp_weight_drbias, py::arg("p_hat"));
  m.def("imp_weight_drmse", &imp_weight_drmse, py::arg("p_hat"), py::arg("lam"));

  m.def(
      "bundle_losses",
      [](const std::vector<int>& o, const std::vector<int>& r, const std::vector<double>& r_hat,
         const std::vector<double>& e_hat, const std::vector<double>& p_hat, double lam,
         double denom_override) {
        SampleBundle b = make_bundle(o, r, r_hat, e_hat, p_hat, denom_override);
        py::dict out;
        out["eib"] = loss_eib(b);
        out["ips"] = loss_ips(b);
        out["dr"] = loss_dr(b);
        out["ctr"] = loss_ctr(b);
        out["ctcvr"] = loss_ctcvr(b);
        if (b.clicked_count() > 0) out["naive"] = loss_naive(b);
        out["imp_drjl"] = imp_loss_drjl(b);
        out["imp_mrdr"] = imp_loss_mrdr(b);
        out["imp_drbias"] = imp_loss_drbias(b);
        out["imp_drmse"] = imp_loss_drmse(b, lam);
        return out;
      },
      py::arg("o"), py::arg("r"), py::arg("r_hat"), py::arg("e_hat"), py::arg("p_hat"),
      py::arg("lam") = 0.5, py::arg("denom_override") = 0.0,
      "all bundle losses for parallel sample arrays");

  // ---- finite-population analysis ----
  m.def(
      "bias_closed_form",
      [](const std::vector<double>& p, const std::vector<double>& p_hat,
         const std::vector<double>& e, const std::vector<double>& e_hat) {
        return bias_closed_form(make_instance(p, p_hat, e, e_hat, {}));
      },
      py::arg("p"), py::arg("p_hat"), py::arg("e"), py::arg("e_hat"));
  m.def(
      "variance_closed_form",
      [](const std::vector<double>& p, const std::vector<double>& p_hat,
         const std::vector<double>& e, const std::vector<double>& e_hat) {
        return variance_closed_form(make_instance(p, p_hat, e, e_hat, {}));
      },
      py::arg("p"), py::arg("p_hat"), py::arg("e"), py::arg("e_hat"));
  m.def(
      "enumerate_dr_moments",
      [](const std::vector<double>& p, const std::vector<double>& p_hat,
         const std::vector<double>& e, const std::vector<double>& e_hat) {
        DrMoments dm = enumerate_dr_distribution(make_instance(p, p_hat, e, e_hat, {}));
        return py::make_tuple(dm.mean, dm.variance);
      },
      py::arg("p"), py::arg("p_hat"), py::arg("e"), py::arg("e_hat"),
      "exact mean and variance over all click realizations");
  m.def("hoeffding_tail", &hoeffding_tail, py::arg("widths"), py::arg("eps"));
  m.def(
      "simulate_bound_coverage",
      [](const std::vector<double>& p, const std::vector<double>& p_hat,
         const std::vector<double>& e, const std::vector<std::vector<double>>& hypotheses,
         uint64_t trials, double eta, uint64_t seed) {
        if (hypotheses.empty()) throw std::invalid_argument("need at least one hypothesis");
        TheoryInstance inst = make_instance(p, p_hat, e, hypotheses.front(), hypotheses);
        return simulate_bound_coverage(inst, trials, eta, seed);
      },
      py::arg("p"), py::arg("p_hat"), py::arg("e"), py::arg("hypotheses"), py::arg("trials"),
      py::arg("eta"), py::arg("seed"));

  // ---- metrics ----
  m.def(
      "paired_t_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        TTestResult r = paired_t_test(a, b);
        return py::make_tuple(r.t, r.p, r.df);
      },
      py::arg("a"), py::arg("b"), "two-sided paired t-test, returns (t, p, df)");

  // ---- configs and commands ----
  m.def("default_config", [] { return default_config().dump(); });
  m.def(
      "resolve_config", [](const std::string& s) { return resolve_config(parse_config(s)).dump(); },
      py::arg("config_json"), "validate a config against the schema and fill defaults");
  m.def(
      "config_hash", [](const std::string& s) { return config_hash(resolve_config(parse_config(s))); },
      py::arg("config_json"));
  m.def("run", &run_command, py::arg("command"), py::arg("config_json"),
        "run a command (fixture/synth/train/eval/verify/sweep); returns (exit_code, summary_json)");
}
