"""End-to-end smoke tests of the Python surface: numeric primitives against
known values, plus a miniature fixture -> train -> eval -> verify pipeline."""

import json
import math
import os
import subprocess
import sys
import tempfile

import pytest

import drcvr


def test_version_string():
    assert drcvr.version().startswith("drcvr ")
    assert drcvr.__version__ in drcvr.version()


def test_cross_entropy_known_values():
    assert drcvr.cross_entropy_error(1, 0.5) == pytest.approx(math.log(2.0), rel=1e-15)
    assert drcvr.cross_entropy_error(0, 0.5) == pytest.approx(math.log(2.0), rel=1e-15)
    # clipped at 1e-7 from both ends
    assert drcvr.cross_entropy_error(1, 0.0) == pytest.approx(-math.log(1e-7), rel=1e-12)


def test_propensity_floor():
    assert drcvr.clip_propensity(0.01) == 0.03
    assert drcvr.clip_propensity(0.5) == 0.5
    with pytest.raises(ValueError):
        drcvr.clip_propensity(0.0)


def test_imputation_weights_quarter():
    assert drcvr.imp_weight_drjl(0.25) == 1.0
    assert drcvr.imp_weight_mrdr(0.25) == pytest.approx(3.0, abs=1e-12)
    assert drcvr.imp_weight_drbias(0.25) == pytest.approx(9.0, abs=1e-12)
    assert drcvr.imp_weight_drmse(0.25, 0.5) == pytest.approx(6.0, abs=1e-12)
    # endpoints are bitwise the pure branches
    assert drcvr.imp_weight_drmse(0.25, 0.0) == drcvr.imp_weight_mrdr(0.25)
    assert drcvr.imp_weight_drmse(0.25, 1.0) == drcvr.imp_weight_drbias(0.25)


def test_bundle_losses_hand_example():
    # one clicked positive sample, one unclicked; p_hat = 0.5
    out = drcvr.bundle_losses(
        o=[1, 0], r=[1, 0], r_hat=[0.5, 0.5], e_hat=[0.1, 0.2], p_hat=[0.5, 0.5]
    )
    e = math.log(2.0)
    assert out["naive"] == pytest.approx(e, rel=1e-15)
    assert out["eib"] == pytest.approx((e + 0.2) / 2.0, rel=1e-14)
    assert out["ips"] == pytest.approx(e / 0.5 / 2.0, rel=1e-14)
    assert out["dr"] == pytest.approx((0.1 + (e - 0.1) / 0.5 + 0.2) / 2.0, rel=1e-14)
    assert out["ctcvr"] == pytest.approx(out["dr"] * 2.0 + out["ctr"], rel=1e-14)


def test_closed_forms_match_enumeration():
    p = [0.3, 0.6, 0.8]
    p_hat = [0.4, 0.6, 0.7]
    e = [1.0, 0.2, 0.5]
    e_hat = [0.8, 0.2, 0.9]
    mean, var = drcvr.enumerate_dr_moments(p, p_hat, e, e_hat)
    ideal = sum(e) / len(e)
    assert abs(mean - ideal) == pytest.approx(
        drcvr.bias_closed_form(p, p_hat, e, e_hat), abs=1e-12
    )
    assert var == pytest.approx(drcvr.variance_closed_form(p, p_hat, e, e_hat), abs=1e-12)


def test_double_robustness_via_bindings():
    # exact propensities: enumerated mean equals the ideal loss
    p = [0.2, 0.7]
    e = [0.9, 0.3]
    mean, _ = drcvr.enumerate_dr_moments(p, p, e, [0.5, 0.5])
    assert mean == pytest.approx(sum(e) / 2.0, abs=1e-12)


def test_hoeffding_tail():
    assert drcvr.hoeffding_tail([1.0], 0.0) == 2.0
    assert drcvr.hoeffding_tail([1.0, 1.0], 1.0) == pytest.approx(2.0 * math.exp(-1.0), rel=1e-14)


def test_paired_t_test_scipy_value():
    a = [2.0, 3.0, 4.0, 5.0, 6.0, 8.0]
    b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    t, p, df = drcvr.paired_t_test(a, b)
    assert t == pytest.approx(7.0, abs=1e-12)
    assert df == 5
    assert p == pytest.approx(0.0009167475143984045, rel=1e-10)


def test_config_roundtrip_and_hash():
    cfg = drcvr.default_config()
    assert cfg["estimator"] == "drmse-trilevel"
    resolved = drcvr.resolve_config({"estimator": "mrdr"})
    assert resolved["estimator"] == "mrdr"
    assert resolved["train"]["rank"] == cfg["train"]["rank"]
    h = drcvr.config_hash({"estimator": "mrdr"})
    assert len(h) == 16
    with pytest.raises(ValueError):
        drcvr.resolve_config({"estimatr": "mrdr"})


def test_pipeline_fixture_train_eval_verify():
    with tempfile.TemporaryDirectory() as tmp:
        fx = os.path.join(tmp, "coat")
        code, summary = drcvr.run("fixture", {"out": fx, "fixture": {"name": "coat", "seed": 1}})
        assert code == 0
        assert os.path.exists(os.path.join(fx, "train.ascii"))

        run_dir = os.path.join(tmp, "run")
        cfg = {
            "dataset": {"kind": "coat", "path": fx},
            "estimator": "drjl",
            "seeds": [1],
            "out": run_dir,
            "train": {"rank": 4, "epochs": 2, "patience": 5, "batch_clicked": 128, "lr": 0.05},
            "propensity": {"rank": 4, "epochs": 2},
        }
        code, summary = drcvr.run("train", cfg)
        assert code == 0
        assert os.path.exists(os.path.join(run_dir, "checkpoints", "seed1.ckpt"))

        code, summary = drcvr.run("eval", cfg)
        assert code == 0
        report = json.load(open(os.path.join(run_dir, "report.json")))
        assert report["estimator"] == "drjl"
        assert 0.0 <= report["metrics"]["auc"]["mean"] <= 1.0

        ver_dir = os.path.join(tmp, "verify")
        code, summary = drcvr.run(
            "verify",
            {
                "out": ver_dir,
                "verify": {
                    "lemma1_instances": 10,
                    "lemma1_max_pairs": 8,
                    "dr_instances": 10,
                    "coverage_trials": 500,
                    "hoeffding_trials": 5000,
                    "fd_outer_steps": 2,
                },
            },
        )
        assert code == 0
        ver = json.load(open(os.path.join(ver_dir, "verify.json")))
        assert ver["pass"] is True


def test_cli_binary_if_available():
    exe = os.environ.get("DRCVR_CLI")
    if not exe or not os.path.exists(exe):
        pytest.skip("CLI binary location not provided")
    out = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "drcvr" in out.stdout
