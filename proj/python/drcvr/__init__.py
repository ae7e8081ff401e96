"""Doubly robust conversion-rate estimation: Python surface of the C++ core.

The compiled module speaks JSON strings for configs; this package converts
dicts at the boundary so callers work with plain Python objects:

    import drcvr
    cfg = {"dataset": {"kind": "coat", "path": "data/coat"}, "estimator": "drmse-trilevel"}
    code, summary = drcvr.run("train", cfg)
"""

import json as _json
import os as _os
import sys as _sys


def _load_native():
    # Test trees point at the build directory via DRCVR_PYMODULE_DIR;
    # installed wheels have _drcvr next to this file.
    extra = _os.environ.get("DRCVR_PYMODULE_DIR")
    if extra and extra not in _sys.path:
        _sys.path.insert(0, extra)
    try:
        from drcvr import _drcvr  # installed layout
        return _drcvr
    except ImportError:
        import _drcvr  # build-tree layout
        return _drcvr


_native = _load_native()

__version__ = _native.__version__

cross_entropy_error = _native.cross_entropy_error
clip_propensity = _native.clip_propensity
imp_weight_drjl = _native.imp_weight_drjl
imp_weight_mrdr = _native.imp_weight_mrdr
imp_weight_drbias = _native.imp_weight_drbias
imp_weight_drmse = _native.imp_weight_drmse
bundle_losses = _native.bundle_losses
bias_closed_form = _native.bias_closed_form
variance_closed_form = _native.variance_closed_form
enumerate_dr_moments = _native.enumerate_dr_moments
hoeffding_tail = _native.hoeffding_tail
simulate_bound_coverage = _native.simulate_bound_coverage
paired_t_test = _native.paired_t_test
version = _native.version


def default_config():
    """The full config schema with default values, as a dict."""
    return _json.loads(_native.default_config())


def resolve_config(config):
    """Validate a config dict against the schema and fill in defaults."""
    return _json.loads(_native.resolve_config(_json.dumps(config)))


def config_hash(config):
    """Stable 16-hex-digit hash identifying a resolved config."""
    return _native.config_hash(_json.dumps(config))


def run(command, config):
    """Run one of fixture/synth/train/eval/verify/sweep.

    Returns (exit_code, summary), where summary is the command's JSON
    summary as a dict.
    """
    code, summary = _native.run(command, _json.dumps(config))
    return code, _json.loads(summary)


__all__ = [
    "__version__",
    "version",
    "cross_entropy_error",
    "clip_propensity",
    "imp_weight_drjl",
    "imp_weight_mrdr",
    "imp_weight_drbias",
    "imp_weight_drmse",
    "bundle_losses",
    "bias_closed_form",
    "variance_closed_form",
    "enumerate_dr_moments",
    "hoeffding_tail",
    "simulate_bound_coverage",
    "paired_t_test",
    "default_config",
    "resolve_config",
    "config_hash",
    "run",
]
