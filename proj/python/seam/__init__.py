"""Seamlessness scoring for RLHF data."""

import json

from ._core import (
    BackendError,
    ConfigError,
    DataError,
    Policy,
    Reward,
    SeamError,
    misjudgment,
    tokenize,
)
from . import _core

__all__ = [
    "BackendError",
    "ConfigError",
    "DataError",
    "Policy",
    "Reward",
    "SeamError",
    "config_fingerprint",
    "default_config",
    "misjudgment",
    "normalize_config",
    "run_cli",
    "seam_score",
    "tokenize",
]


def default_config():
    return json.loads(_core.default_config())


def normalize_config(config):
    """Effective config with defaults filled in; raises ConfigError on unknown keys."""
    return json.loads(_core.normalize_config(json.dumps(config)))


def config_fingerprint(config):
    return _core.config_fingerprint(json.dumps(config))


def seam_score(policy, reward, instruction, golden, probes, mode="log"):
    """Scores explicit probe texts; returns the SeamRecord as a dict."""
    return json.loads(_core.seam_score(policy, reward, instruction, golden, list(probes), mode))


def run_cli(*args):
    """Runs the command line in-process; returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])
