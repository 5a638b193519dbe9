"""Timestep-embedding laboratory.

Normalized two-stage conv blocks with timestep mechanisms, time-awareness
diagnostics, desk-scale training tasks, and an adaptive ODE solver. The
config-driven entry points take and return plain dicts mirroring the JSON
documents the command-line tool reads and writes.
"""

import json as _json

from tembed._core import (
    Block as _CoreBlock,
    ConfigError,
    DivergenceError,
    NumericError,
    StiffnessError,
    conv2d,
    normalize,
)
from tembed import _core

__all__ = [
    "Block",
    "ConfigError",
    "DivergenceError",
    "NumericError",
    "StiffnessError",
    "conv2d",
    "normalize",
    "diagnose",
    "train",
    "solve_block",
    "solve_fixture",
    "resolve_config",
]


def Block(config):
    """Build the block described by the `block` section of a run config."""
    return _CoreBlock(_json.dumps(config))


def diagnose(config):
    """Run the time-awareness diagnostics; returns the report as a dict."""
    return _json.loads(_core.diagnose_json(_json.dumps(config)))


def train(config):
    """Train the configured block on its task; returns the summary dict."""
    return _json.loads(_core.train_json(_json.dumps(config)))


def solve_block(config):
    """Integrate the configured block as an ODE field over [0, 1]."""
    return _json.loads(_core.solve_block_json(_json.dumps(config)))


def solve_fixture(name, rtol=1e-6, atol=1e-6):
    """Adaptive solve of a named analytic field ("exp" or "oscillator")."""
    return _json.loads(_core.solve_fixture(name, rtol, atol))


def resolve_config(config):
    """Validate a run config and return it with every default filled in."""
    return _json.loads(_core.resolve_config_json(_json.dumps(config)))
