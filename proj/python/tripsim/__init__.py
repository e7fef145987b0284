"""Python access to the tripsim simulator core.

Configs are plain dicts with the same fields as the CLI's JSON config files.
"""

import json

from . import _tripsim
from ._tripsim import brute_force, cluster, hungarian, init_keys

__all__ = [
    "brute_force",
    "cluster",
    "comm_params",
    "config",
    "generate",
    "hungarian",
    "init_keys",
    "preset",
    "run",
]


def _dump(cfg):
    return json.dumps(cfg or {})


def config(cfg=None):
    """Validated config with every default filled in."""
    return json.loads(_tripsim.config_json(_dump(cfg)))


def preset(name):
    return json.loads(_tripsim.preset_json(name))


def comm_params(cfg=None):
    """Return (parameters per round per client, one-time key parameters per client)."""
    return _tripsim.comm_params(_dump(cfg))


def generate(cfg=None):
    """Synthetic dataset as numpy arrays: tokens (n, T, D), labels, domains, anchors."""
    return _tripsim.generate(_dump(cfg))


def run(cfg=None):
    """Run one experiment; returns the parsed report."""
    return json.loads(_tripsim.run_json(_dump(cfg)))
