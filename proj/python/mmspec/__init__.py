# Copyright (C) 2026 The mmspec Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the mmspec speculative decoding engine."""

import json as _json

from ._mmspec import (
    MmspecError,
    acceptance_probability,
    adjusted_distribution,
    epoch_composition,
    greedy_check,
    mix_fractions,
    omega,
    softmax,
    speedup_ratio,
    version,
)
from . import _mmspec

__all__ = [
    "MmspecError",
    "acceptance_probability",
    "adjusted_distribution",
    "epoch_composition",
    "gen_data",
    "greedy_check",
    "mix_fractions",
    "omega",
    "softmax",
    "speedup_ratio",
    "strip_timing",
    "verify_lossless",
    "version",
]


def gen_data(out, text_count=4000, visual_count=4000, visual2_count=4000, seed=1, force=False):
    """Writes the synthetic corpora into `out` and returns the manifest."""
    return _json.loads(_mmspec._gen_data(str(out), text_count, visual_count, visual2_count, seed, force))


def verify_lossless(seed=1, seeds_per_cell=3, rule="standard"):
    """Runs the exhaustive losslessness certification; returns the report."""
    return _json.loads(_mmspec._verify_lossless(seed, seeds_per_cell, rule))


def strip_timing(doc):
    """Drops wall-clock fields so two runs can be compared."""
    return _json.loads(_mmspec._strip_timing(_json.dumps(doc)))
