# Copyright (C) 2026 The mmspec Authors
# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the Python bindings."""

import math

import pytest

mmspec = pytest.importorskip("mmspec")


def test_version():
    assert mmspec.version().startswith("mmspec ")


def test_softmax_examples():
    assert mmspec.softmax([0.0, 0.0]) == pytest.approx([0.5, 0.5])
    assert mmspec.softmax([math.log(2.0), 0.0]) == pytest.approx([2 / 3, 1 / 3])
    assert mmspec.softmax([1.0, 3.0], 0.0) == [0.0, 1.0]
    with pytest.raises(mmspec.MmspecError):
        mmspec.softmax([])


def test_verifier_primitives():
    assert mmspec.acceptance_probability(0.1, 0.4) == pytest.approx(0.25)
    dist, fallback = mmspec.adjusted_distribution([0.5, 0.5], [1.0, 0.0])
    assert dist == [0.0, 1.0] and not fallback
    _, fallback = mmspec.adjusted_distribution([0.7, 0.3], [0.7, 0.3])
    assert fallback
    with pytest.raises(ValueError):
        mmspec.acceptance_probability(0.2, 0.0)


def test_metric_formulas():
    assert mmspec.omega(3, 0.5) == pytest.approx(1.875)
    assert mmspec.speedup_ratio(100, 10, 1, 12, 0, 4, 3.0) == pytest.approx(1.875, abs=1e-9)


def test_schedule():
    assert mmspec.mix_fractions(5, 20) == pytest.approx((0.75, 0.25))
    assert mmspec.epoch_composition(500, 500, 5, 20, 100)[:2] == (75, 25)


@pytest.mark.parametrize("mode", ["chain", "tree"])
def test_greedy_matches_reference(mode):
    for seed in range(20):
        r = mmspec.greedy_check(seed, mode, 3)
        assert r["speculative"] == r["reference"]
        assert sum(r["appended_per_cycle"]) == len(r["reference"])


def test_gen_data_is_deterministic(tmp_path):
    a = mmspec.gen_data(tmp_path / "a", 12, 12, 6, seed=5)
    b = mmspec.gen_data(tmp_path / "b", 12, 12, 6, seed=5)
    assert mmspec.strip_timing(a) == mmspec.strip_timing(b)
    assert (tmp_path / "a" / "text.jsonl").read_bytes() == (tmp_path / "b" / "text.jsonl").read_bytes()
    with pytest.raises(ValueError):
        mmspec.gen_data(tmp_path / "a", 12, 12, 6, seed=5)


def test_lossless_small_grid():
    report = mmspec.verify_lossless(seed=2, seeds_per_cell=1)
    assert report["passed"]
    assert report["max_tv"] <= 1e-9
    assert not mmspec.verify_lossless(seed=2, seeds_per_cell=1, rule="resample-from-target")["passed"]
