from __future__ import annotations

import numpy as np
import pytest

from glioseg.staple import (
    ConsensusWeights,
    RaterDecisions,
    RaterPerformance,
    StapleConfig,
    fuse_labels,
    majority_vote,
    staple_binary,
)
from glioseg.volume import LabelVolume, Region, RegionMask, extract_region

from oracles import em_consensus_oracle

TIGHT = StapleConfig(tolerance=1e-13, max_iterations=500)


def decisions_from_rows(rows, dims=None, region=Region.WT):
    rows = np.asarray(rows, dtype=bool)
    if dims is None:
        dims = (rows.shape[1], 1, 1)
    return RaterDecisions(rows, dims, (1.0, 1.0, 1.0), region)


def test_consensus_fixed_point():
    # all raters agree on a non-trivial mask: fused output is that mask
    rng = np.random.default_rng(400)
    for _ in range(20):
        mask = rng.random(60) < rng.uniform(0.2, 0.8)
        if not mask.any() or mask.all():
            continue
        rows = np.stack([mask] * 4)
        result = staple_binary(decisions_from_rows(rows))
        assert np.array_equal(result.mask.data.ravel(), mask)
        # unanimously correct raters ride the upper clamp
        assert np.all(result.performance.sensitivity >= 1.0 - 2e-6)
        assert np.all(result.performance.specificity >= 1.0 - 2e-6)


def test_spec_worked_instance_matches_oracle():
    # raters 1 and 2 mark voxels 0..3, rater 3 marks voxels 2..5, of 8
    rows = np.zeros((3, 8), dtype=bool)
    rows[0, 0:4] = True
    rows[1, 0:4] = True
    rows[2, 2:6] = True
    decisions = decisions_from_rows(rows)
    result = staple_binary(decisions, TIGHT)
    prior = rows.mean()
    w_oracle, p_oracle, q_oracle = em_consensus_oracle(
        rows, prior, 0.99999, 0.99999, max_iterations=5000
    )
    assert np.max(np.abs(result.weights.values - w_oracle)) < 1e-9
    assert np.max(np.abs(result.performance.sensitivity - p_oracle)) < 1e-9
    assert np.max(np.abs(result.performance.specificity - q_oracle)) < 1e-9
    assert np.array_equal(result.mask.data.ravel(), w_oracle >= 0.5)


def test_random_instances_match_oracle_trajectory():
    # Noisy rater sets can take tens of thousands of EM passes to pin, so
    # algebraic equivalence is checked at matched iteration counts: after
    # the same number of E+M passes, log-space and plain-product EM must
    # agree to float precision.
    rng = np.random.default_rng(401)
    for trial in range(25):
        num_raters = int(rng.integers(1, 7))
        num_voxels = int(rng.integers(8, 200))
        rows = rng.random((num_raters, num_voxels)) < rng.uniform(0.2, 0.8)
        if rows.mean() in (0.0, 1.0):
            continue
        passes = int(rng.integers(3, 120))
        config = StapleConfig(tolerance=1e-300, max_iterations=passes)
        result = staple_binary(decisions_from_rows(rows), config)
        w_oracle, p_oracle, q_oracle = em_consensus_oracle(
            rows, rows.mean(), 0.99999, 0.99999, max_iterations=passes, tol=0.0
        )
        assert np.max(np.abs(result.weights.values - w_oracle)) < 1e-9, f"trial {trial}"
        assert np.max(np.abs(result.performance.sensitivity - p_oracle)) < 1e-9
        assert np.max(np.abs(result.performance.specificity - q_oracle)) < 1e-9


def test_structured_instances_reach_oracle_fixed_point():
    # Raters derived from a common truth by independent flips: here EM
    # pins to an exact fixed point quickly, and implementation and oracle
    # must land on the same converged W.
    rng = np.random.default_rng(414)
    checked = 0
    for _ in range(15):
        num_raters = int(rng.integers(2, 7))
        num_voxels = int(rng.integers(50, 400))
        truth = rng.random(num_voxels) < rng.uniform(0.3, 0.7)
        flip = rng.uniform(0.05, 0.15)
        rows = np.stack(
            [truth ^ (rng.random(num_voxels) < flip) for _ in range(num_raters)]
        )
        if rows.mean() in (0.0, 1.0):
            continue
        config = StapleConfig(tolerance=1e-300, max_iterations=3000)
        result = staple_binary(decisions_from_rows(rows), config)
        if not result.converged:
            continue  # rare slow instance; covered by the trajectory test
        w_oracle, _, _ = em_consensus_oracle(
            rows, rows.mean(), 0.99999, 0.99999, max_iterations=30000, tol=1e-300
        )
        assert np.max(np.abs(result.weights.values - w_oracle)) < 1e-9
        checked += 1
    assert checked >= 10


def test_single_rater_returns_own_mask():
    rng = np.random.default_rng(402)
    mask = rng.random(40) < 0.4
    result = staple_binary(decisions_from_rows(mask[None, :]))
    assert np.array_equal(result.mask.data.ravel(), mask)


def test_explicit_prior_matches_oracle():
    rng = np.random.default_rng(403)
    rows = rng.random((3, 50)) < 0.5
    config = StapleConfig(prior=0.3, tolerance=1e-300, max_iterations=80)
    result = staple_binary(decisions_from_rows(rows), config)
    w_oracle, _, _ = em_consensus_oracle(rows, 0.3, 0.99999, 0.99999, 80, tol=0.0)
    assert np.max(np.abs(result.weights.values - w_oracle)) < 1e-9


def test_degenerate_all_empty():
    rows = np.zeros((3, 20), dtype=bool)
    result = staple_binary(decisions_from_rows(rows))
    assert result.degenerate
    assert not result.mask.data.any()
    assert np.all(result.weights.values == 0.0)


def test_degenerate_all_full():
    rows = np.ones((2, 15), dtype=bool)
    result = staple_binary(decisions_from_rows(rows))
    assert result.degenerate
    assert result.mask.data.all()
    assert np.all(result.weights.values == 1.0)


def test_rater_order_invariance():
    rng = np.random.default_rng(404)
    rows = rng.random((4, 80)) < 0.45
    base = staple_binary(decisions_from_rows(rows), TIGHT)
    perm = rng.permutation(4)
    permuted = staple_binary(decisions_from_rows(rows[perm]), TIGHT)
    assert np.array_equal(base.mask.data, permuted.mask.data)
    assert np.allclose(
        base.performance.sensitivity[perm], permuted.performance.sensitivity, atol=1e-12
    )
    assert np.allclose(
        base.performance.specificity[perm], permuted.performance.specificity, atol=1e-12
    )


def test_determinism():
    rng = np.random.default_rng(405)
    rows = rng.random((5, 100)) < 0.5
    r1 = staple_binary(decisions_from_rows(rows))
    r2 = staple_binary(decisions_from_rows(rows))
    assert np.array_equal(r1.weights.values, r2.weights.values)
    assert np.array_equal(r1.mask.data, r2.mask.data)
    assert r1.iterations == r2.iterations


def _log_likelihood(rows, prior, p, q):
    d = rows.astype(np.float64)
    a = prior * np.prod(np.where(d > 0.5, p[:, None], 1 - p[:, None]), axis=0)
    b = (1 - prior) * np.prod(np.where(d > 0.5, 1 - q[:, None], q[:, None]), axis=0)
    return float(np.log(a + b).sum())


def test_monotone_log_likelihood():
    rng = np.random.default_rng(406)
    rows = rng.random((4, 60)) < 0.4
    decisions = decisions_from_rows(rows)
    prior = rows.mean()
    previous = -np.inf
    for k in range(1, 12):
        config = StapleConfig(tolerance=1e-16, max_iterations=k)
        result = staple_binary(decisions, config)
        ll = _log_likelihood(
            rows, prior, result.performance.sensitivity, result.performance.specificity
        )
        assert ll >= previous - 1e-9, f"likelihood dropped at iteration {k}"
        previous = ll


def test_agreement_preservation():
    # voxels where every rater agrees keep that value when the converged
    # performances are all above one half
    rng = np.random.default_rng(407)
    for _ in range(10):
        rows = rng.random((3, 120)) < 0.5
        result = staple_binary(decisions_from_rows(rows), TIGHT)
        if result.degenerate:
            continue
        p, q = result.performance.sensitivity, result.performance.specificity
        if not (np.all(p > 0.5) and np.all(q > 0.5)):
            continue
        votes = rows.sum(axis=0)
        fused = result.mask.data.ravel()
        assert np.all(fused[votes == 3])
        assert not np.any(fused[votes == 0])


def test_convergence_reporting():
    rng = np.random.default_rng(408)
    rows = rng.random((3, 50)) < 0.5
    relaxed = staple_binary(decisions_from_rows(rows), StapleConfig(tolerance=1e-3))
    assert relaxed.converged
    assert relaxed.iterations <= 100
    starved = staple_binary(
        decisions_from_rows(rows), StapleConfig(tolerance=1e-16, max_iterations=2)
    )
    assert not starved.converged
    assert starved.iterations == 2


def test_majority_vote_rules():
    rows = np.array(
        [
            [True, True, False],
            [True, False, False],
            [False, False, False],
        ]
    )
    # votes per voxel: 2, 1, 0 of J=3
    fused = majority_vote(decisions_from_rows(rows))
    assert fused.data.ravel().tolist() == [True, False, False]
    # J=2 tie goes to background
    tie = np.array([[True, True], [True, False]])
    fused2 = majority_vote(decisions_from_rows(tie))
    assert fused2.data.ravel().tolist() == [True, False]


def test_majority_equals_staple_on_unanimous_raters():
    rng = np.random.default_rng(409)
    mask = rng.random(30) < 0.5
    if not mask.any() or mask.all():
        mask[0] = True
        mask[1] = False
    rows = np.stack([mask] * 3)
    decisions = decisions_from_rows(rows)
    assert np.array_equal(
        majority_vote(decisions).data, staple_binary(decisions).mask.data
    )


def random_label_volume(rng, dims=(6, 6, 6)):
    data = rng.integers(0, 4, size=dims).astype(np.uint8)
    return LabelVolume.from_array(data)


def test_fuse_identical_predictions():
    rng = np.random.default_rng(410)
    vol = random_label_volume(rng)
    fused = fuse_labels([vol, vol, vol])
    # identical inputs: every region is a consensus fixed point, and
    # reconstruction of the input's own region masks reproduces it
    assert np.array_equal(fused.data, vol.data)


def test_fuse_two_against_one():
    rng = np.random.default_rng(411)
    a = random_label_volume(rng)
    outlier = random_label_volume(rng)
    fused = fuse_labels([a, a, outlier])
    assert np.array_equal(fused.data, a.data)
    fused_mv = fuse_labels([a, a, outlier], method="majority")
    assert np.array_equal(fused_mv.data, a.data)


def test_fuse_output_is_nested():
    rng = np.random.default_rng(412)
    vols = [random_label_volume(rng, (8, 8, 8)) for _ in range(3)]
    fused = fuse_labels(vols)
    et = extract_region(fused, Region.ET).data
    tc = extract_region(fused, Region.TC).data
    wt = extract_region(fused, Region.WT).data
    assert np.all(tc[et])
    assert np.all(wt[tc])


def test_fuse_validation():
    with pytest.raises(ValueError, match="at least one"):
        fuse_labels([])
    rng = np.random.default_rng(413)
    a = random_label_volume(rng, (4, 4, 4))
    b = random_label_volume(rng, (4, 4, 5))
    with pytest.raises(ValueError):
        fuse_labels([a, b])
    with pytest.raises(ValueError, match="method"):
        fuse_labels([a], method="average")


def test_config_validation():
    with pytest.raises(ValueError):
        StapleConfig(prior=0.0)
    with pytest.raises(ValueError):
        StapleConfig(prior="mean")
    with pytest.raises(ValueError):
        StapleConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        StapleConfig(max_iterations=0)
    with pytest.raises(ValueError):
        StapleConfig(decision_threshold=1.0)
    with pytest.raises(ValueError):
        StapleConfig(initial_sensitivity=1.0)


def test_decisions_validation():
    with pytest.raises(ValueError, match="2-D"):
        RaterDecisions(np.zeros(5, dtype=bool), (5, 1, 1), (1, 1, 1), Region.WT)
    with pytest.raises(ValueError, match="at least one rater"):
        RaterDecisions(np.zeros((0, 5), dtype=bool), (5, 1, 1), (1, 1, 1), Region.WT)
    with pytest.raises(ValueError, match="grid size"):
        RaterDecisions(np.zeros((2, 5), dtype=bool), (2, 2, 2), (1, 1, 1), Region.WT)
    with pytest.raises(ValueError, match="at least one rater mask"):
        RaterDecisions.from_masks([])
    m1 = RegionMask(Region.ET, (2, 2, 2), (1, 1, 1), np.zeros((2, 2, 2), dtype=bool))
    m2 = RegionMask(Region.TC, (2, 2, 2), (1, 1, 1), np.zeros((2, 2, 2), dtype=bool))
    with pytest.raises(ValueError, match="regions"):
        RaterDecisions.from_masks([m1, m2])


def test_result_type_validation():
    with pytest.raises(ValueError):
        RaterPerformance(np.array([0.5, 1.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        ConsensusWeights(np.array([0.5, 1.2]))
