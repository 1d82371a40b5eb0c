"""Binary STAPLE fusion of multiple segmentation masks.

Each model's binary mask is treated as one rater. The EM algorithm
alternates between estimating the per-voxel foreground posterior W_i
from the current rater sensitivities p_j and specificities q_j (E-step)
and re-estimating p_j, q_j from the weighted votes (M-step), starting
from a high-confidence (0.99999) performance guess:

    a_i = f * prod_j p_j^D_ij (1-p_j)^(1-D_ij)
    b_i = (1-f) * prod_j (1-q_j)^D_ij q_j^(1-D_ij)
    W_i = a_i / (a_i + b_i)

    p_j = sum_i W_i D_ij / sum_i W_i
    q_j = sum_i (1-W_i)(1-D_ij) / sum_i (1-W_i)

The scalar prior f defaults to the mean rater foreground fraction.
Products run in log space with a per-voxel max subtraction so dozens of
raters cannot underflow; p and q are clamped to [1e-6, 1-1e-6] after
every M-step. Iteration stops when the mean absolute change in W falls
to the tolerance or at max_iterations. The fused mask is W >= threshold
(ties to foreground).

Label maps are fused per region: ET, TC, and WT are each fused as an
independent binary problem and the results recombined with nesting
repair, so the output always satisfies ET within TC within WT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glioseg.volume import (
    LabelVolume,
    Region,
    RegionMask,
    extract_region,
    reconstruct_labels,
    require_same_grid,
)

PERFORMANCE_CLAMP = 1e-6  # p, q kept inside [clamp, 1 - clamp]

FUSION_METHODS = ("staple", "majority")


@dataclass(frozen=True)
class StapleConfig:
    prior: float | str = "auto"  # scalar foreground prior, or "auto"
    tolerance: float = 1e-7  # on mean |change in W| between iterations
    max_iterations: int = 100
    decision_threshold: float = 0.5
    initial_sensitivity: float = 0.99999
    initial_specificity: float = 0.99999

    def __post_init__(self):
        if isinstance(self.prior, str):
            if self.prior != "auto":
                raise ValueError(f"prior must be 'auto' or a real in (0,1), got {self.prior!r}")
        elif not 0.0 < self.prior < 1.0:
            raise ValueError(f"prior must lie in (0,1), got {self.prior}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError(
                f"decision_threshold must lie in (0,1), got {self.decision_threshold}"
            )
        for name in ("initial_sensitivity", "initial_specificity"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0,1), got {value}")


@dataclass(frozen=True)
class RaterDecisions:
    """Complete binary votes of J raters over the voxels of one grid."""

    decisions: np.ndarray  # bool [J, N], one row per rater
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    region: Region

    def __post_init__(self):
        decisions = np.ascontiguousarray(self.decisions, dtype=bool)
        if decisions.ndim != 2:
            raise ValueError(f"decisions must be 2-D (raters, voxels), got {decisions.shape}")
        if decisions.shape[0] < 1:
            raise ValueError("need at least one rater")
        expected = int(np.prod(self.dims))
        if decisions.shape[1] != expected:
            raise ValueError(
                f"decision columns {decisions.shape[1]} do not match grid size {expected}"
            )
        object.__setattr__(self, "decisions", decisions)

    @property
    def num_raters(self) -> int:
        return self.decisions.shape[0]

    @property
    def num_voxels(self) -> int:
        return self.decisions.shape[1]

    @classmethod
    def from_masks(cls, masks: list[RegionMask]) -> "RaterDecisions":
        if not masks:
            raise ValueError("need at least one rater mask")
        first = masks[0]
        for other in masks[1:]:
            require_same_grid(first, other, "rater masks")
            if other.region is not first.region:
                raise ValueError(
                    f"rater masks mix regions {first.region} and {other.region}"
                )
        rows = np.stack([m.data.ravel() for m in masks])
        return cls(rows, first.dims, first.spacing, first.region)

    def to_mask(self, flat_foreground: np.ndarray) -> RegionMask:
        data = np.asarray(flat_foreground, dtype=bool).reshape(self.dims)
        return RegionMask(self.region, self.dims, self.spacing, data)


@dataclass(frozen=True)
class RaterPerformance:
    sensitivity: np.ndarray  # float64 [J], strictly inside (0,1)
    specificity: np.ndarray  # float64 [J]

    def __post_init__(self):
        p = np.ascontiguousarray(self.sensitivity, dtype=np.float64)
        q = np.ascontiguousarray(self.specificity, dtype=np.float64)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError(f"per-rater vectors disagree: {p.shape} vs {q.shape}")
        for name, values in (("sensitivity", p), ("specificity", q)):
            if not np.all((values > 0.0) & (values < 1.0)):
                raise ValueError(f"{name} must lie strictly inside (0,1)")
        object.__setattr__(self, "sensitivity", p)
        object.__setattr__(self, "specificity", q)


@dataclass(frozen=True)
class ConsensusWeights:
    values: np.ndarray  # float64 [N], per-voxel foreground posterior

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"weights must be flat, got shape {values.shape}")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValueError("weights must lie in [0,1]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class StapleResult:
    mask: RegionMask
    performance: RaterPerformance
    weights: ConsensusWeights
    iterations: int
    converged: bool
    degenerate: bool  # auto prior hit 0 or 1, EM skipped


def _clamp(values: np.ndarray) -> np.ndarray:
    return np.clip(values, PERFORMANCE_CLAMP, 1.0 - PERFORMANCE_CLAMP)


def _degenerate_result(
    decisions: RaterDecisions, config: StapleConfig, foreground: bool
) -> StapleResult:
    n = decisions.num_voxels
    flat = np.full(n, foreground, dtype=bool)
    return StapleResult(
        mask=decisions.to_mask(flat),
        performance=RaterPerformance(
            _clamp(np.full(decisions.num_raters, config.initial_sensitivity)),
            _clamp(np.full(decisions.num_raters, config.initial_specificity)),
        ),
        weights=ConsensusWeights(np.full(n, 1.0 if foreground else 0.0)),
        iterations=0,
        converged=True,
        degenerate=True,
    )


def staple_binary(decisions: RaterDecisions, config: StapleConfig = StapleConfig()) -> StapleResult:
    """Run the EM fusion on one binary problem.

    An auto prior of exactly 0 (all raters empty) or 1 (all raters full)
    short-circuits to the unanimous answer with the degenerate flag set.
    """
    d = decisions.decisions.astype(np.float64)
    num_raters, num_voxels = d.shape
    if isinstance(config.prior, str):
        prior = float(d.mean())
        if prior == 0.0:
            return _degenerate_result(decisions, config, foreground=False)
        if prior == 1.0:
            return _degenerate_result(decisions, config, foreground=True)
    else:
        prior = float(config.prior)
    log_f = np.log(prior)
    log_1f = np.log1p(-prior)
    votes_per_rater = d.sum(axis=1)  # reused by every M-step

    p = _clamp(np.full(num_raters, config.initial_sensitivity))
    q = _clamp(np.full(num_raters, config.initial_specificity))
    w = np.zeros(num_voxels)
    w_prev = None
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        # E-step, log space: log a_i and log b_i share the structure
        # const + D^T (on - off), so one matvec each.
        log_p, log_1p = np.log(p), np.log1p(-p)
        log_q, log_1q = np.log(q), np.log1p(-q)
        log_a = log_f + log_1p.sum() + d.T @ (log_p - log_1p)
        log_b = log_1f + log_q.sum() + d.T @ (log_1q - log_q)
        peak = np.maximum(log_a, log_b)
        a = np.exp(log_a - peak)
        b = np.exp(log_b - peak)
        w = a / (a + b)

        if w_prev is not None and np.abs(w - w_prev).mean() <= config.tolerance:
            converged = True
            break
        w_prev = w

        # M-step
        w_total = w.sum()
        complement_total = num_voxels - w_total
        weighted_votes = d @ w
        if w_total > 0.0:
            p = _clamp(weighted_votes / w_total)
        if complement_total > 0.0:
            q = _clamp(
                (complement_total - (votes_per_rater - weighted_votes)) / complement_total
            )

    return StapleResult(
        mask=decisions.to_mask(w >= config.decision_threshold),
        performance=RaterPerformance(p, q),
        weights=ConsensusWeights(w),
        iterations=iterations,
        converged=converged,
        degenerate=False,
    )


def majority_vote(decisions: RaterDecisions) -> RegionMask:
    """Foreground where strictly more than half the raters vote; ties lose."""
    counts = decisions.decisions.sum(axis=0)
    return decisions.to_mask(2 * counts > decisions.num_raters)


def fuse_labels(
    predictions: list[LabelVolume],
    config: StapleConfig = StapleConfig(),
    method: str = "staple",
) -> LabelVolume:
    """Fuse label maps region by region into one consensus label map."""
    if not predictions:
        raise ValueError("need at least one prediction to fuse")
    if method not in FUSION_METHODS:
        raise ValueError(f"method must be one of {FUSION_METHODS}, got {method!r}")
    first = predictions[0]
    for other in predictions[1:]:
        require_same_grid(first, other, "predictions")
    fused = {}
    for region in Region:
        decisions = RaterDecisions.from_masks(
            [extract_region(p, region) for p in predictions]
        )
        if method == "majority":
            fused[region] = majority_vote(decisions)
        else:
            fused[region] = staple_binary(decisions, config).mask
    return reconstruct_labels(
        fused[Region.ET], fused[Region.TC], fused[Region.WT], orientation=first.orientation
    )
