"""Per-modality intensity preprocessing.

Two steps, applied per volume: z-score normalization (subtract mean,
divide by standard deviation) and percentile rescaling (stretch the
2nd..98th percentile range onto [0, 1], clamping the tails). Statistics
are computed over the included voxel set; by default exact-zero voxels
are excluded, since skull-stripped volumes are dominated by zero
background. Excluded voxels do not enter the statistics and are written
as 0 (z-score) or out_min (rescale) in the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glioseg.volume import ScalarVolume


@dataclass(frozen=True)
class NormalizationPolicy:
    """Controls which voxels enter intensity statistics."""

    include_background: bool = False
    epsilon: float = 1e-8  # minimum admissible standard deviation

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class RescaleSpec:
    """Percentile window and output range for intensity stretching."""

    lo_percentile: float = 2.0
    hi_percentile: float = 98.0
    out_min: float = 0.0
    out_max: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lo_percentile < self.hi_percentile <= 100.0:
            raise ValueError(
                f"need 0 <= lo < hi <= 100, got ({self.lo_percentile}, {self.hi_percentile})"
            )
        if not self.out_min < self.out_max:
            raise ValueError(f"need out_min < out_max, got ({self.out_min}, {self.out_max})")


def _included_values(volume: ScalarVolume, policy: NormalizationPolicy):
    if policy.include_background:
        mask = np.ones(volume.dims, dtype=bool)
    else:
        mask = volume.data != 0.0
    values = volume.data[mask]
    if values.size == 0:
        raise ValueError("no voxels in the included set; volume is all background")
    return mask, values


def zscore_normalize(
    volume: ScalarVolume, policy: NormalizationPolicy = NormalizationPolicy()
) -> ScalarVolume:
    """Map included voxels to (x - mean) / std; excluded voxels become 0.

    Mean and standard deviation are the population form (divisor N) over
    the included set. Raises ValueError when the included set is smaller
    than two voxels or its spread is at or below policy.epsilon.
    """
    mask, values = _included_values(volume, policy)
    if values.size < 2:
        raise ValueError(f"need at least 2 included voxels, got {values.size}")
    mean = float(values.mean())
    std = float(values.std())
    if std <= policy.epsilon:
        raise ValueError(
            f"intensity spread {std:.3g} is at or below epsilon {policy.epsilon:.3g}"
        )
    out = np.zeros(volume.dims, dtype=np.float64)
    out[mask] = (values - mean) / std
    return volume.with_data(out)


def rescale_percentiles(
    volume: ScalarVolume,
    spec: RescaleSpec = RescaleSpec(),
    policy: NormalizationPolicy = NormalizationPolicy(),
) -> ScalarVolume:
    """Stretch the lo..hi percentile window onto [out_min, out_max].

    Percentiles use linear interpolation between closest ranks over the
    included set. Values outside the window clamp to the range ends;
    excluded voxels become out_min. Raises ValueError when the window is
    degenerate (P_lo == P_hi).
    """
    mask, values = _included_values(volume, policy)
    p_lo, p_hi = np.percentile(values, [spec.lo_percentile, spec.hi_percentile])
    if not p_lo < p_hi:
        raise ValueError(
            f"degenerate percentile window: P{spec.lo_percentile:g} == P{spec.hi_percentile:g}"
            f" == {p_lo:.6g}"
        )
    unit = np.clip((volume.data - p_lo) / (p_hi - p_lo), 0.0, 1.0)
    out = unit * (spec.out_max - spec.out_min) + spec.out_min
    out[~mask] = spec.out_min
    return volume.with_data(out)


def preprocess_volume(
    volume: ScalarVolume,
    policy: NormalizationPolicy = NormalizationPolicy(),
    spec: RescaleSpec = RescaleSpec(),
) -> ScalarVolume:
    """Full preprocessing for one modality: z-score, then percentile rescale."""
    return rescale_percentiles(zscore_normalize(volume, policy), spec, policy)
