"""Segmentation evaluation: Dice overlap and 95th-percentile Hausdorff.

Scores are computed per region (ET, TC, WT) between a predicted and a
reference label map, then aggregated over a cohort. Empty-mask cases
follow the conventions of the online evaluation platforms this kind of
work is scored on: both masks empty scores a perfect dice of 1.0 and an
hd95 of 0.0, while exactly one empty mask scores dice 0.0 and a fixed
distance penalty (373.13 mm by default). Both are configurable.

hd95 details, since published implementations disagree: the surface of a
mask is the set of foreground voxels with at least one face neighbor
(6-adjacency) outside the mask, the volume border counting as outside.
Directed distances are Euclidean in millimeters under the grid spacing,
each surface voxel of one mask to the nearest surface voxel of the
other. hd95 is the maximum of the two directed 95th percentiles (linear
interpolation), not the percentile of the pooled distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from glioseg.volume import LabelVolume, Region, RegionMask, extract_region

_FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class MetricConfig:
    empty_pred_penalty_mm: float = 373.13  # one mask empty, the other not
    empty_empty_dice: float = 1.0
    empty_empty_hd95: float = 0.0

    def __post_init__(self):
        if not self.empty_pred_penalty_mm > 0:
            raise ValueError(
                f"empty_pred_penalty_mm must be positive, got {self.empty_pred_penalty_mm}"
            )


@dataclass(frozen=True)
class RegionScore:
    region: Region
    dice: float
    hd95_mm: float

    def __post_init__(self):
        if not (np.isfinite(self.dice) and 0.0 <= self.dice <= 1.0):
            raise ValueError(f"dice must be in [0, 1], got {self.dice}")
        if not (np.isfinite(self.hd95_mm) and self.hd95_mm >= 0.0):
            raise ValueError(f"hd95_mm must be >= 0, got {self.hd95_mm}")


@dataclass(frozen=True)
class CaseReport:
    case: str
    scores: tuple[RegionScore, ...]

    def __post_init__(self):
        regions = [s.region for s in self.scores]
        if sorted(r.name for r in regions) != ["ET", "TC", "WT"]:
            raise ValueError(f"need exactly one score per region, got {regions}")

    def score(self, region: Region) -> RegionScore:
        for s in self.scores:
            if s.region is region:
                return s
        raise KeyError(region)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float  # sample standard deviation, 0 for a single case
    median: float


@dataclass(frozen=True)
class CohortSummary:
    count: int
    dice: dict[Region, MetricStats]
    hd95_mm: dict[Region, MetricStats]

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("cohort summary needs at least one case")


def _check_grids(a: RegionMask, b: RegionMask):
    if a.dims != b.dims:
        raise ValueError(f"mask dims differ: {a.dims} vs {b.dims}")
    if not np.allclose(a.spacing, b.spacing, rtol=0.0, atol=1e-6):
        raise ValueError(f"mask spacings differ: {a.spacing} vs {b.spacing}")


def dice(a: RegionMask, b: RegionMask, config: MetricConfig = MetricConfig()) -> float:
    """2|A∩B| / (|A|+|B|); both-empty returns config.empty_empty_dice."""
    _check_grids(a, b)
    size_a = int(a.data.sum())
    size_b = int(b.data.sum())
    if size_a == 0 and size_b == 0:
        return config.empty_empty_dice
    overlap = int((a.data & b.data).sum())
    return 2.0 * overlap / (size_a + size_b)


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a face neighbor outside (border is outside)."""
    eroded = ndimage.binary_erosion(mask, structure=_FACE_STRUCTURE, border_value=0)
    return mask & ~eroded


def _directed_p95(from_surface: np.ndarray, to_distance: np.ndarray) -> float:
    return float(np.percentile(to_distance[from_surface], 95.0))


def hd95(
    a: RegionMask,
    b: RegionMask,
    spacing=None,
    config: MetricConfig = MetricConfig(),
) -> float:
    """95th-percentile symmetric surface distance in millimeters.

    spacing defaults to the masks' common grid spacing; passing it
    explicitly overrides. Empty-mask conventions come from config.
    """
    _check_grids(a, b)
    if spacing is None:
        spacing = a.spacing
    a_empty = not a.data.any()
    b_empty = not b.data.any()
    if a_empty and b_empty:
        return config.empty_empty_hd95
    if a_empty or b_empty:
        return config.empty_pred_penalty_mm
    surf_a = surface_mask(a.data)
    surf_b = surface_mask(b.data)
    # distance from every voxel to the nearest surface voxel, in mm
    dist_to_b = ndimage.distance_transform_edt(~surf_b, sampling=spacing)
    dist_to_a = ndimage.distance_transform_edt(~surf_a, sampling=spacing)
    return max(_directed_p95(surf_a, dist_to_b), _directed_p95(surf_b, dist_to_a))


def evaluate_case(
    pred: LabelVolume,
    truth: LabelVolume,
    config: MetricConfig = MetricConfig(),
    case: str = "",
) -> CaseReport:
    """Score one prediction against its reference, all three regions."""
    if pred.dims != truth.dims:
        raise ValueError(f"label dims differ: {pred.dims} vs {truth.dims}")
    if not np.allclose(pred.spacing, truth.spacing, rtol=0.0, atol=1e-6):
        raise ValueError(f"label spacings differ: {pred.spacing} vs {truth.spacing}")
    scores = []
    for region in Region:
        mask_p = extract_region(pred, region)
        mask_t = extract_region(truth, region)
        scores.append(
            RegionScore(region, dice(mask_p, mask_t, config), hd95(mask_p, mask_t, config=config))
        )
    return CaseReport(case, tuple(scores))


def _stats(values) -> MetricStats:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return MetricStats(float(arr.mean()), std, float(np.median(arr)))


def aggregate(reports: list[CaseReport]) -> CohortSummary:
    """Cohort mean / sample std / median per region and metric."""
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    dice_stats = {}
    hd95_stats = {}
    for region in Region:
        scores = [r.score(region) for r in reports]
        dice_stats[region] = _stats([s.dice for s in scores])
        hd95_stats[region] = _stats([s.hd95_mm for s in scores])
    return CohortSummary(len(reports), dice_stats, hd95_stats)
