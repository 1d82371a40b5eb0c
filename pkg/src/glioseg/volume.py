"""Core volumetric types and tumor-region extraction.

Label codes follow the BraTS 2024 convention:

    0 = background, 1 = NCR (non-enhancing core), 2 = ED (edema), 3 = ET.

Evaluation regions are overlapping label sets: ET = {3}, TC = {1, 3},
WT = {1, 2, 3}, so ET <= TC <= WT voxel-wise by construction.

Voxel data is kept in C-contiguous arrays indexed ``[i, j, k]`` with the
last axis fastest in memory; ``dims[a]`` pairs with ``spacing[a]`` (mm).
All types are immutable values and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

LABEL_BACKGROUND = 0
LABEL_NCR = 1
LABEL_ED = 2
LABEL_ET = 3

VALID_LABELS = (LABEL_BACKGROUND, LABEL_NCR, LABEL_ED, LABEL_ET)


class Region(Enum):
    """Overlapping tumor evaluation regions."""

    ET = "ET"
    TC = "TC"
    WT = "WT"

    @property
    def labels(self) -> tuple[int, ...]:
        return _REGION_LABELS[self]


_REGION_LABELS = {
    Region.ET: (LABEL_ET,),
    Region.TC: (LABEL_NCR, LABEL_ET),
    Region.WT: (LABEL_NCR, LABEL_ED, LABEL_ET),
}


def default_orientation(spacing) -> np.ndarray:
    """Identity voxel-to-world affine (3x4 rows) scaled by spacing."""
    out = np.zeros((3, 4), dtype=np.float64)
    for a in range(3):
        out[a, a] = float(spacing[a])
    return out


def _validate_grid(dims, spacing):
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be 3 positive integers, got {dims}")
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ValueError(f"spacing must be 3 positive reals, got {spacing}")
    return dims, spacing


def same_grid(a, b, spacing_tol: float = 1e-6) -> bool:
    """Whether two volumes/masks share dims and (within tolerance) spacing."""
    return a.dims == b.dims and all(
        abs(sa - sb) <= spacing_tol for sa, sb in zip(a.spacing, b.spacing)
    )


def require_same_grid(a, b, what: str = "volumes") -> None:
    if not same_grid(a, b):
        raise ValueError(
            f"{what} disagree on grid: dims {a.dims} vs {b.dims}, "
            f"spacing {a.spacing} vs {b.spacing}"
        )


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """3D grid of floating-point intensities with spacing and orientation."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    orientation: np.ndarray  # (3, 4) voxel-to-world affine rows
    data: np.ndarray  # float64 [dims], C-order

    def __post_init__(self):
        dims, spacing = _validate_grid(self.dims, self.spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        orientation = np.ascontiguousarray(self.orientation, dtype=np.float64)
        if orientation.shape != (3, 4):
            raise ValueError(f"orientation must be 3x4, got {orientation.shape}")
        object.__setattr__(self, "orientation", orientation)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.shape != dims:
            raise ValueError(f"data shape {data.shape} does not match dims {dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), orientation=None) -> "ScalarVolume":
        data = np.asarray(data, dtype=np.float64)
        if orientation is None:
            orientation = default_orientation(spacing)
        return cls(data.shape, tuple(spacing), orientation, data)

    def with_data(self, data) -> "ScalarVolume":
        """Same grid and orientation, new voxel values."""
        return ScalarVolume(self.dims, self.spacing, self.orientation, data)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """3D grid of integer tumor labels in {0, 1, 2, 3}."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    orientation: np.ndarray
    data: np.ndarray  # uint8 [dims]

    def __post_init__(self):
        dims, spacing = _validate_grid(self.dims, self.spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        orientation = np.ascontiguousarray(self.orientation, dtype=np.float64)
        if orientation.shape != (3, 4):
            raise ValueError(f"orientation must be 3x4, got {orientation.shape}")
        object.__setattr__(self, "orientation", orientation)
        data = np.ascontiguousarray(self.data)
        if data.shape != dims:
            raise ValueError(f"data shape {data.shape} does not match dims {dims}")
        if data.dtype != np.uint8:
            if not np.all(np.isin(data, VALID_LABELS)):
                bad = np.unique(data[~np.isin(data, VALID_LABELS)])
                raise ValueError(f"labels outside {{0,1,2,3}}: {bad[:8]}")
            data = data.astype(np.uint8)
        elif data.max(initial=0) > LABEL_ET:
            bad = np.unique(data[data > LABEL_ET])
            raise ValueError(f"labels outside {{0,1,2,3}}: {bad[:8]}")
        object.__setattr__(self, "data", np.ascontiguousarray(data))

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), orientation=None) -> "LabelVolume":
        data = np.asarray(data)
        if orientation is None:
            orientation = default_orientation(spacing)
        return cls(data.shape, tuple(spacing), orientation, data)

    def with_data(self, data) -> "LabelVolume":
        return LabelVolume(self.dims, self.spacing, self.orientation, data)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Binary mask of one evaluation region over a label grid."""

    region: Region
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray = field(repr=False)  # bool [dims]

    def __post_init__(self):
        dims, spacing = _validate_grid(self.dims, self.spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        data = np.ascontiguousarray(self.data, dtype=bool)
        if data.shape != dims:
            raise ValueError(f"mask shape {data.shape} does not match dims {dims}")
        object.__setattr__(self, "data", data)

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())


def extract_region(labels: LabelVolume, region: Region) -> RegionMask:
    """Binary mask of the voxels whose label belongs to ``region``."""
    mask = np.isin(labels.data, region.labels)
    return RegionMask(region, labels.dims, labels.spacing, mask)


def reconstruct_labels(
    et: RegionMask,
    tc: RegionMask,
    wt: RegionMask,
    orientation: np.ndarray | None = None,
) -> LabelVolume:
    """Rebuild a label volume from per-region masks.

    Nesting is enforced first (ET within TC within WT) by intersection, so
    independently fused masks never produce an invalid labeling. The output
    uses ``orientation`` when given, else a spacing-scaled identity affine.
    """
    require_same_grid(et, tc, "region masks")
    require_same_grid(et, wt, "region masks")
    et_n = et.data & tc.data & wt.data
    tc_n = tc.data & wt.data
    out = np.zeros(wt.dims, dtype=np.uint8)
    out[wt.data] = LABEL_ED
    out[tc_n] = LABEL_NCR
    out[et_n] = LABEL_ET
    if orientation is None:
        orientation = default_orientation(wt.spacing)
    return LabelVolume(wt.dims, wt.spacing, orientation, out)
