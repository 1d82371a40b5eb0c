"""Label-map post-processing: small-component removal and hole repair.

Two rules, applied in order. First, every connected component of the
enhancing-tumor mask (label 3) whose volume is at or below a threshold
(default 50 voxels) is erased to background. Second, the tumor core
(labels 1 and 3) is checked for interior cavities the removal may have
opened: background voxels enclosed by the core, unreachable from the
volume boundary through non-core voxels, are relabeled (default to NCR).
Edema voxels inside such cavities are left alone, so voxels outside the
core other than true background are never rewritten.

Foreground components use 26-adjacency and cavities 6-adjacency by
default, the complementary pairing that keeps foreground/background
topology consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from glioseg.volume import (
    LABEL_BACKGROUND,
    LABEL_ET,
    LABEL_NCR,
    LabelVolume,
    Region,
    RegionMask,
    extract_region,
)

_STRUCTURE_RANK = {6: 1, 18: 2, 26: 3}


@dataclass(frozen=True)
class PostprocessConfig:
    et_min_volume: int = 50  # components of size <= this are removed
    foreground_connectivity: int = 26
    hole_connectivity: int = 6
    hole_fill_label: int = LABEL_NCR
    fill_holes: bool = True  # False: detect only, leave labels untouched

    def __post_init__(self):
        if self.et_min_volume < 0:
            raise ValueError(f"et_min_volume must be >= 0, got {self.et_min_volume}")
        for name in ("foreground_connectivity", "hole_connectivity"):
            value = getattr(self, name)
            if value not in _STRUCTURE_RANK:
                raise ValueError(f"{name} must be one of 6, 18, 26, got {value}")
        if self.hole_fill_label not in (LABEL_NCR, LABEL_ET):
            raise ValueError(
                f"hole_fill_label must be a tumor-core label (1 or 3), got {self.hole_fill_label}"
            )


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected-component partition of a binary mask.

    component_ids holds one integer per voxel, 0 for background;
    foreground ids are contiguous from 1 in raster order of each
    component's first voxel.
    """

    component_ids: np.ndarray  # int32 [dims]
    component_sizes: dict[int, int]
    connectivity: int

    def __post_init__(self):
        ids = sorted(self.component_sizes)
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"component ids not contiguous from 1: {ids[:8]}")
        total = int(np.count_nonzero(self.component_ids))
        if sum(self.component_sizes.values()) != total:
            raise ValueError("component sizes do not sum to the foreground count")

    @property
    def count(self) -> int:
        return len(self.component_sizes)


def _label_array(mask: np.ndarray, connectivity: int):
    """Label a bool array; ids follow raster order of first occurrence."""
    structure = ndimage.generate_binary_structure(3, _STRUCTURE_RANK[connectivity])
    raw, count = ndimage.label(mask, structure=structure)
    raw = raw.astype(np.int32, copy=False)
    if count == 0:
        return raw, {}
    flat = raw.ravel()
    foreground = flat[flat != 0]
    ids, first_seen = np.unique(foreground, return_index=True)
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[ids[np.argsort(first_seen)]] = np.arange(1, count + 1, dtype=np.int32)
    relabeled = remap[raw]
    sizes = np.bincount(relabeled.ravel(), minlength=count + 1)
    return relabeled, {i: int(sizes[i]) for i in range(1, count + 1)}


def connected_components(mask: RegionMask, connectivity: int = 26) -> ComponentLabeling:
    """Partition the mask's foreground into maximal connected components."""
    if connectivity not in _STRUCTURE_RANK:
        raise ValueError(f"connectivity must be one of 6, 18, 26, got {connectivity}")
    ids, sizes = _label_array(mask.data, connectivity)
    return ComponentLabeling(ids, sizes, connectivity)


def filter_small_et(labels: LabelVolume, config: PostprocessConfig = PostprocessConfig()) -> LabelVolume:
    """Erase enhancing-tumor components of size <= et_min_volume to background."""
    et = labels.data == LABEL_ET
    if not et.any():
        return labels
    ids, sizes = _label_array(et, config.foreground_connectivity)
    small = [i for i, n in sizes.items() if n <= config.et_min_volume]
    if not small:
        return labels
    out = labels.data.copy()
    out[np.isin(ids, small)] = LABEL_BACKGROUND
    return labels.with_data(out)


def find_tc_hole_voxels(
    labels: LabelVolume, config: PostprocessConfig = PostprocessConfig()
) -> np.ndarray:
    """Bool mask of background voxels enclosed by the tumor core.

    A cavity is a connected component of the core's complement (under
    hole_connectivity) that touches no face of the volume. Only label-0
    voxels inside cavities are reported; enclosed edema stays edema.
    """
    tc = extract_region(labels, Region.TC).data
    complement = ~tc
    ids, sizes = _label_array(complement, config.hole_connectivity)
    if not sizes:
        return np.zeros(labels.dims, dtype=bool)
    boundary_ids = set()
    for axis in range(3):
        for face in (0, -1):
            boundary_ids.update(np.unique(np.take(ids, face, axis=axis)))
    boundary_ids.discard(0)
    interior = [i for i in sizes if i not in boundary_ids]
    if not interior:
        return np.zeros(labels.dims, dtype=bool)
    return np.isin(ids, interior) & (labels.data == LABEL_BACKGROUND)


def repair_tc_holes(
    labels: LabelVolume, config: PostprocessConfig = PostprocessConfig()
) -> LabelVolume:
    """Relabel enclosed background cavities in the tumor core.

    With fill_holes=False the input is returned unchanged; callers can
    still inspect find_tc_hole_voxels for reporting.
    """
    holes = find_tc_hole_voxels(labels, config)
    if not config.fill_holes or not holes.any():
        return labels
    out = labels.data.copy()
    out[holes] = config.hole_fill_label
    return labels.with_data(out)


def postprocess_case(
    labels: LabelVolume, config: PostprocessConfig = PostprocessConfig()
) -> LabelVolume:
    """Full post-processing: small-ET removal, then core hole repair."""
    return repair_tc_holes(filter_small_et(labels, config), config)
