"""Brain tumor segmentation toolkit.

Intensity preprocessing, EM-based ensemble label fusion, connected-component
post-processing, Dice/HD95 evaluation, and desk-scale forward passes of the
three volumetric segmentation architectures.
"""

from glioseg.volume import (
    LabelVolume,
    Region,
    RegionMask,
    ScalarVolume,
    extract_region,
    reconstruct_labels,
)

__all__ = [
    "LabelVolume",
    "Region",
    "RegionMask",
    "ScalarVolume",
    "extract_region",
    "reconstruct_labels",
]

__version__ = "0.1.0"
