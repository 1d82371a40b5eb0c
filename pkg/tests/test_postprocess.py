from __future__ import annotations

import numpy as np
import pytest

from glioseg.postprocess import (
    ComponentLabeling,
    PostprocessConfig,
    connected_components,
    filter_small_et,
    find_tc_hole_voxels,
    postprocess_case,
    repair_tc_holes,
)
from glioseg.volume import LabelVolume, Region, RegionMask, extract_region

from oracles import flood_fill_components


def mask_of(data):
    data = np.asarray(data, dtype=bool)
    return RegionMask(Region.ET, data.shape, (1.0, 1.0, 1.0), data)


def labels_of(data):
    return LabelVolume.from_array(np.asarray(data, dtype=np.uint8))


def test_two_isolated_voxels():
    m = np.zeros((6, 6, 6), dtype=bool)
    m[0, 0, 0] = True
    m[5, 5, 5] = True
    for conn in (6, 18, 26):
        cc = connected_components(mask_of(m), conn)
        assert cc.count == 2
        assert cc.component_sizes == {1: 1, 2: 1}


def test_corner_adjacency_by_connectivity():
    m = np.zeros((3, 3, 3), dtype=bool)
    m[0, 0, 0] = True
    m[1, 1, 1] = True  # corner neighbor: adjacent only under 26
    assert connected_components(mask_of(m), 26).count == 1
    assert connected_components(mask_of(m), 18).count == 2
    assert connected_components(mask_of(m), 6).count == 2


def test_edge_adjacency_by_connectivity():
    m = np.zeros((3, 3, 3), dtype=bool)
    m[0, 0, 0] = True
    m[0, 1, 1] = True  # edge neighbor: adjacent under 18 and 26
    assert connected_components(mask_of(m), 26).count == 1
    assert connected_components(mask_of(m), 18).count == 1
    assert connected_components(mask_of(m), 6).count == 2


def test_components_match_flood_fill_oracle():
    rng = np.random.default_rng(201)
    for trial in range(30):
        m = rng.random((16, 16, 16)) < rng.uniform(0.05, 0.6)
        for conn in (6, 18, 26):
            cc = connected_components(mask_of(m), conn)
            expected = flood_fill_components(m, conn)
            assert np.array_equal(cc.component_ids, expected), f"trial {trial} conn {conn}"
            counts = np.bincount(expected.ravel())
            assert cc.component_sizes == {
                i: int(counts[i]) for i in range(1, len(counts))
            }


def test_component_partition_is_validated():
    ids = np.zeros((2, 2, 2), dtype=np.int32)
    ids[0, 0, 0] = 2  # id 1 missing
    with pytest.raises(ValueError, match="contiguous"):
        ComponentLabeling(ids, {2: 1}, 26)
    with pytest.raises(ValueError, match="sum"):
        ComponentLabeling(np.ones((2, 2, 2), dtype=np.int32), {1: 3}, 26)


def et_blob(dims, size, start=(0, 0, 0)):
    """Solid rectangular ET component of exactly `size` voxels."""
    data = np.zeros(dims, dtype=np.uint8)
    flat = []
    nx, ny, nz = 5, 5, int(np.ceil(size / 25))
    count = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if count == size:
                    break
                flat.append((start[0] + x, start[1] + y, start[2] + z))
                count += 1
    for x, y, z in flat:
        data[x, y, z] = 3
    return data


def test_et_threshold_boundary():
    # exactly 50 voxels: removed; 51: retained
    removed = filter_small_et(labels_of(et_blob((12, 12, 12), 50)))
    assert not (removed.data == 3).any()
    kept = filter_small_et(labels_of(et_blob((12, 12, 12), 51)))
    assert int((kept.data == 3).sum()) == 51


def test_et_filter_is_per_component():
    data = et_blob((20, 20, 20), 50)
    big = et_blob((20, 20, 20), 51, start=(10, 10, 10))
    data[big == 3] = 3
    out = filter_small_et(labels_of(data))
    assert int((out.data == 3).sum()) == 51
    assert not (out.data[:6, :6, :3] == 3).any()


def test_et_filter_ignores_other_labels():
    data = et_blob((12, 12, 12), 10)
    data[8, 8, 8] = 1
    data[8, 8, 9] = 2
    out = filter_small_et(labels_of(data))
    assert out.data[8, 8, 8] == 1
    assert out.data[8, 8, 9] == 2
    assert not (out.data == 3).any()


def test_et_filter_no_et_is_identity():
    data = np.zeros((6, 6, 6), dtype=np.uint8)
    data[2:4, 2:4, 2:4] = 2
    lab = labels_of(data)
    assert filter_small_et(lab) is lab


def test_et_filter_threshold_zero_keeps_everything():
    data = np.zeros((6, 6, 6), dtype=np.uint8)
    data[3, 3, 3] = 3
    out = filter_small_et(labels_of(data), PostprocessConfig(et_min_volume=0))
    assert out.data[3, 3, 3] == 3


def test_center_hole_filled():
    data = np.zeros((7, 7, 7), dtype=np.uint8)
    data[1:6, 1:6, 1:6] = 1
    data[3, 3, 3] = 0
    out = repair_tc_holes(labels_of(data))
    assert out.data[3, 3, 3] == 1
    changed = out.data != data
    assert int(changed.sum()) == 1


def test_no_holes_is_identity():
    data = np.zeros((7, 7, 7), dtype=np.uint8)
    data[1:6, 1:6, 1:6] = 1
    lab = labels_of(data)
    assert repair_tc_holes(lab) is lab


def test_boundary_tunnel_not_filled():
    data = np.zeros((7, 7, 7), dtype=np.uint8)
    data[1:6, 1:6, 1:6] = 1
    data[3, 3, 3] = 0
    data[3, 3, 0:4] = 0  # tunnel from the cavity to the z=0 face
    out = repair_tc_holes(labels_of(data))
    assert np.array_equal(out.data, data)


def test_corner_touching_cavity_is_still_a_hole_under_6():
    # Cavity diagonal to the outside: 6-connectivity does not leak
    # through corners, so it stays a hole.
    data = np.ones((4, 4, 4), dtype=np.uint8)
    data[1, 1, 1] = 0
    out = repair_tc_holes(labels_of(data))
    assert out.data[1, 1, 1] == 1


def test_enclosed_edema_is_preserved():
    data = np.zeros((7, 7, 7), dtype=np.uint8)
    data[1:6, 1:6, 1:6] = 1
    data[3, 3, 3] = 0
    data[3, 3, 4] = 2  # edema voxel inside the cavity
    out = repair_tc_holes(labels_of(data))
    assert out.data[3, 3, 3] == 1  # background filled
    assert out.data[3, 3, 4] == 2  # edema untouched
    # second pass finds nothing left to fill
    assert repair_tc_holes(out) is out


def test_et_in_core_wall_counts_as_core():
    data = np.zeros((7, 7, 7), dtype=np.uint8)
    data[1:6, 1:6, 1:6] = 1
    data[1, 1:6, 1:6] = 3  # one wall is ET; cavity is still enclosed by TC
    data[3, 3, 3] = 0
    out = repair_tc_holes(labels_of(data))
    assert out.data[3, 3, 3] == 1


def test_report_only_mode():
    data = np.zeros((7, 7, 7), dtype=np.uint8)
    data[1:6, 1:6, 1:6] = 1
    data[3, 3, 3] = 0
    lab = labels_of(data)
    config = PostprocessConfig(fill_holes=False)
    holes = find_tc_hole_voxels(lab, config)
    assert int(holes.sum()) == 1 and holes[3, 3, 3]
    assert repair_tc_holes(lab, config) is lab


def test_postprocess_removes_island_and_refills():
    data = np.zeros((9, 9, 9), dtype=np.uint8)
    data[1:8, 1:8, 1:8] = 1
    data[3:5, 3:5, 3:5] = 3  # 8-voxel ET island, below threshold
    out = postprocess_case(labels_of(data))
    assert not (out.data == 3).any()
    assert np.all(out.data[1:8, 1:8, 1:8] == 1)  # cavity refilled with NCR


def test_postprocess_clean_input_unchanged():
    data = et_blob((12, 12, 12), 51)
    lab = labels_of(data)
    out = postprocess_case(lab)
    assert np.array_equal(out.data, lab.data)


def random_labels(rng, dims=(12, 12, 12)):
    data = np.zeros(dims, dtype=np.uint8)
    # a few random blobs per label to create realistic nesting and holes
    for label in (2, 1, 3):
        for _ in range(rng.integers(1, 4)):
            c = rng.integers(0, np.array(dims) - 3)
            s = rng.integers(1, 5, size=3)
            data[c[0] : c[0] + s[0], c[1] : c[1] + s[1], c[2] : c[2] + s[2]] = label
    scatter = rng.random(dims) < 0.05
    data[scatter] = rng.integers(0, 4, size=int(scatter.sum()))
    return labels_of(data)


def test_postprocess_invariants_on_random_volumes():
    rng = np.random.default_rng(202)
    config = PostprocessConfig(et_min_volume=5)
    for _ in range(40):
        lab = random_labels(rng)
        filtered = filter_small_et(lab, config)
        # ET filter only erases label 3; 1 and 2 untouched
        assert np.array_equal(filtered.data == 1, lab.data == 1)
        assert np.array_equal(filtered.data == 2, lab.data == 2)
        et_lost = (lab.data == 3) & (filtered.data == 0)
        assert np.array_equal(filtered.data != lab.data, et_lost)

        repaired = repair_tc_holes(filtered, config)
        # hole repair only adds core voxels, never touches edema
        tc_before = extract_region(filtered, Region.TC).data
        tc_after = extract_region(repaired, Region.TC).data
        assert np.all(tc_after[tc_before])
        assert np.array_equal(repaired.data == 2, filtered.data == 2)

        out = postprocess_case(lab, config)
        assert np.array_equal(out.data, repaired.data)
        again = postprocess_case(out, config)
        assert np.array_equal(again.data, out.data)


def test_config_validation():
    with pytest.raises(ValueError):
        PostprocessConfig(et_min_volume=-1)
    with pytest.raises(ValueError):
        PostprocessConfig(foreground_connectivity=4)
    with pytest.raises(ValueError):
        PostprocessConfig(hole_connectivity=27)
    with pytest.raises(ValueError):
        PostprocessConfig(hole_fill_label=2)
    with pytest.raises(ValueError):
        connected_components(mask_of(np.zeros((2, 2, 2), dtype=bool)), 10)
