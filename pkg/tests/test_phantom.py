from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from protip._kernels import classify_points
from protip.errors import FormatError, InvalidArgument
from protip.phantom import (Cone, Label, PhantomSpec, classify_point, default_phantom,
                            format_phantom, grid_adjacency, intertip_distances, load_labelmap,
                            load_phantom, parse_phantom, rasterize_labelmap, save_labelmap,
                            save_phantom)


@pytest.fixture(scope="module")
def spec():
    return default_phantom()


@pytest.fixture(scope="module")
def vol1(spec):
    return rasterize_labelmap(spec, 1.0)


def test_default_heights(spec):
    assert sorted(spec.heights) == [20, 25, 30, 35, 40, 45, 50, 55, 60]
    assert len(spec.cones) == 9


def test_adjacent_heights_differ_by_ten(spec):
    adj = grid_adjacency(spec)
    assert len(adj) == 12
    assert min(abs(spec.heights[i] - spec.heights[j]) for i, j in adj) >= 10


def test_default_layout_is_a_best_placement(spec):
    # exhaustive search over all placements of the nine heights on the grid
    adj = np.array(grid_adjacency(spec))
    perms = np.array(list(permutations(range(20, 61, 5))), dtype=float)
    worst = np.abs(perms[:, adj[:, 0]] - perms[:, adj[:, 1]]).min(axis=1)
    assert (worst >= 10).any()
    h = spec.heights
    assert np.abs(h[adj[:, 0]] - h[adj[:, 1]]).min() == worst.max()


def test_tips_above_base(spec):
    np.testing.assert_allclose(spec.tips()[:, 2], spec.heights)


def test_classify_examples(spec):
    c0 = spec.cones[0]
    n = spec.normal
    assert classify_point(spec, np.asarray(c0.base_center) + 0.5 * c0.height * n) == Label.Cone
    assert classify_point(spec, [20.0, 20.0, -1.0]) == Label.Base
    assert classify_point(spec, c0.tip(n) + n) == Label.Background
    assert classify_point(spec, [500.0, 0.0, -1.0]) == Label.Background


@given(st.floats(0.2, 5.0), st.integers(0, 2**31))
def test_classify_scale_consistent(s, seed):
    spec = default_phantom()
    lo, hi = spec.bounds()
    q = np.random.default_rng(seed).uniform(lo - 5, hi + 5, (200, 3))
    np.testing.assert_array_equal(classify_point(spec, q), classify_point(spec.scaled(s), s * q))


@given(st.integers(0, 2**31))
def test_classify_kernel_matches_numpy(seed):
    spec = default_phantom()
    lo, hi = spec.bounds()
    q = np.random.default_rng(seed).uniform(lo - 5, hi + 5, (500, 3))
    out = np.empty(len(q), dtype=np.uint8)
    e1, e2 = spec._axes
    classify_points(q, np.asarray(spec.base_point), spec.normal, e1, e2, spec.base_thickness,
                    spec.plate_half_extent, np.array([c.base_center for c in spec.cones]),
                    np.array([c.base_radius for c in spec.cones]), spec.heights, out)
    np.testing.assert_array_equal(out, classify_point(spec, q))


def test_cone_voxel_volume(spec, vol1):
    analytic = sum(np.pi * c.base_radius**2 * c.height / 3 for c in spec.cones)
    counted = np.count_nonzero(vol1.data == Label.Cone) * vol1.spacing**3
    assert abs(counted - analytic) / analytic < 0.05


def test_axis_slice_is_triangle(spec, vol1):
    c = spec.cones[4]
    xs, ys = vol1.voxel_centers("x"), vol1.voxel_centers("y")
    j = int(np.argmin(np.abs(ys - c.base_center[1])))
    sl = vol1.data[:, j, :] == Label.Cone  # (z, x)
    widths = sl.sum(axis=1)
    rows = np.flatnonzero(widths)
    # width shrinks monotonically with height
    assert np.all(np.diff(widths[rows]) <= 0)
    top_z = vol1.voxel_centers("z")[rows[-1]]
    assert c.height - 2 <= top_z <= c.height


def test_corner_is_background(vol1):
    assert vol1.data[-1, 0, 0] == Label.Background


def test_rasterize_rejects_bad_spacing(spec):
    with pytest.raises(InvalidArgument):
        rasterize_labelmap(spec, 0.0)
    with pytest.raises(InvalidArgument):
        rasterize_labelmap(spec, -1.0)


def test_rasterize_resolution_agreement(spec, vol1):
    fine = rasterize_labelmap(spec, 0.5)
    co = fine.data[::2, ::2, ::2]
    n = [min(a, b) for a, b in zip(co.shape, vol1.data.shape)]
    a = co[:n[0], :n[1], :n[2]]
    b = vol1.data[:n[0], :n[1], :n[2]]
    assert np.mean(a == b) >= 0.99


def test_labelmap_round_trip(tmp_path, spec):
    vol = rasterize_labelmap(spec, 4.0)
    save_labelmap(tmp_path, vol)
    back = load_labelmap(tmp_path)
    np.testing.assert_array_equal(back.data, vol.data)
    np.testing.assert_allclose(back.origin, vol.origin)
    assert back.spacing == vol.spacing


def test_intertip_distances(spec):
    d = intertip_distances(spec)
    assert len(d) == 36
    assert np.all(d > 0)
    tips = spec.tips()
    brute = [np.sqrt(sum((tips[i][k] - tips[j][k]) ** 2 for k in range(3)))
             for i in range(9) for j in range(i + 1, 9)]
    np.testing.assert_allclose(d, brute, rtol=1e-12)


def test_phantom_file_round_trip(tmp_path, spec):
    save_phantom(tmp_path / "p.txt", spec)
    back = load_phantom(tmp_path / "p.txt")
    np.testing.assert_array_equal(back.heights, spec.heights)
    np.testing.assert_allclose(back.tips(), spec.tips())
    assert load_phantom("default").heights.tolist() == spec.heights.tolist()


def test_phantom_validation():
    spec = default_phantom()
    cones = list(spec.cones)
    cones[1] = Cone(cones[1].base_center, cones[1].base_radius, 22.0)  # next to 20 mm
    with pytest.raises(InvalidArgument):
        PhantomSpec(tuple(cones)).validate()
    with pytest.raises(InvalidArgument):
        PhantomSpec(spec.cones[:8]).validate()
    text = format_phantom(PhantomSpec(tuple(cones)))
    with pytest.raises(FormatError):
        parse_phantom(text)
    assert parse_phantom(text, strict=False).heights[1] == 22.0


def test_phantom_parse_errors(tmp_path):
    with pytest.raises(FormatError):
        parse_phantom("cone = 1 2 3\n", strict=False)
    with pytest.raises(FormatError):
        parse_phantom("colour = red\n", strict=False)
    with pytest.raises(FormatError):
        parse_phantom("base_thickness = ten\n", strict=False)
    with pytest.raises(FormatError):
        load_phantom(tmp_path / "none.txt")
