import numpy as np
import pytest
from scipy import ndimage

from mvmotion.grid import GridError, LabelVolume, ScalarVolume
from mvmotion.multiview import (EmptyEdgeWarning, PlaneSpec, edge_array, extract_edge_map,
                                gaussian_blur, plane_blur, rasterize_plane, slice_volume,
                                soften_array, soften_edges, soften_in_plane, standard_planes)

BIG = (1000.0, 1000.0)


def test_axis_aligned_slab():
    spec = PlaneSpec("sax_0", (0, 0, 3.0), (1, 0, 0), (0, 1, 0), BIG)
    mask = rasterize_plane(spec, (8, 8, 8), (1, 1, 1))
    expect = np.zeros((8, 8, 8), bool)
    expect[3] = True
    assert np.array_equal(mask, expect)


def test_sagittal_plane_through_centre():
    spec = PlaneSpec("2ch", (4.0, 0, 0), (0, 1, 0), (0, 0, 1), BIG)
    mask = rasterize_plane(spec, (9, 6, 5), (1, 1, 1))
    assert np.array_equal(np.argwhere(mask)[:, 2], np.full(30, 4))


def test_tilted_plane_matches_distance_oracle():
    s = np.sqrt(0.5)
    spec = PlaneSpec("4ch", (3.5, 3.5, 3.5), (s, s, 0.0), (0.0, 0.0, 1.0), BIG)
    spacing = (1.0, 1.5, 2.0)
    mask = rasterize_plane(spec, (8, 8, 8), spacing)
    n = np.cross(spec.axis_u, spec.axis_v)
    half = 0.5 * sum(abs(n[i]) * spacing[i] for i in range(3))
    for z in range(8):
        for y in range(8):
            for x in range(8):
                p = np.array([x * spacing[0], y * spacing[1], z * spacing[2]]) - spec.origin_mm
                assert mask[z, y, x] == (abs(p @ n) < half)


def test_plane_outside_grid():
    spec = PlaneSpec("sax_0", (0, 0, 50.0), (1, 0, 0), (0, 1, 0), BIG)
    with pytest.raises(GridError):
        rasterize_plane(spec, (4, 4, 4), (1, 1, 1))


def test_axes_must_be_orthonormal():
    with pytest.raises(ValueError):
        PlaneSpec("x", (0, 0, 0), (1, 0, 0), (1, 1, 0), BIG)


def test_plane_json_round_trip():
    spec = PlaneSpec("2ch", (1, 2, 3), (1, 0, 0), (0, 0, 1), (10, 20))
    assert PlaneSpec.from_json(spec.to_json()) == spec


def test_standard_planes(default_study):
    planes = default_study.planes
    assert len(planes.sax_ids) == 9 and planes.lax_ids == ["2ch", "4ch"]
    slabs = [np.flatnonzero(planes.masks[i].any(axis=(1, 2))) for i in planes.sax_ids]
    assert [int(s[0]) for s in slabs] == list(range(8, 25, 2))
    assert all(len(s) == 1 for s in slabs)
    total = sum(planes.masks[i].astype(int) for i in planes.sax_ids)
    assert total.max() == 1  # disjoint
    assert planes.masks["2ch"].any(axis=(0, 2)).sum() == 1  # single y row
    assert len(planes.without_lax().specs) == 9


def test_slice_volume(rng):
    vol = ScalarVolume(rng.random((5, 4, 3)))
    assert np.array_equal(slice_volume(vol, np.ones((5, 4, 3), bool)).data, vol.data)
    mask = np.zeros((5, 4, 3), bool)
    mask[3] = True
    out = slice_volume(vol, mask).data
    assert np.all(out[np.arange(5) != 3] == 0)
    assert np.isclose(out.sum(), vol.data[mask].sum())
    assert np.array_equal(slice_volume(ScalarVolume(out), mask).data, out)
    with pytest.raises(GridError):
        slice_volume(vol, np.ones((2, 2, 2)))


def test_cube_surface_edges():
    lab = np.zeros((5, 5, 5), np.uint8)
    lab[1:4, 1:4, 1:4] = 1
    edge = extract_edge_map(LabelVolume(lab), 1).data
    assert edge.sum() == 26 and edge[2, 2, 2] == 0
    assert np.all(lab[edge > 0] == 1)


def test_isolated_voxel_and_absent_label():
    lab = np.zeros((3, 3, 3), np.uint8)
    lab[1, 1, 1] = 1
    assert np.array_equal(extract_edge_map(LabelVolume(lab), 1).data, lab.astype(float))
    with pytest.warns(EmptyEdgeWarning):
        assert extract_edge_map(LabelVolume(lab), 2).data.sum() == 0


def test_background_edge_avoids_foreground_interior(rng):
    lab = np.zeros((8, 8, 8), np.uint8)
    lab[2:6, 1:7, 2:7] = 1
    bg_edge = edge_array(lab, 0)
    interior = (lab == 1) & ~edge_array(lab, 1)
    assert not (bg_edge & interior).any()


def test_soften_identity_and_symmetry():
    e = np.zeros((9, 9, 9))
    e[4, 4, 2:7] = 1
    assert np.array_equal(soften_array(e, 0.0), e)
    s = soften_array(e, 1.0)
    assert np.allclose(s, s[:, :, ::-1]) and np.allclose(s, s[:, ::-1, :])
    assert s.max() <= 1.0 and s.min() >= 0.0
    assert s[e > 0].max() == 1.0 and s[e > 0].min() > 0.5
    with pytest.raises(ValueError):
        soften_array(e, -1.0)


def test_blur_preserves_mass(rng):
    e = np.zeros((21, 21, 21))
    e[8:13, 8:13, 8:13] = rng.random((5, 5, 5))
    assert abs(gaussian_blur(e, 1.0).sum() - e.sum()) < 1e-6


def test_soften_edges_wrapper():
    e = np.zeros((5, 5, 5))
    e[2, 2, 2] = 1
    out = soften_edges(ScalarVolume(e), 1.0)
    assert out.data[2, 2, 2] == 1.0


@pytest.mark.parametrize("normal", [(0, 0, 1), (0, 1, 0)])
def test_plane_blur_matches_spatial_gaussian(normal):
    # sigma 4.5 mm is at least 1.5 voxels on every blurred axis, where the
    # sampled and continuous Gaussian kernels agree closely
    spacing = (2.0, 2.25, 3.0)
    sigmas = [0.0 if n else 4.5 / s for n, s in zip(normal[::-1], spacing[::-1])]
    a = np.random.default_rng(3).random((10, 14, 16))
    oracle = ndimage.gaussian_filter(a, sigmas, mode="constant", truncate=8.0)
    assert np.abs(plane_blur(a, normal, 4.5, spacing) - oracle).max() < 2e-3


def test_plane_blur_keeps_planes_apart():
    a = np.zeros((7, 9, 9))
    a[3] = 1.0
    out = plane_blur(a, (0, 0, 1), 3.0, (1.0, 1.0, 1.0))
    assert np.abs(out[[0, 1, 2, 4, 5, 6]]).max() < 1e-12


def test_soften_in_plane_reads_one_on_a_straight_line():
    e = np.zeros((12, 20, 20))
    e[6, 10, 3:17] = 1
    s = soften_in_plane(e, (0, 0, 1), 1.5, (1.5, 1.5, 3.0))
    assert s.min() >= 0 and s.max() <= 1
    assert np.allclose(s[6, 10, 7:13], 1.0, atol=1e-3)
    assert np.abs(s[5]).max() < 1e-12
    assert np.array_equal(soften_in_plane(e, (0, 0, 1), 0.0, (1.5, 1.5, 3.0)), e)
    with pytest.raises(ValueError):
        soften_in_plane(e, (0, 0, 1), -1.0, (1.5, 1.5, 3.0))
