import numpy as np
import pytest
from scipy import ndimage

from mvmotion import kernels
from mvmotion.grid import CAVITY, MYOCARDIUM, identity_coords, jacobian_det_array, warp_array
from mvmotion.phantom import (ConfigError, PhantomConfig, _grid_mm, apply_misalignment,
                              ed_intensity, es_frame_index, generate, motion_forward,
                              motion_inverse)

INTERIOR = (slice(2, -2),) * 3


def test_no_motion_gives_identical_frames():
    st = generate(PhantomConfig(radial_amplitude=0, longitudinal_amplitude=0, noise_sigma=0,
                                frames=4))
    assert np.all(st.fields == 0)
    assert all(np.array_equal(st.images[t], st.images[0]) for t in range(4))
    assert all(np.array_equal(st.labels[t], st.labels[0]) for t in range(4))


def test_cavity_minimal_at_es():
    st = generate(PhantomConfig(radial_amplitude=0.2, longitudinal_amplitude=0.1, noise_sigma=0))
    cav = [(st.labels[t] == CAVITY).sum() for t in range(20)]
    assert int(np.argmin(cav)) == 10
    assert all(cav[10] < cav[t] for t in range(20) if t != 10)


@pytest.mark.parametrize("frames,es", [(20, 10), (2, 1), (5, 3), (7, 4)])
def test_es_index(frames, es):
    assert es_frame_index(frames) == es


def test_jacobian_positive_on_myocardium():
    st = generate(PhantomConfig(radial_amplitude=0.3, longitudinal_amplitude=0.3, noise_sigma=0,
                                frames=4))
    for t in range(4):
        det = jacobian_det_array(st.fields[t])
        assert det[st.labels[t] == MYOCARDIUM].min() > 0


def test_wall_volume_nearly_constant(clean_study):
    n0 = (clean_study.labels[0] == MYOCARDIUM).sum()
    for t in range(clean_study.frames):
        assert abs((clean_study.labels[t] == MYOCARDIUM).sum() - n0) / n0 < 0.05


def test_inverse_round_trip(rng):
    cfg = PhantomConfig(twist=0.3)
    q = [rng.uniform(-40, 40, 2000) for _ in range(3)]
    back = motion_inverse(cfg, 7, motion_forward(cfg, 7, q))
    assert max(np.abs(b - a).max() for a, b in zip(q, back)) < 1e-9


def test_gt_warp_reproduces_frames(clean_study):
    """Warping ED by the true field matches frame t to within twice the resampling error."""
    cfg = clean_study.config
    sp = cfg.spacing
    q = _grid_mm(cfg)
    half = ed_intensity(cfg, [q[i] + sp[i] / 2 for i in range(3)])
    half = ndimage.gaussian_filter1d(half, cfg.sax_blur_mm / sp[2], axis=0, mode="nearest")
    x, y, z = identity_coords(half.shape)
    resampled = kernels.sample(clean_study.images[0], (x + .5).ravel(), (y + .5).ravel(),
                               (z + .5).ravel()).reshape(half.shape)
    tol = np.abs(resampled - half)[INTERIOR].mean()
    for t in (3, 10, 15):
        warped = warp_array(clean_study.images[0], clean_study.fields[t])
        assert np.abs(warped - clean_study.images[t])[INTERIOR].mean() <= 2 * tol


def test_edges_lie_on_planes(default_study):
    st = default_study
    for i, view in enumerate(("sax", "2ch", "4ch")):
        mask = st.planes.view_mask(view)
        assert st.edges[:, i][:, ~mask].sum() == 0
        assert st.edges[5, i].sum() > 0


def test_deterministic():
    a = generate(PhantomConfig(frames=3, seed=9))
    b = generate(PhantomConfig(frames=3, seed=9))
    c = generate(PhantomConfig(frames=3, seed=10))
    assert np.array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)
    assert np.array_equal(a.labels, c.labels)


def test_misalignment(small_study):
    assert apply_misalignment(small_study, 0.0, 1) is small_study
    a = apply_misalignment(small_study, 3.0, 1)
    b = apply_misalignment(small_study, 3.0, 2)
    assert np.abs(a.slice_offsets_mm).max() <= 3.0
    assert not np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, small_study.labels)
    assert np.array_equal(a.fields, small_study.fields)
    assert np.array_equal(a.edges[:, 1:], small_study.edges[:, 1:])
    # label statistics per slice are those of the unshifted study
    for z in range(small_study.dims.D):
        assert np.array_equal(np.bincount(a.labels[0, z].ravel(), minlength=3),
                              np.bincount(b.labels[0, z].ravel(), minlength=3))


@pytest.mark.parametrize("field,value", [
    ("radial_amplitude", 0.9), ("longitudinal_amplitude", -0.1), ("frames", 1),
    ("epi_radii", (10.0, 10.0, 10.0)), ("noise_sigma", -1.0), ("dims", (1, 4, 4))])
def test_invalid_config(field, value):
    with pytest.raises(ConfigError) as exc:
        PhantomConfig(**{field: value})
    assert exc.value.field == field


def test_config_json():
    cfg = PhantomConfig(seed=3, twist=0.1)
    assert PhantomConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError):
        PhantomConfig.from_json({"colour": 1})
