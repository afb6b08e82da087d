import math

import numpy as np
import pytest

from gradcheck import gradient_error, random_instance
from mvmotion.grid import DisplacementField
from mvmotion.objective import (EmptyViewWarning, LossWeights, ObjectiveContext, evaluate,
                                loss_shape, loss_sim, loss_smooth, total_loss,
                                total_loss_gradient)
from test_grid import corner_oracle


def _views(shape):
    masks = {"sax": [np.zeros(shape, bool) for _ in range(9)],
             "2ch": [np.zeros(shape, bool)], "4ch": [np.zeros(shape, bool)]}
    for k, m in enumerate(masks["sax"]):
        m[k % shape[0]] = True
    masks["2ch"][0][:, 1, :] = True
    masks["4ch"][0][:, :, 2] = True
    return masks


def test_sim_closed_forms(rng):
    a = rng.random((4, 5, 6))
    zero = np.zeros((3, 4, 5, 6))
    assert loss_sim(ObjectiveContext(a, a), zero) == 0.0
    assert np.isclose(loss_sim(ObjectiveContext(a, a + 0.3), zero), 0.09, rtol=1e-12)


def test_sim_matches_voxel_oracle(rng):
    src, tgt = rng.random((6, 6, 6)), rng.random((6, 6, 6))
    phi = rng.normal(0, 0.8, (3, 6, 6, 6))
    total = 0.0
    for z, y, x in np.ndindex(6, 6, 6):
        v = corner_oracle(src, x + phi[0, z, y, x], y + phi[1, z, y, x], z + phi[2, z, y, x])
        total += (tgt[z, y, x] - v) ** 2
    assert abs(loss_sim(ObjectiveContext(src, tgt), phi) - total / 216) < 1e-10 * total


def test_smooth_closed_forms():
    assert loss_smooth(np.zeros((3, 4, 4, 4))) == math.sqrt(0.01) == 0.1
    assert loss_smooth(np.full((3, 4, 4, 4), 2.5)) == 0.1
    for n in (3, 5):
        phi = np.zeros((3, n, n, n))
        phi[0] = np.arange(n)[None, None, :]
        assert np.isclose(loss_smooth(phi), math.sqrt(0.01 + n * n * (n - 1)), rtol=1e-14)
    assert loss_smooth(DisplacementField.zeros((4, 4, 4))) == 0.1


def test_shape_uniform_half_is_ln2():
    shape = (9, 4, 5)
    masks = _views(shape)
    targets = {v: np.zeros(shape) for v in masks}
    targets["sax"][:, 0, 0] = 1.0
    ctx = ObjectiveContext(np.zeros(shape), np.zeros(shape), np.full(shape, 0.5), targets, masks)
    assert abs(loss_shape(ctx, np.zeros((3,) + shape)) - 3 * math.log(2)) < 1e-9
    for view in masks:
        one = ObjectiveContext(np.zeros(shape), np.zeros(shape), np.full(shape, 0.5),
                               {view: targets[view]}, {view: masks[view]})
        assert abs(loss_shape(one, np.zeros((3,) + shape)) - math.log(2)) < 1e-9


def test_shape_perfect_prediction(rng):
    shape = (9, 4, 5)
    edges = (rng.random(shape) < 0.4).astype(float)
    masks = _views(shape)
    ctx = ObjectiveContext(np.zeros(shape), np.zeros(shape), edges,
                           {v: edges for v in masks}, masks)
    assert 0 <= loss_shape(ctx, np.zeros((3,) + shape)) <= 3 * -math.log(1 - 1e-6) + 1e-15


def test_shape_matches_voxel_oracle(rng):
    shape = (8, 8, 8)
    ed = rng.random(shape)
    masks = _views(shape)
    targets = {v: (rng.random(shape) < 0.3) * 1.0 for v in masks}
    phi = rng.normal(0, 0.8, (3,) + shape)
    ctx = ObjectiveContext(np.zeros(shape), np.zeros(shape), ed, targets, masks)
    d = 1e-6
    expect = 0.0
    for view, ms in masks.items():
        per_plane = []
        for m in ms:
            acc = 0.0
            for z, y, x in np.argwhere(m):
                e = corner_oracle(ed, x + phi[0, z, y, x], y + phi[1, z, y, x], z + phi[2, z, y, x])
                e = min(max(e, d), 1 - d)
                t = targets[view][z, y, x]
                acc -= t * math.log(e) + (1 - t) * math.log(1 - e)
            per_plane.append(acc / m.sum())
        expect += sum(per_plane) / len(per_plane)
    assert abs(loss_shape(ctx, phi) - expect) < 1e-10 * expect


def test_total_identities(rng):
    ctx, phi = random_instance(5, 0)
    w = LossWeights()
    b = total_loss(ctx, phi, w)
    assert abs(b.total - (b.sim + 0.005 * b.smooth + 5 * b.shape)) <= 1e-12 * b.total
    only_sim = total_loss(ctx, phi, LossWeights(lam=0, beta=0))
    assert only_sim.total == only_sim.sim
    assert b.sim >= 0 and b.smooth >= 0.1 and b.shape >= 0


def test_total_at_perfect_zero_field(rng):
    shape = (9, 4, 5)
    img = rng.random(shape)
    edges = (rng.random(shape) < 0.4).astype(float)
    masks = _views(shape)
    ctx = ObjectiveContext(img, img, edges, {v: edges for v in masks}, masks)
    assert abs(total_loss(ctx, np.zeros((3,) + shape)).total - 0.005 * 0.1) < 1e-4


def test_gradient_zero_cases(rng):
    a = rng.random((4, 4, 4))
    ctx = ObjectiveContext(a, a)
    g = total_loss_gradient(ctx, np.zeros((3, 4, 4, 4)), LossWeights(lam=0, beta=0))
    assert np.all(g == 0)
    g = total_loss_gradient(ObjectiveContext(np.zeros((4, 4, 4)), np.zeros((4, 4, 4))),
                            np.full((3, 4, 4, 4), 0.7), LossWeights())
    assert np.all(g == 0)


@pytest.mark.parametrize("n,seed", [(4, 0), (4, 1), (5, 2)])
def test_gradient_finite_differences(n, seed):
    ctx, phi = random_instance(n, seed)
    assert gradient_error(ctx, phi, LossWeights()) < 1e-4


def test_small_step_descends():
    w = LossWeights()
    for seed in range(5):
        ctx, phi = random_instance(5, seed)
        before, g = evaluate(ctx, phi, w)
        after, _ = evaluate(ctx, phi - 1e-4 * g / np.abs(g).max(), w, with_grad=False)
        assert after.total <= before.total


def test_empty_view_is_ignored_with_warning():
    shape = (4, 4, 4)
    masks = {"sax": [np.zeros(shape, bool)], "2ch": [np.ones(shape, bool)]}
    with pytest.warns(EmptyViewWarning):
        ctx = ObjectiveContext(np.zeros(shape), np.zeros(shape), np.full(shape, 0.5),
                               {"sax": np.zeros(shape), "2ch": np.zeros(shape)}, masks)
    assert ctx.empty_views == ["sax"] and ctx.view_names == ["2ch"]
    assert abs(loss_shape(ctx, np.zeros((3,) + shape)) - math.log(2)) < 1e-12


def test_context_validation():
    with pytest.raises(ValueError):
        ObjectiveContext(np.zeros((3, 3, 3)), np.zeros((3, 3, 4)))
    with pytest.raises(ValueError):
        ObjectiveContext(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), np.full((3, 3, 3), 2.0))
    with pytest.raises(ValueError):
        LossWeights(eps=0)
    with pytest.raises(ValueError):
        LossWeights(delta=0.5)
