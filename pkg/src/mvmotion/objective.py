"""Tracking objective: intensity MSE + Huber smoothness + multi-view edge cross-entropy.

    total = L_sim + lam * L_smooth + beta * L_shape

* ``L_sim``    mean squared difference between the target image and the
  source image pulled back by the field, over all voxels.
* ``L_smooth`` ``sqrt(eps + sum |grad phi|^2)`` with forward differences
  (zero at the last index of each axis).
* ``L_shape``  for each view (SAX, 2CH, 4CH) the binary cross-entropy between
  the warped soft ED edge map and the target edge map, averaged over the
  view's plane voxels; the SAX term is the mean over its nine slice planes.

All gradients are analytic; the warp enters through the trilinear derivative
of the sampled source at ``p + phi(p)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .grid import GridError, forward_diff, forward_diff_adjoint, identity_coords


class EmptyViewWarning(UserWarning):
    """A view has no plane voxels and contributes nothing to the shape loss."""


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.005
    beta: float = 5.0
    eps: float = 0.01
    delta: float = 1e-6

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")


class LossBreakdown(NamedTuple):
    sim: float
    smooth: float
    shape: float
    total: float


def _edge_map(e, shape):
    e = np.ascontiguousarray(e, dtype=np.float64)
    if e.shape != shape:
        raise GridError("edge map differs in shape from the images")
    if e.min() < 0 or e.max() > 1:
        raise ValueError("edge map values must lie in [0, 1]")
    return e


class ObjectiveContext:
    """Images, edge maps and plane masks for one ED -> t pair.

    ``targets`` maps view name to its target edge map (nonzero only on that
    view's planes); ``plane_masks`` maps view name to a list of boolean plane
    masks (nine for SAX, one per long-axis view). Views without masks, or
    with only empty masks, do not contribute to the shape loss.
    ``ed_edges`` is either one soft ED edge map shared by all views or a dict
    giving each view its own.
    """

    def __init__(self, source, target, ed_edges=None, targets=None, plane_masks=None):
        self.source = np.ascontiguousarray(source, dtype=np.float64)
        self.raw_targets = dict(targets or {})
        self.raw_masks = {k: list(v) for k, v in (plane_masks or {}).items()}
        self.target = np.ascontiguousarray(target, dtype=np.float64)
        if self.source.shape != self.target.shape:
            raise GridError("source and target images differ in shape")
        shape = self.source.shape
        self.coords = identity_coords(shape)
        self.ed_edges = {}
        self.views = []
        self.empty_views = []
        targets = targets or {}
        plane_masks = plane_masks or {}
        if ed_edges is not None:
            if isinstance(ed_edges, dict):
                self.ed_edges = {v: _edge_map(e, shape) for v, e in ed_edges.items()}
            else:
                shared = _edge_map(ed_edges, shape)
                self.ed_edges = {v: shared for v in plane_masks}
        for view, masks in plane_masks.items():
            masks = [np.asarray(m, dtype=bool) for m in masks]
            nonempty = [m for m in masks if m.any()]
            if not nonempty or view not in targets:
                self.empty_views.append(view)
                warnings.warn(f"view {view!r} has no plane voxels; it is ignored",
                              EmptyViewWarning, stacklevel=2)
                continue
            if any(m.shape != shape for m in nonempty):
                raise GridError(f"plane mask of view {view!r} differs in shape")
            if view not in self.ed_edges:
                raise ValueError(f"view {view!r} has no ED edge map")
            w = np.zeros(shape)
            for m in nonempty:
                w += m / (len(nonempty) * m.sum())
            t = np.asarray(targets[view], dtype=np.float64)
            if t.shape != shape:
                raise GridError(f"target of view {view!r} differs in shape")
            if t.min() < 0 or t.max() > 1:
                raise ValueError("target edge values must lie in [0, 1]")
            idx = np.flatnonzero(w)
            self.views.append((view, idx, w.ravel()[idx], t.ravel()[idx]))

    @property
    def shape(self):
        return self.source.shape

    @property
    def view_names(self):
        return [v[0] for v in self.views]


def _sim(ctx, phi, grad):
    x, y, z = ctx.coords
    args = ((x + phi[0]).ravel(), (y + phi[1]).ravel(), (z + phi[2]).ravel())
    n = ctx.source.size
    if grad is None:
        warped = kernels.sample(ctx.source, *args)
        r = ctx.target.ravel() - warped
        return float(np.sum(r * r)) / n
    warped, gx, gy, gz = kernels.sample_grad(ctx.source, *args)
    r = ctx.target.ravel() - warped
    coef = (-2.0 / n) * r
    grad[0] += (coef * gx).reshape(ctx.shape)
    grad[1] += (coef * gy).reshape(ctx.shape)
    grad[2] += (coef * gz).reshape(ctx.shape)
    return float(np.sum(r * r)) / n


def _smooth(phi, eps, grad, scale):
    diffs = [[forward_diff(phi[c], axis) for axis in (2, 1, 0)] for c in range(3)]
    s = float(np.sum([np.sum(d * d) for dc in diffs for d in dc]))
    value = float(np.sqrt(eps + s))
    if grad is not None and scale != 0.0:
        for c in range(3):
            acc = np.zeros_like(phi[c])
            for d, axis in zip(diffs[c], (2, 1, 0)):
                acc += forward_diff_adjoint(d, axis)
            grad[c] += (scale / value) * acc
    return value


def _shape(ctx, phi, delta, grad, scale):
    x, y, z = ctx.coords
    total = 0.0
    for view, idx, w, t in ctx.views:
        args = ((x.ravel()[idx] + phi[0].ravel()[idx]), (y.ravel()[idx] + phi[1].ravel()[idx]),
                (z.ravel()[idx] + phi[2].ravel()[idx]))
        if grad is None:
            e = kernels.sample(ctx.ed_edges[view], *args)
        else:
            e, gx, gy, gz = kernels.sample_grad(ctx.ed_edges[view], *args)
        p = np.clip(e, delta, 1.0 - delta)
        total += float(-np.sum(w * (t * np.log(p) + (1.0 - t) * np.log1p(-p))))
        if grad is not None and scale != 0.0:
            active = (e > delta) & (e < 1.0 - delta)
            coef = -scale * w * (t / p - (1.0 - t) / (1.0 - p)) * active
            for c, g in enumerate((gx, gy, gz)):
                grad[c].reshape(-1)[idx] += coef * g
    return total


def evaluate(ctx, phi, weights, with_grad=True):
    """Loss breakdown and (optionally) the gradient w.r.t. the field array.

    ``phi`` is a (3, D, H, W) array. Returns ``(LossBreakdown, grad or None)``.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (3,) + ctx.shape:
        raise GridError(f"field shape {phi.shape} does not match images {ctx.shape}")
    grad = np.zeros_like(phi) if with_grad else None
    sim = _sim(ctx, phi, grad)
    smooth = _smooth(phi, weights.eps, grad, weights.lam)
    shape = _shape(ctx, phi, weights.delta, grad, weights.beta)
    total = sim + weights.lam * smooth + weights.beta * shape
    return LossBreakdown(sim, smooth, shape, total), grad


def _arr(phi):
    return getattr(phi, "data", phi)


def loss_sim(ctx, phi):
    return _sim(ctx, np.asarray(_arr(phi), dtype=np.float64), None)


def loss_smooth(phi, eps=0.01):
    return _smooth(np.asarray(_arr(phi), dtype=np.float64), eps, None, 0.0)


def loss_shape(ctx, phi, delta=1e-6):
    return _shape(ctx, np.asarray(_arr(phi), dtype=np.float64), delta, None, 0.0)


def total_loss(ctx, phi, weights=LossWeights()):
    return evaluate(ctx, _arr(phi), weights, with_grad=False)[0]


def total_loss_gradient(ctx, phi, weights=LossWeights()):
    """Gradient of :func:`total_loss` with respect to every field component."""
    return evaluate(ctx, _arr(phi), weights, with_grad=True)[1]
