"""Coarse-to-fine Adam optimisation of a dense field against the tracking objective."""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import MYOCARDIUM, DisplacementField, identity_coords
from . import kernels
from .multiview import edge_array, soften_in_plane, view_normal
from .objective import LossBreakdown, LossWeights, ObjectiveContext, evaluate
from .phantom import ConfigError, VIEWS

log = logging.getLogger(__name__)


class TrackingError(RuntimeError):
    """Optimisation produced a non-finite loss; ``trace`` holds the rows so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrackerConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    factors: tuple = (4, 2, 1)
    iterations: tuple = (100, 100, 150)
    step: float = 0.25
    moments: tuple = (0.9, 0.999)
    floor: float = 1e-8
    tol: float = 1e-5
    window: int = 10
    warm_start: bool = False
    views: tuple = VIEWS
    edge_sigma: float = 1.0
    lax_normal_sigma: float = 2.0
    soften_targets: bool = True
    normalize: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            try:
                self.weights = LossWeights(**self.weights)
            except (TypeError, ValueError) as exc:
                raise ConfigError("weights", str(exc)) from exc
        self.factors = tuple(int(f) for f in self.factors)
        self.iterations = tuple(int(i) for i in self.iterations)
        self.moments = tuple(self.moments)
        self.views = tuple(self.views)
        if not self.factors or any(f < 1 for f in self.factors):
            raise ConfigError("factors", "need at least one level with factor >= 1")
        if len(self.iterations) != len(self.factors) or min(self.iterations) < 1:
            raise ConfigError("iterations", "need one positive count per level")
        if self.step <= 0:
            raise ConfigError("step", "must be positive")
        if not all(0 <= b < 1 for b in self.moments) or len(self.moments) != 2:
            raise ConfigError("moments", "need two coefficients in [0, 1)")
        if any(v not in VIEWS for v in self.views):
            raise ConfigError("views", f"views must be among {VIEWS}")
        if self.edge_sigma < 0:
            raise ConfigError("edge_sigma", "must be non-negative")
        if self.lax_normal_sigma < 0:
            raise ConfigError("lax_normal_sigma", "must be non-negative")

    def to_json(self):
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(**d)


class TraceRow(NamedTuple):
    iteration: int
    level: int
    sim: float
    smooth: float
    shape: float
    total: float


@dataclass
class TrackingResult:
    fields: list            # DisplacementField per frame (frame 0 is zero)
    traces: list            # list of TraceRow per frame
    iterations: list
    seconds: list
    failures: dict = field(default_factory=dict)  # frame -> message


# -- pyramid helpers ----------------------------------------------------------

def _pad_to(a, f):
    pads = [(0, (-n) % f) for n in a.shape]
    return np.pad(a, pads, mode="edge") if any(p for _, p in pads) else a


def _blocks(a, f):
    a = _pad_to(a, f)
    D, H, W = a.shape
    return a.reshape(D // f, f, H // f, f, W // f, f)


def downsample_mean(a, f):
    """Box-mean downsampling by ``f`` per axis (edge-padded to a multiple of f)."""
    if f == 1:
        return np.asarray(a, dtype=np.float64)
    return _blocks(np.asarray(a, dtype=np.float64), f).mean(axis=(1, 3, 5))


def downsample_any(mask, f):
    """A coarse voxel is on the mask if any of its fine voxels is."""
    if f == 1:
        return np.asarray(mask, dtype=bool)
    return _blocks(np.asarray(mask, dtype=bool), f).any(axis=(1, 3, 5))


def downsample_masked(values, mask, f):
    """Mean of ``values`` over the masked fine voxels of each coarse voxel."""
    if f == 1:
        return np.asarray(values, dtype=np.float64)
    num = _blocks(np.asarray(values, dtype=np.float64) * mask, f).sum(axis=(1, 3, 5))
    den = _blocks(np.asarray(mask, dtype=np.float64), f).sum(axis=(1, 3, 5))
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def upsample_field(phi, shape, f):
    """Trilinearly resample a coarse field onto ``shape`` and rescale by ``f``.

    Coarse voxel i covers fine voxels ``f*i .. f*i+f-1``, so fine coordinate x
    sits at coarse coordinate ``(x - (f - 1) / 2) / f``.
    """
    if f == 1:
        return np.array(phi)
    x, y, z = identity_coords(shape)
    off = (f - 1) / 2.0
    cx, cy, cz = ((c - off) / f for c in (x, y, z))
    out = np.empty((3,) + tuple(shape))
    for c in range(3):
        out[c] = f * kernels.sample(np.ascontiguousarray(phi[c]), cx.ravel(), cy.ravel(),
                                    cz.ravel()).reshape(shape)
    return out


def downsample_context(ctx, f):
    if f == 1:
        return ctx
    masks = {v: [downsample_any(m, f) for m in ms] for v, ms in ctx.raw_masks.items()}
    targets = {}
    for v, t in ctx.raw_targets.items():
        if v in ctx.raw_masks:
            union = np.zeros(ctx.shape, dtype=bool)
            for m in ctx.raw_masks[v]:
                union |= np.asarray(m, dtype=bool)
            targets[v] = downsample_masked(t, union, f)
    edges = {v: np.clip(downsample_mean(e, f), 0.0, 1.0) for v, e in ctx.ed_edges.items()}
    return ObjectiveContext(downsample_mean(ctx.source, f), downsample_mean(ctx.target, f),
                            edges, targets, masks)


# -- optimisation -------------------------------------------------------------

def _adam_level(ctx, phi, cfg, step, level, it0, trace):
    b1, b2 = cfg.moments
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    history = []
    best = (np.inf, phi.copy())
    n = cfg.iterations[level]
    for k in range(n + 1):
        loss, grad = evaluate(ctx, phi, cfg.weights, with_grad=k < n)
        trace.append(TraceRow(it0 + k, level, *loss))
        if not np.isfinite(loss.total):
            raise TrackingError(f"non-finite loss at level {level}, iteration {k}", trace)
        if loss.total < best[0]:
            best = (loss.total, phi.copy())
        history.append(loss.total)
        if k == n:
            break
        if len(history) > cfg.window:
            old = history[-cfg.window - 1]
            if old - loss.total < cfg.tol * abs(old):
                break
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1 ** (k + 1))
        vhat = v / (1 - b2 ** (k + 1))
        phi = phi - step * mhat / (np.sqrt(vhat) + cfg.floor)
    return best[1], it0 + len(history)


def track_pair(ctx, cfg=None, init=None):
    """Estimate the backward field of one pair; returns ``(field_array, trace)``.

    ``init`` is an optional finest-level starting field (warm start). The
    returned field never has a higher finest-level loss than the zero field.
    """
    cfg = cfg or TrackerConfig()
    shape = ctx.shape
    trace = []
    phi = None
    it = 0
    prev_f = None
    for level, f in enumerate(cfg.factors):
        lctx = downsample_context(ctx, f)
        if phi is None:
            if init is not None:
                phi = np.array(init) if f == 1 else np.stack(
                    [downsample_mean(init[c], f) / f for c in range(3)])
            else:
                phi = np.zeros((3,) + lctx.shape)
        else:
            ratio = prev_f // f
            if ratio > 1:
                phi = upsample_field(phi, lctx.shape, ratio)
            phi = _crop_or_pad(phi, lctx.shape)
        step = cfg.step / 2 ** level
        phi, it = _adam_level(lctx, phi, cfg, step, level, it, trace)
        prev_f = f
    if cfg.factors[-1] != 1:
        phi = _crop_or_pad(upsample_field(phi, shape, prev_f), shape)
    best = evaluate(ctx, phi, cfg.weights, with_grad=False)[0].total
    zero = evaluate(ctx, np.zeros_like(phi), cfg.weights, with_grad=False)[0].total
    if zero < best:
        log.info("optimised field worse than zero field (%.6g > %.6g); returning zero", best, zero)
        phi = np.zeros_like(phi)
    return phi, trace


def _crop_or_pad(phi, shape):
    if phi.shape[1:] == tuple(shape):
        return phi
    out = phi[:, :shape[0], :shape[1], :shape[2]]
    pads = [(0, 0)] + [(0, s - n) for s, n in zip(shape, out.shape[1:])]
    return np.pad(out, pads, mode="edge")


def view_masks(study, views):
    masks = {}
    for view in views:
        if view == "sax":
            masks[view] = [study.planes.masks[i] for i in study.planes.sax_ids]
        elif view in study.planes.masks:
            masks[view] = [study.planes.masks[view]]
    return masks


def ed_edge_maps(study, cfg=None):
    """Soft ED myocardial edge map for each tracked view.

    Each map is blurred within its view's planes with width ``edge_sigma``
    in-plane voxels. Long-axis maps are also blurred across their plane by
    ``lax_normal_sigma`` times that width, which tames the ringing of an
    infinitely thin kernel on the oblique four-chamber plane. The targets are
    blurred in-plane only and read 1 on a contour, as does a prediction map
    on a wall that crosses the plane, so a motionless study stays at zero.
    """
    cfg = cfg or TrackerConfig()
    edge = edge_array(study.labels[0], MYOCARDIUM)
    sigma_mm = cfg.edge_sigma * study.spacing[0]
    return {v: soften_in_plane(edge, view_normal(study.planes, v), sigma_mm, study.spacing,
                               0.0 if v == "sax" else cfg.lax_normal_sigma * sigma_mm)
            for v in view_masks(study, cfg.views)}


def study_context(study, t, cfg=None, ed_edges=None):
    """Objective context pairing ED (frame 0) with frame ``t`` of a study."""
    cfg = cfg or TrackerConfig()
    masks = {} if cfg.weights.beta == 0 else view_masks(study, cfg.views)
    if ed_edges is None:
        ed_edges = ed_edge_maps(study, cfg) if masks else None
    targets = study.edge_targets(t)
    if cfg.soften_targets:
        sigma_mm = cfg.edge_sigma * study.spacing[0]
        targets = {v: soften_on_planes(targets[v], masks[v], view_normal(study.planes, v),
                                       sigma_mm, study.spacing) for v in masks}
    src, tgt = study.images[0], study.images[t]
    if cfg.normalize:
        src, tgt = normalize_intensity(src), normalize_intensity(tgt)
    return ObjectiveContext(src, tgt, ed_edges, targets, masks)


def normalize_intensity(img):
    """Zero mean, unit standard deviation (constant images are only centred)."""
    img = np.asarray(img, dtype=np.float64)
    sd = img.std()
    return (img - img.mean()) / sd if sd > 0 else img - img.mean()


def soften_on_planes(edge, masks, normal, sigma_mm, spacing):
    """Blur a plane-restricted edge map within its planes and restrict it back to them."""
    support = np.zeros(edge.shape, dtype=bool)
    for m in masks:
        support |= m
    return soften_in_plane(edge, normal, sigma_mm, spacing) * support


def track_sequence(study, cfg=None, threads=0, frames=None):
    """Track every frame (or the listed ``frames``) against ED.

    Frames without warm start are independent and run on ``threads`` worker
    threads when ``threads > 0``. A frame whose optimisation fails is
    recorded in ``failures`` and left as a zero field.
    """
    cfg = cfg or TrackerConfig()
    T = study.frames
    if T < 2:
        raise ValueError("need at least two frames")
    frames = list(range(1, T)) if frames is None else [t for t in frames if t != 0]
    ed_edges = ed_edge_maps(study, cfg) if cfg.weights.beta != 0 else None
    zero = np.zeros((3,) + study.images.shape[1:])
    fields = {0: zero}
    traces = {0: []}
    iters = {0: 0}
    secs = {0: 0.0}
    failures = {}

    def run(t, init=None):
        start = time.perf_counter()
        try:
            phi, trace = track_pair(study_context(study, t, cfg, ed_edges), cfg, init)
        except TrackingError as exc:
            failures[t] = str(exc)
            phi, trace = zero.copy(), exc.trace
        return t, phi, trace, time.perf_counter() - start

    if cfg.warm_start:
        prev = None
        outs = []
        for t in frames:
            out = run(t, prev)
            prev = out[1]
            outs.append(out)
    elif threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(run, frames))
    else:
        outs = [run(t) for t in frames]
    for t, phi, trace, sec in outs:
        fields[t], traces[t], iters[t], secs[t] = phi, trace, len(trace), sec
    order = sorted(fields)
    return TrackingResult(
        fields=[DisplacementField(fields[t], study.spacing) for t in order],
        traces=[traces[t] for t in order], iterations=[iters[t] for t in order],
        seconds=[secs[t] for t in order], failures=failures)


class EsEstimate(NamedTuple):
    index: int
    low_confidence: bool


def find_es_frame(images, noise_sigma=0.0):
    """Frame least similar to ED: argmax_t MSE(I_0, I_t), ties to the smallest t.

    Flagged low-confidence when the largest MSE does not clear ``2 * noise_sigma**2``,
    the expected MSE of two noisy copies of one image, by five standard errors of
    that estimate. Without the margin, pure noise crosses the bare threshold.
    """
    images = getattr(images, "images", images)
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] < 2:
        raise ValueError("need at least two frames")
    mse = [float(np.mean((images[0] - images[t]) ** 2)) for t in range(images.shape[0])]
    best = max(range(1, len(mse)), key=lambda t: (mse[t], -t))
    floor = 2.0 * noise_sigma ** 2 * (1.0 + 5.0 * np.sqrt(2.0 / images[0].size))
    return EsEstimate(best, mse[best] < floor)
