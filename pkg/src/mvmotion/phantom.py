"""Synthetic beating left-ventricle phantoms with analytic ground-truth motion.

Frame 0 (ED) is a thick-walled half ellipsoid: cavity inside the endocardial
ellipsoid, myocardium between endo- and epicardium, both cut at the basal
plane ``q_z = 0`` (q is position relative to the LV centre in mm; the apex
points towards -z).

Motion from ED to frame t, with ``s = sin^2(pi t / T)``, ``c = 1 - A s`` and
``l = 1 - B s``:

* the cavity is scaled by ``diag(c, c, l)``;
* outside the endocardium the map keeps ellipsoidal shells nested and
  preserves volume exactly, so the wall is incompressible;
* a twist ``R_z(theta(z))`` with ``theta = Theta * s * (-z / c_en)`` is
  applied on top.

Images and labels of frame t are pull-backs of the analytic frame-0 model
through the inverse map, so the backward ground-truth field
``A_t^{-1}(p) - p`` is exact.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import rng
from .grid import (CAVITY, MYOCARDIUM, DisplacementField, GridDims, LabelVolume, ScalarVolume,
                   Spacing, identity_coords)
from .multiview import LAX_IDS, PlaneSet, edge_array, standard_planes

VIEWS = ("sax",) + LAX_IDS

# RNG streams (see rng.py): noise for frame t uses stream NOISE_STREAM + t.
NOISE_STREAM = 1000
MISALIGN_STREAM = 1


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class PhantomConfig:
    dims: tuple = (64, 64, 32)
    spacing: tuple = (1.5, 1.5, 3.0)
    endo_radii: tuple = (20.0, 20.0, 40.0)
    epi_radii: tuple = (28.0, 28.0, 48.0)
    center_mm: tuple = (48.0, 48.0, 73.5)
    frames: int = 20
    radial_amplitude: float = 0.15
    longitudinal_amplitude: float = 0.1
    twist: float = 0.0
    noise_sigma: float = 0.05
    misalignment_mm: float = 0.0
    seed: int = 0
    # intensity model
    intensities: tuple = (0.0, 1.0, 0.5)  # background, myocardium, cavity
    edge_width_mm: float = 1.0
    sax_blur_mm: float = 3.0
    sax_step: int = 2

    def __post_init__(self):
        for name in ("dims", "spacing", "endo_radii", "epi_radii", "center_mm", "intensities"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ConfigError("dims", "need three sizes >= 2")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigError("spacing", "need three positive values")
        if len(self.endo_radii) != 3 or min(self.endo_radii) <= 0:
            raise ConfigError("endo_radii", "need three positive radii")
        if len(self.epi_radii) != 3 or any(e <= n for e, n in zip(self.epi_radii, self.endo_radii)):
            raise ConfigError("epi_radii", "must exceed endo_radii componentwise")
        if int(self.frames) != self.frames or self.frames < 2:
            raise ConfigError("frames", "need at least 2 frames")
        if not 0 <= self.radial_amplitude < 0.5:
            raise ConfigError("radial_amplitude", "must lie in [0, 0.5)")
        if not 0 <= self.longitudinal_amplitude < 0.5:
            raise ConfigError("longitudinal_amplitude", "must lie in [0, 0.5)")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma", "must be non-negative")
        if self.misalignment_mm < 0:
            raise ConfigError("misalignment_mm", "must be non-negative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.edge_width_mm <= 0:
            raise ConfigError("edge_width_mm", "must be positive")
        if self.sax_blur_mm < 0:
            raise ConfigError("sax_blur_mm", "must be non-negative")

    def to_json(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc


@dataclass
class PhantomStudy:
    config: PhantomConfig
    images: np.ndarray        # (T, D, H, W)
    labels: np.ndarray        # (T, D, H, W) uint8
    fields: np.ndarray        # (T, 3, D, H, W) backward ground truth, voxel units
    edges: np.ndarray         # (T, 3, D, H, W) uint8, views (sax, 2ch, 4ch)
    planes: PlaneSet
    slice_offsets_mm: Optional[np.ndarray] = None  # (D, 2) in-plane (x, y) shifts
    spacing: Spacing = field(default=Spacing(1.0, 1.0, 1.0))

    @property
    def frames(self):
        return self.images.shape[0]

    @property
    def dims(self):
        D, H, W = self.images.shape[1:]
        return GridDims(W, H, D)

    @property
    def es_index(self):
        return es_frame_index(self.frames)

    def image(self, t):
        return ScalarVolume(self.images[t], self.spacing)

    def label(self, t):
        return LabelVolume(self.labels[t], self.spacing)

    def gt_field(self, t):
        return DisplacementField(self.fields[t], self.spacing)

    def edge_targets(self, t):
        """Per-view target edge maps of frame t as float arrays."""
        return {v: self.edges[t, i].astype(np.float64) for i, v in enumerate(VIEWS)}


def es_frame_index(frames):
    """Frame of maximal contraction, argmax_t sin^2(pi t / T) = round(T / 2)."""
    return int(math.floor(frames / 2 + 0.5))


def phase(t, frames):
    return math.sin(math.pi * t / frames) ** 2


class _Motion:
    """Forward/inverse analytic map of one frame (positions in mm relative to the LV centre)."""

    def __init__(self, cfg, t):
        s = phase(t, cfg.frames)
        self.c = 1.0 - cfg.radial_amplitude * s
        self.l = 1.0 - cfg.longitudinal_amplitude * s
        self.k = 1.0 - self.c * self.c * self.l
        self.radii = np.asarray(cfg.endo_radii, dtype=float)
        self.twist = cfg.twist * s
        self.diag = np.array([self.c, self.c, self.l])

    def _rho(self, q):
        return np.sqrt(sum((q[i] / self.radii[i]) ** 2 for i in range(3)))

    def _angle(self, z):
        return self.twist * (-z / self.radii[2])

    def forward(self, q):
        rho = self._rho(q)
        v = rho ** 3
        outside = v > 1.0
        ratio = np.ones_like(rho)
        s = np.cbrt((v[outside] - self.k) / (self.c * self.c * self.l))
        ratio[outside] = s / rho[outside]
        qp = [ratio * self.diag[i] * q[i] for i in range(3)]
        a = self._angle(qp[2])
        ca, sa = np.cos(a), np.sin(a)
        return [ca * qp[0] - sa * qp[1], sa * qp[0] + ca * qp[1], qp[2]]

    def inverse(self, qpp):
        a = self._angle(qpp[2])
        ca, sa = np.cos(a), np.sin(a)
        qp = [ca * qpp[0] + sa * qpp[1], -sa * qpp[0] + ca * qpp[1], qpp[2]]
        u = [qp[i] / self.diag[i] for i in range(3)]
        s = self._rho(u)
        outside = s > 1.0
        ratio = np.ones_like(s)
        rho = np.cbrt(self.c * self.c * self.l * s[outside] ** 3 + self.k)
        ratio[outside] = rho / s[outside]
        return [ratio * u[i] for i in range(3)]


def _ellipsoid_rho(q, radii):
    return np.sqrt(sum((q[i] / radii[i]) ** 2 for i in range(3)))


def ed_labels(cfg, q):
    """Frame-0 labels at positions ``q`` (mm relative to the LV centre)."""
    below = q[2] <= 0.0
    cav = below & (_ellipsoid_rho(q, cfg.endo_radii) < 1.0)
    myo = below & (_ellipsoid_rho(q, cfg.epi_radii) < 1.0) & ~cav
    out = np.zeros(q[0].shape, dtype=np.uint8)
    out[myo] = MYOCARDIUM
    out[cav] = CAVITY
    return out


def ed_intensity(cfg, q):
    """Smooth frame-0 intensity at positions ``q`` (noise-free, unblurred)."""
    w = cfg.edge_width_mm

    def soft(x):
        return 0.5 * (1.0 + np.tanh(x / w))

    base = soft(-q[2])
    in_endo = soft(cfg.endo_radii[0] * (1.0 - _ellipsoid_rho(q, cfg.endo_radii))) * base
    in_epi = soft(cfg.epi_radii[0] * (1.0 - _ellipsoid_rho(q, cfg.epi_radii))) * base
    bg, myo, cav = cfg.intensities
    return bg + (myo - bg) * in_epi + (cav - myo) * in_endo


def _grid_mm(cfg):
    x, y, z = identity_coords(GridDims(*cfg.dims).shape)
    sx, sy, sz = cfg.spacing
    cx, cy, cz = cfg.center_mm
    return [x * sx - cx, y * sy - cy, z * sz - cz]


def motion_forward(cfg, t, q):
    return _Motion(cfg, t).forward(q)


def motion_inverse(cfg, t, q):
    return _Motion(cfg, t).inverse(q)


def generate(cfg):
    """Build the full phantom study described by ``cfg``."""
    cfg.validate()
    dims = GridDims(*cfg.dims)
    spacing = Spacing(*cfg.spacing)
    grid = _grid_mm(cfg)
    T = int(cfg.frames)
    planes = standard_planes(dims, spacing, cfg.center_mm, cfg.sax_step)
    view_masks = [planes.view_mask(v) for v in VIEWS]

    images = np.empty((T,) + dims.shape)
    labels = np.empty((T,) + dims.shape, dtype=np.uint8)
    fields = np.empty((T, 3) + dims.shape)
    edges = np.empty((T, 3) + dims.shape, dtype=np.uint8)
    blur = cfg.sax_blur_mm / spacing.sz
    for t in range(T):
        if t == 0:
            src = grid
            fields[t] = 0.0
        else:
            src = motion_inverse(cfg, t, grid)
            for i in range(3):
                fields[t, i] = (src[i] - grid[i]) / spacing[i]
        img = ed_intensity(cfg, src)
        if blur > 0:
            img = ndimage.gaussian_filter1d(img, blur, axis=0, mode="nearest")
        if cfg.noise_sigma > 0:
            img = img + cfg.noise_sigma * rng.normal(cfg.seed, NOISE_STREAM + t, img.size).reshape(img.shape)
        images[t] = img
        labels[t] = ed_labels(cfg, src)
        e = edge_array(labels[t], MYOCARDIUM)
        for i, m in enumerate(view_masks):
            edges[t, i] = e & m
    study = PhantomStudy(cfg, images, labels, fields, edges, planes, None, spacing)
    if cfg.misalignment_mm > 0:
        study = apply_misalignment(study, cfg.misalignment_mm, cfg.seed)
    return study


def _shift_slab(slab, dx_vox, dy_vox):
    return ndimage.shift(slab, (dy_vox, dx_vox), order=1, mode="nearest")


def apply_misalignment(study, amplitude, seed):
    """Shift every SAX z-slab in-plane by its own offset drawn from [-m, m] mm.

    The offset of a slab is shared by all frames. SAX images and SAX edge
    maps move; labels, ground-truth fields and long-axis edge maps do not.
    """
    if amplitude < 0:
        raise ValueError("misalignment amplitude must be non-negative")
    if amplitude == 0:
        return study
    D = study.dims.D
    offsets = rng.uniform(seed, MISALIGN_STREAM, 2 * D, -amplitude, amplitude).reshape(D, 2)
    sx, sy, _ = study.spacing
    images = study.images.copy()
    edges = study.edges.copy()
    for t in range(study.frames):
        for z in range(D):
            dx, dy = offsets[z, 0] / sx, offsets[z, 1] / sy
            images[t, z] = _shift_slab(images[t, z], dx, dy)
            moved = _shift_slab(study.edges[t, 0, z].astype(np.float64), dx, dy)
            edges[t, 0, z] = (moved >= 0.5) & study.planes.view_mask("sax")[z]
    return dataclasses.replace(study, images=images, edges=edges, slice_offsets_mm=offsets)
