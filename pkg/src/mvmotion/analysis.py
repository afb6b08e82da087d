"""Clinical quantities derived from tracked fields: volumes, EF, wall thickness, strain."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .grid import (CAVITY, MYOCARDIUM, DisplacementField, LabelVolume, Spacing,
                   identity_coords, jacobian_det_array, warp_array, warp_labels)


class AnalysisError(ValueError):
    """An analysis is undefined for its input."""


class VolumeCurve(NamedTuple):
    volume_ml: np.ndarray
    normalized: np.ndarray


def _fields(result):
    return [getattr(f, "data", f) for f in getattr(result, "fields", result)]


def lv_volume_curve(study, result):
    """LV cavity volume (mL) of the warped ED segmentation at every frame.

    ``result`` is a TrackingResult or a list of fields, one per frame.
    """
    fields = _fields(result)
    if len(fields) != study.frames:
        raise AnalysisError(f"need {study.frames} fields, got {len(fields)}")
    s0 = study.label(0)
    voxel_ml = float(np.prod(study.spacing)) / 1000.0
    vols = []
    for phi in fields:
        if phi is None:
            raise AnalysisError("missing field in the tracking result")
        warped = warp_labels(s0, DisplacementField(phi, study.spacing)).data
        vols.append(int((warped == CAVITY).sum()) * voxel_ml)
    vols = np.asarray(vols)
    if vols[0] <= 0:
        raise AnalysisError("ED cavity volume is zero")
    return VolumeCurve(vols, vols / vols[0])


class Ejection(NamedTuple):
    ef_pct: float
    ef_curve_pct: np.ndarray


def ejection_fraction(curve):
    """Ejection fraction (V_ED - min V) / V_ED plus the per-frame curve, in percent."""
    v = np.asarray(getattr(curve, "volume_ml", curve), dtype=np.float64)
    if v.size == 0:
        raise AnalysisError("empty volume curve")
    if v[0] <= 0:
        raise AnalysisError("ED volume must be positive")
    per_frame = 100.0 * (v[0] - v) / v[0]
    return Ejection(float(100.0 * (v[0] - v.min()) / v[0]), per_frame)


class Thickness(NamedTuple):
    mean_mm: float
    slices_used: tuple
    slices_skipped: tuple


def _ray_thickness(sl, cy, cx, angle, spacing, step=0.05):
    """Distance (mm) between the endo and epi crossings along one ray, or None."""
    H, W = sl.shape
    sx, sy = spacing
    dx, dy = np.cos(angle), np.sin(angle)
    r_max = float(np.hypot(H * sy, W * sx))
    r = np.arange(0.0, r_max, step)
    x = np.rint(cx + r * dx / sx).astype(int)
    y = np.rint(cy + r * dy / sy).astype(int)
    inside = (x >= 0) & (x < W) & (y >= 0) & (y < H)
    lab = np.zeros(r.size, dtype=sl.dtype)
    lab[inside] = sl[y[inside], x[inside]]
    myo = np.flatnonzero(lab == MYOCARDIUM)
    if myo.size == 0:
        return None
    start = myo[0]
    if np.any(lab[:start] != CAVITY):
        return None
    after = np.flatnonzero(lab[start:] != MYOCARDIUM)
    if after.size == 0:
        return None
    end = start + after[0]
    if lab[end] != 0:
        return None
    return r[end] - r[start]


def wall_thickness_global(seg, lv_axis=None, n_rays=36):
    """Mean myocardial thickness over SAX slices with a closed ring (mm).

    Slices are the array's z planes; rays start at the cavity centroid of the
    slice. ``lv_axis`` is accepted for interface symmetry with the strain
    analysis; the slices are assumed perpendicular to it.
    """
    data = np.asarray(getattr(seg, "data", seg))
    spacing = Spacing(*getattr(seg, "spacing", (1.0, 1.0, 1.0)))
    if not (data == MYOCARDIUM).any():
        raise AnalysisError("no myocardium in the segmentation")
    angles = 2 * np.pi * np.arange(n_rays) / n_rays
    values, used, skipped = [], [], []
    for z in range(data.shape[0]):
        sl = data[z]
        if not (sl == MYOCARDIUM).any():
            continue
        cav = np.argwhere(sl == CAVITY)
        if cav.size == 0:
            skipped.append(z)
            continue
        cy, cx = cav.mean(axis=0)
        th = [_ray_thickness(sl, cy, cx, a, (spacing.sx, spacing.sy)) for a in angles]
        if any(t is None for t in th):
            skipped.append(z)
            continue
        values.extend(th)
        used.append(z)
    if not values:
        raise AnalysisError("no slice contains a closed myocardial ring")
    return Thickness(float(np.mean(values)), tuple(used), tuple(skipped))


def fractional_wall_thickening(ed_mm, es_mm):
    """(ES - ED) / ED in percent; negative when the wall thins."""
    if ed_mm <= 0:
        raise AnalysisError("ED thickness must be positive")
    return 100.0 * (es_mm - ed_mm) / ed_mm


class Strains(NamedTuple):
    radial: float
    circumferential: float
    longitudinal: float


def _axis(lv_axis, spacing, shape):
    if lv_axis is None:
        D, H, W = shape
        centre = ((W - 1) / 2 * spacing.sx, (H - 1) / 2 * spacing.sy, 0.0)
        return np.asarray(centre), np.array([0.0, 0.0, 1.0])
    point, direction = lv_axis
    d = np.asarray(direction, dtype=np.float64)
    return np.asarray(point, dtype=np.float64), d / np.linalg.norm(d)


def local_basis(mask, spacing, lv_axis=None):
    """Orthonormal (e_r, e_c, e_l) at every masked voxel, shape (n, 3) each.

    ``lv_axis`` is ``(point_mm, direction)`` in (x, y, z) order; by default the
    z axis through the grid centre. Voxels on the axis are dropped (the
    returned ``keep`` flags which masked voxels were kept).
    """
    spacing = Spacing(*spacing)
    point, e_l = _axis(lv_axis, spacing, mask.shape)
    x, y, z = identity_coords(mask.shape)
    p = np.column_stack([x[mask] * spacing.sx, y[mask] * spacing.sy, z[mask] * spacing.sz]) - point
    radial = p - np.outer(p @ e_l, e_l)
    norm = np.linalg.norm(radial, axis=1)
    keep = norm > 1e-9
    e_r = radial[keep] / norm[keep, None]
    e_c = np.cross(e_l, e_r)
    e_lv = np.broadcast_to(e_l, e_r.shape)
    gram = np.stack([e_r, e_c, e_lv], axis=1)
    if not np.allclose(np.einsum("nij,nkj->nik", gram, gram), np.eye(3), atol=1e-9):
        raise AnalysisError("local strain basis is not orthonormal")
    return e_r, e_c, e_lv, keep


def green_lagrange(field, spacing):
    """Green-Lagrange tensor E = (F^T F - I) / 2 per voxel, shape (D, H, W, 3, 3), mm units."""
    u = np.asarray(getattr(field, "data", field), dtype=np.float64)
    spacing = Spacing(*spacing)
    s = (spacing.sx, spacing.sy, spacing.sz)
    F = np.empty(u.shape[1:] + (3, 3))
    for c in range(3):
        grads = np.gradient(u[c] * s[c], spacing.sz, spacing.sy, spacing.sx)  # d/dz, d/dy, d/dx
        for a, g in zip((2, 1, 0), grads):
            F[..., c, a] = g + (1.0 if a == c else 0.0)
    return 0.5 * (np.einsum("...ki,...kj->...ij", F, F) - np.eye(3))


def global_strains(forward_field, myocardium_mask, lv_axis=None, spacing=None):
    """Mean radial, circumferential and longitudinal Lagrangian strain (%) over the mask.

    ``forward_field`` maps ED positions to frame t (material description).
    """
    if spacing is None:
        spacing = getattr(forward_field, "spacing", (1.0, 1.0, 1.0))
    mask = np.asarray(getattr(myocardium_mask, "data", myocardium_mask), dtype=bool)
    if mask.sum() < 10:
        raise AnalysisError("need at least 10 masked voxels")
    E = green_lagrange(forward_field, spacing)[mask]
    e_r, e_c, e_l, keep = local_basis(mask, spacing, lv_axis)
    E = E[keep]
    out = [100.0 * float(np.einsum("ni,nij,nj->n", e, E, e).mean()) for e in (e_r, e_c, e_l)]
    return Strains(*out)


class InversionError(RuntimeError):
    """Fixed-point inversion diverged; ``updates`` holds the update norms."""

    def __init__(self, message, updates):
        super().__init__(message)
        self.updates = updates


def invert_field(backward, mask=None, iterations=20, tol=1e-3):
    """Forward field v with ``v(p) = -phi(p + v(p))`` by fixed-point iteration."""
    phi = np.asarray(getattr(backward, "data", backward), dtype=np.float64)
    spacing = getattr(backward, "spacing", (1.0, 1.0, 1.0))
    region = np.ones(phi.shape[1:], bool) if mask is None else np.asarray(mask, dtype=bool)
    if region.any():
        ok = (jacobian_det_array(phi)[region] >= 0).mean()
        if ok < 0.99:
            raise AnalysisError(f"only {100 * ok:.1f}% of voxels have a non-negative Jacobian")
    coords = identity_coords(phi.shape[1:])
    v = -phi.copy()
    updates = []
    growth = 0
    for _ in range(iterations):
        new = -np.stack([warp_array(phi[c], v, coords) for c in range(3)])
        upd = float(np.abs(new - v).max())
        v = new
        if updates and upd > updates[-1]:
            growth += 1
            if growth >= 5:
                raise InversionError("field inversion diverged", updates + [upd])
        else:
            growth = 0
        updates.append(upd)
        if upd < tol:
            break
    return DisplacementField(v, spacing)


def composition_residual(backward, forward):
    """Per-voxel norm of ``forward(p) + backward(p + forward(p))`` (zero for exact inverses)."""
    phi = np.asarray(getattr(backward, "data", backward), dtype=np.float64)
    v = np.asarray(getattr(forward, "data", forward), dtype=np.float64)
    coords = identity_coords(phi.shape[1:])
    r = v + np.stack([warp_array(phi[c], v, coords) for c in range(3)])
    return np.sqrt((r * r).sum(axis=0))


def thickness_from_labels(labels, spacing):
    return wall_thickness_global(LabelVolume(labels, spacing))
