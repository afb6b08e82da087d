"""Segmentation overlap, contour distance, volume and field-quality metrics."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .grid import GridError, Spacing, jacobian_det_array
from .multiview import edge_array

CSV_HEADER = ("subject", "method", "dice", "hd_mm", "vd_pct", "negjac_pct", "epe_mm", "epe_z_mm")


class MetricError(ValueError):
    """Metric undefined for the given input (empty set, shape mismatch)."""


def _data(x):
    return np.asarray(getattr(x, "data", x))


def _pair(a, b):
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise GridError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b, label):
    """Dice overlap of ``label`` in two label volumes; 1.0 when both are empty."""
    a, b = _pair(a, b)
    ma, mb = a == label, b == label
    denom = int(ma.sum()) + int(mb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((ma & mb).sum()) / denom


def boundary_points_mm(labels, label, spacing):
    """Centres (mm) of the ``label`` voxels that touch a non-label 6-neighbour."""
    z, y, x = np.nonzero(edge_array(_data(labels), label))
    sx, sy, sz = Spacing(*spacing)
    return np.column_stack([x * sx, y * sy, z * sz])


def hausdorff_mm(a, b, label, spacing=None, percentile=100.0):
    """Symmetric Hausdorff distance between the label boundaries, in mm.

    With ``percentile < 100`` each directed distance is that percentile of the
    nearest-neighbour distances instead of their maximum.
    """
    if spacing is None:
        spacing = getattr(a, "spacing", (1.0, 1.0, 1.0))
    a, b = _pair(a, b)
    pa = boundary_points_mm(a, label, spacing)
    pb = boundary_points_mm(b, label, spacing)
    if len(pa) == 0 or len(pb) == 0:
        raise MetricError(f"label {label} is absent from one of the volumes")
    dab = cKDTree(pb).query(pa)[0]
    dba = cKDTree(pa).query(pb)[0]
    if percentile >= 100.0:
        return float(max(dab.max(), dba.max()))
    return float(max(np.percentile(dab, percentile), np.percentile(dba, percentile)))


def volume_difference(sed, warped, label):
    """|V(reference) - V(warped)| / V(reference) in percent."""
    sed, warped = _pair(sed, warped)
    ref = int((sed == label).sum())
    if ref == 0:
        raise MetricError(f"reference volume of label {label} is empty")
    return 100.0 * abs(ref - int((warped == label).sum())) / ref


def negative_jacobian_fraction(field, mask):
    """Percentage of masked voxels whose Jacobian determinant is negative."""
    phi = _data(field)
    mask = np.asarray(_data(mask), dtype=bool)
    if mask.shape != phi.shape[1:]:
        raise GridError(f"mask shape {mask.shape} does not match field {phi.shape[1:]}")
    n = int(mask.sum())
    if n == 0:
        raise MetricError("mask is empty")
    return 100.0 * int((jacobian_det_array(phi)[mask] < 0).sum()) / n


class EndPointError(NamedTuple):
    mean_mm: float
    axis_mm: tuple  # (x, y, z)


def end_point_error(estimated, truth, mask=None, spacing=None):
    """Mean end-point error in mm over ``mask`` plus per-axis mean absolute errors."""
    if spacing is None:
        spacing = getattr(estimated, "spacing", (1.0, 1.0, 1.0))
    est, gt = _pair(estimated, truth)
    s = np.asarray(Spacing(*spacing), dtype=np.float64).reshape(3, 1, 1, 1)
    diff = (est - gt) * s
    if mask is None:
        mask = np.ones(est.shape[1:], dtype=bool)
    mask = np.asarray(_data(mask), dtype=bool)
    if mask.shape != est.shape[1:]:
        raise GridError("mask shape does not match the fields")
    if not mask.any():
        raise MetricError("mask is empty")
    d = diff[:, mask]
    norm = np.sqrt((d * d).sum(axis=0))
    return EndPointError(float(norm.mean()), tuple(float(np.abs(d[c]).mean()) for c in range(3)))
