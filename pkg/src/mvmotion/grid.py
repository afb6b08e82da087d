"""Grid types, trilinear sampling, warping and finite-difference operators.

Arrays are stored numpy-style with shape ``(D, H, W)`` and indexed
``[z, y, x]``, so the linear index of voxel (x, y, z) in C order is
``x + W * (y + H * z)``. Displacement fields have shape ``(3, D, H, W)``
with components ``(dx, dy, dz)`` in voxel units along the grid axes.

Fields follow the backward (pull-back) convention throughout: warping a
source volume by a field ``phi`` produces ``out(p) = src(p + phi(p))``.
Coordinates outside the grid are clamped to the border.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from . import kernels

BACKGROUND, MYOCARDIUM, CAVITY = 0, 1, 2
LABELS = (BACKGROUND, MYOCARDIUM, CAVITY)


class GridError(ValueError):
    """Raised for malformed volumes or mismatched grids."""


class GridDims(NamedTuple):
    W: int
    H: int
    D: int

    @property
    def shape(self):
        """Array shape ``(D, H, W)``."""
        return (self.D, self.H, self.W)

    @property
    def size(self):
        return self.W * self.H * self.D


class Spacing(NamedTuple):
    sx: float
    sy: float
    sz: float


def _check_dims(shape):
    if len(shape) != 3 or min(shape) < 2:
        raise GridError(f"grid needs 3 axes of size >= 2, got shape {shape}")


def _check_spacing(spacing):
    spacing = Spacing(*(float(s) for s in spacing))
    if min(spacing) <= 0:
        raise GridError(f"spacing must be strictly positive, got {spacing}")
    return spacing


@dataclass(frozen=True)
class ScalarVolume:
    data: np.ndarray
    spacing: Spacing = dc_field(default=Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        _check_dims(data.shape)
        if not np.all(np.isfinite(data)):
            raise GridError("volume contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self):
        D, H, W = self.data.shape
        return GridDims(W, H, D)


@dataclass(frozen=True)
class LabelVolume:
    data: np.ndarray
    spacing: Spacing = dc_field(default=Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        _check_dims(data.shape)
        if not np.isin(data, LABELS).all():
            raise GridError(f"labels must lie in {LABELS}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self):
        D, H, W = self.data.shape
        return GridDims(W, H, D)

    def mask(self, label):
        return self.data == label


@dataclass(frozen=True)
class DisplacementField:
    data: np.ndarray
    spacing: Spacing = dc_field(default=Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 3:
            raise GridError(f"field must have shape (3, D, H, W), got {data.shape}")
        _check_dims(data.shape[1:])
        if not np.all(np.isfinite(data)):
            raise GridError("field contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self):
        _, D, H, W = self.data.shape
        return GridDims(W, H, D)

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)):
        dims = GridDims(*dims)
        return cls(np.zeros((3,) + dims.shape), spacing)


def _same_grid(a, b):
    if a.dims != b.dims:
        raise GridError(f"grid mismatch: {tuple(a.dims)} vs {tuple(b.dims)}")


# -- array-level helpers (used in the optimisation loops) ---------------------

def identity_coords(shape):
    """Voxel coordinate arrays ``(x, y, z)`` for a grid of array shape (D, H, W)."""
    z, y, x = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    return x, y, z


def warp_array(src, phi, coords=None):
    """Pull-back warp of a (D, H, W) array by a (3, D, H, W) field array."""
    if coords is None:
        coords = identity_coords(src.shape)
    x, y, z = coords
    out = kernels.sample(src, (x + phi[0]).ravel(), (y + phi[1]).ravel(),
                         (z + phi[2]).ravel())
    return out.reshape(src.shape)


def warp_array_grad(src, phi, coords=None):
    """Warped array plus the source gradient sampled at the displaced points.

    Returns ``(warped, grad)`` where ``grad`` has shape (3, D, H, W) and holds
    the derivative of the warped value with respect to each field component.
    """
    if coords is None:
        coords = identity_coords(src.shape)
    x, y, z = coords
    val, gx, gy, gz = kernels.sample_grad(src, (x + phi[0]).ravel(),
                                          (y + phi[1]).ravel(), (z + phi[2]).ravel())
    return val.reshape(src.shape), np.stack([gx, gy, gz]).reshape((3,) + src.shape)


def forward_diff(a, axis):
    """Forward difference along ``axis``; zero on the last index."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    out[tuple(lo)] = a[tuple(hi)] - a[tuple(lo)]
    return out


def forward_diff_adjoint(g, axis):
    """Adjoint of :func:`forward_diff` (a negative backward difference)."""
    out = np.zeros_like(g)
    n = g.shape[axis]
    lo = [slice(None)] * g.ndim
    hi = [slice(None)] * g.ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    out[tuple(lo)] -= g[tuple(lo)]
    out[tuple(hi)] += g[tuple(lo)]
    return out


def jacobian_det_array(phi):
    """det(I + grad u) of a (3, D, H, W) field array, voxel units.

    Central differences inside, one-sided at the borders (``np.gradient``).
    """
    # du[c][a]: derivative of component c (x,y,z) along spatial axis a (x,y,z)
    du = [np.gradient(phi[c], axis=(2, 1, 0)) for c in range(3)]
    j = [[du[c][a] + (1.0 if a == c else 0.0) for a in range(3)] for c in range(3)]
    return (j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]))


# -- public operations --------------------------------------------------------

def sample_trilinear(vol, p):
    """Trilinearly interpolate ``vol`` at continuous voxel coordinate ``p = (x, y, z)``."""
    x, y, z = (np.array([float(c)]) for c in p)
    return float(kernels.sample(vol.data, x, y, z)[0])


def warp_scalar(src, phi):
    _same_grid(src, phi)
    return ScalarVolume(warp_array(src.data, phi.data), src.spacing)


def warp_labels(src, phi):
    """Warp a label volume by warping one-hot channels and taking the argmax.

    Ties go to the smaller label id (``np.argmax`` returns the first maximum).
    """
    _same_grid(src, phi)
    present = np.unique(src.data)
    coords = identity_coords(src.data.shape)
    channels = np.stack([warp_array((src.data == lab).astype(np.float64), phi.data, coords)
                         for lab in present])
    out = present[np.argmax(channels, axis=0)]
    return LabelVolume(out.astype(np.uint8), src.spacing)


def jacobian_determinant(phi):
    return ScalarVolume(jacobian_det_array(phi.data), phi.spacing)


def spatial_gradient(vol):
    """Forward-difference gradient ``(d/dx, d/dy, d/dz)`` as three volumes."""
    return tuple(ScalarVolume(forward_diff(vol.data, axis), vol.spacing) for axis in (2, 1, 0))
