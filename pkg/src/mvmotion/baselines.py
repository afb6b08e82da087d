"""Single-view registration baselines: diffeomorphic demons and B-spline FFD.

Both operate on SAX volumes only and return backward fields in the package
convention, ``warped(p) = moving(p + phi(p))``, so their output can be
evaluated exactly like the tracker's.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .grid import DisplacementField, GridError, ScalarVolume, identity_coords, warp_array
from .phantom import ConfigError
from .tracker import downsample_mean, upsample_field, _crop_or_pad


class RegistrationError(RuntimeError):
    """The registration produced non-finite values."""


class _JsonConfig:
    def to_json(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(**d)


def _check_levels(factors, iterations):
    if not factors or any(int(f) < 1 for f in factors):
        raise ConfigError("factors", "need at least one level with factor >= 1")
    if len(iterations) != len(factors) or min(iterations) < 1:
        raise ConfigError("iterations", "need one positive count per level")


def _images(fixed, moving):
    f = np.asarray(getattr(fixed, "data", fixed), dtype=np.float64)
    m = np.asarray(getattr(moving, "data", moving), dtype=np.float64)
    if f.shape != m.shape:
        raise GridError(f"fixed {f.shape} and moving {m.shape} differ in shape")
    spacing = getattr(fixed, "spacing", (1.0, 1.0, 1.0))
    return f, m, spacing


# -- diffeomorphic demons -----------------------------------------------------

@dataclass
class DemonsConfig(_JsonConfig):
    iterations: tuple = (40, 40, 40)
    factors: tuple = (4, 2, 1)
    sigma_fluid: float = 2.0
    sigma_diffusion: float = 1.0
    kappa: float = 1.0
    squarings: int = 6

    def __post_init__(self):
        self.iterations = tuple(int(i) for i in self.iterations)
        self.factors = tuple(int(f) for f in self.factors)
        _check_levels(self.factors, self.iterations)
        if self.sigma_fluid < 0 or self.sigma_diffusion < 0:
            raise ConfigError("sigma_fluid" if self.sigma_fluid < 0 else "sigma_diffusion",
                              "must be non-negative")
        if self.kappa <= 0:
            raise ConfigError("kappa", "must be positive")
        if self.squarings < 1:
            raise ConfigError("squarings", "must be at least 1")


def _smooth_field(v, sigma):
    if sigma == 0:
        return v
    return np.stack([ndimage.gaussian_filter(v[c], sigma, mode="nearest") for c in range(3)])


def compose(a, b, coords=None):
    """Backward composition: warping by the result equals warping by ``a`` then ``b``.

    ``(a o b)(p) = b(p) + a(p + b(p))``.
    """
    return b + np.stack([warp_array(a[c], b, coords) for c in range(3)])


def exp_field(v, squarings=6):
    """Scaling and squaring: exp(v) ~ (id + v / 2^K) composed with itself 2^K times."""
    phi = np.asarray(v, dtype=np.float64) / 2.0 ** squarings
    if not phi.any():
        return np.zeros_like(phi)
    coords = identity_coords(phi.shape[1:])
    for _ in range(squarings):
        phi = compose(phi, phi, coords)
    return phi


def demons_force(fixed, warped, kappa):
    """Demons update with the gradient of the warped moving image."""
    diff = fixed - warped
    grad = np.stack(np.gradient(warped, axis=(2, 1, 0)))
    denom = (grad * grad).sum(axis=0) + diff * diff / kappa
    scale = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 1e-12)
    return scale * grad


def _demons_level(fixed, moving, v, cfg, n):
    coords = identity_coords(fixed.shape)
    for _ in range(n):
        phi = exp_field(v, cfg.squarings)
        u = demons_force(fixed, warp_array(moving, phi, coords), cfg.kappa)
        if not np.all(np.isfinite(u)):
            raise RegistrationError("non-finite demons force")
        v = _smooth_field(v + _smooth_field(u, cfg.sigma_fluid), cfg.sigma_diffusion)
    return v


def register_demons(fixed, moving, cfg=None):
    """Diffeomorphic demons on a box-mean pyramid; returns a DisplacementField.

    Each iteration computes the demons force against the current warp,
    smooths it by ``sigma_fluid``, adds it to a stationary velocity field,
    regularises the velocity by ``sigma_diffusion`` and exponentiates.
    """
    cfg = cfg or DemonsConfig()
    f, m, spacing = _images(fixed, moving)
    v = None
    prev = None
    for level, factor in enumerate(cfg.factors):
        lf, lm = downsample_mean(f, factor), downsample_mean(m, factor)
        if v is None:
            v = np.zeros((3,) + lf.shape)
        elif prev // factor > 1:
            v = _crop_or_pad(upsample_field(v, lf.shape, prev // factor), lf.shape)
        v = _demons_level(lf, lm, v, cfg, cfg.iterations[level])
        prev = factor
    if prev != 1:
        v = _crop_or_pad(upsample_field(v, f.shape, prev), f.shape)
    return DisplacementField(exp_field(v, cfg.squarings), spacing)


# -- B-spline free-form deformation -------------------------------------------

@dataclass
class FfdConfig(_JsonConfig):
    knot_spacing: tuple = (4, 4, 4)  # voxels per knot along (x, y, z) at the finest level
    bending: float = 0.01
    iterations: tuple = (60, 60, 60)
    factors: tuple = (4, 2, 1)  # knot spacing multiplier per level

    def __post_init__(self):
        self.knot_spacing = tuple(float(s) for s in self.knot_spacing)
        self.iterations = tuple(int(i) for i in self.iterations)
        self.factors = tuple(int(f) for f in self.factors)
        _check_levels(self.factors, self.iterations)
        if len(self.knot_spacing) != 3 or min(self.knot_spacing) < 2:
            raise ConfigError("knot_spacing", "must be at least 2 voxels per knot on every axis")
        if self.bending < 0:
            raise ConfigError("bending", "must be non-negative")


def bspline_weights(t):
    """Uniform cubic B-spline weights of the four knots around fractional offset ``t``."""
    t = np.asarray(t, dtype=np.float64)
    s = 1.0 - t
    return np.stack([s ** 3 / 6.0,
                     (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0,
                     (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0,
                     t ** 3 / 6.0])


def _bspline_d(t, order):
    t = np.asarray(t, dtype=np.float64)
    if order == 1:
        return np.stack([-(1 - t) ** 2 / 2, (3 * t ** 2 - 4 * t) / 2,
                         (-3 * t ** 2 + 2 * t + 1) / 2, t ** 2 / 2])
    return np.stack([1 - t, 3 * t - 2, -3 * t + 1, t])


def basis_matrix(n, spacing, order=0):
    """(n, m) matrix mapping knot values to the samples at voxels 0..n-1.

    Knot k sits at voxel ``(k - 1) * spacing``; derivatives are per voxel.
    """
    if spacing > n - 1:
        raise GridError(f"knot spacing {spacing} is coarser than an axis of {n} voxels")
    m = int(np.ceil((n - 1) / spacing)) + 3
    x = np.arange(n, dtype=np.float64) / spacing
    i = np.minimum(np.floor(x).astype(int), m - 4)
    t = x - i
    w = bspline_weights(t) if order == 0 else _bspline_d(t, order) / spacing ** order
    out = np.zeros((n, m))
    for k in range(4):
        out[np.arange(n), i + k] += w[k]
    return out


class _Lattice:
    """Separable tensor-product evaluation for one control lattice."""

    def __init__(self, shape, spacing):
        D, H, W = shape
        sx, sy, sz = spacing
        self.b = [[basis_matrix(n, s, o) for o in range(3)]
                  for n, s in ((W, sx), (H, sy), (D, sz))]
        self.shape = tuple(b[0].shape[1] for b in reversed(self.b))  # (mz, my, mx)

    def apply(self, c, ox=0, oy=0, oz=0):
        bx, by, bz = self.b[0][ox], self.b[1][oy], self.b[2][oz]
        return np.einsum("zk,yj,xi,ckji->czyx", bz, by, bx, c, optimize=True)

    def adjoint(self, g, ox=0, oy=0, oz=0):
        bx, by, bz = self.b[0][ox], self.b[1][oy], self.b[2][oz]
        return np.einsum("zk,yj,xi,czyx->ckji", bz, by, bx, g, optimize=True)

    def fit(self, u):
        """Least-squares control points reproducing the dense field ``u``."""
        px, py, pz = (np.linalg.pinv(b[0]) for b in self.b)
        return np.einsum("kz,jy,ix,czyx->ckji", pz, py, px, u, optimize=True)


# (ox, oy, oz, weight) of the thin-plate bending energy terms
_BENDING = ((2, 0, 0, 1.0), (0, 2, 0, 1.0), (0, 0, 2, 1.0),
            (1, 1, 0, 2.0), (1, 0, 1, 2.0), (0, 1, 1, 2.0))


def _ffd_loss(lat, c, fixed, moving, bending, coords, with_grad):
    u = lat.apply(c)
    x, y, z = coords
    n = fixed.size
    args = ((x + u[0]).ravel(), (y + u[1]).ravel(), (z + u[2]).ravel())
    if with_grad:
        w, gx, gy, gz = kernels.sample_grad(moving, *args)
    else:
        w = kernels.sample(moving, *args)
    r = fixed.ravel() - w
    loss = float(r @ r) / n
    grad = None
    if with_grad:
        coef = (-2.0 / n) * r
        gu = np.stack([(coef * g).reshape(fixed.shape) for g in (gx, gy, gz)])
        grad = lat.adjoint(gu)
    if bending > 0:
        for ox, oy, oz, wt in _BENDING:
            d = lat.apply(c, ox, oy, oz)
            loss += bending * wt * float((d * d).sum()) / n
            if with_grad:
                grad += lat.adjoint((2.0 * bending * wt / n) * d, ox, oy, oz)
    return loss, grad


def _ffd_level(lat, c, fixed, moving, cfg, n_iter):
    coords = identity_coords(fixed.shape)
    loss, grad = _ffd_loss(lat, c, fixed, moving, cfg.bending, coords, True)
    step = 1.0
    for _ in range(n_iter):
        gg = float((grad * grad).sum())
        if gg == 0.0:
            break
        # backtracking (Armijo) line search along the negative gradient
        while True:
            trial = c - step * grad
            new, _ = _ffd_loss(lat, trial, fixed, moving, cfg.bending, coords, False)
            if not np.isfinite(new):
                raise RegistrationError("non-finite FFD loss")
            if new <= loss - 1e-4 * step * gg or step < 1e-12:
                break
            step *= 0.5
        if new > loss:
            break
        c = trial
        loss, grad = _ffd_loss(lat, c, fixed, moving, cfg.bending, coords, True)
        step *= 2.0
    return c


def ffd_control_points(fixed, moving, cfg=None):
    """Run the FFD optimisation; returns ``(lattice, control_points)`` at the finest level."""
    cfg = cfg or FfdConfig()
    f, m, _ = _images(fixed, moving)
    lat = c = None
    for level, factor in enumerate(cfg.factors):
        spacing = tuple(s * factor for s in cfg.knot_spacing)
        spacing = tuple(min(s, n - 1) for s, n in zip(spacing, f.shape[::-1]))
        new = _Lattice(f.shape, spacing)
        c = np.zeros((3,) + new.shape) if c is None else new.fit(lat.apply(c))
        lat = new
        c = _ffd_level(lat, c, f, m, cfg, cfg.iterations[level])
    return lat, c


def register_ffd(fixed, moving, cfg=None):
    """Multi-level cubic B-spline FFD minimising MSE plus bending energy."""
    cfg = cfg or FfdConfig()
    f, _, spacing = _images(fixed, moving)
    for s, n in zip(cfg.knot_spacing, f.shape[::-1]):
        if s > n - 1:
            raise GridError(f"knot spacing {s} is coarser than an axis of {n} voxels")
    lat, c = ffd_control_points(fixed, moving, cfg)
    return DisplacementField(lat.apply(c), spacing)


def register(method, fixed, moving, cfg=None):
    if method == "demons":
        return register_demons(fixed, moving, cfg)
    if method == "ffd":
        return register_ffd(fixed, moving, cfg)
    raise ValueError(f"unknown method {method!r}")


CONFIGS = {"demons": DemonsConfig, "ffd": FfdConfig}
