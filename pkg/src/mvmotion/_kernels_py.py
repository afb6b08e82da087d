"""Numpy implementation of the trilinear sampling kernels.

Used when the compiled ``_ckernels`` extension is not available, and as the
reference the extension is checked against.
"""
import numpy as np


def _axis(c, n):
    inside = (c >= 0.0) & (c <= n - 1.0)
    c = np.clip(c, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
    return i0, c - i0, inside


def sample(src, xs, ys, zs):
    """Trilinear samples of ``src`` (indexed [z, y, x]) at flat coordinates."""
    nz, ny, nx = src.shape
    x0, fx, _ = _axis(xs, nx)
    y0, fy, _ = _axis(ys, ny)
    z0, fz, _ = _axis(zs, nz)
    flat = src.ravel()
    base = x0 + nx * (y0 + ny * z0)
    sx, sy = 1, nx
    sz = nx * ny
    c000 = flat[base]
    c100 = flat[base + sx]
    c010 = flat[base + sy]
    c110 = flat[base + sx + sy]
    c001 = flat[base + sz]
    c101 = flat[base + sx + sz]
    c011 = flat[base + sy + sz]
    c111 = flat[base + sx + sy + sz]
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    return (gz * (gy * (gx * c000 + fx * c100) + fy * (gx * c010 + fx * c110))
            + fz * (gy * (gx * c001 + fx * c101) + fy * (gx * c011 + fx * c111)))


def sample_grad(src, xs, ys, zs):
    """Samples plus partial derivatives w.r.t. the (x, y, z) sample position.

    A derivative is zero along any axis where the coordinate was clamped.
    """
    nz, ny, nx = src.shape
    x0, fx, ix = _axis(xs, nx)
    y0, fy, iy = _axis(ys, ny)
    z0, fz, iz = _axis(zs, nz)
    flat = src.ravel()
    base = x0 + nx * (y0 + ny * z0)
    sx, sy = 1, nx
    sz = nx * ny
    c000 = flat[base]
    c100 = flat[base + sx]
    c010 = flat[base + sy]
    c110 = flat[base + sx + sy]
    c001 = flat[base + sz]
    c101 = flat[base + sx + sz]
    c011 = flat[base + sy + sz]
    c111 = flat[base + sx + sy + sz]
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    val = (gz * (gy * (gx * c000 + fx * c100) + fy * (gx * c010 + fx * c110))
           + fz * (gy * (gx * c001 + fx * c101) + fy * (gx * c011 + fx * c111)))
    dx = (gz * (gy * (c100 - c000) + fy * (c110 - c010))
          + fz * (gy * (c101 - c001) + fy * (c111 - c011)))
    dy = (gz * (gx * (c010 - c000) + fx * (c110 - c100))
          + fz * (gx * (c011 - c001) + fx * (c111 - c101)))
    dz = (gy * (gx * (c001 - c000) + fx * (c101 - c100))
          + fy * (gx * (c011 - c010) + fx * (c111 - c110)))
    return val, dx * ix, dy * iy, dz * iz
