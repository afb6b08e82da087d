# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled trilinear sampling kernels (same contract as ``_kernels_py``)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _axis(double c, Py_ssize_t n, Py_ssize_t* i0, double* f,
                       double* inside) noexcept nogil:
    cdef double hi = <double>(n - 1)
    if c < 0.0:
        c = 0.0
        inside[0] = 0.0
    elif c > hi:
        c = hi
        inside[0] = 0.0
    else:
        inside[0] = 1.0
    cdef Py_ssize_t i = <Py_ssize_t>floor(c)
    if i > n - 2:
        i = n - 2
    i0[0] = i
    f[0] = c - i


def sample(const double[:, :, ::1] src, const double[::1] xs,
           const double[::1] ys, const double[::1] zs):
    cdef Py_ssize_t nz = src.shape[0], ny = src.shape[1], nx = src.shape[2]
    cdef Py_ssize_t m = xs.shape[0], k
    cdef Py_ssize_t x0, y0, z0
    cdef double fx, fy, fz, gx, gy, gz, ix, iy, iz
    cdef double c000, c100, c010, c110, c001, c101, c011, c111
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for k in range(m):
            _axis(xs[k], nx, &x0, &fx, &ix)
            _axis(ys[k], ny, &y0, &fy, &iy)
            _axis(zs[k], nz, &z0, &fz, &iz)
            c000 = src[z0, y0, x0]
            c100 = src[z0, y0, x0 + 1]
            c010 = src[z0, y0 + 1, x0]
            c110 = src[z0, y0 + 1, x0 + 1]
            c001 = src[z0 + 1, y0, x0]
            c101 = src[z0 + 1, y0, x0 + 1]
            c011 = src[z0 + 1, y0 + 1, x0]
            c111 = src[z0 + 1, y0 + 1, x0 + 1]
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            out[k] = (gz * (gy * (gx * c000 + fx * c100) + fy * (gx * c010 + fx * c110))
                      + fz * (gy * (gx * c001 + fx * c101) + fy * (gx * c011 + fx * c111)))
    return out_arr


def sample_grad(const double[:, :, ::1] src, const double[::1] xs,
                const double[::1] ys, const double[::1] zs):
    cdef Py_ssize_t nz = src.shape[0], ny = src.shape[1], nx = src.shape[2]
    cdef Py_ssize_t m = xs.shape[0], k
    cdef Py_ssize_t x0, y0, z0
    cdef double fx, fy, fz, gx, gy, gz, ix, iy, iz
    cdef double c000, c100, c010, c110, c001, c101, c011, c111
    val_arr = np.empty(m, dtype=np.float64)
    dx_arr = np.empty(m, dtype=np.float64)
    dy_arr = np.empty(m, dtype=np.float64)
    dz_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] val = val_arr
    cdef double[::1] dx = dx_arr
    cdef double[::1] dy = dy_arr
    cdef double[::1] dz = dz_arr
    with nogil:
        for k in range(m):
            _axis(xs[k], nx, &x0, &fx, &ix)
            _axis(ys[k], ny, &y0, &fy, &iy)
            _axis(zs[k], nz, &z0, &fz, &iz)
            c000 = src[z0, y0, x0]
            c100 = src[z0, y0, x0 + 1]
            c010 = src[z0, y0 + 1, x0]
            c110 = src[z0, y0 + 1, x0 + 1]
            c001 = src[z0 + 1, y0, x0]
            c101 = src[z0 + 1, y0, x0 + 1]
            c011 = src[z0 + 1, y0 + 1, x0]
            c111 = src[z0 + 1, y0 + 1, x0 + 1]
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            val[k] = (gz * (gy * (gx * c000 + fx * c100) + fy * (gx * c010 + fx * c110))
                      + fz * (gy * (gx * c001 + fx * c101) + fy * (gx * c011 + fx * c111)))
            dx[k] = ix * (gz * (gy * (c100 - c000) + fy * (c110 - c010))
                          + fz * (gy * (c101 - c001) + fy * (c111 - c011)))
            dy[k] = iy * (gz * (gx * (c010 - c000) + fx * (c110 - c100))
                          + fz * (gx * (c011 - c001) + fx * (c111 - c101)))
            dz[k] = iz * (gy * (gx * (c001 - c000) + fx * (c101 - c100))
                          + fy * (gx * (c011 - c010) + fx * (c111 - c110)))
    return val_arr, dx_arr, dy_arr, dz_arr
