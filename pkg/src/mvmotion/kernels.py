"""Backend selection for the trilinear sampling kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``MVMOTION_BACKEND=python`` to force the numpy
path.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MVMOTION_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" / "python") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def sample(src, xs, ys, zs):
    return _impl.sample(src, xs, ys, zs)


def sample_grad(src, xs, ys, zs):
    return _impl.sample_grad(src, xs, ys, zs)
