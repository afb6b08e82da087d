"""Acquisition planes, their voxel masks on the SAX grid, slicing and edge maps."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .grid import GridDims, GridError, LabelVolume, ScalarVolume, Spacing, identity_coords

N_SAX = 9
LAX_IDS = ("2ch", "4ch")


class EmptyEdgeWarning(UserWarning):
    """The requested label does not occur, so the edge map is empty."""


@dataclass(frozen=True)
class PlaneSpec:
    id: str
    origin_mm: tuple
    axis_u: tuple
    axis_v: tuple
    extent_mm: tuple

    def __post_init__(self):
        u = np.asarray(self.axis_u, dtype=float)
        v = np.asarray(self.axis_v, dtype=float)
        if (abs(u @ u - 1) > 1e-9 or abs(v @ v - 1) > 1e-9 or abs(u @ v) > 1e-9):
            raise ValueError(f"plane {self.id}: axis vectors must be orthonormal")
        for name in ("origin_mm", "axis_u", "axis_v", "extent_mm"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))

    @property
    def normal(self):
        return np.cross(self.axis_u, self.axis_v)

    @property
    def view(self):
        return "sax" if self.id.startswith("sax") else self.id

    def to_json(self):
        return {"id": self.id, "origin_mm": list(self.origin_mm), "axis_u": list(self.axis_u),
                "axis_v": list(self.axis_v), "extent_mm": list(self.extent_mm)}

    @classmethod
    def from_json(cls, d):
        return cls(d["id"], d["origin_mm"], d["axis_u"], d["axis_v"], d["extent_mm"])


def rasterize_plane(spec, dims, spacing):
    """Binary (D, H, W) mask of voxels lying on ``spec``.

    A voxel is on the plane when its centre is closer to the plane than half
    the voxel diagonal projected onto the normal, and its in-plane coordinates
    fall inside the (centred) extent.
    """
    dims = GridDims(*dims)
    spacing = Spacing(*spacing)
    x, y, z = identity_coords(dims.shape)
    rel = [x * spacing.sx - spec.origin_mm[0], y * spacing.sy - spec.origin_mm[1],
           z * spacing.sz - spec.origin_mm[2]]
    n = spec.normal
    dist = n[0] * rel[0] + n[1] * rel[1] + n[2] * rel[2]
    half = 0.5 * (abs(n[0]) * spacing.sx + abs(n[1]) * spacing.sy + abs(n[2]) * spacing.sz)
    cu = sum(spec.axis_u[i] * rel[i] for i in range(3))
    cv = sum(spec.axis_v[i] * rel[i] for i in range(3))
    mask = ((np.abs(dist) < half) & (np.abs(cu) <= 0.5 * spec.extent_mm[0])
            & (np.abs(cv) <= 0.5 * spec.extent_mm[1]))
    if not mask.any():
        raise GridError(f"plane {spec.id} does not intersect the grid")
    return mask


@dataclass
class PlaneSet:
    """9 SAX planes plus the 2CH and 4CH long-axis planes, with their masks."""
    specs: list
    masks: dict

    @classmethod
    def from_specs(cls, specs, dims, spacing):
        specs = list(specs)
        n_sax = sum(s.view == "sax" for s in specs)
        if n_sax != N_SAX:
            raise ValueError(f"expected {N_SAX} SAX planes, got {n_sax}")
        return cls(specs, {s.id: rasterize_plane(s, dims, spacing) for s in specs})

    @property
    def sax_ids(self):
        return [s.id for s in self.specs if s.view == "sax"]

    @property
    def lax_ids(self):
        return [s.id for s in self.specs if s.view != "sax"]

    def view_mask(self, view):
        """Union of the plane masks of one view ("sax", "2ch" or "4ch")."""
        ids = self.sax_ids if view == "sax" else [view]
        out = np.zeros_like(next(iter(self.masks.values())))
        for i in ids:
            if i in self.masks:
                out |= self.masks[i]
        return out

    def without_lax(self):
        return PlaneSet([s for s in self.specs if s.view == "sax"],
                        {k: v for k, v in self.masks.items() if k in self.sax_ids})

    def to_json(self):
        return [s.to_json() for s in self.specs]


def standard_planes(dims, spacing, center_mm, sax_step=2, lax_angle_deg=60.0):
    """Phantom plane layout.

    SAX planes are z-slabs ``mid + k * sax_step`` for k = -4..4 around the
    middle slice. 2CH is the x-z plane through the LV centre and 4CH is the
    same plane rotated by ``lax_angle_deg`` about the long (z) axis.
    """
    dims = GridDims(*dims)
    spacing = Spacing(*spacing)
    size = [dims.W * spacing.sx, dims.H * spacing.sy, dims.D * spacing.sz]
    big = 2.0 * float(np.linalg.norm(size))
    mid = dims.D // 2
    specs = []
    for k in range(-(N_SAX // 2), N_SAX // 2 + 1):
        zi = mid + k * sax_step
        if not 0 <= zi < dims.D:
            raise GridError(f"SAX slice {zi} outside a grid of depth {dims.D}")
        specs.append(PlaneSpec(f"sax_{k + N_SAX // 2}", (center_mm[0], center_mm[1], zi * spacing.sz),
                               (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (big, big)))
    a = np.deg2rad(lax_angle_deg)
    specs.append(PlaneSpec("2ch", tuple(center_mm), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (big, big)))
    specs.append(PlaneSpec("4ch", tuple(center_mm), (float(np.cos(a)), float(np.sin(a)), 0.0),
                           (0.0, 0.0, 1.0), (big, big)))
    return PlaneSet.from_specs(specs, dims, spacing)


def slice_volume(vol, mask):
    """Keep ``vol`` on the plane mask and zero it elsewhere."""
    mask = np.asarray(mask)
    if mask.shape != vol.data.shape:
        raise GridError(f"mask shape {mask.shape} does not match volume {vol.data.shape}")
    return ScalarVolume(vol.data * (mask != 0), vol.spacing)


def edge_array(labels, label):
    """Voxels carrying ``label`` with at least one 6-neighbour that does not."""
    inside = labels == label
    interior = ndimage.binary_erosion(inside, structure=ndimage.generate_binary_structure(3, 1),
                                      border_value=0)
    return inside & ~interior


def extract_edge_map(seg, label):
    edge = edge_array(seg.data, label)
    if not edge.any():
        warnings.warn(f"label {label} absent; edge map is empty", EmptyEdgeWarning, stacklevel=2)
    return ScalarVolume(edge.astype(np.float64), seg.spacing)


def gaussian_blur(a, sigma):
    """Separable Gaussian blur with zero padding; the kernel sums to one."""
    if sigma == 0:
        return np.array(a, dtype=np.float64)
    return ndimage.gaussian_filter(np.asarray(a, dtype=np.float64), sigma, mode="constant", cval=0.0)


def soften_array(edge, sigma):
    """Gaussian-blurred edge map rescaled to peak 1 on the edge voxels, clamped to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array(edge, dtype=np.float64)
    blurred = gaussian_blur(edge, sigma)
    on_edge = edge > 0
    if on_edge.any():
        blurred /= blurred[on_edge].max()
    return np.clip(blurred, 0.0, 1.0)


def plane_blur(a, normal, sigma_mm, spacing, normal_sigma_mm=0.0):
    """Gaussian blur of standard deviation ``sigma_mm`` within planes of the given normal.

    The kernel has covariance ``sigma^2 (I - n n^T) + s_n^2 n n^T`` in millimetres,
    applied in the Fourier domain on a zero-padded copy (so the volume is
    treated as surrounded by zeros). With ``normal_sigma_mm = 0`` nothing is
    mixed across planes, which is exact for axis-aligned normals.
    """
    a = np.asarray(a, dtype=np.float64)
    if sigma_mm == 0 and normal_sigma_mm == 0:
        return a.copy()
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    sp = (spacing[2], spacing[1], spacing[0])  # array axis order z, y, x
    reach = 4.0 * max(sigma_mm, normal_sigma_mm)
    pads = [int(np.ceil(reach / s)) + 1 for s in sp]
    padded = np.pad(a, [(p, p) for p in pads])
    shape = padded.shape
    omega = [2 * np.pi * sfft.fftfreq(m, d=s) for m, s in zip(shape[:-1], sp[:-1])]
    omega.append(2 * np.pi * sfft.rfftfreq(shape[-1], d=sp[-1]))
    wz, wy, wx = np.meshgrid(*omega, indexing="ij", sparse=True)
    along = wx * n[0] + wy * n[1] + wz * n[2]
    total = wx * wx + wy * wy + wz * wz
    h = np.exp(-0.5 * (sigma_mm ** 2 * (total - along * along) + normal_sigma_mm ** 2 * along * along))
    out = sfft.irfftn(sfft.rfftn(padded) * h, s=shape)
    return out[tuple(slice(p, p + m) for p, m in zip(pads, a.shape))]


def _line_peak(normal, sigma_mm, spacing, normal_sigma_mm):
    """Blurred value on a straight one-voxel line lying in the plane."""
    n = np.abs(np.asarray(normal, dtype=np.float64))
    sp = (spacing[2], spacing[1], spacing[0])
    size = [2 * int(np.ceil(5.0 * max(sigma_mm, normal_sigma_mm, 1e-9) / s)) + 3 for s in sp]
    line = np.zeros(size)
    c = [m // 2 for m in size]
    if n[2] > 0.5:      # plane contains x: line along x
        line[c[0], c[1], :] = 1.0
    else:               # plane contains z: line along z
        line[:, c[1], c[2]] = 1.0
    blurred = plane_blur(line, normal, sigma_mm, spacing, normal_sigma_mm)
    return float(np.median(blurred[line > 0]))


def soften_in_plane(edge, normal, sigma_mm, spacing, normal_sigma_mm=0.0):
    """Edge map blurred within planes of ``normal``; a straight edge line reads 1.

    The scale depends only on the in-plane kernel, not on the edge map. A
    surface crossing the plane at right angles therefore reads the same as its
    2D contour, with or without the through-plane blur ``normal_sigma_mm``.
    """
    if sigma_mm < 0 or normal_sigma_mm < 0:
        raise ValueError("blur widths must be non-negative")
    if sigma_mm == 0 and normal_sigma_mm == 0:
        return np.array(edge, dtype=np.float64)
    blurred = plane_blur(edge, normal, sigma_mm, spacing, normal_sigma_mm)
    return np.clip(blurred / _line_peak(normal, sigma_mm, spacing, 0.0), 0.0, 1.0)


def view_normal(planes, view):
    """Unit normal shared by the planes of one view."""
    ids = planes.sax_ids if view == "sax" else [view]
    spec = next(s for s in planes.specs if s.id == ids[0])
    return spec.normal


def soften_edges(edge, sigma=1.0):
    """Blur a binary edge map into soft probabilities (peak 1 on the edge)."""
    return ScalarVolume(soften_array(edge.data, sigma), edge.spacing)
