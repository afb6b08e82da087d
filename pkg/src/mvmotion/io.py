"""The ``mvol`` volume format and small JSON/CSV helpers.

An mvol volume is two files: ``<stem>.json`` holding
``{dims, spacing, dtype, components, order}`` and ``<stem>.raw`` holding the
little-endian payload, x fastest. Three-component volumes store the three
scalar sub-volumes one after the other (dx, dy, dz).
"""
import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .grid import DisplacementField, LabelVolume, ScalarVolume, Spacing

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class FormatError(ValueError):
    pass


def dump_json(obj, path):
    """Write JSON with a fixed layout so reruns produce identical bytes."""
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)


def load_json(path):
    return json.loads(Path(path).read_text())


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".raw") else path


def write_mvol(path, data, spacing, dtype="f32"):
    """Write a (D, H, W) or (C, D, H, W) array as mvol. Returns the header path."""
    if dtype not in _DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    data = np.asarray(data)
    if data.ndim == 3:
        components = 1
        shape = data.shape
    elif data.ndim == 4 and data.shape[0] in (1, 3):
        components = data.shape[0]
        shape = data.shape[1:]
    else:
        raise FormatError(f"cannot store array of shape {data.shape}")
    D, H, W = shape
    header = {
        "dims": [W, H, D],
        "spacing": [float(s) for s in spacing],
        "dtype": dtype,
        "components": components,
        "order": "x-fastest",
    }
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    dump_json(header, stem.with_suffix(".json"))
    payload = np.ascontiguousarray(data, dtype=_DTYPES[dtype])
    stem.with_suffix(".raw").write_bytes(payload.tobytes())
    return stem.with_suffix(".json")


def read_mvol(path):
    """Read an mvol volume; returns ``(array, spacing)``.

    Three-component volumes come back as (3, D, H, W), others as (D, H, W).
    """
    stem = _stem(path)
    header = load_json(stem.with_suffix(".json"))
    try:
        W, H, D = header["dims"]
        dtype = _DTYPES[header["dtype"]]
        components = int(header["components"])
        spacing = Spacing(*header["spacing"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad mvol header {stem}.json: {exc}") from exc
    if header.get("order", "x-fastest") != "x-fastest":
        raise FormatError("only x-fastest order is supported")
    raw = stem.with_suffix(".raw").read_bytes()
    expected = W * H * D * components * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{stem}.raw has {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=dtype).reshape((components, D, H, W))
    return (arr if components == 3 else arr[0]), spacing


def save_scalar(path, vol):
    return write_mvol(path, vol.data, vol.spacing, "f32")


def load_scalar(path):
    data, spacing = read_mvol(path)
    return ScalarVolume(data.astype(np.float64), spacing)


def save_labels(path, vol):
    return write_mvol(path, vol.data, vol.spacing, "u8")


def load_labels(path):
    data, spacing = read_mvol(path)
    return LabelVolume(data, spacing)


def save_field(path, phi):
    return write_mvol(path, phi.data, phi.spacing, "f32")


def load_field(path):
    data, spacing = read_mvol(path)
    return DisplacementField(data.astype(np.float64), spacing)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def fmt(x):
    """Format a float for CSV output: fixed significant digits, stable across runs."""
    return f"{x:.10g}"


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
