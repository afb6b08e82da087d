import numpy as np
import pytest

from mvmotion import io
from mvmotion.grid import DisplacementField, LabelVolume, ScalarVolume


def test_scalar_round_trip_bytes(tmp_path, rng):
    vol = ScalarVolume(rng.random((3, 4, 5)).astype(np.float32), (1.25, 1.25, 2.0))
    io.save_scalar(tmp_path / "a", vol)
    back = io.load_scalar(tmp_path / "a.json")
    assert np.array_equal(back.data, vol.data) and back.spacing == vol.spacing
    io.save_scalar(tmp_path / "b", back)
    for ext in (".json", ".raw"):
        assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()


def test_header_layout(tmp_path):
    io.write_mvol(tmp_path / "v", np.zeros((2, 3, 4)), (1, 2, 3), "u8")
    header = io.load_json(tmp_path / "v.json")
    assert header == {"components": 1, "dims": [4, 3, 2], "dtype": "u8", "order": "x-fastest",
                      "spacing": [1.0, 2.0, 3.0]}
    assert len((tmp_path / "v.raw").read_bytes()) == 24


def test_field_components_concatenated(tmp_path, rng):
    phi = DisplacementField(rng.random((3, 2, 3, 4)).astype(np.float32))
    io.save_field(tmp_path / "f", phi)
    raw = np.frombuffer((tmp_path / "f.raw").read_bytes(), "<f4")
    assert np.array_equal(raw[:24], phi.data[0].ravel().astype("<f4"))
    assert np.array_equal(raw[48:], phi.data[2].ravel().astype("<f4"))
    assert np.array_equal(io.load_field(tmp_path / "f").data, phi.data)


def test_x_is_fastest(tmp_path):
    a = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    io.write_mvol(tmp_path / "x", a, (1, 1, 1), "u8")
    raw = (tmp_path / "x.raw").read_bytes()
    assert raw[1] == a[0, 0, 1] and raw[4] == a[0, 1, 0] and raw[12] == a[1, 0, 0]


def test_labels_round_trip(tmp_path, rng):
    lab = LabelVolume(rng.integers(0, 3, (3, 3, 3)).astype(np.uint8))
    io.save_labels(tmp_path / "l", lab)
    assert np.array_equal(io.load_labels(tmp_path / "l").data, lab.data)


def test_truncated_payload(tmp_path):
    io.write_mvol(tmp_path / "t", np.zeros((2, 2, 2)), (1, 1, 1))
    (tmp_path / "t.raw").write_bytes(b"\0" * 5)
    with pytest.raises(io.FormatError):
        io.read_mvol(tmp_path / "t")


def test_bad_dtype(tmp_path):
    with pytest.raises(io.FormatError):
        io.write_mvol(tmp_path / "t", np.zeros((2, 2, 2)), (1, 1, 1), "f64")


def test_json_and_csv_stable(tmp_path):
    io.dump_json({"b": 1, "a": [1.5, 2]}, tmp_path / "x.json")
    assert (tmp_path / "x.json").read_text() == '{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": 1\n}\n'
    io.write_csv(tmp_path / "x.csv", ("a", "b"), [(1, io.fmt(0.1 + 0.2))])
    assert (tmp_path / "x.csv").read_text() == "a,b\n1,0.3\n"
