import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from mvmotion.cli import main, read_study, write_study
from mvmotion.phantom import PhantomConfig, generate

from conftest import SMALL

PHANTOM = dict(SMALL, frames=3)
TRACK = {"iterations": [4, 4, 4]}
DEMONS = {"iterations": [3, 3, 3]}


def _digests(root, skip=("timing.json",)):
    root = Path(root)
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def _invoke(*args, code=0):
    res = CliRunner().invoke(main, [str(a) for a in args])
    assert res.exit_code == code, res.output
    return res


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for name, cfg in (("phantom", PHANTOM), ("track", TRACK), ("demons", DEMONS)):
        (root / f"{name}.json").write_text(json.dumps(cfg))
    _invoke("phantom", "--config", root / "phantom.json", "--out", root / "study")
    _invoke("track", root / "study", "--config", root / "track.json", "--out", root / "tracked")
    _invoke("baseline", root / "study", "--method", "demons", "--config", root / "demons.json",
            "--out", root / "demons")
    return root


def test_phantom_layout(work):
    manifest = json.loads((work / "study" / "manifest.json").read_text())
    assert manifest["frames"] == 3 and len(manifest["artifacts"]) == 12
    for a in manifest["artifacts"]:
        raw = (work / "study" / a["path"]).with_suffix(".raw")
        assert hashlib.sha256(raw.read_bytes()).hexdigest() == a["sha256"]


def test_study_round_trip(work):
    original = generate(PhantomConfig(**PHANTOM))
    study, _, has_gt = read_study(work / "study")
    assert has_gt
    assert np.array_equal(study.labels, original.labels)
    assert np.array_equal(study.images, original.images.astype(np.float32))
    assert study.planes.sax_ids == original.planes.sax_ids
    for key, mask in original.planes.masks.items():
        assert np.array_equal(study.planes.masks[key], mask)


def test_commands_are_byte_identical_on_rerun(work, tmp_path):
    _invoke("phantom", "--config", work / "phantom.json", "--out", tmp_path / "study")
    assert _digests(tmp_path / "study") == _digests(work / "study")
    _invoke("track", work / "study", "--config", work / "track.json", "--out", tmp_path / "tracked")
    assert _digests(tmp_path / "tracked") == _digests(work / "tracked")
    _invoke("baseline", work / "study", "--method", "demons", "--config", work / "demons.json",
            "--out", tmp_path / "demons")
    assert _digests(tmp_path / "demons") == _digests(work / "demons")
    for run in (1, 2):
        _invoke("eval", work / "study", work / "tracked", work / "demons",
                "--out", tmp_path / f"eval{run}.csv")
        _invoke("report", work / "study", work / "tracked", "--out", tmp_path / f"report{run}")
    assert (tmp_path / "eval1.csv").read_bytes() == (tmp_path / "eval2.csv").read_bytes()
    assert _digests(tmp_path / "report1") == _digests(tmp_path / "report2")


def test_threads_do_not_change_outputs(work, tmp_path):
    _invoke("track", work / "study", "--config", work / "track.json", "--threads", 2,
            "--out", tmp_path / "tracked")
    assert _digests(tmp_path / "tracked") == _digests(work / "tracked")


def test_track_outputs(work):
    run = json.loads((work / "tracked" / "run.json").read_text())
    assert run["method"] == "tracker" and run["failures"] == {}
    assert run["config"]["iterations"] == [4, 4, 4]
    with open(work / "tracked" / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["frame", "iteration", "level", "sim", "smooth", "shape", "total"]
    assert {r["frame"] for r in rows} == {"1", "2"}
    assert "wall_seconds" in json.loads((work / "tracked" / "timing.json").read_text())


def test_eval_rows(work, tmp_path):
    out = tmp_path / "eval.csv"
    _invoke("eval", work / "study", work / "tracked", work / "demons", "--out", out)
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["subject", "method", "dice", "hd_mm", "vd_pct", "negjac_pct",
                             "epe_mm", "epe_z_mm"]
    assert [r["method"] for r in rows] == ["demons", "tracker"]
    assert all(0.0 <= float(r["dice"]) <= 1.0 and r["epe_mm"] for r in rows)


def test_report_outputs(work, tmp_path):
    _invoke("report", work / "study", work / "tracked", "--out", tmp_path / "rep")
    with open(tmp_path / "rep" / "volume.csv") as fh:
        vol = list(csv.DictReader(fh))
    assert len(vol) == 3 and float(vol[0]["volume_norm"]) == 1.0
    with open(tmp_path / "rep" / "strain.csv") as fh:
        strain = list(csv.DictReader(fh))
    assert [r["t"] for r in strain] == ["0", "1", "2"]
    assert all(float(v) == 0.0 for v in list(strain[0].values())[1:])
    summary = json.loads((tmp_path / "rep" / "thickness.json").read_text())
    assert summary["errors"] == {} and summary["ed_mm"] > 0


def test_input_errors_exit_2(work, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"radial_amplitude": -1.0}))
    res = _invoke("phantom", "--config", bad, "--out", tmp_path / "x", code=2)
    assert "radial_amplitude" in res.output
    bad.write_text(json.dumps({"no_such_field": 1}))
    _invoke("track", work / "study", "--config", bad, "--out", tmp_path / "y", code=2)
    _invoke("baseline", work / "study", "--method", "optical-flow", "--out", tmp_path / "z", code=2)
    (tmp_path / "empty").mkdir()
    _invoke("track", tmp_path / "empty", "--out", tmp_path / "w", code=2)


def test_missing_long_axis_plane_warns(work, tmp_path):
    study = tmp_path / "study"
    write_study(generate(PhantomConfig(**PHANTOM)), study)
    planes = json.loads((study / "planes.json").read_text())
    (study / "planes.json").write_text(json.dumps([p for p in planes if p["id"] != "4ch"]))
    with pytest.warns(UserWarning, match="4ch"):
        res = CliRunner().invoke(main, ["track", str(study), "--config", str(work / "track.json"),
                                        "--out", str(tmp_path / "t")])
    assert res.exit_code == 0, res.output
    assert "4ch" in res.stderr
    run = json.loads((tmp_path / "t" / "run.json").read_text())
    assert run["config"]["views"] == ["sax", "2ch"]
