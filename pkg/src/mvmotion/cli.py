"""Command-line entry point: ``mvmotion phantom|track|baseline|eval|report``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
from importlib import metadata
from pathlib import Path

import click
import numpy as np
import scipy

from . import analysis, baselines, io, kernels, metrics
from .grid import MYOCARDIUM, DisplacementField, warp_labels
from .multiview import PlaneSet, PlaneSpec
from .phantom import VIEWS, ConfigError, PhantomConfig, PhantomStudy, generate
from .tracker import TrackerConfig, find_es_frame, track_sequence


KINDS = ("image", "labels", "gt", "edges")
TRACE_HEADER = ("frame", "iteration", "level", "sim", "smooth", "shape", "total")


class InputError(click.ClickException):
    exit_code = 2


class RunError(click.ClickException):
    exit_code = 1


def _frame_name(t):
    return f"frame_{t:03d}"


def _config_hash(d):
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _versions():
    try:
        own = metadata.version("mvmotion")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"mvmotion": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "backend": kernels.BACKEND}


def _read_config(path, cls):
    if path is None:
        return cls()
    try:
        data = io.load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"config {path} must hold a JSON object")
    try:
        return cls.from_json(data)
    except ConfigError as exc:
        raise InputError(f"invalid config field {exc.field!r}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from exc


# -- study on disk ------------------------------------------------------------

def write_study(study, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for t in range(study.frames):
        name = _frame_name(t)
        parts = {
            "image": io.write_mvol(out / "images" / name, study.images[t], study.spacing, "f32"),
            "labels": io.write_mvol(out / "labels" / name, study.labels[t], study.spacing, "u8"),
            "gt": io.write_mvol(out / "gt" / name, study.fields[t], study.spacing, "f32"),
            "edges": io.write_mvol(out / "edges" / name, study.edges[t], study.spacing, "u8"),
        }
        for kind in KINDS:
            header = parts[kind]
            artifacts.append({"frame": t, "kind": kind,
                              "path": str(header.relative_to(out)),
                              "sha256": io.file_digest(header.with_suffix(".raw"))})
    io.dump_json(study.planes.to_json(), out / "planes.json")
    manifest = {
        "format": "mvmotion-study/1",
        "subject": f"phantom_seed{study.config.seed}",
        "frames": study.frames,
        "dims": list(study.dims),
        "spacing": list(study.spacing),
        "views": list(VIEWS),
        "es_index": study.es_index,
        "config": study.config.to_json(),
        "planes": "planes.json",
        "slice_offsets_mm": (None if study.slice_offsets_mm is None
                             else [[float(v) for v in row] for row in study.slice_offsets_mm]),
        "artifacts": artifacts,
    }
    io.dump_json(manifest, out / "manifest.json")
    return manifest


def read_study(path):
    """Load a study written by ``mvmotion phantom``."""
    path = Path(path)
    try:
        manifest = io.load_json(path / "manifest.json")
        cfg = PhantomConfig.from_json(manifest["config"])
        T = int(manifest["frames"])
        by_kind = {k: {} for k in KINDS}
        for a in manifest["artifacts"]:
            by_kind[a["kind"]][a["frame"]] = path / a["path"]
        missing = [(k, t) for k in ("image", "labels") for t in range(T) if t not in by_kind[k]]
        if missing:
            raise InputError(f"manifest lacks {missing[0][0]} of frame {missing[0][1]}")
        images = np.stack([io.read_mvol(by_kind["image"][t])[0] for t in range(T)]).astype(np.float64)
        labels = np.stack([io.read_mvol(by_kind["labels"][t])[0] for t in range(T)])
        shape = images.shape[1:]
        spacing = io.read_mvol(by_kind["image"][0])[1]
        has_gt = all(t in by_kind["gt"] for t in range(T))
        fields = (np.stack([io.read_mvol(by_kind["gt"][t])[0] for t in range(T)]).astype(np.float64)
                  if has_gt else np.zeros((T, 3) + shape))
        edges = np.stack([io.read_mvol(by_kind["edges"][t])[0] for t in range(T)])
        specs = [PlaneSpec.from_json(d) for d in io.load_json(path / manifest["planes"])]
        planes = PlaneSet.from_specs(specs, tuple(reversed(shape)), spacing)
    except InputError:
        raise
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise InputError(f"cannot load study from {path}: {exc}") from exc
    offsets = manifest.get("slice_offsets_mm")
    study = PhantomStudy(cfg, images, labels, fields, edges, planes,
                         None if offsets is None else np.asarray(offsets), spacing)
    return study, manifest, has_gt


def write_fields(out, fields, spacing, method, cfg_json, traces, extra):
    """Shared output layout of ``track`` and ``baseline``."""
    out = Path(out)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    names = []
    for t, phi in sorted(fields.items()):
        header = io.write_mvol(out / "fields" / _frame_name(t), phi, spacing, "f32")
        names.append(str(header.relative_to(out)))
    rows = [(t, r.iteration, r.level, io.fmt(r.sim), io.fmt(r.smooth), io.fmt(r.shape), io.fmt(r.total))
            for t in sorted(traces) for r in traces[t]]
    io.write_csv(out / "trace.csv", TRACE_HEADER, rows)
    run = {"method": method, "config": cfg_json, "config_sha256": _config_hash(cfg_json),
           "versions": _versions(), "fields": names}
    run.update(extra)
    io.dump_json(run, out / "run.json")


def read_fields(path, frames):
    path = Path(path)
    try:
        run = io.load_json(path / "run.json")
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path / 'run.json'}: {exc}") from exc
    fields = {}
    for t in range(frames):
        header = path / "fields" / (_frame_name(t) + ".json")
        if header.exists():
            fields[t] = io.read_mvol(header)[0].astype(np.float64)
    return run, fields


# -- commands -----------------------------------------------------------------

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Multi-view cardiac motion tracking on synthetic phantoms."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def phantom(config_path, out, seed):
    """Generate a phantom study (images, labels, ground-truth fields, edge maps)."""
    cfg = _read_config(config_path, PhantomConfig)
    if seed is not None:
        d = cfg.to_json()
        d["seed"] = seed
        try:
            cfg = PhantomConfig.from_json(d)
        except ConfigError as exc:
            raise InputError(f"invalid config field {exc.field!r}: {exc}") from exc
    manifest = write_study(generate(cfg), out)
    click.echo(f"wrote {len(manifest['artifacts'])} artifacts for {manifest['frames']} frames to {out}")


def _views_available(study, cfg):
    views = tuple(v for v in cfg.views if v == "sax" or v in study.planes.masks)
    dropped = sorted(set(cfg.views) - set(views))
    if dropped and cfg.weights.beta > 0:
        warnings.warn(f"study has no {', '.join(dropped)} planes; shape term uses {', '.join(views)} only")
        click.echo(f"warning: missing long-axis planes {dropped}; using {list(views)}", err=True)
    return views


@main.command()
@click.argument("study_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Accepted for symmetry; tracking is deterministic.")
@click.option("--threads", type=click.IntRange(min=0), default=0,
              help="Worker threads over frames (0 = sequential).")
def track(study_dir, config_path, out, seed, threads):
    """Track every frame of a study against ED."""
    cfg = _read_config(config_path, TrackerConfig)
    study, _, _ = read_study(study_dir)
    cfg.views = _views_available(study, cfg)
    start = time.perf_counter()
    result = track_sequence(study, cfg, threads=threads)
    fields = {t: f.data for t, f in enumerate(result.fields)}
    traces = dict(enumerate(result.traces))
    extra = {"iterations": result.iterations,
             "failures": {str(k): v for k, v in sorted(result.failures.items())}}
    write_fields(out, fields, study.spacing, "tracker", cfg.to_json(), traces, extra)
    io.dump_json({"wall_seconds": time.perf_counter() - start,
                  "frame_seconds": result.seconds}, Path(out) / "timing.json")
    if len(result.failures) >= study.frames - 1:
        raise RunError("tracking failed on every frame")
    click.echo(f"tracked {study.frames - 1} frames into {out}")


@main.command()
@click.argument("study_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--method", required=True, help="demons or ffd.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--threads", type=click.IntRange(min=0), default=0)
def baseline(study_dir, method, config_path, out, threads):
    """Register SAX volumes of every frame to ED with a classical baseline."""
    if method not in baselines.CONFIGS:
        raise InputError(f"unknown method {method!r}; choose from {sorted(baselines.CONFIGS)}")
    cfg = _read_config(config_path, baselines.CONFIGS[method])
    study, _, _ = read_study(study_dir)
    start = time.perf_counter()
    fixed_moving = [(t, study.image(t), study.image(0)) for t in range(1, study.frames)]
    fields = {0: np.zeros((3,) + study.images.shape[1:])}
    failures = {}

    def run(job):
        t, fixed, moving = job
        try:
            return t, baselines.register(method, fixed, moving, cfg).data, None
        except baselines.RegistrationError as exc:
            return t, np.zeros_like(fields[0]), str(exc)

    if threads > 0:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(run, fixed_moving))
    else:
        outs = [run(job) for job in fixed_moving]
    for t, phi, err in outs:
        fields[t] = phi
        if err:
            failures[str(t)] = err
    write_fields(out, fields, study.spacing, method, cfg.to_json(), {}, {"failures": failures})
    io.dump_json({"wall_seconds": time.perf_counter() - start}, Path(out) / "timing.json")
    if len(failures) >= study.frames - 1:
        raise RunError("registration failed on every frame")
    click.echo(f"registered {study.frames - 1} frames with {method} into {out}")


@main.command("eval")
@click.argument("study_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("fields_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def evaluate_cmd(study_dir, fields_dirs, out):
    """Score fields at ES: Dice, Hausdorff, VD, negative Jacobian and EPE."""
    study, manifest, has_gt = read_study(study_dir)
    es = find_es_frame(study.images, study.config.noise_sigma).index
    s0, ses = study.label(0), study.label(es)
    myo_es = study.labels[es] == MYOCARDIUM
    rows = []
    for d in fields_dirs:
        run, fields = read_fields(d, study.frames)
        if es not in fields:
            raise RunError(f"{d} has no field for the ES frame {es}")
        phi = DisplacementField(fields[es], study.spacing)
        warped = warp_labels(s0, phi)
        row = [manifest.get("subject", Path(study_dir).name), run.get("method", Path(d).name),
               io.fmt(metrics.dice(warped, ses, MYOCARDIUM)),
               io.fmt(metrics.hausdorff_mm(warped, ses, MYOCARDIUM, study.spacing)),
               io.fmt(metrics.volume_difference(s0, warped, MYOCARDIUM)),
               io.fmt(metrics.negative_jacobian_fraction(phi, myo_es))]
        if has_gt:
            epe = metrics.end_point_error(phi, study.gt_field(es), myo_es)
            row += [io.fmt(epe.mean_mm), io.fmt(epe.axis_mm[2])]
        else:
            row += ["", ""]
        rows.append(row)
    rows.sort(key=lambda r: (r[1], r[0]))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    io.write_csv(out, metrics.CSV_HEADER, rows)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command()
@click.argument("study_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("fields_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def report(study_dir, fields_dir, out):
    """Volume/EF curve, global strains and wall thickness of a tracked study."""
    study, manifest, _ = read_study(study_dir)
    _, fields = read_fields(fields_dir, study.frames)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    errors = {}
    try:
        if len(fields) != study.frames:
            raise analysis.AnalysisError(f"fields cover {len(fields)} of {study.frames} frames")
        curve = analysis.lv_volume_curve(study, [fields[t] for t in range(study.frames)])
        ef = analysis.ejection_fraction(curve)
        io.write_csv(out / "volume.csv", ("t", "volume_mL", "volume_norm", "ef_pct"),
                     [(t, io.fmt(v), io.fmt(n), io.fmt(e)) for t, (v, n, e)
                      in enumerate(zip(curve.volume_ml, curve.normalized, ef.ef_curve_pct))])
    except analysis.AnalysisError as exc:
        errors["volume"] = str(exc)
    axis = (tuple(study.config.center_mm), (0.0, 0.0, 1.0))
    myo0 = study.labels[0] == MYOCARDIUM
    try:
        rows = []
        for t in sorted(fields):
            fwd = analysis.invert_field(DisplacementField(fields[t], study.spacing))
            s = analysis.global_strains(fwd, myo0, axis)
            rows.append((t, io.fmt(s.radial), io.fmt(s.circumferential), io.fmt(s.longitudinal)))
        io.write_csv(out / "strain.csv", ("t", "radial", "circ", "long"), rows)
    except (analysis.AnalysisError, analysis.InversionError) as exc:
        errors["strain"] = str(exc)
    summary = {}
    try:
        es = find_es_frame(study.images, study.config.noise_sigma).index
        ed = analysis.wall_thickness_global(study.label(0))
        summary = {"es_index": es, "ed_mm": ed.mean_mm, "ed_slices": list(ed.slices_used),
                   "ed_skipped": list(ed.slices_skipped)}
        if es in fields:
            warped = warp_labels(study.label(0), DisplacementField(fields[es], study.spacing))
            th = analysis.wall_thickness_global(warped)
            summary.update({"es_mm": th.mean_mm, "es_slices": list(th.slices_used),
                            "es_skipped": list(th.slices_skipped),
                            "thickening_pct": analysis.fractional_wall_thickening(ed.mean_mm, th.mean_mm)})
    except analysis.AnalysisError as exc:
        errors["thickness"] = str(exc)
    summary["errors"] = errors
    io.dump_json(summary, out / "thickness.json")
    if len(errors) == 3:
        raise RunError("; ".join(f"{k}: {v}" for k, v in errors.items()))
    for k, v in errors.items():
        click.echo(f"warning: {k} analysis failed: {v}", err=True)
    click.echo(f"wrote report to {out}")


if __name__ == "__main__":
    main()
