"""Command-line pipeline: ingest, label, fit, predict, eval, render.

Every subcommand is deterministic given its config, inputs, and seed, and
all file outputs are written atomically. Exit codes: 0 ok, 2 config error,
3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import (ConfigError, DegenerateTrajectoryError, GridError, ParseError,
                     SerializationError, StrideError, TrajfieldError)
from .estimators import read_bundle, write_bundle
from .evaluation import report_text, run_protocol
from .fields import GridSpec, atomic_write_bytes
from .geometry import ScenePatch, canonicalize
from .ingest import parse_trajectory_file, segment
from .labeling import label_potentials, rasterize
from .model import FieldPredictor, LinearPredictor


def _parallel_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _load_samples(path, cfg):
    trajectories = parse_trajectory_file(path, dt=cfg["dt"])
    n = cfg["obs_len"] + cfg["pred_len"]
    samples = []
    for traj in trajectories:
        samples.extend(segment(traj, cfg["obs_len"], n, cfg["stride"]))
    return samples


def _grid(cfg) -> GridSpec:
    return GridSpec(cfg["grid_size"], cfg["grid_size"], resolution=cfg["resolution"])


def _load_scenes(cfg) -> dict[str, ScenePatch] | None:
    scene_dir = cfg["scene_dir"]
    if not scene_dir:
        return None
    if not os.path.isdir(scene_dir):
        raise ConfigError(f"scene_dir {scene_dir!r} is not a directory")
    scenes = {path.stem: ScenePatch.from_pfld(path)
              for path in sorted(Path(scene_dir).glob("*.pfld"))}
    return scenes or None


def cmd_ingest(args, cfg) -> int:
    samples = _load_samples(args.input, cfg)
    lines = []
    for s in samples:
        lines.append(json.dumps({
            "sample_id": s.sample_id,
            "scene_id": s.scene_id,
            "agent_id": s.agent_id,
            "start_time_index": s.start_time_index,
            "past": s.past.tolist(),
            "future": s.future.tolist(),
        }, sort_keys=True) + "\n")
    atomic_write_bytes(args.output, "".join(lines).encode("utf-8"))
    print(f"ingest: wrote {len(samples)} samples to {args.output}")
    return 0


class _LabelWorker:
    """Labels one sample on the working grid; picklable for the pool."""

    def __init__(self, grid, width, off_weight):
        self.grid = grid
        self.width = width
        self.off_weight = off_weight

    def __call__(self, sample):
        canon, _ = canonicalize(sample, self.grid)
        try:
            label = label_potentials(canon.full)
        except DegenerateTrajectoryError:
            return sample.sample_id, "degenerate", None, None
        try:
            field = rasterize(canon.full, label, self.grid, self.width,
                              off_weight=self.off_weight)
        except GridError:
            return sample.sample_id, "out_of_grid", None, None
        return (sample.sample_id, "ok", field,
                (float(label.values[0]), float(label.values[-1])))


def cmd_label(args, cfg) -> int:
    samples = _load_samples(args.input, cfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    worker = _LabelWorker(_grid(cfg), cfg["trajectory_width"] * cfg["resolution"],
                          cfg["lambda"])
    results = _parallel_map(worker, samples, args.jobs)

    manifest = ["# sample_id status p_first p_last file\n"]
    written = 0
    for sample_id, status, field, endpoints in results:
        if status != "ok":
            manifest.append(f"{sample_id} {status} - - -\n")
            continue
        fname = sample_id.replace(":", "_") + ".pfld"
        field.save(outdir / fname)
        manifest.append(f"{sample_id} ok {endpoints[0]:+.1f} {endpoints[1]:+.1f} {fname}\n")
        written += 1
    atomic_write_bytes(outdir / "manifest.txt", "".join(manifest).encode("utf-8"))
    print(f"label: {written} field files ({len(samples) - written} skipped) in {outdir}")
    return 0


def cmd_fit(args, cfg) -> int:
    samples = []
    for path in args.input:
        samples.extend(_load_samples(path, cfg))
    if not samples:
        raise ParseError("fit: no samples in input files")
    model = _field_model(cfg)
    model.fit(samples, scenes=_load_scenes(cfg))
    write_bundle(args.output, model.bundle_)
    print(f"fit: bundle with {len(model.bundle_.env_field.bank)} bank entries -> {args.output}")
    return 0


def _field_model(cfg) -> FieldPredictor:
    return FieldPredictor(
        obs_len=cfg["obs_len"], pred_len=cfg["pred_len"], grid_size=cfg["grid_size"],
        resolution=cfg["resolution"], trajectory_width=cfg["trajectory_width"],
        off_weight=cfg["lambda"], neighbor_radius=cfg["neighbor_radius"],
        bank_k=cfg["bank_k"], bank_size=cfg["bank_size"], sigma0=cfg["sigma0"],
        grad_eps=cfg["grad_eps"], speed_sigma_floor=cfg["speed_sigma_floor"],
        social_ell=cfg["social_ell"], social_beta=cfg["social_beta"],
        n_samples=cfg["K"], seed=cfg["seed"])


class _PredictWorker:
    def __init__(self, model, context, scenes):
        self.model = model
        self.context = context
        self.scenes = scenes

    def __call__(self, sample):
        sets = self.model.predict_set([sample], scenes=self.scenes, context=self.context)
        return sample.sample_id, sets[0]


def _prediction_rows(sample_id, pset) -> list[str]:
    rows = []

    def emit(mode, positions, truncated):
        for step, (x, y) in enumerate(np.asarray(positions), start=1):
            rows.append(f"{sample_id} {mode} {step} {x:.6f} {y:.6f} {int(truncated)}\n")

    emit("mean", pset.single, pset.single_truncated)
    for j, (positions, trunc) in enumerate(zip(pset.samples, pset.truncated), start=1):
        emit(str(j), positions, trunc)
    return rows


def cmd_predict(args, cfg) -> int:
    samples = _load_samples(args.input, cfg)
    if not samples:
        raise ParseError("predict: no samples in input file")
    scenes = _load_scenes(cfg)
    if cfg["bundle"] == "linear":
        model = LinearPredictor(pred_len=cfg["pred_len"]).fit(samples)
    else:
        model = _field_model(cfg)
        if cfg["bundle"] == "analytic":
            model.set_bundle(model.make_bundle())  # unfit env bank: inertial + social
        else:
            model.set_bundle(read_bundle(cfg["bundle"]))
    worker = _PredictWorker(model, samples, scenes)
    results = _parallel_map(worker, samples, args.jobs)

    lines = ["# sample_id mode step x y truncated\n"]
    for sample_id, pset in results:
        lines.extend(_prediction_rows(sample_id, pset))
    atomic_write_bytes(args.output, "".join(lines).encode("utf-8"))
    print(f"predict: {len(samples)} samples -> {args.output}")

    if args.dump_fields:
        _dump_fields(args.dump_fields, samples, model, scenes, cfg)
    return 0


def _dump_fields(dump_dir, samples, model, scenes, cfg) -> None:
    """Write every intermediate field of every sample for inspection."""
    from .fields import write_field
    from .ingest import find_neighbors
    from .model import sample_seed
    from .predictor import predict

    outdir = Path(dump_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if isinstance(model, LinearPredictor):
        return
    grid = model.grid()
    for sample in samples:
        neighbors = find_neighbors(sample, samples, cfg["neighbor_radius"])
        scene = (scenes or {}).get(sample.scene_id)
        _, fields = predict(sample, scene, model.bundle_, k=1,
                            seed=sample_seed(cfg["seed"], sample.sample_id),
                            grid=grid, neighbors=neighbors, return_fields=True)
        stem = sample.sample_id.replace(":", "_")
        for name in ("inertial_potential", "env_potential"):
            fld = fields[name]
            if fld is not None:
                fld.save(outdir / f"{stem}_{name}.pfld")
        direction = fields["direction_mean"]
        defined = np.where(direction.defined(), 1.0, 0.01).astype(np.float32)
        write_field(outdir / f"{stem}_direction.pfld", grid, direction.mean, defined)
        write_field(outdir / f"{stem}_fuse_weights.pfld", grid,
                    np.asarray(fields["fuse_weights"], np.float32)[..., None],
                    np.ones(grid.shape, np.float32))
        force = fields["social_force"]
        if force is not None:
            write_field(outdir / f"{stem}_social.pfld", grid, force.data,
                        np.ones(grid.shape, np.float32))


def cmd_eval(args, cfg) -> int:
    details: list = []
    report = run_protocol(cfg, scenes=_load_scenes(cfg), details=details)
    text = report_text(report, details,
                       header=f"protocol={cfg['protocol']} bundle={cfg['bundle']} "
                              f"units={cfg['units']} seed={cfg['seed']}")
    sys.stdout.write(text)
    if args.output:
        atomic_write_bytes(args.output, text.encode("utf-8"))
    return 0


def cmd_render(args, cfg) -> int:
    from .render import render_field_file

    render_field_file(args.input, args.output, scale=args.scale, step=args.step)
    print(f"render: {args.input} -> {args.output}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajfield",
        description="Potential-field trajectory labeling, prediction, and evaluation.")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a trajectory file into JSONL samples")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="write per-sample potential field files")
    p.add_argument("input")
    p.add_argument("output", help="output directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("fit", help="fit the estimator bundle on trajectory files")
    p.add_argument("input", nargs="+")
    p.add_argument("output", help="bundle file (.pfeb)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict futures for every sample of a file")
    p.add_argument("input")
    p.add_argument("output", help="prediction rows text file")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--dump-fields", default=None, metavar="DIR",
                   help="also dump every intermediate field as .pfld")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="run the benchmark protocol from config")
    p.add_argument("--output", default=None, help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a .pfld field to PNG")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--step", type=int, default=4)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    command = args.command
    try:
        cfg = RunConfig.from_file(args.config, args.set)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"{command}: config error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, StrideError, GridError, DegenerateTrajectoryError,
            SerializationError, FileNotFoundError) as exc:
        print(f"{command}: data error: {exc}", file=sys.stderr)
        return 3
    except TrajfieldError as exc:
        print(f"{command}: error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - defensive
        print(f"{command}: internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
