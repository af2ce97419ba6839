"""Displacement-error metrics and benchmark protocols.

ADE is the mean Euclidean error over all predicted steps, FDE the error at
the final step. Best-of-K scores the sample with the lowest ADE and reports
that same sample's FDE. Protocols: leave-one-out over scene files (fit on
all but one, test on the held-out scene) and a fixed train/test split from
an id list file; pixel-coordinate datasets divide errors by a resolution
divisor before aggregation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import parse_trajectory_file, segment


@dataclass
class MetricReport:
    ade: float
    fde: float
    per_horizon: list[tuple[float, float, float]]  # (seconds, ade, fde)
    k_used: int
    sample_count: int


def ade_fde(pred, gt) -> tuple[float, float]:
    """Average and final displacement error between two equal-length paths."""
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    if p.shape != g.shape or p.ndim != 2 or len(p) < 1:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    err = np.linalg.norm(p - g, axis=1)
    return float(err.mean()), float(err[-1])


def pad_to_horizon(pred, horizon: int, fallback) -> np.ndarray:
    """Extend a truncated prediction to the full horizon by holding position.

    Keeps truncated rollouts in the metric pool (penalized, not excluded).
    ``fallback`` is used when the prediction is empty.
    """
    p = np.asarray(pred, dtype=float).reshape(-1, 2)
    if len(p) >= horizon:
        return p[:horizon]
    last = p[-1] if len(p) else np.asarray(fallback, dtype=float)
    pad = np.repeat(last.reshape(1, 2), horizon - len(p), axis=0)
    return np.vstack([p, pad]) if len(p) else pad


def best_of_k(preds, gt) -> tuple[float, float]:
    """Minimum-ADE sample among K predictions, with that sample's FDE."""
    scored = [ade_fde(p, gt) for p in preds]
    if not scored:
        raise ValueError("need at least one prediction")
    best = min(range(len(scored)), key=lambda i: scored[i][0])
    return scored[best]


def linear_baseline(past, steps: int) -> np.ndarray:
    """Constant-velocity extrapolation using the mean past step vector."""
    past = np.asarray(past, dtype=float)
    if len(past) < 2:
        raise ValueError("need >= 2 observed points")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    mean_step = np.diff(past, axis=0).mean(axis=0)
    return past[-1] + mean_step * np.arange(1, steps + 1)[:, None]


def horizon_indices(dt: float, horizon: int) -> list[tuple[float, int]]:
    """Whole-second horizons mapped to step counts (rounded), within range."""
    out = []
    second = 1
    while second <= horizon * dt + 1e-9:
        steps = min(max(int(round(second / dt)), 1), horizon)
        out.append((float(second), steps))
        second += 1
    return out


@dataclass
class _FoldResult:
    name: str
    single: list[tuple[float, float]] = field(default_factory=list)
    multi: list[tuple[float, float]] = field(default_factory=list)
    per_step_err: list[np.ndarray] = field(default_factory=list)


def _load_scene_samples(path, cfg) -> list:
    trajectories = parse_trajectory_file(path, dt=cfg["dt"])
    n = cfg["obs_len"] + cfg["pred_len"]
    samples = []
    for traj in trajectories:
        samples.extend(segment(traj, cfg["obs_len"], n, cfg["stride"]))
    return samples


def _make_model(cfg, train, scenes):
    """Build and fit the configured model; a bundle file skips refitting."""
    from .estimators import read_bundle
    from .model import FieldPredictor, LinearPredictor

    name = cfg["bundle"]
    if name == "linear":
        return LinearPredictor(pred_len=cfg["pred_len"]).fit(train)
    kwargs = dict(
        obs_len=cfg["obs_len"], pred_len=cfg["pred_len"], grid_size=cfg["grid_size"],
        resolution=cfg["resolution"], trajectory_width=cfg["trajectory_width"],
        off_weight=cfg["lambda"], neighbor_radius=cfg["neighbor_radius"],
        bank_k=cfg["bank_k"], bank_size=cfg["bank_size"], sigma0=cfg["sigma0"],
        grad_eps=cfg["grad_eps"], speed_sigma_floor=cfg["speed_sigma_floor"],
        social_ell=cfg["social_ell"], social_beta=cfg["social_beta"],
        n_samples=cfg["K"], seed=cfg["seed"])
    model = FieldPredictor(**kwargs)
    if name == "analytic":
        model.fit(train, scenes=scenes)
    else:
        model.set_bundle(read_bundle(name))
    return model


def _protocol_folds(cfg) -> list[tuple[str, list[Path], list[Path]]]:
    data_dir = Path(cfg["data_dir"])
    if not cfg["data_dir"] or not data_dir.is_dir():
        raise ConfigError(f"data_dir {cfg['data_dir']!r} is not a directory")
    files = sorted(data_dir.glob("*.txt"))
    if not files:
        raise ConfigError(f"no *.txt scene files under {data_dir}")
    protocol = cfg["protocol"]
    if protocol == "loo":
        if len(files) < 2:
            raise ConfigError("leave-one-out needs at least 2 scene files")
        return [(held.stem, [f for f in files if f != held], [held]) for held in files]
    if protocol == "split":
        split_path = cfg["split_file"]
        if not split_path or not os.path.isfile(split_path):
            raise ConfigError(f"split protocol needs an existing split_file, got {split_path!r}")
        with open(split_path, "r", encoding="utf-8") as fh:
            test_ids = {line.strip() for line in fh if line.strip()}
        test = [f for f in files if f.stem in test_ids]
        train = [f for f in files if f.stem not in test_ids]
        missing = test_ids - {f.stem for f in files}
        if missing:
            raise ConfigError(f"split ids not found in data_dir: {sorted(missing)}")
        if not test or not train:
            raise ConfigError("split must leave both train and test scenes non-empty")
        return [("split", train, test)]
    raise ConfigError(f"unknown protocol {cfg['protocol']!r}")


def run_protocol(config, scenes=None, details: list | None = None) -> MetricReport:
    """Run the configured benchmark protocol and aggregate a MetricReport.

    Training trajectories never enter the evaluation; each fold fits the
    model on the train scenes only. The headline ADE/FDE is best-of-K when
    K > 1 and single-mode otherwise. With ``units=pixels`` the errors are
    divided by ``pixel_divisor`` before aggregation. Per-fold dicts are
    appended to ``details`` when a list is supplied.
    """
    cfg = config
    k = cfg["K"]
    divisor = cfg["pixel_divisor"] if cfg["units"] == "pixels" else 1.0
    oracle = cfg["bundle"] == "oracle"

    folds = []
    for name, train_files, test_files in _protocol_folds(cfg):
        train = [s for f in train_files for s in _load_scene_samples(f, cfg)]
        test = [s for f in test_files for s in _load_scene_samples(f, cfg)]
        if not test:
            continue
        fold = _FoldResult(name)
        if oracle:
            sets = None
        else:
            if not train:
                raise ConfigError(f"fold {name}: no training samples")
            model = _make_model(cfg, train, scenes)
            sets = model.predict_set(test, scenes=scenes)
        for i, sample in enumerate(test):
            gt = sample.future
            if oracle:
                candidates = [gt.copy()]
            else:
                ps = sets[i]
                candidates = [pad_to_horizon(p, sample.horizon, sample.current)
                              for p in ps.samples]
            candidates = [c / divisor for c in candidates]
            gt_scaled = gt / divisor
            fold.single.append(ade_fde(candidates[0], gt_scaled))
            fold.multi.append(best_of_k(candidates, gt_scaled))
            fold.per_step_err.append(np.linalg.norm(candidates[0] - gt_scaled, axis=1))
        folds.append(fold)

    if not folds:
        raise ConfigError("protocol produced no evaluable samples")

    use_multi = k > 1 and not oracle
    fold_ades, fold_fdes = [], []
    per_fold_detail = []
    horizon_steps = horizon_indices(cfg["dt"], cfg["pred_len"])
    horizon_acc = {sec: ([], []) for sec, _ in horizon_steps}
    total = 0
    for fold in folds:
        scored = fold.multi if use_multi else fold.single
        ades = [s[0] for s in scored]
        fdes = [s[1] for s in scored]
        fold_ades.append(float(np.mean(ades)))
        fold_fdes.append(float(np.mean(fdes)))
        total += len(scored)
        per_fold_detail.append({"fold": fold.name, "ade": fold_ades[-1],
                                "fde": fold_fdes[-1], "samples": len(scored)})
        errs = np.stack(fold.per_step_err)
        for sec, steps in horizon_steps:
            horizon_acc[sec][0].append(float(errs[:, :steps].mean()))
            horizon_acc[sec][1].append(float(errs[:, steps - 1].mean()))

    per_horizon = [(sec, float(np.mean(a)), float(np.mean(f)))
                   for sec, (a, f) in horizon_acc.items()]
    report = MetricReport(ade=float(np.mean(fold_ades)), fde=float(np.mean(fold_fdes)),
                          per_horizon=per_horizon, k_used=k if use_multi else 1,
                          sample_count=total)
    if details is not None:
        details.extend(per_fold_detail)
    return report


def report_text(report: MetricReport, detail_rows=None, header: str = "") -> str:
    """Aligned table plus machine-readable key=value lines."""
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append("# best-of-K FDE convention: FDE of the minimum-ADE sample")
    rows = [("fold", "ade", "fde", "samples")]
    for row in detail_rows or []:
        rows.append((row["fold"], f"{row['ade']:.4f}", f"{row['fde']:.4f}", str(row["samples"])))
    rows.append(("average", f"{report.ade:.4f}", f"{report.fde:.4f}", str(report.sample_count)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        lines.append("  ".join(val.ljust(widths[i]) for i, val in enumerate(r)).rstrip())
    lines.append("")
    lines.append(f"ade={report.ade!r}")
    lines.append(f"fde={report.fde!r}")
    lines.append(f"k={report.k_used}")
    lines.append(f"samples={report.sample_count}")
    for sec, a, f in report.per_horizon:
        lines.append(f"ade@{sec:g}s={a!r}")
        lines.append(f"fde@{sec:g}s={f!r}")
    return "\n".join(lines) + "\n"
