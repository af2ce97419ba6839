"""Displacement-field construction and recurrent trajectory rollout.

The per-step displacement field is the fused unit direction field scaled by
the predicted speed for that step, plus the social force field. Futures are
produced by repeatedly reading the displacement at the current position and
stepping; the multi-modal variant perturbs directions and speeds with
seeded Gaussian noise (one field realization per prediction, the mean
rollout always included as the first sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimatorError, GridError, OutOfGridError
from .fields import GridSpec, ScalarField, bilinear
from .geometry import ScenePatch, canonicalize, extract_patch
from .ingest import NeighborSet, TrajectorySample
from .labeling import label_potentials, rasterize
from .estimators import DirectionField, EstimatorBundle, SpeedProfile


@dataclass
class ForceField:
    """Displacement-valued vector field of social pressure."""

    grid: GridSpec
    data: np.ndarray  # (H, W, 2) float32, world units per time step

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape != self.grid.shape + (2,):
            raise GridError("force field array does not match grid")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ForceField":
        return cls(grid, np.zeros(grid.shape + (2,), np.float32))


@dataclass
class DisplacementField:
    """One-step motion of every pixel at a given future time index."""

    grid: GridSpec
    data: np.ndarray  # (H, W, 2) float32
    time_index: int

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape != self.grid.shape + (2,):
            raise GridError("displacement field array does not match grid")


@dataclass
class PredictionSet:
    """Mean-rollout future plus K sampled futures, in world coordinates."""

    single: np.ndarray          # (horizon, 2) or shorter when truncated
    single_truncated: bool
    samples: list[np.ndarray]   # K rollouts; samples[0] is the mean rollout
    truncated: list[bool]
    k: int


def neighbor_field(neighbor_pasts, grid: GridSpec, width: float,
                   off_weight: float = 0.01) -> ScalarField:
    """Sum of the rasterized past-trajectory fields of all neighbors.

    Each past is labeled and rasterized independently; data adds pixel-wise
    and the mask is the union of the individual bands. Stationary pasts
    (which have no labels) are skipped; pasts may extend beyond the grid.
    """
    data = np.zeros(grid.shape, dtype=np.float64)
    union = np.zeros(grid.shape, dtype=bool)
    for past in neighbor_pasts:
        pts = np.asarray(past, dtype=float)
        try:
            label = label_potentials(pts)
        except Exception:
            continue
        fld = rasterize(pts, label, grid, width, off_weight=off_weight, clip=True)
        on = fld.on_band()
        data += np.where(on, fld.data.astype(np.float64), 0.0)
        union |= on
    mask = np.where(union, 1.0, off_weight)
    return ScalarField(grid, data.astype(np.float32), mask.astype(np.float32))


def social_force(positions, velocities, grid: GridSpec, ell: float = 1.0,
                 beta: float = 0.3, target=None) -> ForceField:
    """Exponential repulsion force field away from each neighbor position.

    The magnitude at distance d from a neighbor is ``beta * exp(-d / ell)``;
    directions point from the neighbor toward the pixel. See
    :class:`~trajfield.estimators.ExpRepulsion` for the coincident-pixel
    tie-break.
    """
    from .estimators import ExpRepulsion

    positions = np.asarray(positions, dtype=float)
    if positions.size == 0:
        return ForceField.zeros(grid)
    data = ExpRepulsion(ell=ell, beta=beta)(positions, velocities, grid, target=target)
    return ForceField(grid, data.astype(np.float32))


def fuse_directions(primary: DirectionField, secondary: DirectionField,
                    weights: np.ndarray) -> DirectionField:
    """Blend two direction fields with per-pixel weights on the primary.

    The blended mean is renormalized to unit length (zero where the blend
    cancels); deviations blend linearly with the same weights.
    """
    if primary.grid != secondary.grid:
        raise GridError("direction fields live on different grids")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != primary.grid.shape:
        raise GridError("weight mask does not match grid")
    blend = w[..., None] * primary.mean.astype(np.float64) \
        + (1.0 - w)[..., None] * secondary.mean.astype(np.float64)
    norm = np.linalg.norm(blend, axis=-1)
    mean = np.zeros_like(blend)
    nz = norm > 0
    mean[nz] = blend[nz] / norm[nz][:, None]
    sigma = w * primary.sigma.astype(np.float64) + (1.0 - w) * secondary.sigma.astype(np.float64)
    return DirectionField(primary.grid, mean.astype(np.float32), sigma.astype(np.float32))


def displacement_field(direction: DirectionField, speeds: SpeedProfile,
                       force: ForceField | None, tau: int, t_obs: int) -> DisplacementField:
    """Per-pixel one-step displacement at future time index tau.

    ``tau`` counts absolute sample time, so the speed used is step
    ``tau - t_obs`` of the profile; the force field, when present, adds on
    unconditionally (pixels without a defined direction move by force
    alone).
    """
    step = tau - t_obs
    if not 0 <= step < len(speeds):
        raise ValueError(f"tau={tau} outside [t, t+steps) for t={t_obs}, steps={len(speeds)}")
    data = direction.mean.astype(np.float64) * float(speeds.mean[step])
    if force is not None:
        if force.grid != direction.grid:
            raise GridError("force field grid mismatch")
        data = data + force.data.astype(np.float64)
    return DisplacementField(direction.grid, data.astype(np.float32), time_index=tau)


def rollout(start, fields: list[DisplacementField]) -> tuple[np.ndarray, bool]:
    """Recurrently step a position through one displacement field per step.

    Returns the visited positions (one per field) and a truncation flag set
    when the position left the grid hull before all steps were taken; the
    exiting position is kept as the final entry.
    """
    if not fields:
        raise ValueError("need at least one displacement field")
    grid = fields[0].grid
    pos = np.asarray(start, dtype=float)
    if not bool(grid.contains(pos)):
        raise OutOfGridError(f"rollout start {pos} outside grid hull")
    positions = []
    truncated = False
    for fld in fields:
        if not bool(fld.grid.contains(pos)):
            truncated = True
            break
        uv = fld.grid.world_to_grid(pos)
        step = np.asarray(bilinear(fld.data, uv[0], uv[1]), dtype=float)
        pos = pos + step
        positions.append(pos)
    return np.array(positions).reshape(-1, 2), truncated


def predict(sample: TrajectorySample, scene: ScenePatch | None, bundle: EstimatorBundle,
            k: int = 20, seed=0, *, grid: GridSpec | None = None,
            neighbors: NeighborSet | None = None, use_social: bool = True,
            return_fields: bool = False):
    """Predict single- and multi-modal futures for one sample.

    The sample is canonicalized, the estimator stages produce the fused
    direction field, speed profile, and social force, and futures are rolled
    out from the grid center. Sample 1 of the K rollouts is always the mean
    rollout; samples 2..K perturb the direction field (one Gaussian
    realization per prediction, renormalized) and the speed profile (clamped
    at zero). All outputs are mapped back to world coordinates.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``; identical
    seeds give bit-identical outputs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if grid is None:
        grid = GridSpec(64, 64, resolution=0.25)
    canon, transform = canonicalize(sample, grid)
    horizon = sample.horizon

    try:
        inertial = bundle.inertial_field(canon.past, grid, horizon)
        dir_inertial = bundle.inertial_direction(inertial)
    except Exception as exc:
        raise EstimatorError(f"inertial stage failed: {exc}") from exc

    dir_env = None
    env_field = None
    if scene is not None and bundle.env_field.fitted:
        try:
            patch = extract_patch(scene, transform, grid)
            env_field = bundle.env_field(patch)
            dir_env = bundle.env_direction(env_field)
        except Exception as exc:
            raise EstimatorError(f"environmental stage failed: {exc}") from exc

    if dir_env is None:
        fused = dir_inertial
        weights = np.ones(grid.shape)
    else:
        weights = bundle.fuse_weight(dir_inertial, dir_env)
        fused = fuse_directions(dir_inertial, dir_env, weights)

    try:
        speeds = bundle.speed(inertial, canon.past, horizon)
    except Exception as exc:
        raise EstimatorError(f"speed stage failed: {exc}") from exc

    force = None
    if use_social and neighbors is not None and neighbors.neighbors:
        positions = transform.apply([nb.current for nb in neighbors.neighbors])
        velocities = transform.rotate_vectors(
            [nb.past[-1] - nb.past[-2] for nb in neighbors.neighbors])
        try:
            data = bundle.social(positions, velocities, grid)
        except Exception as exc:
            raise EstimatorError(f"social stage failed: {exc}") from exc
        force = ForceField(grid, np.asarray(data, dtype=np.float32))

    start = grid.center_world
    t_obs = canon.obs_len

    def run(direction: DirectionField, speed_means: np.ndarray) -> tuple[np.ndarray, bool]:
        profile = SpeedProfile(speed_means, np.zeros_like(speed_means))
        flds = [displacement_field(direction, profile, force, t_obs + j, t_obs)
                for j in range(horizon)]
        return rollout(start, flds)

    mean_canon, mean_trunc = run(fused, speeds.mean)
    rng = np.random.default_rng(seed)

    samples = [transform.invert(mean_canon)]
    truncated = [mean_trunc]
    sigma3 = fused.sigma.astype(np.float64)[..., None]
    for _ in range(1, k):
        noise = rng.standard_normal(grid.shape + (2,)) * sigma3
        perturbed = fused.mean.astype(np.float64) + noise
        norm = np.linalg.norm(perturbed, axis=-1)
        mean_j = np.zeros_like(perturbed)
        nz = norm > 0
        mean_j[nz] = perturbed[nz] / norm[nz][:, None]
        dir_j = DirectionField(grid, mean_j.astype(np.float32), fused.sigma)
        speed_j = np.clip(speeds.mean + rng.standard_normal(horizon) * speeds.sigma, 0.0, None)
        canon_j, trunc_j = run(dir_j, speed_j)
        samples.append(transform.invert(canon_j))
        truncated.append(trunc_j)

    result = PredictionSet(single=samples[0], single_truncated=mean_trunc,
                           samples=samples, truncated=truncated, k=k)
    if not return_fields:
        return result
    intermediates = {
        "inertial_potential": inertial,
        "env_potential": env_field,
        "direction_mean": fused,
        "fuse_weights": weights,
        "social_force": force,
        "transform": transform,
    }
    return result, intermediates
