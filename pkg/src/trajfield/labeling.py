"""Inverse potential-value labeling and dense rasterization.

A trajectory is treated as motion toward lower potential. Potential values
are assigned to the points from inter-point distances alone: the potential
drop across a segment is proportional to the squared segment length, and
the endpoints are pinned to +1 / -1. Labels are then painted into a dense
grid as a band around the polyline, with a weight mask marking which pixels
were actually written.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrajectoryError, GridError
from .fields import OFF_BAND_WEIGHT, GridSpec, ScalarField


@dataclass(frozen=True)
class PotentialLabel:
    """Per-point potential values and the segment lengths they came from."""

    values: np.ndarray     # (T,), +1 at the first point, -1 at the last
    distances: np.ndarray  # (T-1,) segment lengths, meters

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=float))
        if len(self.values) != len(self.distances) + 1:
            raise ValueError("need one distance per segment")


def label_potentials(points) -> PotentialLabel:
    """Assign each point a potential value from the squared segment lengths.

    With prefix sums ``Pre_i = sum of d^2 over segments before point i`` and
    total ``Tot``, the value at point i is ``(Tot - 2*Pre_i) / Tot``. This
    makes the endpoints exactly +1 and -1 and the drop across any segment
    proportional to its squared length. A trajectory with zero total motion
    has no valid labels and raises :class:`DegenerateTrajectoryError`.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("need >= 2 points")
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    sq = d * d
    prefix = np.concatenate([[0.0], np.cumsum(sq)])
    total = prefix[-1]
    if total == 0.0:
        raise DegenerateTrajectoryError("trajectory is fully stationary; labels undefined")
    values = ((total - prefix) - prefix) / total
    return PotentialLabel(values=values, distances=d)


def verify_triplet_ratio(label: PotentialLabel, i: int, j: int, k: int) -> float:
    """Residual of the triplet consistency identity, 0 in exact arithmetic.

    For point indices i < j < k (0-based), the potential drops must satisfy
    ``(p_i - p_j) / (p_j - p_k) = E(i,j) / E(j,k)`` where E sums squared
    segment lengths between two points. Returned cross-multiplied to avoid
    division: ``|(p_i - p_j) * E(j,k) - (p_j - p_k) * E(i,j)|``.
    """
    T = len(label.values)
    if not (0 <= i < j < k <= T - 1):
        raise ValueError(f"need 0 <= i < j < k <= {T - 1}, got ({i}, {j}, {k})")
    sq = label.distances * label.distances
    prefix = np.concatenate([[0.0], np.cumsum(sq)])
    p = label.values
    e_ij = prefix[j] - prefix[i]
    e_jk = prefix[k] - prefix[j]
    return float(abs((p[i] - p[j]) * e_jk - (p[j] - p[k]) * e_ij))


def rasterize(points, label: PotentialLabel, grid: GridSpec, width: float, *,
              widths=None, off_weight: float = OFF_BAND_WEIGHT,
              clip: bool = False) -> ScalarField:
    """Paint sparse potential labels into a dense band around the polyline.

    Every pixel whose center lies within half the band width of the polyline
    receives the potential of its nearest polyline point, interpolated
    linearly along the owning segment (the potential gradient is constant
    within a segment). Off-band pixels get data 0 and the off-band mask
    weight.

    ``width`` is the total band width in world units. ``widths`` optionally
    gives a per-point width (same length as ``points``) which is
    interpolated along segments; used to widen the band over extrapolated
    futures. Points outside the grid hull raise :class:`GridError` listing
    the offenders unless ``clip`` is set, in which case the polyline may
    extend beyond the grid and only in-grid pixels are painted.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) != len(label.values):
        raise ValueError("points and label lengths differ")
    if not width > 0:
        raise ValueError("width must be positive")
    if not clip:
        inside = grid.contains(pts)
        if not np.all(inside):
            bad = [f"#{idx} ({pts[idx, 0]:.3f}, {pts[idx, 1]:.3f})"
                   for idx in np.nonzero(~inside)[0]]
            raise GridError(f"points outside grid: {', '.join(bad)}")

    if widths is None:
        w = np.full(len(pts), float(width))
    else:
        w = np.asarray(widths, dtype=float)
        if w.shape != (len(pts),):
            raise ValueError("widths must give one value per point")

    centers = grid.pixel_centers().reshape(-1, 2)            # (N, 2)
    a = pts[:-1]                                              # (M, 2)
    seg = pts[1:] - pts[:-1]                                  # (M, 2)
    seg_len_sq = np.einsum("md,md->m", seg, seg)              # (M,)
    rel = centers[None, :, :] - a[:, None, :]                 # (M, N, 2)
    denom = np.where(seg_len_sq > 0, seg_len_sq, 1.0)
    tpar = np.einsum("mnd,md->mn", rel, seg) / denom[:, None]
    tpar = np.clip(np.where(seg_len_sq[:, None] > 0, tpar, 0.0), 0.0, 1.0)
    proj = a[:, None, :] + tpar[..., None] * seg[:, None, :]
    dist = np.linalg.norm(centers[None, :, :] - proj, axis=-1)  # (M, N)

    p = label.values
    vals = p[:-1][:, None] + tpar * (p[1:] - p[:-1])[:, None]
    halfw = 0.5 * (w[:-1][:, None] + tpar * (w[1:] - w[:-1])[:, None])
    margin = dist - halfw

    best = np.argmin(margin, axis=0)
    cols = np.arange(margin.shape[1])
    on = margin[best, cols] <= 0.0
    data = np.where(on, vals[best, cols], 0.0).reshape(grid.shape)
    mask = np.where(on, 1.0, off_weight).reshape(grid.shape)
    return ScalarField(grid, data.astype(np.float32), mask.astype(np.float32))


def masked_field_loss(pred: ScalarField, truths, norm: str = "l1") -> float:
    """Mask-weighted residual between a predicted field and ground-truth fields.

    Each truth weights its residual by its own mask (1 on the band, the
    off-band weight elsewhere) and the per-pixel weighted residuals are
    reduced with ``norm``: ``"l1"`` sums absolute values, ``"l2"`` sums
    squares of the weighted residuals.
    """
    if isinstance(truths, ScalarField):
        truths = [truths]
    if norm not in ("l1", "l2"):
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    total = 0.0
    for truth in truths:
        if truth.grid != pred.grid:
            raise GridError(f"grid mismatch: {truth.grid} vs {pred.grid}")
        weighted = truth.mask.astype(np.float64) * (
            truth.data.astype(np.float64) - pred.data.astype(np.float64))
        total += float(np.abs(weighted).sum() if norm == "l1" else (weighted * weighted).sum())
    return total
