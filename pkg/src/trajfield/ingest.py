"""Trajectory dataset parsing, windowing into samples, and neighbor search.

Input text format: whitespace-separated rows of ``frame_id agent_id x y``,
the layout used by the common ETH/UCY preprocessed releases. Frame numbers
are normalized so consecutive observations of an agent are one time index
apart; datasets recorded in pixels are handled identically (units are a
config concern, not a parsing one).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, StrideError


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped positions of one agent at a constant sampling interval."""

    agent_id: int
    times: np.ndarray  # (T,) int, strictly increasing, constant stride
    xy: np.ndarray     # (T, 2) float64
    dt: float          # seconds per time index
    scene_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", np.asarray(self.times, dtype=int))
        object.__setattr__(self, "xy", np.asarray(self.xy, dtype=float))
        if len(self.times) != len(self.xy) or len(self.times) < 2:
            raise ValueError("trajectory needs >= 2 points with matching times")
        strides = np.diff(self.times)
        if strides.min() <= 0 or strides.min() != strides.max():
            raise ValueError(f"agent {self.agent_id}: time indices must increase with constant stride")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TrajectorySample:
    """One fixed-length window: t observed points followed by n-t future points."""

    past: np.ndarray    # (t, 2)
    future: np.ndarray  # (n - t, 2)
    agent_id: int
    scene_id: str
    start_time_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "past", np.asarray(self.past, dtype=float))
        object.__setattr__(self, "future", np.asarray(self.future, dtype=float))
        if len(self.past) < 2:
            raise ValueError("sample needs >= 2 observed points")
        if len(self.future) < 1:
            raise ValueError("sample needs >= 1 future point")

    @property
    def obs_len(self) -> int:
        return len(self.past)

    @property
    def horizon(self) -> int:
        return len(self.future)

    @property
    def current(self) -> np.ndarray:
        """Position at the end of the observation window."""
        return self.past[-1]

    @property
    def full(self) -> np.ndarray:
        return np.vstack([self.past, self.future])

    @property
    def sample_id(self) -> str:
        return f"{self.scene_id}:{self.agent_id}:{self.start_time_index}"


@dataclass(frozen=True)
class NeighborSet:
    """Co-temporal samples within ``radius`` of the target's current position."""

    target: TrajectorySample
    neighbors: list[TrajectorySample] = field(default_factory=list)
    radius: float = 0.0


def parse_trajectory_file(path, dt: float, scene_id: str | None = None) -> list[Trajectory]:
    """Parse a ``frame_id agent_id x y`` text file into per-agent trajectories.

    Rows are grouped by agent and sorted by frame. The (dataset-wide) frame
    stride is inferred and divided out, so returned time indices advance by
    one per ``dt``. Agents observed fewer than twice are dropped; a
    non-uniform or conflicting stride raises :class:`StrideError` naming the
    offending agent.
    """
    path = os.fspath(path)
    if scene_id is None:
        scene_id = os.path.splitext(os.path.basename(path))[0]
    rows: list[tuple[int, int, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: expected 'frame agent x y', got {text!r}")
            try:
                frame = int(float(parts[0]))
                agent = int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            rows.append((frame, agent, x, y))
    if not rows:
        return []

    by_agent: dict[int, list[tuple[int, float, float]]] = {}
    for frame, agent, x, y in rows:
        by_agent.setdefault(agent, []).append((frame, x, y))

    stride = 0
    stride_owner = None
    for agent, pts in by_agent.items():
        pts.sort(key=lambda p: p[0])
        if len(pts) < 2:
            continue
        frames = np.array([p[0] for p in pts])
        diffs = np.unique(np.diff(frames))
        if len(diffs) != 1 or diffs[0] <= 0:
            raise StrideError(f"{path}: agent {agent}: non-uniform frame stride {diffs.tolist()}")
        if stride == 0:
            stride, stride_owner = int(diffs[0]), agent
        elif int(diffs[0]) != stride:
            raise StrideError(
                f"{path}: agent {agent}: frame stride {int(diffs[0])} conflicts with "
                f"stride {stride} of agent {stride_owner}")
    if stride == 0:
        return []  # only single-observation agents

    base = min(frame for frame, _, _, _ in rows)
    trajectories = []
    for agent in sorted(by_agent):
        pts = by_agent[agent]
        if len(pts) < 2:
            continue
        frames = np.array([p[0] for p in pts])
        offsets = frames - base
        if np.any(offsets % stride != 0):
            raise StrideError(f"{path}: agent {agent}: frames not aligned to stride {stride}")
        trajectories.append(Trajectory(
            agent_id=agent,
            times=offsets // stride,
            xy=np.array([(x, y) for _, x, y in pts]),
            dt=dt,
            scene_id=scene_id,
        ))
    return trajectories


def write_trajectory_file(trajectories: list[Trajectory], path) -> None:
    """Serialize trajectories back to the 4-column text format.

    Time indices are written as frame numbers directly, so re-parsing the
    output of :func:`parse_trajectory_file` reproduces the same point lists.
    Coordinates use ``repr`` so floats round-trip exactly.
    """
    lines = []
    for traj in trajectories:
        for t, (x, y) in zip(traj.times, traj.xy):
            lines.append(f"{int(t)} {traj.agent_id} {float(x)!r} {float(y)!r}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def segment(traj: Trajectory, t: int, n: int, stride: int = 1) -> list[TrajectorySample]:
    """Cut every length-n window (advancing by ``stride``) into a sample.

    Windows split into t observed and n-t future points; trajectories
    shorter than n yield no samples.
    """
    if t < 2 or n <= t:
        raise ValueError(f"need n > t >= 2, got t={t}, n={n}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    samples = []
    for start in range(0, len(traj) - n + 1, stride):
        window = traj.xy[start:start + n]
        samples.append(TrajectorySample(
            past=window[:t].copy(),
            future=window[t:].copy(),
            agent_id=traj.agent_id,
            scene_id=traj.scene_id,
            start_time_index=int(traj.times[start]),
        ))
    return samples


def find_neighbors(sample: TrajectorySample, all_samples, radius: float) -> NeighborSet:
    """Collect co-temporal samples whose current position is within ``radius``.

    Co-temporal means same scene and same window start; the target itself
    (and any other window of the same agent at that start) is excluded.
    """
    target_pos = sample.current
    neighbors = []
    for cand in all_samples:
        if cand is sample or cand.agent_id == sample.agent_id:
            continue
        if cand.scene_id != sample.scene_id or cand.start_time_index != sample.start_time_index:
            continue
        if np.linalg.norm(cand.current - target_pos) <= radius:
            neighbors.append(cand)
    return NeighborSet(target=sample, neighbors=neighbors, radius=radius)
