"""Shared synthetic-data helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from trajfield.fields import GridSpec
from trajfield.ingest import TrajectorySample


def random_trajectory(rng, length: int, step_low: float = 0.1, step_high: float = 1.5,
                      max_turn: float = 0.6, origin_scale: float = 5.0) -> np.ndarray:
    """Random smooth-ish 2-D walk: bounded turn rate, mixed speeds."""
    heading = rng.uniform(0.0, 2.0 * np.pi)
    pos = rng.uniform(-origin_scale, origin_scale, size=2)
    points = [pos.copy()]
    for _ in range(length - 1):
        heading += rng.uniform(-max_turn, max_turn)
        step = rng.uniform(step_low, step_high)
        pos = pos + step * np.array([np.cos(heading), np.sin(heading)])
        points.append(pos.copy())
    return np.array(points)


def gentle_sample(rng, obs_len: int = 8, pred_len: int = 12, grid: GridSpec | None = None,
                  step_low: float = 0.3, step_high: float = 0.55,
                  max_turn: float = 0.15) -> TrajectorySample:
    """A sample whose canonical frame keeps the whole future inside the grid."""
    pts = random_trajectory(rng, obs_len + pred_len, step_low=step_low,
                            step_high=step_high, max_turn=max_turn, origin_scale=3.0)
    return TrajectorySample(past=pts[:obs_len], future=pts[obs_len:],
                            agent_id=int(rng.integers(1, 1000)), scene_id="synthetic",
                            start_time_index=0)


def constant_velocity_scene_text(rng, n_agents: int = 6, length: int = 24,
                                 frame_stride: int = 10, vel_range: float = 0.6) -> str:
    """Scene file where every agent moves with an exact constant velocity."""
    lines = []
    for agent in range(1, n_agents + 1):
        start = rng.uniform(-8.0, 8.0, size=2)
        vel = rng.uniform(-vel_range, vel_range, size=2)
        while np.linalg.norm(vel) < 0.15:
            vel = rng.uniform(-vel_range, vel_range, size=2)
        for i in range(length):
            p = start + vel * i
            lines.append(f"{i * frame_stride} {agent} {float(p[0])!r} {float(p[1])!r}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def grid():
    return GridSpec(64, 64, resolution=0.25)
