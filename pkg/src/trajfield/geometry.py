"""Canonical left-to-right frames, scene patches, and grid sampling.

Samples are predicted in a canonical frame: the grid is centered on the
agent's current position and rotated so the observed motion points along
+u. Scene rasters are cropped/rotated into the same frame so fields from
different stages align pixel-for-pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError, OutOfGridError
from .fields import GridSpec, bilinear
from .ingest import TrajectorySample

# below this net past displacement the heading is unreliable
MIN_HEADING_NORM = 0.05


def _rotation_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class CanonicalTransform:
    """Rigid world -> canonical-frame map: p' = R(rotation) @ p + translation."""

    rotation: float          # radians
    translation: np.ndarray  # (2,)
    crop_center: np.ndarray  # world position mapped to the grid center
    is_degenerate: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "crop_center", np.asarray(self.crop_center, dtype=float))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ _rotation_matrix(self.rotation).T + self.translation

    def invert(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation) @ _rotation_matrix(-self.rotation).T

    def rotate_vectors(self, vectors) -> np.ndarray:
        """Rotate direction/velocity vectors into the canonical frame."""
        return np.asarray(vectors, dtype=float) @ _rotation_matrix(self.rotation).T


@dataclass
class ScenePatch:
    """Bird's-eye raster aligned with the working grid."""

    grid: GridSpec
    image: np.ndarray  # (H, W) or (H, W, C) float32, values in [0, 1]

    def __post_init__(self) -> None:
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        if self.image.shape[:2] != self.grid.shape:
            raise GridError(f"image shape {self.image.shape} does not match grid {self.grid.shape}")

    @property
    def channels(self) -> int:
        return 1 if self.image.ndim == 2 else self.image.shape[2]

    def gray(self) -> np.ndarray:
        if self.image.ndim == 2:
            return self.image
        return self.image.mean(axis=2).astype(np.float32)

    @classmethod
    def from_png(cls, path, grid: GridSpec) -> "ScenePatch":
        from PIL import Image

        img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
        if img.shape[:2] != grid.shape:
            raise GridError(f"{path}: image is {img.shape[:2]}, grid wants {grid.shape}")
        return cls(grid, img)

    @classmethod
    def from_pfld(cls, path) -> "ScenePatch":
        """Load a georeferenced raster (any channel count) as a scene."""
        from .fields import read_field

        grid, data, _ = read_field(path)
        image = data[..., 0] if data.shape[2] == 1 else data
        return cls(grid, image)


def canonicalize(sample: TrajectorySample, grid: GridSpec) -> tuple[TrajectorySample, CanonicalTransform]:
    """Rotate/translate a sample so its past heads along +u from the grid center.

    The heading is the net observed displacement; when that is exactly zero
    but intermediate motion exists, the last nonzero step is used instead.
    A past with net displacement under ``MIN_HEADING_NORM`` (and no such
    fallback) is flagged degenerate and only translated.
    """
    past = sample.past
    net = past[-1] - past[0]
    net_norm = float(np.linalg.norm(net))
    heading = None
    if net_norm >= MIN_HEADING_NORM:
        heading = net
    elif net_norm == 0.0:
        steps = np.diff(past, axis=0)
        nonzero = np.nonzero(np.linalg.norm(steps, axis=1) > 0)[0]
        if nonzero.size:
            heading = steps[nonzero[-1]]
    degenerate = heading is None
    rotation = 0.0 if degenerate else float(-np.arctan2(heading[1], heading[0]))
    translation = grid.center_world - _rotation_matrix(rotation) @ past[-1]
    transform = CanonicalTransform(rotation=rotation, translation=translation,
                                   crop_center=past[-1].copy(), is_degenerate=degenerate)
    canonical = TrajectorySample(
        past=transform.apply(sample.past),
        future=transform.apply(sample.future),
        agent_id=sample.agent_id,
        scene_id=sample.scene_id,
        start_time_index=sample.start_time_index,
    )
    return canonical, transform


def _resample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear resample with zero fill outside the pixel-center hull."""
    h, w = image.shape[:2]
    valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    out = bilinear(image, u, v)
    if image.ndim == 3:
        valid = valid[..., None]
    return np.where(valid, out, 0.0).astype(np.float32)


def augment_rotations(scene: ScenePatch, trajectories) -> list[tuple[ScenePatch, list[np.ndarray]]]:
    """Produce the 8 x 45-degree rotations of a square patch and its trajectories.

    Rotation k maps a point p to ``c + R(k*45deg) @ (p - c)`` about the patch
    center c; the raster is resampled bilinearly with zero padding. k=0 is a
    plain copy.
    """
    if scene.grid.width != scene.grid.height:
        raise GridError("rotation augmentation needs a square patch")
    trajectories = [np.asarray(t, dtype=float) for t in trajectories]
    center_world = scene.grid.center_world
    cu, cv = scene.grid.center_pixel
    h, w = scene.grid.shape
    vv, uu = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")

    out = []
    for k in range(8):
        angle = k * (np.pi / 4.0)
        rot = _rotation_matrix(angle)
        pts_k = [(t - center_world) @ rot.T + center_world for t in trajectories]
        if k == 0:
            image = scene.image.copy()
        else:
            # inverse-map output pixel centers into the source raster
            inv = _rotation_matrix(-angle)
            du, dv = uu - cu, vv - cv
            su = inv[0, 0] * du + inv[0, 1] * dv + cu
            sv = inv[1, 0] * du + inv[1, 1] * dv + cv
            image = _resample(scene.image, su, sv)
        out.append((ScenePatch(scene.grid, image), pts_k))
    return out


def sample_bilinear(field, pos):
    """Bilinearly interpolate a field at a world position.

    ``field`` is anything with ``grid`` and ``data``. Positions outside the
    pixel-center hull raise :class:`OutOfGridError`; rollout treats that as
    trajectory termination.
    """
    grid = field.grid
    uv = grid.world_to_grid(pos)
    u, v = float(uv[0]), float(uv[1])
    if not (0 <= u <= grid.width - 1 and 0 <= v <= grid.height - 1):
        raise OutOfGridError(f"position {np.asarray(pos)} outside grid hull")
    value = bilinear(field.data, u, v)
    return float(value) if np.ndim(value) == 0 else np.asarray(value, dtype=float)


def extract_patch(scene: ScenePatch, transform: CanonicalTransform, grid: GridSpec) -> ScenePatch:
    """Crop/rotate a world-aligned scene raster into the canonical frame.

    Each canonical pixel center is mapped back to world coordinates and
    bilinearly sampled from the source; regions outside the source are zero.
    """
    canon_centers = grid.pixel_centers().reshape(-1, 2)
    world = transform.invert(canon_centers)
    uv = scene.grid.world_to_grid(world)
    image = _resample(scene.image, uv[:, 0], uv[:, 1])
    shape = grid.shape if scene.image.ndim == 2 else grid.shape + (scene.image.shape[2],)
    return ScenePatch(grid, image.reshape(shape))
