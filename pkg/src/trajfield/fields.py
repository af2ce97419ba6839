"""Grid-referenced raster fields and their binary serialization.

Convention: a field lives on a uniform pixel grid. ``origin`` is the world
position of the *center* of pixel (0, 0), and pixel (u, v) sits at
``origin + resolution * (u, v)``. Arrays are indexed ``[v, u]`` (row-major),
with u along +x and v along +y.

The on-disk format (extension ``.pfld``) is little-endian binary:
magic ``PFLD``, u32 version, u32 width, u32 height, u32 channels,
f64 origin_x, f64 origin_y, f64 resolution, then row-major f32 data
(channel-interleaved), then row-major f32 mask. Data and mask are kept as
float32 in memory so save/load round-trips bit-exactly.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import GridError, SerializationError

PFLD_MAGIC = b"PFLD"
PFLD_VERSION = 1

# mask weight for pixels never written by rasterization (on-band pixels get 1)
OFF_BAND_WEIGHT = 0.01

_HEADER = struct.Struct("<4sIIIIddd")


@dataclass(frozen=True)
class GridSpec:
    """Uniform pixel grid with world georeferencing."""

    width: int
    height: int
    origin: tuple[float, float] = (0.0, 0.0)
    resolution: float = 1.0

    def __post_init__(self) -> None:
        if self.width < 2 or self.height < 2:
            raise GridError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if not self.resolution > 0:
            raise GridError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def center_pixel(self) -> np.ndarray:
        """Geometric center of the pixel-center lattice, in pixel coords."""
        return np.array([(self.width - 1) / 2.0, (self.height - 1) / 2.0])

    @property
    def center_world(self) -> np.ndarray:
        return self.grid_to_world(self.center_pixel)

    def world_to_grid(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - np.asarray(self.origin)) / self.resolution

    def grid_to_world(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.asarray(self.origin) + uv * self.resolution

    def contains(self, points) -> np.ndarray:
        """True where a world point lies inside the pixel-center hull.

        The hull is the rectangle spanned by the outermost pixel centers;
        the outer half-pixel ring of the physical grid does not count.
        """
        uv = self.world_to_grid(points)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)

    def pixel_centers(self) -> np.ndarray:
        """World coordinates of every pixel center, shape (H, W, 2)."""
        v, u = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        return self.grid_to_world(np.stack([u, v], axis=-1))


def bilinear(data: np.ndarray, u, v) -> np.ndarray:
    """Bilinear interpolation of ``data`` at fractional pixel coordinates.

    ``data`` is (H, W) or (H, W, C); u, v may be scalars or arrays. The
    caller guarantees 0 <= u <= W-1 and 0 <= v <= H-1 (values outside are
    clamped, which is only meaningful for callers that mask them off).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    h, w = data.shape[:2]
    u0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    v0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    fu = np.clip(u - u0, 0.0, 1.0)
    fv = np.clip(v - v0, 0.0, 1.0)
    if data.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    top = data[v0, u0] * (1.0 - fu) + data[v0, u0 + 1] * fu
    bottom = data[v0 + 1, u0] * (1.0 - fu) + data[v0 + 1, u0 + 1] * fu
    return top * (1.0 - fv) + bottom * fv


def _check_raster(grid: GridSpec, arr: np.ndarray, name: str, channels: int | None) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    expected = grid.shape if channels is None else grid.shape + (channels,)
    if arr.shape != expected:
        raise GridError(f"{name} shape {arr.shape} does not match grid {expected}")
    return arr


@dataclass
class ScalarField:
    """Single-channel field with a rasterization mask in {off-weight, 1}."""

    grid: GridSpec
    data: np.ndarray  # (H, W) float32
    mask: np.ndarray  # (H, W) float32

    def __post_init__(self) -> None:
        self.data = _check_raster(self.grid, self.data, "data", None)
        self.mask = _check_raster(self.grid, self.mask, "mask", None)

    @classmethod
    def zeros(cls, grid: GridSpec, off_weight: float = OFF_BAND_WEIGHT) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape, np.float32),
                   np.full(grid.shape, off_weight, np.float32))

    def on_band(self) -> np.ndarray:
        """Boolean mask of pixels actually written by rasterization."""
        return self.mask >= 1.0

    def save(self, path) -> None:
        write_field(path, self.grid, self.data[..., None], self.mask)

    @classmethod
    def load(cls, path) -> "ScalarField":
        grid, data, mask = read_field(path)
        if data.shape[2] != 1:
            raise SerializationError(f"{path}: expected 1 channel, got {data.shape[2]}")
        return cls(grid, data[..., 0], mask)


@dataclass
class VectorField:
    """Two-channel (x, y) field sharing the scalar-field georeferencing."""

    grid: GridSpec
    data: np.ndarray  # (H, W, 2) float32
    mask: np.ndarray  # (H, W) float32

    def __post_init__(self) -> None:
        self.data = _check_raster(self.grid, self.data, "data", 2)
        self.mask = _check_raster(self.grid, self.mask, "mask", None)

    @classmethod
    def zeros(cls, grid: GridSpec, off_weight: float = OFF_BAND_WEIGHT) -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (2,), np.float32),
                   np.full(grid.shape, off_weight, np.float32))

    def save(self, path) -> None:
        write_field(path, self.grid, self.data, self.mask)

    @classmethod
    def load(cls, path) -> "VectorField":
        grid, data, mask = read_field(path)
        if data.shape[2] != 2:
            raise SerializationError(f"{path}: expected 2 channels, got {data.shape[2]}")
        return cls(grid, data, mask)


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write a file atomically (temp file + rename) so readers never see partial output."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_to_bytes(grid: GridSpec, data: np.ndarray, mask: np.ndarray) -> bytes:
    """Encode a (H, W, C) float32 raster plus (H, W) mask into PFLD bytes."""
    data = np.ascontiguousarray(data, dtype="<f4")
    mask = np.ascontiguousarray(mask, dtype="<f4")
    if data.ndim != 3 or data.shape[:2] != grid.shape:
        raise GridError(f"data shape {data.shape} does not match grid {grid.shape}")
    if mask.shape != grid.shape:
        raise GridError(f"mask shape {mask.shape} does not match grid {grid.shape}")
    header = _HEADER.pack(PFLD_MAGIC, PFLD_VERSION, grid.width, grid.height,
                          data.shape[2], grid.origin[0], grid.origin[1], grid.resolution)
    return header + data.tobytes() + mask.tobytes()


def field_from_bytes(buf: bytes) -> tuple[GridSpec, np.ndarray, np.ndarray]:
    if len(buf) < _HEADER.size:
        raise SerializationError("field blob shorter than header")
    magic, version, width, height, channels, ox, oy, res = _HEADER.unpack_from(buf)
    if magic != PFLD_MAGIC:
        raise SerializationError(f"bad magic {magic!r}, expected {PFLD_MAGIC!r}")
    if version != PFLD_VERSION:
        raise SerializationError(f"unsupported field version {version}")
    grid = GridSpec(width, height, (ox, oy), res)
    n_data = width * height * channels
    n_mask = width * height
    expected = _HEADER.size + 4 * (n_data + n_mask)
    if len(buf) != expected:
        raise SerializationError(f"field blob size {len(buf)} != expected {expected}")
    body = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size)
    data = body[:n_data].reshape(height, width, channels).copy()
    mask = body[n_data:].reshape(height, width).copy()
    return grid, data, mask


def write_field(path, grid: GridSpec, data: np.ndarray, mask: np.ndarray) -> None:
    atomic_write_bytes(path, field_to_bytes(grid, data, mask))


def read_field(path) -> tuple[GridSpec, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())
