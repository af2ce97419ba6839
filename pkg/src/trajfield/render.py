"""Deterministic PNG rendering of field files.

Scalar fields map through a fixed 5-stop blue-to-yellow ramp (yellow =
high, blue = low). Two-channel fields render as black arrow glyphs on a
light background, one glyph every few field pixels. Output bytes are stable
across runs so rendered fixtures can be compared byte-wise.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .errors import SerializationError
from .fields import read_field, atomic_write_bytes
import io

# 5-stop ramp, low (deep blue) to high (yellow)
RAMP = np.array([
    (13, 8, 135),
    (0, 112, 221),
    (32, 196, 160),
    (170, 220, 50),
    (250, 240, 33),
], dtype=float)

BACKGROUND = (235, 235, 235)
ARROW_COLOR = (20, 20, 20)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the ramp; returns uint8 RGB."""
    t = np.clip(np.asarray(values, dtype=float), 0.0, 1.0) * (len(RAMP) - 1)
    low = np.floor(t).astype(int)
    high = np.minimum(low + 1, len(RAMP) - 1)
    frac = (t - low)[..., None]
    rgb = RAMP[low] * (1.0 - frac) + RAMP[high] * frac
    return np.round(rgb).astype(np.uint8)


def _normalize(data: np.ndarray) -> np.ndarray:
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return np.full(data.shape, 0.5)
    return (data - lo) / (hi - lo)


def render_scalar(data: np.ndarray, scale: int = 8) -> Image.Image:
    rgb = colormap(_normalize(data))
    img = Image.fromarray(rgb, mode="RGB")
    return img.resize((img.width * scale, img.height * scale), Image.NEAREST)


def render_vector(data: np.ndarray, scale: int = 8, step: int = 4) -> Image.Image:
    h, w = data.shape[:2]
    img = Image.new("RGB", (w * scale, h * scale), BACKGROUND)
    draw = ImageDraw.Draw(img)
    mags = np.linalg.norm(data, axis=-1)
    peak = float(mags.max())
    if peak == 0:
        return img
    length = 0.45 * step * scale
    for v in range(0, h, step):
        for u in range(0, w, step):
            mag = mags[v, u]
            if mag <= 1e-9:
                continue
            dx, dy = data[v, u] / mag
            cx, cy = (u + 0.5) * scale, (v + 0.5) * scale
            ex = cx + dx * length * (mag / peak)
            ey = cy + dy * length * (mag / peak)
            draw.line([(cx, cy), (ex, ey)], fill=ARROW_COLOR, width=1)
            draw.ellipse([ex - 1, ey - 1, ex + 1, ey + 1], fill=ARROW_COLOR)
    return img


def render_field_file(field_path, out_path, scale: int = 8, step: int = 4) -> None:
    """Render a .pfld file to PNG; one scalar channel or two vector channels."""
    _, data, _ = read_field(field_path)
    channels = data.shape[2]
    if channels == 1:
        img = render_scalar(data[..., 0], scale=scale)
    elif channels == 2:
        img = render_vector(data, scale=scale, step=step)
    else:
        raise SerializationError(f"{field_path}: cannot render {channels} channels (max 2)")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(out_path, buf.getvalue())
