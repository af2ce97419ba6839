"""Field-to-field estimator stages and their training losses.

Each stage of the pipeline (scene -> environmental field, past -> inertial
field, field -> directions, field -> speeds, neighbors -> social force,
direction fusion weights) sits behind a small callable object so that
learned models can replace the analytic baselines without touching the
predictor. The analytic baselines shipped here are deterministic and
physics-consistent: nearest-neighbor field blending, constant-velocity
extrapolation, masked gradients, and exponential repulsion.

Bundle files (extension ``.pfeb``) serialize all six stages: little-endian,
magic ``PFEB``, u32 version, u32 section count, then per section a name,
an ``analytic:<estimator>`` tag, float parameters, and an optional bank of
embedded PFLD rasters.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import DegenerateTrajectoryError, EstimatorError, GridError, SerializationError
from .fields import (OFF_BAND_WEIGHT, GridSpec, ScalarField, atomic_write_bytes, bilinear,
                     field_from_bytes, field_to_bytes)
from .geometry import ScenePatch
from .labeling import label_potentials, rasterize

logger = logging.getLogger(__name__)

PFEB_MAGIC = b"PFEB"
PFEB_VERSION = 1

SIGMA_CLAMP = 1e-3  # floor applied to queried deviations inside the NLL losses


@dataclass
class DirectionField:
    """Per-pixel unit motion direction with isotropic Gaussian uncertainty.

    ``mean`` vectors are unit length where a direction is defined and zero
    where it is not; ``sigma`` is zero exactly on the undefined pixels.
    """

    grid: GridSpec
    mean: np.ndarray   # (H, W, 2) float32
    sigma: np.ndarray  # (H, W) float32, >= 0

    def __post_init__(self) -> None:
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float32)
        self.sigma = np.ascontiguousarray(self.sigma, dtype=np.float32)
        if self.mean.shape != self.grid.shape + (2,) or self.sigma.shape != self.grid.shape:
            raise GridError("direction field arrays do not match grid")

    def defined(self) -> np.ndarray:
        """Pixels carrying a direction (unit mean vector)."""
        return np.einsum("hwc,hwc->hw", self.mean, self.mean) > 0


@dataclass
class SpeedProfile:
    """Per-future-step speed distribution (mean and deviation per step)."""

    mean: np.ndarray   # (steps,) >= 0, world units per time step
    sigma: np.ndarray  # (steps,) >= 0

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mean.shape != self.sigma.shape or self.mean.ndim != 1:
            raise ValueError("mean and sigma must be 1-D and equal length")
        if np.any(self.mean < 0) or np.any(self.sigma < 0):
            raise ValueError("speeds and deviations must be non-negative")

    def __len__(self) -> int:
        return len(self.mean)


def gradient_direction(field: ScalarField, sigma0: float = 0.3,
                       eps: float = 1e-6) -> DirectionField:
    """Derive motion directions as the normalized downhill gradient of a field.

    Central differences are used on the band interior and one-sided
    differences at band edges; off-band pixels never contribute values.
    Pixels that are off-band or whose gradient norm is below ``eps`` get a
    zero direction and zero sigma; defined pixels get deviation ``sigma0``.
    """
    on = field.on_band()
    data = field.data.astype(np.float64)
    grad_u = _masked_difference(data, on, axis=1)
    grad_v = _masked_difference(data, on, axis=0)
    grad = np.stack([grad_u, grad_v], axis=-1)
    norm = np.linalg.norm(grad, axis=-1)
    defined = on & (norm > eps)
    mean = np.zeros(field.grid.shape + (2,), dtype=np.float64)
    mean[defined] = -grad[defined] / norm[defined][:, None]
    sigma = np.where(defined, float(sigma0), 0.0)
    return DirectionField(field.grid, mean.astype(np.float32), sigma.astype(np.float32))


def _masked_difference(data: np.ndarray, on: np.ndarray, axis: int) -> np.ndarray:
    """Central difference where both neighbors are on-band, one-sided otherwise."""
    fwd_val = np.zeros_like(data)
    fwd_ok = np.zeros_like(on)
    bwd_val = np.zeros_like(data)
    bwd_ok = np.zeros_like(on)
    take = [slice(None)] * data.ndim
    put = [slice(None)] * data.ndim
    take[axis], put[axis] = slice(1, None), slice(None, -1)
    fwd_val[tuple(put)] = data[tuple(take)]
    fwd_ok[tuple(put)] = on[tuple(take)]
    take[axis], put[axis] = slice(None, -1), slice(1, None)
    bwd_val[tuple(put)] = data[tuple(take)]
    bwd_ok[tuple(put)] = on[tuple(take)]

    both = fwd_ok & bwd_ok
    out = np.zeros_like(data)
    out[both] = 0.5 * (fwd_val[both] - bwd_val[both])
    fwd_only = fwd_ok & ~bwd_ok
    out[fwd_only] = fwd_val[fwd_only] - data[fwd_only]
    bwd_only = bwd_ok & ~fwd_ok
    out[bwd_only] = data[bwd_only] - bwd_val[bwd_only]
    return out


# ---------------------------------------------------------------------------
# analytic estimator stages


@dataclass
class EnvFieldKNN:
    """Environmental field by blending the most raster-similar training fields.

    Similarity between gray scene images is the negative mean absolute pixel
    difference. The ``k`` closest bank entries contribute wherever their own
    band mask is set, weighted by inverse image distance, so an exact scene
    match dominates the blend.
    """

    bank: list = dataclass_field(default_factory=list)  # (gray (H,W) float32, ScalarField) pairs
    k: int = 8
    off_weight: float = OFF_BAND_WEIGHT

    name = "env_knn"

    @property
    def params(self) -> dict[str, float]:
        return {"k": float(self.k), "off_weight": self.off_weight}

    @property
    def fitted(self) -> bool:
        return len(self.bank) > 0

    def add(self, scene, field: ScalarField) -> None:
        gray = scene.gray() if isinstance(scene, ScenePatch) else np.asarray(scene, np.float32)
        if gray.shape != field.grid.shape:
            raise GridError("scene raster does not match its field grid")
        self.bank.append((np.ascontiguousarray(gray, np.float32), field))

    def __call__(self, scene: ScenePatch) -> ScalarField:
        if not self.bank:
            raise EstimatorError("environmental estimator is unfit: empty bank")
        query = scene.gray().astype(np.float64)
        if query.shape != self.bank[0][0].shape:
            raise GridError("query scene raster does not match the bank grid")
        dists = np.array([np.abs(query - g).mean() for g, _ in self.bank])
        order = np.argsort(dists, kind="stable")[: self.k]
        weights = 1.0 / (dists[order] + 1e-6)

        grid = self.bank[0][1].grid
        num = np.zeros(grid.shape)
        den = np.zeros(grid.shape)
        union = np.zeros(grid.shape, dtype=bool)
        for w, idx in zip(weights, order):
            fld = self.bank[idx][1]
            on = fld.on_band()
            num += np.where(on, w * fld.data.astype(np.float64), 0.0)
            den += np.where(on, w, 0.0)
            union |= on
        data = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        mask = np.where(union, 1.0, self.off_weight)
        return ScalarField(grid, data.astype(np.float32), mask.astype(np.float32))


@dataclass
class InertialFieldCV:
    """Inertial field from constant-velocity extrapolation of the past.

    The past is extended by its mean step vector, the synthetic full
    trajectory is labeled, and the band is rasterized with a width that
    grows linearly to ``widen`` times the base width at the horizon to
    express growing uncertainty. A stationary past yields a zero field with
    an empty mask.
    """

    width: float = 0.75  # base band width, world units
    widen: float = 3.0
    off_weight: float = OFF_BAND_WEIGHT

    name = "inertial_cv"

    @property
    def params(self) -> dict[str, float]:
        return {"width": self.width, "widen": self.widen, "off_weight": self.off_weight}

    def __call__(self, past, grid: GridSpec, pred_len: int) -> ScalarField:
        past = np.asarray(past, dtype=float)
        if len(past) < 2:
            raise ValueError("need >= 2 observed points")
        if pred_len < 1:
            raise ValueError("pred_len must be >= 1")
        steps = np.diff(past, axis=0)
        mean_step = steps.mean(axis=0)
        future = past[-1] + mean_step * np.arange(1, pred_len + 1)[:, None]
        pts = np.vstack([past, future])
        try:
            label = label_potentials(pts)
        except DegenerateTrajectoryError:
            return ScalarField.zeros(grid, self.off_weight)
        t = len(past)
        widths = np.full(len(pts), self.width)
        widths[t:] = self.width * (1.0 + (self.widen - 1.0) * np.arange(1, pred_len + 1) / pred_len)
        return rasterize(pts, label, grid, self.width, widths=widths,
                         off_weight=self.off_weight, clip=True)


@dataclass
class GradientDirectionEstimator:
    """Direction stage: normalized downhill gradient with fixed uncertainty."""

    sigma0: float = 0.3
    eps: float = 1e-6

    name = "grad_direction"

    @property
    def params(self) -> dict[str, float]:
        return {"sigma0": self.sigma0, "eps": self.eps}

    def __call__(self, field: ScalarField) -> DirectionField:
        return gradient_direction(field, sigma0=self.sigma0, eps=self.eps)


@dataclass
class ConstantSpeed:
    """Speed stage: mean past step length repeated over the horizon.

    The deviation is the (population) standard deviation of past step
    lengths with a floor, so sampling always has spread. The inertial field
    argument is accepted for interface parity with learned speed stages but
    unused by this analytic rule.
    """

    sigma_floor: float = 0.05

    name = "const_speed"

    @property
    def params(self) -> dict[str, float]:
        return {"sigma_floor": self.sigma_floor}

    def __call__(self, inertial_field, past, pred_len: int) -> SpeedProfile:
        past = np.asarray(past, dtype=float)
        if len(past) < 2:
            raise ValueError("need >= 2 observed points")
        speeds = np.linalg.norm(np.diff(past, axis=0), axis=1)
        mean = float(speeds.mean())
        sigma = max(float(speeds.std()), self.sigma_floor)
        return SpeedProfile(np.full(pred_len, mean), np.full(pred_len, sigma))


@dataclass
class ExpRepulsion:
    """Social stage: exponential repulsion away from each neighbor.

    Every pixel receives ``beta * exp(-dist / ell)`` pointing away from each
    neighbor position, summed over neighbors. When a pixel coincides with a
    neighbor (distance below 1e-3) the push direction falls back to the
    neighbor-velocity normal that points away from the target, a
    deterministic tie-break.
    """

    ell: float = 1.0
    beta: float = 0.3

    name = "social_exp"

    @property
    def params(self) -> dict[str, float]:
        return {"ell": self.ell, "beta": self.beta}

    def __call__(self, positions, velocities, grid: GridSpec, target=None) -> np.ndarray:
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        velocities = np.atleast_2d(np.asarray(velocities, dtype=float))
        if positions.shape != velocities.shape:
            raise ValueError("positions and velocities must pair up")
        target = grid.center_world if target is None else np.asarray(target, dtype=float)
        centers = grid.pixel_centers()
        force = np.zeros(grid.shape + (2,), dtype=np.float64)
        for pos, vel in zip(positions, velocities):
            rel = centers - pos
            dist = np.linalg.norm(rel, axis=-1)
            away = np.zeros_like(rel)
            far = dist >= 1e-3
            away[far] = rel[far] / dist[far][:, None]
            near = ~far
            if np.any(near):
                away[near] = _tiebreak_normal(pos, vel, target)
            force += self.beta * np.exp(-dist / self.ell)[..., None] * away
        return force


def _tiebreak_normal(pos: np.ndarray, vel: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Unit normal of the neighbor velocity, signed to point away from the target."""
    normal = np.array([-vel[1], vel[0]])
    n = np.linalg.norm(normal)
    if n == 0.0:
        return np.array([1.0, 0.0])
    normal = normal / n
    if float(normal @ (pos - target)) < 0.0:
        normal = -normal
    return normal


@dataclass
class InverseVarianceFuser:
    """Fusion weights favoring the lower-variance direction source.

    The weight multiplies the inertial-source directions; where only one
    source defines a direction the weight selects it outright, and where
    neither does the weight is the symmetric 0.5.
    """

    name = "fuse_invvar"

    @property
    def params(self) -> dict[str, float]:
        return {}

    def __call__(self, primary: DirectionField, secondary: DirectionField) -> np.ndarray:
        if primary.grid != secondary.grid:
            raise GridError("direction fields live on different grids")
        def_p = primary.defined()
        def_s = secondary.defined()
        var_p = primary.sigma.astype(np.float64) ** 2
        var_s = secondary.sigma.astype(np.float64) ** 2
        denom = var_p + var_s
        both = np.where(denom > 0, var_s / np.where(denom > 0, denom, 1.0), 0.5)
        weights = np.where(def_p & def_s, both,
                           np.where(def_p & ~def_s, 1.0,
                                    np.where(def_s & ~def_p, 0.0, 0.5)))
        return weights


# functional forms of the analytic stages, for direct use

def baseline_env_field(scene: ScenePatch, bank, k: int = 8) -> ScalarField:
    """Blend the k most similar (scene, field) training pairs for a query scene."""
    est = EnvFieldKNN(k=k)
    for scn, fld in bank:
        est.add(scn, fld)
    return est(scene)


def baseline_inertial_field(past, grid: GridSpec, pred_len: int,
                            width: float = 0.75, widen: float = 3.0) -> ScalarField:
    return InertialFieldCV(width=width, widen=widen)(past, grid, pred_len)


def baseline_speed(inertial_field, past, pred_len: int,
                   sigma_floor: float = 0.05) -> SpeedProfile:
    return ConstantSpeed(sigma_floor=sigma_floor)(inertial_field, past, pred_len)


def fuse_weight_inverse_variance(primary: DirectionField,
                                 secondary: DirectionField) -> np.ndarray:
    return InverseVarianceFuser()(primary, secondary)


# ---------------------------------------------------------------------------
# training losses


def direction_nll_loss(field: DirectionField, observations) -> float:
    """Negative log-likelihood of observed unit velocities under the field.

    Each observation is a (position, unit velocity) pair; the field's mean
    and sigma are read by bilinear sampling at the position and the velocity
    is scored under an isotropic 2-D Gaussian. Deviations below the clamp
    floor are clamped (counted and logged) to keep the loss finite.
    """
    grid = field.grid
    total = 0.0
    count = 0
    clamped = 0
    for pos, vel in observations:
        uv = grid.world_to_grid(pos)
        u, v = float(uv[0]), float(uv[1])
        if not (0 <= u <= grid.width - 1 and 0 <= v <= grid.height - 1):
            raise GridError(f"observation position {np.asarray(pos)} outside grid hull")
        mu = np.asarray(bilinear(field.mean, u, v), dtype=float)
        sig = float(bilinear(field.sigma, u, v))
        if sig < SIGMA_CLAMP:
            sig = SIGMA_CLAMP
            clamped += 1
        resid = np.asarray(vel, dtype=float) - mu
        total += np.log(2.0 * np.pi) + 2.0 * np.log(sig) + float(resid @ resid) / (2.0 * sig * sig)
        count += 1
    if clamped:
        logger.warning("direction NLL: clamped sigma at %d of %d observations", clamped, count)
    return float(total)


def speed_nll_loss(profile: SpeedProfile, observed_speeds) -> float:
    """NLL of observed per-step speeds under the 1-D per-step Gaussians."""
    observed = np.asarray(observed_speeds, dtype=float)
    if observed.shape != profile.mean.shape:
        raise ValueError(f"observed {observed.shape} vs profile {profile.mean.shape} length mismatch")
    sig = np.maximum(profile.sigma, SIGMA_CLAMP)
    clamped = int((profile.sigma < SIGMA_CLAMP).sum())
    if clamped:
        logger.warning("speed NLL: clamped sigma at %d of %d steps", clamped, len(profile))
    resid = observed - profile.mean
    terms = 0.5 * np.log(2.0 * np.pi) + np.log(sig) + resid * resid / (2.0 * sig * sig)
    return float(terms.sum())


# ---------------------------------------------------------------------------
# estimator bundle and serialization


ESTIMATOR_REGISTRY = {
    EnvFieldKNN.name: EnvFieldKNN,
    InertialFieldCV.name: InertialFieldCV,
    GradientDirectionEstimator.name: GradientDirectionEstimator,
    ConstantSpeed.name: ConstantSpeed,
    ExpRepulsion.name: ExpRepulsion,
    InverseVarianceFuser.name: InverseVarianceFuser,
}

_SECTIONS = ("env_field", "inertial_field", "env_direction", "inertial_direction",
             "speed", "social", "fuse_weight")


@dataclass
class EstimatorBundle:
    """The six pluggable stages the predictor consumes, as one unit."""

    env_field: EnvFieldKNN
    inertial_field: InertialFieldCV
    env_direction: GradientDirectionEstimator
    inertial_direction: GradientDirectionEstimator
    speed: ConstantSpeed
    social: ExpRepulsion
    fuse_weight: InverseVarianceFuser

    @classmethod
    def analytic(cls, *, width: float = 0.75, widen: float = 3.0, sigma0: float = 0.3,
                 grad_eps: float = 1e-6, sigma_floor: float = 0.05, bank_k: int = 8,
                 social_ell: float = 1.0, social_beta: float = 0.3,
                 off_weight: float = OFF_BAND_WEIGHT) -> "EstimatorBundle":
        """All-analytic bundle; the environmental bank starts empty (unfit)."""
        return cls(
            env_field=EnvFieldKNN(k=bank_k, off_weight=off_weight),
            inertial_field=InertialFieldCV(width=width, widen=widen, off_weight=off_weight),
            env_direction=GradientDirectionEstimator(sigma0=sigma0, eps=grad_eps),
            inertial_direction=GradientDirectionEstimator(sigma0=sigma0, eps=grad_eps),
            speed=ConstantSpeed(sigma_floor=sigma_floor),
            social=ExpRepulsion(ell=social_ell, beta=social_beta),
            fuse_weight=InverseVarianceFuser(),
        )


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise SerializationError("bundle blob truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def bundle_to_bytes(bundle: EstimatorBundle) -> bytes:
    out = [PFEB_MAGIC, struct.pack("<II", PFEB_VERSION, len(_SECTIONS))]
    for section in _SECTIONS:
        est = getattr(bundle, section)
        out.append(_pack_str(section))
        out.append(_pack_str(f"analytic:{est.name}"))
        params = est.params
        out.append(struct.pack("<I", len(params)))
        for key in sorted(params):
            out.append(_pack_str(key))
            out.append(struct.pack("<d", float(params[key])))
        entries = est.bank if isinstance(est, EnvFieldKNN) else []
        out.append(struct.pack("<I", len(entries)))
        for gray, fld in entries:
            scene_blob = field_to_bytes(fld.grid, gray[..., None], np.ones_like(gray))
            field_blob = field_to_bytes(fld.grid, fld.data[..., None], fld.mask)
            out.append(struct.pack("<Q", len(scene_blob)))
            out.append(scene_blob)
            out.append(struct.pack("<Q", len(field_blob)))
            out.append(field_blob)
    return b"".join(out)


def bundle_from_bytes(buf: bytes) -> EstimatorBundle:
    reader = _Reader(buf)
    if reader.take(4) != PFEB_MAGIC:
        raise SerializationError("bad bundle magic")
    version, n_sections = reader.unpack("<II")
    if version != PFEB_VERSION:
        raise SerializationError(f"unsupported bundle version {version}")
    sections: dict[str, object] = {}
    for _ in range(n_sections):
        section = reader.string()
        tag = reader.string()
        if not tag.startswith("analytic:"):
            raise SerializationError(f"section {section}: unknown estimator tag {tag!r}")
        est_name = tag.split(":", 1)[1]
        (n_params,) = reader.unpack("<I")
        params = {}
        for _ in range(n_params):
            key = reader.string()
            (params[key],) = reader.unpack("<d")
        (n_entries,) = reader.unpack("<I")
        bank = []
        for _ in range(n_entries):
            (n,) = reader.unpack("<Q")
            sg, sdata, _ = field_from_bytes(reader.take(n))
            (n,) = reader.unpack("<Q")
            fg, fdata, fmask = field_from_bytes(reader.take(n))
            bank.append((sdata[..., 0], ScalarField(fg, fdata[..., 0], fmask)))
        cls = ESTIMATOR_REGISTRY.get(est_name)
        if cls is None:
            raise SerializationError(f"section {section}: unknown estimator {est_name!r}")
        kwargs = {k: (int(v) if k == "k" else v) for k, v in params.items()}
        est = cls(**kwargs)
        if isinstance(est, EnvFieldKNN):
            est.bank = bank
        sections[section] = est
    missing = [s for s in _SECTIONS if s not in sections]
    if missing:
        raise SerializationError(f"bundle missing sections: {missing}")
    return EstimatorBundle(**{s: sections[s] for s in _SECTIONS})


def write_bundle(path, bundle: EstimatorBundle) -> None:
    atomic_write_bytes(path, bundle_to_bytes(bundle))


def read_bundle(path) -> EstimatorBundle:
    with open(path, "rb") as fh:
        return bundle_from_bytes(fh.read())
