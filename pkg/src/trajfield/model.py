"""Scikit-learn style estimators wrapping the field pipeline.

``FieldPredictor`` follows the fit/predict contract: ``fit`` builds the
environmental bank from training samples (learned state lives in
``bundle_``), ``predict`` returns single-mode futures and ``predict_set``
the full multi-modal output. Hyperparameters are plain constructor
arguments so ``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import zlib

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimators import EstimatorBundle
from .fields import GridSpec
from .geometry import ScenePatch, canonicalize
from .ingest import TrajectorySample, find_neighbors
from .labeling import label_potentials, rasterize
from .predictor import PredictionSet, predict


def validate_samples(X, obs_len: int | None = None, horizon: int | None = None) -> list[TrajectorySample]:
    """Check that X is a non-empty sequence of consistent trajectory samples."""
    samples = list(X)
    if not samples:
        raise ValueError("need at least one sample")
    for i, s in enumerate(samples):
        if not isinstance(s, TrajectorySample):
            raise TypeError(f"X[{i}] is {type(s).__name__}, expected TrajectorySample")
        if obs_len is not None and s.obs_len != obs_len:
            raise ValueError(f"X[{i}] has {s.obs_len} observed points, expected {obs_len}")
        if horizon is not None and s.horizon != horizon:
            raise ValueError(f"X[{i}] has horizon {s.horizon}, expected {horizon}")
    return samples


def sample_seed(root_seed: int, sample_id: str) -> np.random.SeedSequence:
    """Per-sample seed derived from the root seed and the stable sample id.

    Keeps parallel batch prediction deterministic regardless of worker
    scheduling or sample order.
    """
    return np.random.SeedSequence([int(root_seed), zlib.crc32(sample_id.encode("utf-8"))])


class FieldPredictor(BaseEstimator):
    """Trajectory predictor driven by potential/direction/force fields.

    Parameters
    ----------
    obs_len, pred_len : window split of the samples this model consumes.
    grid_size, resolution : working canonical grid (pixels, units/pixel).
    trajectory_width : rasterization band width in pixels.
    off_weight : mask weight of never-written pixels (loss regularizer).
    neighbor_radius : co-temporal neighbor search radius, world units.
    bank_k, bank_size : environmental blending neighbors / max bank entries.
    sigma0, grad_eps : direction-stage uncertainty and gradient floor.
    speed_sigma_floor : minimum speed deviation, units per step.
    social_ell, social_beta : repulsion length scale and strength.
    use_env, use_social : stage toggles.
    n_samples : K, number of multi-modal rollouts (mean included first).
    seed : root seed for multi-modal sampling.
    """

    def __init__(self, obs_len=8, pred_len=12, grid_size=64, resolution=0.25,
                 trajectory_width=3.0, off_weight=0.01, neighbor_radius=4.0,
                 bank_k=8, bank_size=128, sigma0=0.3, grad_eps=1e-6,
                 speed_sigma_floor=0.05, social_ell=1.0, social_beta=0.3,
                 use_env=True, use_social=True, n_samples=20, seed=0):
        self.obs_len = obs_len
        self.pred_len = pred_len
        self.grid_size = grid_size
        self.resolution = resolution
        self.trajectory_width = trajectory_width
        self.off_weight = off_weight
        self.neighbor_radius = neighbor_radius
        self.bank_k = bank_k
        self.bank_size = bank_size
        self.sigma0 = sigma0
        self.grad_eps = grad_eps
        self.speed_sigma_floor = speed_sigma_floor
        self.social_ell = social_ell
        self.social_beta = social_beta
        self.use_env = use_env
        self.use_social = use_social
        self.n_samples = n_samples
        self.seed = seed

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_size, self.grid_size, resolution=self.resolution)

    def make_bundle(self) -> EstimatorBundle:
        return EstimatorBundle.analytic(
            width=self.trajectory_width * self.resolution,
            sigma0=self.sigma0, grad_eps=self.grad_eps,
            sigma_floor=self.speed_sigma_floor, bank_k=self.bank_k,
            social_ell=self.social_ell, social_beta=self.social_beta,
            off_weight=self.off_weight)

    def fit(self, X, y=None, scenes=None):
        """Build the estimator bundle; trains the environmental bank from X.

        ``scenes`` optionally maps scene_id to a world-aligned
        :class:`ScenePatch`. Without imagery the bank stores blank patches,
        which degenerates the environmental stage into a similarity-flat
        average prior over training fields.
        """
        samples = validate_samples(X, self.obs_len, self.pred_len)
        bundle = self.make_bundle()
        grid = self.grid()
        if self.use_env:
            picks = np.unique(np.linspace(0, len(samples) - 1,
                                          min(self.bank_size, len(samples))).astype(int))
            for idx in picks:
                sample = samples[idx]
                canon, transform = canonicalize(sample, grid)
                try:
                    label = label_potentials(canon.full)
                except Exception:
                    continue
                field = rasterize(canon.full, label, grid,
                                  self.trajectory_width * self.resolution,
                                  off_weight=self.off_weight, clip=True)
                patch = self._scene_patch(sample, transform, grid, scenes)
                bundle.env_field.add(patch, field)
        self.bundle_ = bundle
        self.n_train_ = len(samples)
        return self

    def _scene_patch(self, sample, transform, grid, scenes) -> ScenePatch:
        from .geometry import extract_patch

        scene = (scenes or {}).get(sample.scene_id)
        if scene is None:
            return ScenePatch(grid, np.zeros(grid.shape, np.float32))
        return extract_patch(scene, transform, grid)

    def set_bundle(self, bundle: EstimatorBundle) -> "FieldPredictor":
        """Install a pre-built (e.g. deserialized) bundle as the fitted state."""
        self.bundle_ = bundle
        self.n_train_ = 0
        return self

    def predict_set(self, X, scenes=None, context=None) -> list[PredictionSet]:
        """Full multi-modal prediction for every sample in X.

        ``context`` supplies the co-temporal samples used for neighbor
        search (defaults to X itself); ``scenes`` maps scene_id to a
        world-aligned patch for the environmental stage.
        """
        check_is_fitted(self, "bundle_")
        samples = validate_samples(X, self.obs_len, self.pred_len)
        context = samples if context is None else list(context)
        grid = self.grid()
        blank = ScenePatch(grid, np.zeros(grid.shape, np.float32))
        out = []
        for sample in samples:
            neighbors = None
            if self.use_social:
                neighbors = find_neighbors(sample, context, self.neighbor_radius)
            scene = (scenes or {}).get(sample.scene_id)
            if not self.use_env:
                scene = None
            elif scene is None and self.bundle_.env_field.fitted:
                # no imagery: a blank patch makes the environmental stage a
                # similarity-flat prior over the training fields
                scene = blank
            out.append(predict(
                sample, scene, self.bundle_, k=self.n_samples,
                seed=sample_seed(self.seed, sample.sample_id), grid=grid,
                neighbors=neighbors, use_social=self.use_social))
        return out

    def predict(self, X, scenes=None, context=None) -> list[np.ndarray]:
        """Single-mode (mean rollout) future for every sample in X."""
        return [ps.single for ps in self.predict_set(X, scenes=scenes, context=context)]

    def score(self, X, y=None, scenes=None, context=None) -> float:
        """Negative mean ADE of the single-mode prediction (higher is better)."""
        from .evaluation import ade_fde, pad_to_horizon

        preds = self.predict(X, scenes=scenes, context=context)
        ades = []
        for sample, pred in zip(validate_samples(X), preds):
            full = pad_to_horizon(pred, sample.horizon, sample.current)
            ades.append(ade_fde(full, sample.future)[0])
        return -float(np.mean(ades))


class LinearPredictor(BaseEstimator):
    """Constant-velocity reference baseline with the same estimator surface."""

    def __init__(self, pred_len=12):
        self.pred_len = pred_len

    def fit(self, X, y=None, **kwargs):
        validate_samples(X)
        self.fitted_ = True
        return self

    def predict(self, X, **kwargs) -> list[np.ndarray]:
        from .evaluation import linear_baseline

        check_is_fitted(self, "fitted_")
        return [linear_baseline(s.past, self.pred_len) for s in validate_samples(X)]

    def predict_set(self, X, **kwargs) -> list[PredictionSet]:
        preds = self.predict(X, **kwargs)
        return [PredictionSet(single=p, single_truncated=False, samples=[p],
                              truncated=[False], k=1) for p in preds]

    def score(self, X, y=None, **kwargs) -> float:
        from .evaluation import ade_fde

        preds = self.predict(X, **kwargs)
        ades = [ade_fde(p, s.future)[0] for p, s in zip(preds, validate_samples(X))]
        return -float(np.mean(ades))
