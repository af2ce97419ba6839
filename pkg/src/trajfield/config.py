"""Flat key=value run configuration with strict validation.

Config files are plain text, one ``key=value`` per line, ``#`` comments
allowed. Unknown keys are rejected and all problems are reported together
so a bad file surfaces every mistake at once.
"""

from __future__ import annotations

import os

from .errors import ConfigError

# key -> (type, default, validator description)
_SCHEMA: dict[str, tuple[type, object]] = {
    "dt": (float, 0.4),
    "obs_len": (int, 8),
    "pred_len": (int, 12),
    "stride": (int, 1),
    "grid_size": (int, 64),
    "resolution": (float, 0.25),
    "trajectory_width": (float, 3.0),   # pixels
    "lambda": (float, 0.01),
    "neighbor_radius": (float, 4.0),
    "K": (int, 20),
    "seed": (int, 0),
    "protocol": (str, "loo"),
    "units": (str, "meters"),
    "loss_norm": (str, "l1"),
    "sigma0": (float, 0.3),
    "grad_eps": (float, 1e-6),
    "speed_sigma_floor": (float, 0.05),
    "social_ell": (float, 1.0),
    "social_beta": (float, 0.3),
    "bank_k": (int, 8),
    "bank_size": (int, 128),
    "pixel_divisor": (float, 5.0),
    "data_dir": (str, ""),
    "split_file": (str, ""),
    "scene_dir": (str, ""),
    "bundle": (str, "analytic"),
}

_CHOICES = {
    "protocol": {"loo", "split"},
    "units": {"meters", "pixels"},
    "loss_norm": {"l1", "l2"},
}

_POSITIVE = {"dt", "grid_size", "resolution", "trajectory_width", "lambda",
             "neighbor_radius", "K", "stride", "pred_len", "sigma0",
             "speed_sigma_floor", "social_ell", "bank_k", "bank_size",
             "pixel_divisor"}


class RunConfig:
    """Typed view over the flat key=value map, defaults filled in."""

    def __init__(self, values: dict | None = None):
        self._values = {k: default for k, (_, default) in _SCHEMA.items()}
        problems = []
        for key, raw in (values or {}).items():
            problems.extend(self._assign(key, raw))
        if problems:
            raise ConfigError(problems)

    def _assign(self, key: str, raw) -> list[str]:
        if key not in _SCHEMA:
            return [f"unknown key {key!r}"]
        typ, _ = _SCHEMA[key]
        try:
            value = typ(raw) if not isinstance(raw, typ) else raw
        except (TypeError, ValueError):
            return [f"{key}: cannot parse {raw!r} as {typ.__name__}"]
        self._values[key] = value
        return []

    def __getitem__(self, key: str):
        return self._values[key]

    def as_dict(self) -> dict:
        return dict(self._values)

    @classmethod
    def from_file(cls, path=None, overrides=None) -> "RunConfig":
        """Load a config file (optional) and apply ``key=value`` overrides.

        Every malformed line, unknown key, bad type, and domain violation is
        collected and raised in a single :class:`ConfigError`.
        """
        cfg = cls()
        problems: list[str] = []
        if path:
            if not os.path.isfile(path):
                raise ConfigError(f"config file {path!r} not found")
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, raw in enumerate(fh, start=1):
                    text = raw.split("#", 1)[0].strip()
                    if not text:
                        continue
                    if "=" not in text:
                        problems.append(f"{path}:{lineno}: expected key=value, got {text!r}")
                        continue
                    key, value = (part.strip() for part in text.split("=", 1))
                    problems.extend(cfg._assign(key, value))
        for item in overrides or []:
            if "=" not in item:
                problems.append(f"--set {item!r}: expected key=value")
                continue
            key, value = (part.strip() for part in item.split("=", 1))
            problems.extend(cfg._assign(key, value))
        problems.extend(cfg._domain_problems())
        if problems:
            raise ConfigError(problems)
        return cfg

    def _domain_problems(self) -> list[str]:
        problems = []
        for key, choices in _CHOICES.items():
            if self._values[key] not in choices:
                problems.append(f"{key}: must be one of {sorted(choices)}, got {self._values[key]!r}")
        for key in _POSITIVE:
            if not self._values[key] > 0:
                problems.append(f"{key}: must be positive, got {self._values[key]!r}")
        if self._values["obs_len"] < 2:
            problems.append(f"obs_len: must be >= 2, got {self._values['obs_len']}")
        if self._values["seed"] < 0:
            problems.append(f"seed: must be >= 0, got {self._values['seed']}")
        if self._values["grad_eps"] < 0:
            problems.append(f"grad_eps: must be >= 0, got {self._values['grad_eps']}")
        return problems

    def require(self, *keys: str) -> None:
        """Demand non-empty values for path-like keys a subcommand needs."""
        problems = [f"{key}: required for this command" for key in keys
                    if not self._values[key]]
        if problems:
            raise ConfigError(problems)
