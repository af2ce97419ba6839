"""Exception types shared across the toolkit."""

from __future__ import annotations


class TrajfieldError(Exception):
    """Base class for all toolkit errors."""


class ParseError(TrajfieldError):
    """Malformed trajectory input; message carries file and line number."""


class StrideError(TrajfieldError):
    """Frame numbering of an agent is not uniformly strided."""


class GridError(TrajfieldError):
    """Grid construction or grid compatibility failure."""


class OutOfGridError(GridError):
    """A queried position lies outside the grid's pixel-center hull."""


class DegenerateTrajectoryError(TrajfieldError):
    """Trajectory has no net motion, so no potential labels exist."""


class EstimatorError(TrajfieldError):
    """An estimator stage is unfit or failed; message names the stage."""


class SerializationError(TrajfieldError):
    """Corrupt or unsupported binary field / bundle file."""


class ConfigError(TrajfieldError):
    """One or more invalid configuration entries, reported together."""

    def __init__(self, problems: str | list[str]):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
