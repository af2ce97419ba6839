"""Potential-field representation and multi-modal trajectory prediction.

Observed trajectories are inverse-labeled with potential values, painted
into dense grids, turned into direction/speed/force fields by pluggable
estimator stages, and rolled out recurrently into single- and multi-modal
future predictions, with ADE/FDE benchmarking on top.
"""

from .errors import (ConfigError, DegenerateTrajectoryError, EstimatorError, GridError,
                     OutOfGridError, ParseError, SerializationError, StrideError,
                     TrajfieldError)
from .fields import GridSpec, ScalarField, VectorField, read_field, write_field
from .ingest import (NeighborSet, Trajectory, TrajectorySample, find_neighbors,
                     parse_trajectory_file, segment, write_trajectory_file)
from .labeling import (PotentialLabel, label_potentials, masked_field_loss, rasterize,
                       verify_triplet_ratio)
from .geometry import (CanonicalTransform, ScenePatch, augment_rotations, canonicalize,
                       extract_patch, sample_bilinear)
from .estimators import (DirectionField, EstimatorBundle, SpeedProfile, baseline_env_field,
                         baseline_inertial_field, baseline_speed, direction_nll_loss,
                         fuse_weight_inverse_variance, gradient_direction, read_bundle,
                         speed_nll_loss, write_bundle)
from .predictor import (DisplacementField, ForceField, PredictionSet, displacement_field,
                        fuse_directions, neighbor_field, predict, rollout, social_force)
from .model import FieldPredictor, LinearPredictor
from .evaluation import MetricReport, ade_fde, best_of_k, linear_baseline, run_protocol
from .config import RunConfig

__version__ = "0.1.0"

__all__ = [
    "CanonicalTransform", "ConfigError", "DegenerateTrajectoryError", "DirectionField",
    "DisplacementField", "EstimatorBundle", "EstimatorError", "FieldPredictor",
    "ForceField", "GridError", "GridSpec", "LinearPredictor", "MetricReport",
    "NeighborSet", "OutOfGridError", "ParseError", "PotentialLabel", "PredictionSet",
    "RunConfig", "ScalarField", "ScenePatch", "SerializationError", "SpeedProfile",
    "StrideError", "Trajectory", "TrajectorySample", "TrajfieldError", "VectorField",
    "ade_fde", "augment_rotations", "baseline_env_field", "baseline_inertial_field",
    "baseline_speed", "best_of_k", "canonicalize", "direction_nll_loss",
    "displacement_field", "extract_patch", "find_neighbors", "fuse_directions",
    "fuse_weight_inverse_variance", "gradient_direction", "label_potentials",
    "linear_baseline", "masked_field_loss", "neighbor_field", "parse_trajectory_file",
    "predict", "rasterize", "read_bundle", "read_field", "rollout", "run_protocol",
    "sample_bilinear", "segment", "social_force", "speed_nll_loss",
    "verify_triplet_ratio", "write_bundle", "write_field", "write_trajectory_file",
]
