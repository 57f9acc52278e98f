"""Equivariant neural simulation of 2D deformable-body collisions.

Pipeline: an MLS-MPM generator produces ground-truth falling/colliding
trajectories; an encoder compresses each scene into latent control points;
a collision-aware message-passing network drives their dynamics as an ODE;
a conditional neural field decodes continuous velocity everywhere. Every
learnable stage is equivariant under a configurable group (translations, or
planar rotations+translations).
"""

from .decoder import DecoderConfig, FieldDecoder
from .encoder import EncoderConfig, LatentState, PointCloudEncoder, plan_grouping
from .errors import (
    ConfigurationError,
    EqsimError,
    FormatError,
    GenerationError,
    NumericalError,
    ValidationError,
)
from .geometry import (
    GroupElement,
    Pose2,
    apply_group,
    ball_query,
    farthest_point_sample,
    rotation_invariants,
    se2_bi_invariant,
    wrap_angle,
)
from .model import ModelConfig, NeuralSimulator, make_model
from .mpm import MpmConfig, SceneConfig, generate_trajectory, mpm_step
from .processor import (
    CollisionGraph,
    LatentDynamics,
    ProcessorConfig,
    build_collision_graph,
)
from .state import MassPointCloud, Trajectory
from .trajio import read_trajectory, write_trajectory

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CollisionGraph",
    "DecoderConfig",
    "EncoderConfig",
    "EqsimError",
    "FieldDecoder",
    "FormatError",
    "GenerationError",
    "GroupElement",
    "LatentDynamics",
    "LatentState",
    "MassPointCloud",
    "ModelConfig",
    "MpmConfig",
    "NeuralSimulator",
    "NumericalError",
    "PointCloudEncoder",
    "Pose2",
    "ProcessorConfig",
    "SceneConfig",
    "Trajectory",
    "ValidationError",
    "apply_group",
    "ball_query",
    "build_collision_graph",
    "farthest_point_sample",
    "generate_trajectory",
    "make_model",
    "mpm_step",
    "plan_grouping",
    "read_trajectory",
    "rotation_invariants",
    "se2_bi_invariant",
    "wrap_angle",
    "write_trajectory",
]
