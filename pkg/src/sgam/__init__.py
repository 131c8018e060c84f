"""Semantic-guided area-to-point feature matching (SGAM).

Matches semantic areas between two images from their segmentation maps,
certifies the area matches by epipolar-geometry consistency, and emits
high-precision point correspondences plus relative-pose and matching
metrics. Point matchers are pluggable; a synthetic-scene generator
provides exact ground truth for verification.
"""

from .config import SgamConfig
from .geometry import (
    CameraIntrinsics,
    Correspondence,
    FundamentalMatrix,
    MatchSet,
    Point2,
    PoseEstimate,
    estimate_fundamental,
    pose_error,
    ransac_fundamental,
    recover_pose,
    sampson_set,
    sampson_single,
)

__all__ = [
    "SgamConfig",
    "CameraIntrinsics",
    "Correspondence",
    "FundamentalMatrix",
    "MatchSet",
    "Point2",
    "PoseEstimate",
    "estimate_fundamental",
    "pose_error",
    "ransac_fundamental",
    "recover_pose",
    "sampson_set",
    "sampson_single",
]

__version__ = "0.1.0"
