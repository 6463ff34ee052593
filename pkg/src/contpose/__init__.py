"""Continuous-time neural camera pose: time -> SE(3) as a differentiable MLP."""

from contpose.geometry import (
    EulerAngles,
    RigidTransform2,
    RigidTransform3,
    UnitQuaternion,
    compose,
    inverse,
)

__all__ = [
    "EulerAngles",
    "RigidTransform2",
    "RigidTransform3",
    "UnitQuaternion",
    "compose",
    "inverse",
]

__version__ = "0.1.0"
