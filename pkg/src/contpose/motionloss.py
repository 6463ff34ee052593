"""Sparsity of the degrees of freedom of an intrinsic motion.

A relative motion ``T_I = (R_I, v_I)`` is summarized by the vector
``[α̂, v̂]`` where ``α̂ = 2 euler(R_I) / γ`` (roll, pitch, yaw scaled by the view
angle ``γ``) and ``v̂ = v_I / |v_I|``. Its L1 norm is the relaxed DOF count;
``l0`` counts the active components instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from contpose import geometry as g
from contpose.geometry import RigidTransform3

V_EPS = 1e-12


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class DofConfig:
    view_angle: float = math.pi / 2  # γ
    relaxation: str = "l1"
    lambda_o: float = 1.0
    l0_tol: float = 1e-3  # |component| above which it counts as active

    def __post_init__(self):
        if not 0 < self.view_angle < math.pi:
            raise ValueError("view_angle must lie in (0, pi)")
        if self.lambda_o < 0:
            raise ValueError("lambda_o must be non-negative")
        if self.relaxation not in ("l1", "l0"):
            raise ValueError(f"unknown relaxation {self.relaxation!r}")


def dof_components(T_I: RigidTransform3, cfg: DofConfig = DofConfig()) -> np.ndarray:
    """``[α̂_roll, α̂_pitch, α̂_yaw, v̂_x, v̂_y, v̂_z]``."""
    e = g.quat_to_euler(T_I.rotation)
    a = 2.0 * np.array([e.roll, e.pitch, e.yaw]) / cfg.view_angle
    v = np.asarray(T_I.t, dtype=float)
    n = np.linalg.norm(v)
    vh = v / n if n >= V_EPS else np.zeros(3)
    return np.concatenate([a, vh])


def dof_loss(T_I: RigidTransform3, cfg: DofConfig = DofConfig()) -> float:
    c = dof_components(T_I, cfg)
    if cfg.relaxation == "l0":
        return float(np.sum(np.abs(c) > cfg.l0_tol))
    return float(np.abs(c).sum())


def l1_translation_reg(T_o: RigidTransform3) -> float:
    return float(np.abs(np.asarray(T_o.t)).sum())


# ------------------------------------------------------------ torch versions


def euler_zyx_tensors(q: torch.Tensor) -> torch.Tensor:
    """Roll, pitch, yaw of unit quaternions ``(..., 4)``; same convention as ``geometry``."""
    w, x, y, z = q.unbind(-1)
    roll = torch.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    s = 2 * (w * y - x * z)
    pitch = torch.atan2(s, torch.sqrt(torch.clamp(1 - s * s, min=1e-18)))
    yaw = torch.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return torch.stack([roll, pitch, yaw], -1)


def _unit_or_zero(v: torch.Tensor) -> torch.Tensor:
    n = v.norm(dim=-1, keepdim=True)
    small = n < V_EPS
    safe = torch.where(small, torch.ones_like(n), n)
    return torch.where(small, torch.zeros_like(v), v / safe)


def dof_loss_tensors(q: torch.Tensor, v: torch.Tensor, cfg: DofConfig = DofConfig()) -> torch.Tensor:
    """Differentiable relaxed DOF loss, summed over a batch of motions ``(q, v)``.

    Always the L1 relaxation (the L0 count has no useful gradient).
    """
    q = q / q.norm(dim=-1, keepdim=True)
    a = 2.0 * euler_zyx_tensors(q) / cfg.view_angle
    return a.abs().sum() + _unit_or_zero(v).abs().sum()


def l1_translation_reg_tensors(v_o: torch.Tensor) -> torch.Tensor:
    return v_o.abs().sum()


# -------------------------------------------------------------- statistics


def dof_values(motions: Sequence[RigidTransform3], cfg: DofConfig = DofConfig()) -> np.ndarray:
    if len(motions) == 0:
        raise EmptyInput("no motions")
    return np.array([dof_loss(T, cfg) for T in motions])


def dof_statistic(motions: Sequence[RigidTransform3], cfg: DofConfig = DofConfig()) -> float:
    """Per-frame mean of the DOF measure over a list of relative motions."""
    return float(dof_values(motions, cfg).mean())


def moving_average(values, window: int = 10) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    x = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.cumsum(np.concatenate([[0.0], x]))
    i = np.arange(1, len(x) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


def relative_motions(poses: Sequence[RigidTransform3]) -> list:
    """``T_{i-1}⁻¹ T_i`` for consecutive poses."""
    return [g.compose(g.inverse(a), b) for a, b in zip(poses[:-1], poses[1:])]
