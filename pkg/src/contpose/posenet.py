"""PoseNet: a continuous map from normalized time to a rigid pose.

Rotation heads pass through ``tanh`` and are then normalized to a unit
quaternion (SE(3)) or scaled to an angle ``pi * tanh`` (SE(2)); translation
heads are raw. The decoupled variant uses two MLPs (TransNet / RotsNet), the
coupled one shares a single trunk with a stacked ``[rot, trans]`` head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from contpose import diffnet as dn
from contpose import tgeom
from contpose.diffnet import AdamState, EncodingConfig, LrSchedule
from contpose.geometry import RigidTransform2, RigidTransform3, axis_angle_to_quat, compose, inverse

# pre-tanh bias that makes an untrained rotation head emit (1, 0, 0, 0)
IDENTITY_W_BIAS = math.atanh(1.0 - 1e-6)

REFERENCE_KINDS = ("default_prev_frame", "world", "random_perturbed", "intrinsic", "imu")


@dataclass(frozen=True)
class PoseNetConfig:
    architecture: str = "decoupled"
    layers: int = 8
    width: int = 256
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    space: str = "SE3"
    lr_trans: float = 1e-3
    lr_rot: float = 2e-4
    lr_trans_final: Optional[float] = 1e-5
    lr_rot_final: Optional[float] = 1e-6
    activation: str = "relu"
    init: str = "he"
    dtype: str = "float64"

    def __post_init__(self):
        if self.architecture not in ("coupled", "decoupled"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.space not in ("SE2", "SE3"):
            raise ValueError(f"unknown space {self.space!r}")
        if self.layers < 1 or self.width < 1:
            raise ValueError("layers and width must be positive")

    @property
    def torch_dtype(self):
        return {"float64": torch.float64, "float32": torch.float32}[self.dtype]

    @property
    def rot_dim(self) -> int:
        return 4 if self.space == "SE3" else 1

    @property
    def trans_dim(self) -> int:
        return 3 if self.space == "SE3" else 2


@dataclass(frozen=True)
class TimeMap:
    """Affine map from physical seconds to the net's normalized time:
    ``tau = (t - t0) / span``. Time derivatives scale by ``1/span`` per order."""

    t0: float = 0.0
    span: float = 1.0

    @classmethod
    def covering(cls, times) -> "TimeMap":
        times = np.asarray(times, dtype=float)
        return cls(float(times.min()), max(float(times.max() - times.min()), 1e-12))

    def __call__(self, t):
        return (np.asarray(t, dtype=float) - self.t0) / self.span


class PoseNet:
    def __init__(self, config: PoseNetConfig = PoseNetConfig(), seed: int = 0):
        self.config = config
        self.encoding = config.encoding
        self.seed = seed
        c = config
        rot_bias = [IDENTITY_W_BIAS, 0.0, 0.0, 0.0] if c.space == "SE3" else [0.0]
        kw = dict(layers=c.layers, width=c.width, activation=c.activation, init=c.init, dtype=c.torch_dtype)
        if c.architecture == "decoupled":
            self.trans_params = dn.init_mlp(c.encoding.dim, c.trans_dim, seed=2 * seed, last_bias=[0.0] * c.trans_dim, **kw)
            self.rot_params = dn.init_mlp(c.encoding.dim, c.rot_dim, seed=2 * seed + 1, last_bias=rot_bias, **kw)
        else:
            trunk = dn.init_mlp(
                c.encoding.dim, c.rot_dim + c.trans_dim, seed=2 * seed, last_bias=rot_bias + [0.0] * c.trans_dim, **kw
            )
            self.trans_params = self.rot_params = trunk

    @property
    def coupled(self) -> bool:
        return self.trans_params is self.rot_params

    @property
    def dtype(self):
        return self.config.torch_dtype

    def parameters(self) -> list:
        if self.coupled:
            return self.trans_params.parameters()
        return self.trans_params.parameters() + self.rot_params.parameters()

    def nets(self) -> dict:
        if self.coupled:
            return {"trunk": self.trans_params}
        return {"trans": self.trans_params, "rot": self.rot_params}

    def set_progress(self, alpha: Optional[float]) -> None:
        """Coarse-to-fine anneal progress for the time encoding."""
        self.encoding = self.encoding.with_progress(alpha)

    # -------------------------------------------------------------- raw heads

    def raw(self, t) -> tuple[torch.Tensor, torch.Tensor]:
        """Pre-activation ``(rot, trans)`` head outputs, ``(N, rot_dim)`` / ``(N, trans_dim)``."""
        if self.coupled:
            z = dn.forward(self.trans_params, self.encoding, t)
            return z[:, : self.config.rot_dim], z[:, self.config.rot_dim :]
        return dn.forward(self.rot_params, self.encoding, t), dn.forward(self.trans_params, self.encoding, t)

    def raw_jets(self, t):
        """Each head as ``(value, d/dt, d²/dt²)`` with respect to normalized time."""
        r = self.config.rot_dim
        if self.coupled:
            z = dn.time_derivatives(self.trans_params, self.encoding, t)
            return tuple(a[:, :r] for a in z), tuple(a[:, r:] for a in z)
        return dn.time_derivatives(self.rot_params, self.encoding, t), dn.time_derivatives(
            self.trans_params, self.encoding, t
        )

    # ------------------------------------------------------------------ poses

    def pre_normalized(self, t) -> torch.Tensor:
        """``tanh`` of the rotation head: every coordinate in [-1, 1]."""
        z_rot, _ = self.raw(t)
        return torch.tanh(z_rot)

    def pose_tensors(self, t):
        """SE(3): ``(q (N,4), v (N,3))``; SE(2): ``(theta (N,), v (N,2))``."""
        z_rot, v = self.raw(t)
        u = torch.tanh(z_rot)
        if self.config.space == "SE2":
            return math.pi * u[:, 0], v
        return tgeom.qnormalize(u), v

    def pose_jets(self, t) -> dict:
        """Pose and time derivatives (normalized time): ``q, dq, v, dv, ddv``.

        ``q = u/|u|`` with ``u = tanh(z)``, so ``dq = (du - q <q, du>)/|u|``.
        For SE(2) the rotation entries are ``theta, dtheta``.
        """
        (z, dz, ddz), (v, dv, ddv) = self.raw_jets(t)
        u = torch.tanh(z)
        du = (1 - u * u) * dz
        if self.config.space == "SE2":
            return {"theta": math.pi * u[:, 0], "dtheta": math.pi * du[:, 0], "v": v, "dv": dv, "ddv": ddv}
        n = u.norm(dim=-1, keepdim=True)
        q = u / n
        dq = (du - q * (q * du).sum(-1, keepdim=True)) / n
        return {"q": q, "dq": dq, "v": v, "dv": dv, "ddv": ddv}

    def pose_at(self, t: float):
        return self.poses_at([t])[0]

    def poses_at(self, ts) -> list:
        with torch.no_grad():
            r, v = self.pose_tensors(ts)
        if self.config.space == "SE2":
            return [tgeom.tensors_to_pose2(r[i], v[i]) for i in range(len(v))]
        return [tgeom.tensors_to_pose(r[i], v[i]) for i in range(len(v))]

    def save(self, path, meta: Optional[dict] = None) -> None:
        m = {"encoding": dn.encoding_to_dict(self.encoding), "seed": self.seed, "space": self.config.space}
        m.update(meta or {})
        dn.save_checkpoint(path, self.nets(), m)


class PoseOptimizer:
    """Adam over a PoseNet with per-sub-network learning-rate schedules."""

    def __init__(self, net: PoseNet, total_steps: int, warmup_steps: int = 0, decay: bool = True):
        c = net.config
        self.net = net
        self.tensors = net.parameters()
        self.state = AdamState.zeros_like(self.tensors)
        tr = LrSchedule(c.lr_trans, c.lr_trans_final if decay else None, total_steps, warmup_steps)
        ro = LrSchedule(c.lr_rot, c.lr_rot_final if decay else None, total_steps, warmup_steps)
        if net.coupled:
            self.schedules = [tr] * len(self.tensors)
        else:
            n_t = len(net.trans_params.parameters())
            self.schedules = [tr] * n_t + [ro] * (len(self.tensors) - n_t)
        self.k = 0

    def step(self, loss_fn) -> float:
        loss, grads = dn.loss_gradients(self.tensors, loss_fn)
        self.apply(grads)
        return loss

    def apply(self, grads) -> None:
        """One Adam update from precomputed gradients (e.g. a shared backward pass)."""
        dn.adam_step(self.state, self.tensors, grads, [s(self.k) for s in self.schedules])
        self.k += 1


def P(net: PoseNet, t):
    """Vector-to-transform conversion of the net output at ``t``."""
    return net.pose_at(t)


def refined_pose(net: PoseNet, t: float, T_init=None):
    """``T_init ∘ P(f(t))``; with no initial pose the net output itself."""
    T = net.pose_at(t)
    if T_init is None:
        return T
    return compose(T_init, T)


# ------------------------------------------------------------ reference frames


@dataclass(frozen=True)
class ReferenceFrame:
    """How the net output at frame ``i`` is anchored.

    ``default_prev_frame``: relative to the previous camera.
    ``world``: the output is the absolute pose.
    ``random_perturbed``: relative to a seeded random perturbation of the
    previous camera, drawn afresh for every frame index.
    ``intrinsic``: relative to the previous camera through ``T_o ∘ T_I``.
    ``imu``: the output is a continuous body curve; frame ``i`` is placed at
    ``T_prev ∘ S_prev⁻¹ ∘ P(f(t_i))`` with ``S_prev`` the stored output at
    the previous frame, so successive outputs differ by the body motion.
    """

    kind: str = "default_prev_frame"
    perturb_rot_deg: float = 90.0
    perturb_trans: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference frame {self.kind!r}")

    def perturbation(self, index: int) -> RigidTransform3:
        rng = np.random.default_rng([self.seed, index])
        axis = rng.normal(size=3)
        ang = math.radians(self.perturb_rot_deg) * rng.uniform(0.5, 1.0)
        d = rng.normal(size=3)
        return RigidTransform3(axis_angle_to_quat(axis, ang), self.perturb_trans * d / np.linalg.norm(d))


def reference_pose(frame: ReferenceFrame, T_prev: RigidTransform3, index: int = 0, prev_output=None) -> RigidTransform3:
    """World pose of the frame ``x`` the net output is expressed in:
    ``T_{w,c_{i-1}} ∘ T_{c_{i-1},x}``."""
    k = frame.kind
    if k in ("default_prev_frame", "intrinsic"):
        return T_prev
    if k == "world":
        return RigidTransform3.identity()
    if k == "random_perturbed":
        return compose(T_prev, frame.perturbation(index))
    if prev_output is None:
        return T_prev
    return compose(T_prev, inverse(prev_output))


def tracked_pose(net, t_i: float, T_prev: RigidTransform3, frame: ReferenceFrame, index: int = 0, prev_output=None):
    """``T_{w,c_i} = T_{w,c_{i-1}} ∘ T_{c_{i-1},x} ∘ P(f(t_i))``.

    ``net`` is a PoseNet, or an IntrinsicPair for the intrinsic frame.
    """
    ref = reference_pose(frame, T_prev, index, prev_output)
    if isinstance(net, IntrinsicPair):
        T, _, _ = intrinsic_pose(net, t_i)
        return compose(ref, T)
    return compose(ref, net.pose_at(t_i))


# ----------------------------------------------------------- intrinsic motion


@dataclass
class IntrinsicPair:
    """``T = T_o ∘ T_I``; ``f_o`` is only stepped on keyframes."""

    f_o: PoseNet
    f_I: PoseNet
    keyframe_every: int = 10

    def is_keyframe(self, index: int) -> bool:
        return index % self.keyframe_every == 0


def intrinsic_tensors(pair: IntrinsicPair, t):
    qo, vo = pair.f_o.pose_tensors(t)
    qi, vi = pair.f_I.pose_tensors(t)
    q, v = tgeom.se3_compose(qo, vo, qi, vi)
    return (q, v), (qi, vi), (qo, vo)


def intrinsic_pose(pair: IntrinsicPair, t: float):
    """``(T, T_I, T_o)`` at time ``t`` with ``T = T_o ∘ T_I``."""
    T_o = pair.f_o.pose_at(t)
    T_I = pair.f_I.pose_at(t)
    return compose(T_o, T_I), T_I, T_o


__all__ = [
    "IntrinsicPair",
    "P",
    "PoseNet",
    "PoseNetConfig",
    "PoseOptimizer",
    "TimeMap",
    "ReferenceFrame",
    "RigidTransform2",
    "intrinsic_pose",
    "intrinsic_tensors",
    "reference_pose",
    "refined_pose",
    "tracked_pose",
]
