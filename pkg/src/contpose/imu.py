"""IMU simulation from continuous trajectories and the three coupling losses.

Body-frame quantities: ``omega`` is the angular velocity of the body expressed
in the body frame (``q̇ = ½ q ⊗ [0, ω]``), ``accel`` the specific force in the
body frame. By default the simulator is gravity-free, so ``accel`` is the
kinematic acceleration ``Rᵀ p̈``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from contpose import geometry as g
from contpose import tgeom
from contpose.geometry import RigidTransform3, UnitQuaternion, compose, inverse
from contpose.posenet import PoseNet, TimeMap

GRAVITY = np.array([0.0, 0.0, -9.81])


class InsufficientCoverage(ValueError):
    pass


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega: tuple
    accel: tuple


@dataclass(frozen=True)
class ImuStream:
    """Column storage for a sample stream; iterating yields ``ImuSample``."""

    t: np.ndarray
    omega: np.ndarray
    accel: np.ndarray
    gravity: Optional[tuple] = None  # world gravity folded into accel, if any

    def __post_init__(self):
        if len(self.t) != len(self.omega) or len(self.t) != len(self.accel):
            raise ValueError("stream columns differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.accel))):
            raise ValueError("non-finite IMU reading")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.t[i]), tuple(self.omega[i]), tuple(self.accel[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def window(self, t_from: float, t_to: float, closed_left: bool = False) -> np.ndarray:
        """Indices of samples with ``t_from < t <= t_to`` (or ``<=`` on the left)."""
        lo = self.t >= t_from if closed_left else self.t > t_from
        return np.nonzero(lo & (self.t <= t_to))[0]


@dataclass(frozen=True)
class BodyCameraExtrinsic:
    """Fixed camera-in-body transform ``T_bc``."""

    T_bc: RigidTransform3 = RigidTransform3()

    def camera_pose(self, T_wb: RigidTransform3) -> RigidTransform3:
        return compose(T_wb, self.T_bc)

    def body_pose(self, T_wc: RigidTransform3) -> RigidTransform3:
        return compose(T_wc, inverse(self.T_bc))


# -------------------------------------------------------------- simulation


def simulate_imu(
    traj,
    hz: float = 200.0,
    noise_std=0.0,
    seed: int = 0,
    gravity: Optional[Sequence[float]] = None,
    t0: Optional[float] = None,
    t1: Optional[float] = None,
) -> ImuStream:
    """Sample ``traj`` at ``hz`` and differentiate numerically.

    ``omega_k = log(q(t_k - h)⁻¹ q(t_k + h)) / 2h`` (body frame) and
    ``accel_k = R(t_k)ᵀ (p(t_k + h) - 2 p(t_k) + p(t_k - h)) / h² - Rᵀ g`` with
    ``h = 1/hz``; at the ends the difference is taken one-sided inside the
    time range. ``noise_std`` is a scalar or ``(gyro_std, accel_std)``.
    """
    if hz <= 0:
        raise ValueError("hz must be positive")
    t0 = traj.t_min if t0 is None else t0
    t1 = traj.t_max if t1 is None else t1
    h = 1.0 / hz
    n = int(math.floor((t1 - t0) * hz + 1e-9)) + 1
    t = t0 + np.arange(n) * h
    lo = np.clip(t - h, traj.t_min, traj.t_max)
    hi = np.clip(t + h, traj.t_min, traj.t_max)
    span = hi - lo
    q_lo, q_hi, q_mid = traj.quats(lo), traj.quats(hi), traj.quats(t)
    rel = g.quat_mul_arr(g.quat_conj_arr(q_lo), q_hi)
    omega = g.quat_to_rotvec_arr(rel) / span[:, None]

    # second difference on a symmetric stencil; ends reuse the nearest interior value
    c = np.clip(t, traj.t_min + h, traj.t_max - h)
    p_m, p_0, p_p = traj.positions(c - h), traj.positions(c), traj.positions(c + h)
    a_w = (p_p - 2 * p_0 + p_m) / (h * h)
    if gravity is not None:
        a_w = a_w - np.asarray(gravity, dtype=float)
    R = g.quat_to_matrix_arr(q_mid)
    accel = np.einsum("nji,nj->ni", R, a_w)

    gs, as_ = (noise_std, noise_std) if np.isscalar(noise_std) else noise_std
    if gs > 0 or as_ > 0:
        rng = np.random.default_rng(seed)
        omega = omega + gs * rng.normal(size=omega.shape)
        accel = accel + as_ * rng.normal(size=accel.shape)
    return ImuStream(t, omega, accel, None if gravity is None else tuple(gravity))


# ---------------------------------------------------------------- kinematics


def delta_quat(omega, dt: float) -> UnitQuaternion:
    """Rotation by ``dt |ω|`` about ``ω/|ω|``; identity when ``|ω| < 1e-12``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega = np.asarray(omega, dtype=float)
    n = float(np.linalg.norm(omega))
    if n < 1e-12:
        return UnitQuaternion.identity()
    return g.axis_angle_to_quat(omega / n, dt * n)


def delta_quat_arr(omega: np.ndarray, dt) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    dt = np.asarray(dt, dtype=float)
    return g.rotvec_to_quat_arr(omega * (dt[..., None] if dt.ndim else dt))


def _omega_at(stream: ImuStream, t: float) -> np.ndarray:
    return np.array([np.interp(t, stream.t, stream.omega[:, j]) for j in range(3)])


def integrate_gyro(stream: ImuStream, q0: UnitQuaternion, t_from: float, t_to: float) -> UnitQuaternion:
    """``q0 ⊗ Δq_1 ⊗ Δq_2 ⊗ ...`` over ``[t_from, t_to]``, normalized each step.

    Each sub-interval between consecutive sample times (clipped to the query
    range) uses the mean of the rates at its two ends, with rates linearly
    interpolated at the clip points; constant-rate streams integrate exactly.
    """
    if t_to < t_from:
        raise ValueError("t_to precedes t_from")
    if t_to == t_from:
        return q0
    eps = 1e-9 * max(1.0, abs(t_to))
    if t_from < stream.t[0] - eps or t_to > stream.t[-1] + eps:
        raise InsufficientCoverage(
            f"stream covers [{stream.t[0]}, {stream.t[-1]}], asked for [{t_from}, {t_to}]"
        )
    inside = stream.t[(stream.t > t_from) & (stream.t < t_to)]
    knots = np.concatenate([[t_from], inside, [t_to]])
    w = np.stack([_omega_at(stream, k) for k in knots])
    dts = np.diff(knots)
    deltas = delta_quat_arr(0.5 * (w[1:] + w[:-1]), dts)
    q = q0.as_array()
    for d in deltas:
        q = g.quat_mul_arr(q, d)
        q = q / np.linalg.norm(q)
    return UnitQuaternion.from_array(q)


# ------------------------------------------------------------------- losses


def _tensor(x, dtype):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=dtype)


def loss_loose(
    net: PoseNet,
    stream: ImuStream,
    frame_pairs: Sequence[tuple],
    time_map: TimeMap = TimeMap(),
    q_prev: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """``Σ |q(t_i) - q(t_{i-1}) ⊗ q_Δ|₁`` with gyro-integrated ``q_Δ``.

    The net quaternion is sign-aligned to the target per pair. ``q_prev``
    optionally replaces ``q(t_{i-1})`` (e.g. a stored, frozen value).
    """
    if not frame_pairs:
        return torch.zeros((), dtype=net.dtype)
    t_prev = np.array([a for a, _ in frame_pairs])
    t_cur = np.array([b for _, b in frame_pairs])
    dq = np.stack(
        [integrate_gyro(stream, UnitQuaternion.identity(), a, b).as_array() for a, b in frame_pairs]
    )
    if q_prev is None:
        q_prev, _ = net.pose_tensors(time_map(t_prev))
    target = tgeom.qmul(q_prev, _tensor(dq, net.dtype))
    q_cur, _ = net.pose_tensors(time_map(t_cur))
    return (tgeom.sign_align(q_cur, target) - target).abs().sum()


def loss_tight(
    net: PoseNet, stream: ImuStream, indices=None, time_map: TimeMap = TimeMap()
) -> torch.Tensor:
    """``Σ |q̇(t) - ½ q(t) ⊗ [0, ω̂(t)]|₁`` over the selected samples.

    ``q̇`` is the forward-mode time derivative of the normalized quaternion,
    converted from normalized to physical time.
    """
    idx = np.arange(len(stream)) if indices is None else np.asarray(indices, dtype=int)
    if len(idx) == 0:
        return torch.zeros((), dtype=net.dtype)
    jets = net.pose_jets(time_map(stream.t[idx]))
    q, dq = jets["q"], jets["dq"] / time_map.span
    w = _tensor(stream.omega[idx], net.dtype)
    pure = torch.cat([torch.zeros_like(w[:, :1]), w], 1)
    return (dq - 0.5 * tgeom.qmul(q, pure)).abs().sum()


def loss_acc(
    net: PoseNet,
    stream: ImuStream,
    indices=None,
    time_map: TimeMap = TimeMap(),
    detach_rotation: bool = True,
) -> torch.Tensor:
    """``Σ |f̈(t) - R(t) â_t|₁``: second derivative of the translation head
    against the accelerometer reading rotated into the net's frame by the net's
    own rotation at ``t``. Stream gravity, if any, is added back."""
    idx = np.arange(len(stream)) if indices is None else np.asarray(indices, dtype=int)
    if len(idx) == 0:
        return torch.zeros((), dtype=net.dtype)
    jets = net.pose_jets(time_map(stream.t[idx]))
    acc = jets["ddv"] / time_map.span**2
    q = jets["q"].detach() if detach_rotation else jets["q"]
    a = tgeom.qrot(q, _tensor(stream.accel[idx], net.dtype))
    if stream.gravity is not None:
        a = a + _tensor(stream.gravity, net.dtype)
    return (acc - a).abs().sum()


def imu_loss(
    net: PoseNet,
    stream: ImuStream,
    indices=None,
    frame_pairs: Sequence[tuple] = (),
    time_map: TimeMap = TimeMap(),
    coupling: str = "tight",
    lambda_gyro: float = 1.0,
    lambda_acc: float = 1.0,
) -> torch.Tensor:
    """``λ_gyro`` times the loose or tight rotation term, plus ``λ_acc`` times the acceleration term."""
    if coupling == "tight":
        rot = loss_tight(net, stream, indices, time_map)
    elif coupling == "loose":
        rot = loss_loose(net, stream, frame_pairs, time_map)
    elif coupling == "none":
        rot = torch.zeros((), dtype=net.dtype)
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    return lambda_gyro * rot + lambda_acc * loss_acc(net, stream, indices, time_map)


# ---------------------------------------------------------------------- CSV

CSV_HEADER = ["t", "wx", "wy", "wz", "ax", "ay", "az"]


def write_imu_csv(path, stream: ImuStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t, om, ac in zip(stream.t, stream.omega, stream.accel):
            w.writerow([f"{t:.9f}"] + [f"{x:.12g}" for x in (*om, *ac)])


def read_imu_csv(path) -> ImuStream:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        if head != CSV_HEADER:
            raise ValueError(f"unexpected IMU header {head}")
        rows = np.array([[float(x) for x in row] for row in r])
    return ImuStream(rows[:, 0], rows[:, 1:4], rows[:, 4:7])
