"""Ground-truth trajectories, time-correlated pose noise and spline baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from contpose import geometry as g
from contpose.geometry import RigidTransform2, RigidTransform3, UnitQuaternion


class SingularFit(np.linalg.LinAlgError):
    pass


# ------------------------------------------------------- natural cubic spline


class NaturalCubicSpline:
    """Interpolating cubic with zero second derivative at both ends.

    ``values`` is ``(N,)`` or ``(N, D)``; the second derivatives at the knots
    come from one tridiagonal solve (Thomas algorithm) per call to ``__init__``.
    """

    def __init__(self, x: Sequence[float], y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise ValueError("need at least two knots")
        if np.any(np.diff(x) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.scalar = y.ndim == 1
        y = y.reshape(len(x), -1)
        self.x, self.y = x, y
        n = len(x)
        m = np.zeros_like(y)
        if n > 2:
            h = np.diff(x)
            a = h[:-1].copy()  # sub-diagonal
            b = 2.0 * (h[:-1] + h[1:])
            c = h[1:].copy()  # super-diagonal
            d = 6.0 * ((y[2:] - y[1:-1]) / h[1:, None] - (y[1:-1] - y[:-2]) / h[:-1, None])
            # forward sweep
            for i in range(1, n - 2):
                w = a[i] / b[i - 1]
                b[i] -= w * c[i - 1]
                d[i] -= w * d[i - 1]
            inner = np.zeros_like(d)
            inner[-1] = d[-1] / b[-1]
            for i in range(n - 4, -1, -1):
                inner[i] = (d[i] - c[i] * inner[i + 1]) / b[i]
            m[1:-1] = inner
        self.m = m

    def __call__(self, t, nu: int = 0):
        t = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t)
        x, y, m = self.x, self.y, self.m
        i = np.clip(np.searchsorted(x, tt, side="right") - 1, 0, len(x) - 2)
        h = (x[i + 1] - x[i])[:, None]
        a = ((x[i + 1] - tt)[:, None]) / h
        b = ((tt - x[i])[:, None]) / h
        yi, yj, mi, mj = y[i], y[i + 1], m[i], m[i + 1]
        if nu == 0:
            out = a * yi + b * yj + ((a**3 - a) * mi + (b**3 - b) * mj) * h * h / 6.0
        elif nu == 1:
            out = (yj - yi) / h + ((1 - 3 * a * a) * mi + (3 * b * b - 1) * mj) * h / 6.0
        elif nu == 2:
            out = a * mi + b * mj
        else:
            raise ValueError("only derivatives up to order 2")
        if self.scalar:
            out = out[:, 0]
        return out[0] if t.ndim == 0 else out


# ----------------------------------------------------- continuous trajectory


class ContinuousTrajectory:
    """Spline-backed pose curve sampleable anywhere on ``[t_min, t_max]``.

    Translation: natural cubic spline per dimension. Rotation: for SE(3) a
    slerp chain between control quaternions (``rotation="slerp"``) or a
    natural cubic spline on rotation vectors (``rotation="rotvec_spline"``,
    smooth angular velocity, requires rotations well inside pi); for SE(2) a
    cubic spline on the unwrapped angle.
    """

    def __init__(self, times, poses, rotation: str = "slerp"):
        times = np.asarray(times, dtype=float)
        if len(times) != len(poses) or len(times) < 2:
            raise ValueError("need matching times and at least two poses")
        self.times = times
        self.poses = list(poses)
        self.space = "SE2" if isinstance(poses[0], RigidTransform2) else "SE3"
        self.rotation = rotation
        self._trans = NaturalCubicSpline(times, np.stack([p.t for p in poses]))
        if self.space == "SE2":
            self._angle = NaturalCubicSpline(times, np.unwrap([p.angle for p in poses]))
        else:
            q = np.stack([p.rotation.as_array() for p in poses])
            # sign-continuous chain so neighbouring slerps take the short arc
            for i in range(1, len(q)):
                if np.dot(q[i], q[i - 1]) < 0:
                    q[i] = -q[i]
            self._quats = q
            if rotation == "rotvec_spline":
                self._rv = NaturalCubicSpline(times, g.quat_to_rotvec_arr(q))
            elif rotation != "slerp":
                raise ValueError(f"unknown rotation interpolation {rotation!r}")

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def _check(self, t: np.ndarray):
        span = self.t_max - self.t_min
        if np.any(t < self.t_min - 1e-9 * span) or np.any(t > self.t_max + 1e-9 * span):
            raise ValueError(f"time outside [{self.t_min}, {self.t_max}]")

    def positions(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check(ts)
        return self._trans(ts)

    def quats(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check(ts)
        if self.rotation == "rotvec_spline":
            return g.rotvec_to_quat_arr(self._rv(ts))
        i = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, len(self.times) - 2)
        u = (ts - self.times[i]) / (self.times[i + 1] - self.times[i])
        return g.slerp_arr(self._quats[i], self._quats[i + 1], np.clip(u, 0.0, 1.0))

    def angles(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check(ts)
        return self._angle(ts)

    def pose(self, t: float):
        return self.poses_at([t])[0]

    def poses_at(self, ts) -> list:
        p = self.positions(ts)
        if self.space == "SE2":
            return [RigidTransform2(a, x) for a, x in zip(self.angles(ts), p)]
        return [RigidTransform3(UnitQuaternion.from_array(q), x) for q, x in zip(self.quats(ts), p)]


class OrbitTrajectory(ContinuousTrajectory):
    """Circular look-at orbit evaluated in closed form.

    Control poses are the frame samples (so a spline-backed view exists), but
    evaluation uses the analytic curve: the IMU simulator differentiates it,
    and natural end conditions would bend a spline fit of a circle at the ends.
    """

    def __init__(self, radius, angular_speed, z_amplitude, z_period, times, height=0.0):
        self.radius = float(radius)
        self.angular_speed = float(angular_speed)
        self.z_amplitude = float(z_amplitude)
        self.z_period = float(z_period)
        self.height = float(height)
        times = np.asarray(times, dtype=float)
        poses = [RigidTransform3(UnitQuaternion.from_array(q), p) for q, p in zip(self._q(times), self._p(times))]
        super().__init__(times, poses)

    def _z(self, t):
        if self.z_amplitude == 0.0:
            return np.zeros_like(t)
        # triangle wave: constant vertical speed, turning at +-amplitude
        ph = (t / self.z_period) % 1.0
        return self.z_amplitude * (1.0 - 4.0 * np.abs(ph - 0.5))

    def _p(self, t):
        a = self.angular_speed * t
        return np.stack([self.radius * np.cos(a), self.radius * np.sin(a), self.height + self._z(t)], -1)

    def _q(self, t):
        return np.stack([g.matrix_to_quat_arr(look_at(p)) for p in self._p(t)])

    def positions(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check(ts)
        return self._p(ts)

    def quats(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check(ts)
        return self._q(ts)


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation with camera +z toward ``target``, +y down."""
    f = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    f /= np.linalg.norm(f)
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.stack([right, down, f], axis=1)


def circular_orbit(
    radius: float,
    angular_speed: float,
    z_amplitude: float,
    n_frames: int,
    hz: float = 20.0,
    z_period: Optional[float] = None,
    height: float = 0.0,
):
    """Look-at orbit in the xy-plane with a triangle-wave height.

    Returns ``(trajectory, frame_times)``; frames at ``k / hz``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    times = np.arange(n_frames) / hz
    if z_period is None:
        z_period = max(times[-1], 1.0 / hz)
    return OrbitTrajectory(radius, angular_speed, z_amplitude, z_period, times, height), times


# --------------------------------------------------------- random trajectories


@dataclass(frozen=True)
class PlanarBounds:
    """Control ranges: angle uniform in +-rot_deg; translation per axis uniform
    in +-trans (same units as the image coordinates, image spans [-1, 1])."""

    rot_deg: float = 10.0
    trans: float = 0.15


def sample_planar_trajectory(
    seed: int,
    n_control: int = 10,
    n_frames: int = 7,
    bounds: PlanarBounds = PlanarBounds(),
    frame_window: float = 1.0,
):
    """Random SE(2) controls at uniform times on [0, 1] joined by natural
    cubic splines; frames at ``n_frames`` uniform times on ``[0, frame_window]``."""
    if bounds.rot_deg < 0 or bounds.trans < 0:
        raise ValueError("bounds must be non-negative")
    rng = np.random.default_rng(seed)
    ctimes = np.linspace(0.0, 1.0, n_control)
    ang = np.radians(rng.uniform(-bounds.rot_deg, bounds.rot_deg, n_control))
    tr = rng.uniform(-bounds.trans, bounds.trans, (n_control, 2))
    traj = ContinuousTrajectory(ctimes, [RigidTransform2(a, t) for a, t in zip(ang, tr)])
    return traj, np.linspace(0.0, frame_window, n_frames)


def sample_handheld_trajectory(
    seed: int,
    duration: float = 12.0,
    n_control: int = 13,
    rot_max_deg: float = 25.0,
    extent: float = 1.0,
    hz: float = 20.0,
    offset=(0.0, 0.0, -3.0),
):
    """Smooth bounded-rotation camera motion ("handheld"), rotation-vector
    spline for continuous angular velocity. Returns ``(traj, frame_times)``."""
    rng = np.random.default_rng(seed)
    ctimes = np.linspace(0.0, duration, n_control)
    poses = []
    for _ in ctimes:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rv = axis * math.radians(rng.uniform(0, rot_max_deg))
        poses.append(RigidTransform3(g.rotvec_to_quat(rv), np.asarray(offset) + rng.uniform(-extent, extent, 3)))
    traj = ContinuousTrajectory(ctimes, poses, rotation="rotvec_spline")
    return traj, np.arange(0.0, duration + 1e-9, 1.0 / hz)


# ------------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseModel:
    """Anchored noise. ``translation_max`` is a fraction of the trajectory
    diameter (largest distance between two frame positions)."""

    rotation_max: float = 0.0  # degrees
    translation_max: float = 0.0  # fraction of diameter
    anchor_count: int = 12

    def __post_init__(self):
        if self.anchor_count < 2:
            raise ValueError("anchor_count must be >= 2")
        if not 0.0 <= self.rotation_max < 180.0:
            raise ValueError("rotation_max must lie in [0, 180)")
        if self.translation_max < 0:
            raise ValueError("translation_max must be >= 0")


def trajectory_diameter(positions: np.ndarray) -> float:
    p = np.asarray(positions, dtype=float)
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    return float(d.max())


def noise_offsets(n_frames: int, model: NoiseModel, seed: int, diameter: float):
    """Per-frame ``(quats (n,4), translations (n,3))`` of the noise.

    Anchors are a random frame subset that always contains the first and last
    frame. Anchor rotations have uniform random axes and angles uniform in
    ``[0, rotation_max]``; frames in between are slerped. Anchor translations
    are uniform in a cube of half-side ``M/sqrt(3)`` (so ``|t| <= M``) and
    interpolated per axis with a monotone cubic (PCHIP), which never leaves the
    anchor range, so the bound holds at every frame.
    """
    rng = np.random.default_rng(seed)
    k = min(model.anchor_count, n_frames)
    inner = rng.choice(np.arange(1, n_frames - 1), size=max(k - 2, 0), replace=False) if n_frames > 2 else []
    anchors = np.sort(np.concatenate([[0, n_frames - 1], inner])).astype(int)
    axes = rng.normal(size=(len(anchors), 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    ang = np.radians(rng.uniform(0.0, model.rotation_max, len(anchors)))
    aq = g.rotvec_to_quat_arr(axes * ang[:, None])
    half = model.translation_max * diameter / math.sqrt(3.0)
    at = rng.uniform(-half, half, (len(anchors), 3))

    idx = np.arange(n_frames)
    seg = np.clip(np.searchsorted(anchors, idx, side="right") - 1, 0, len(anchors) - 2)
    u = (idx - anchors[seg]) / (anchors[seg + 1] - anchors[seg])
    qa, qb = aq[seg], aq[seg + 1]
    q = g.slerp_arr(qa, qb, u)
    t = PchipInterpolator(anchors, at, axis=0)(idx) if len(anchors) > 1 else np.repeat(at, n_frames, 0)
    return q, t


def perturb(traj: ContinuousTrajectory, model: NoiseModel, seed: int, frame_times=None) -> list:
    """Noisy poses ``T_gt ∘ ΔT`` at the frame times (defaults to control times)."""
    ts = traj.times if frame_times is None else np.asarray(frame_times, dtype=float)
    gt = traj.poses_at(ts)
    diam = trajectory_diameter(np.stack([p.t for p in gt]))
    q, t = noise_offsets(len(ts), model, seed, diam)
    return [g.compose(T, RigidTransform3(UnitQuaternion.from_array(qi), ti)) for T, qi, ti in zip(gt, q, t)]


# ----------------------------------------------------------------- B-splines


@dataclass(frozen=True)
class BsplineCurve:
    degree: int
    knots: np.ndarray  # full (clamped) knot vector
    coeffs: np.ndarray  # (n_basis, D)
    smoothing: float = 0.0

    def __call__(self, t):
        return bspline_eval(self, t)


def bspline_basis(knots: np.ndarray, degree: int, t) -> np.ndarray:
    """Cox-de Boor basis matrix ``(len(t), n_basis)``; right end included."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    knots = np.asarray(knots, dtype=float)
    n_basis = len(knots) - degree - 1
    lo, hi = knots[degree], knots[n_basis]
    # degree-0 indicator on half-open spans, with the last non-empty span closed
    b = np.zeros((len(t), len(knots) - 1))
    for j in range(len(knots) - 1):
        if knots[j] < knots[j + 1]:
            b[:, j] = (knots[j] <= t) & (t < knots[j + 1])
    last = max(j for j in range(len(knots) - 1) if knots[j] < knots[j + 1] and knots[j + 1] <= hi)
    b[t >= hi, :] = 0.0
    b[t >= hi, last] = 1.0
    b[(t < lo) | (t > hi)] = 0.0
    for p in range(1, degree + 1):
        nb = np.zeros((len(t), len(knots) - 1 - p))
        for j in range(len(knots) - 1 - p):
            d1 = knots[j + p] - knots[j]
            d2 = knots[j + p + 1] - knots[j + 1]
            if d1 > 0:
                nb[:, j] += (t - knots[j]) / d1 * b[:, j]
            if d2 > 0:
                nb[:, j] += (knots[j + p + 1] - t) / d2 * b[:, j + 1]
        b = nb
    return b


def clamped_uniform_knots(t0: float, t1: float, n_knots: int, degree: int = 3) -> np.ndarray:
    """``n_knots`` uniform knots on [t0, t1] (endpoints included), ends repeated."""
    if n_knots < 2:
        raise ValueError("need at least the two end knots")
    u = np.linspace(t0, t1, n_knots)
    return np.concatenate([[t0] * degree, u, [t1] * degree])


def second_difference(n: int) -> np.ndarray:
    d = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        d[i, i : i + 3] = [1.0, -2.0, 1.0]
    return d


def bspline_fit(times, values, knots=5, degree: int = 3, smoothing: float = 0.0) -> BsplineCurve:
    """Penalized least squares ``min |B c - y|² + s |D2 c|²``.

    ``knots`` is either the number of uniform knots over the data range
    (endpoints included) or an explicit full knot vector. ``s = 0`` is plain
    least squares, which interpolates whenever the basis can.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float).reshape(len(t), -1)
    if len(t) < degree + 1:
        raise ValueError(f"need at least {degree + 1} samples, got {len(t)}")
    if np.isscalar(knots):
        kv = clamped_uniform_knots(float(t.min()), float(t.max()), int(knots), degree)
    else:
        kv = np.asarray(knots, dtype=float)
        if np.any(np.diff(kv) < 0):
            raise ValueError("knot vector must be non-decreasing")
    interior = kv[degree + 1 : len(kv) - degree - 1]
    if len(interior) and (interior.min() <= t.min() or interior.max() >= t.max()):
        raise ValueError("interior knots must lie strictly inside the data range")
    B = bspline_basis(kv, degree, t)
    n = B.shape[1]
    A = B
    rhs = y
    if smoothing > 0:
        D = math.sqrt(smoothing) * second_difference(n)
        A = np.vstack([B, D])
        rhs = np.vstack([y, np.zeros((D.shape[0], y.shape[1]))])
    if np.linalg.matrix_rank(A) < n:
        raise SingularFit(f"rank-deficient spline system ({n} coefficients)")
    coeffs, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return BsplineCurve(degree, kv, coeffs, smoothing)


def bspline_eval(curve: BsplineCurve, t):
    tt = np.asarray(t, dtype=float)
    out = bspline_basis(curve.knots, curve.degree, tt) @ curve.coeffs
    if curve.coeffs.shape[1] == 1:
        out = out[:, 0]
    return out[0] if tt.ndim == 0 else out


# ------------------------------------------------------------------ resample


def resample(traj: ContinuousTrajectory, from_hz: float, to_hz: float, t0: Optional[float] = None, t1: Optional[float] = None):
    """Poses on a ``to_hz`` grid.

    Upsampling evaluates the continuous curve; downsampling keeps every
    ``from_hz / to_hz``-th sample of the ``from_hz`` grid (integer ratios only).
    Returns ``(times, poses)``.
    """
    if to_hz <= 0 or from_hz <= 0:
        raise ValueError("rates must be positive")
    t0 = traj.t_min if t0 is None else t0
    t1 = traj.t_max if t1 is None else t1
    n_src = int(math.floor((t1 - t0) * from_hz + 1e-9)) + 1
    src = t0 + np.arange(n_src) / from_hz
    if to_hz <= from_hz:
        ratio = from_hz / to_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("decimation needs an integer rate ratio")
        times = src[:: int(round(ratio))]
    else:
        n = int(math.floor((t1 - t0) * to_hz + 1e-9)) + 1
        times = t0 + np.arange(n) / to_hz
    times = np.clip(times, traj.t_min, traj.t_max)
    return times, traj.poses_at(times)


# -------------------------------------------------------------------- TUM I/O


def write_tum(path, times, poses) -> None:
    """One line per pose: ``t tx ty tz qx qy qz qw``."""
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, T in zip(times, poses):
            q = T.rotation
            x, y, z = T.translation
            fh.write(f"{t:.9f} {x:.9f} {y:.9f} {z:.9f} {q.x:.9f} {q.y:.9f} {q.z:.9f} {q.w:.9f}\n")


def read_tum(path):
    times, poses = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        v = [float(c) for c in line.split()]
        if len(v) != 8:
            raise ValueError(f"bad TUM line: {line!r}")
        times.append(v[0])
        poses.append(RigidTransform3(UnitQuaternion(v[7], v[4], v[5], v[6]), v[1:4]))
    return np.array(times), poses
