"""Incremental tracking against simulated landmark observations.

Each frame observes known landmarks in its camera frame. A PoseNet is
optimized frame by frame so that the pose built from the chosen reference
frame and the net output registers the observation. The stored per-frame
outputs are replayed every keyframe to keep early timestamps from drifting.
Options: reference-frame kind, intrinsic decomposition ``T = T_o ∘ T_I`` with
the DOF loss, and gyro/accelerometer coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch

from contpose import geometry as g
from contpose import imu as imu_mod
from contpose import metrics
from contpose import motionloss as ml
from contpose import tgeom
from contpose.geometry import RigidTransform3
from contpose.diffnet import AdamState, LrSchedule, adam_step, loss_gradients
from contpose.posenet import (
    IntrinsicPair,
    PoseNet,
    PoseNetConfig,
    PoseOptimizer,
    ReferenceFrame,
    TimeMap,
    reference_pose,
)
from contpose.traj import ContinuousTrajectory, sample_handheld_trajectory


class TrackingLost(RuntimeError):
    """Raised when the residual stays above threshold; carries the partial result."""

    def __init__(self, msg, frame: int, poses=None, report=None):
        super().__init__(msg)
        self.frame = frame
        self.poses = poses
        self.report = report


# ------------------------------------------------------------ observations


@dataclass(frozen=True)
class LandmarkCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if len(p) < 6:
            raise ValueError("need at least 6 landmarks")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite landmark")
        sv = np.linalg.svd(p - p.mean(0), compute_uv=False)
        # registration with known correspondences needs a non-collinear set
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise ValueError("landmarks are collinear")
        object.__setattr__(self, "points", p)
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=float)
            if c.shape != p.shape:
                raise ValueError("colors must be (N, 3)")
            object.__setattr__(self, "colors", c)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def random(cls, seed: int = 0, n: int = 100, extent: float = 1.0, center=(0.0, 0.0, 0.0)) -> "LandmarkCloud":
        rng = np.random.default_rng(seed)
        pts = np.asarray(center) + rng.uniform(-extent, extent, (n, 3))
        return cls(pts, rng.uniform(0.1, 1.0, (n, 3)))


@dataclass(frozen=True)
class FrameObservation:
    t: float
    points: np.ndarray  # (M, 3) in the camera frame
    indices: np.ndarray  # landmark index per row

    def __post_init__(self):
        if len(self.points) != len(self.indices):
            raise ValueError("one index per observed point")


def simulate_observations(
    traj, cloud: LandmarkCloud, times: Sequence[float], sigma: float = 0.0, seed: int = 0
) -> list:
    """``p_cam = T_wc⁻¹ p_world + N(0, σ²)`` for every landmark at every frame time."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    idx = np.arange(len(cloud))
    out = []
    for t, T in zip(times, traj.poses_at(np.asarray(times, dtype=float))):
        p = g.apply(g.inverse(T), cloud.points)
        if sigma > 0:
            p = p + sigma * rng.normal(size=p.shape)
        out.append(FrameObservation(float(t), p, idx))
    return out


def registration_loss(pose: RigidTransform3, obs: FrameObservation, cloud: LandmarkCloud) -> float:
    """Mean squared distance between ``pose⁻¹ p_world`` and the observed points."""
    pred = g.apply(g.inverse(pose), cloud.points[obs.indices])
    return float(np.mean(np.sum((pred - obs.points) ** 2, axis=1)))


def registration_loss_tensors(q: torch.Tensor, t: torch.Tensor, obs_pts: torch.Tensor, world_pts: torch.Tensor):
    """Differentiable version for a single pose ``(q (4,), t (3,))``."""
    pred = tgeom.se3_apply_inverse(q, t, world_pts)
    return ((pred - obs_pts) ** 2).sum(-1).mean()


def noise_floor(sigma: float, minimum: float = 1e-4) -> float:
    """Expected registration residual at the true pose, ``3σ²``, floored at ``minimum``."""
    return 3.0 * sigma * sigma + minimum


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class TrackConfig:
    reference: str = "default_prev_frame"
    intrinsic: bool = False
    imu: bool = False
    coupling: str = "tight"
    lambda_gyro: float = 0.3
    lambda_acc: float = 0.0  # a ReLU net has no curvature for the accelerometer to act on
    lambda_anchor: float = 100.0  # pins the curve at the previous frame during IMU coupling
    imu_warmup_iters: int = 0  # part of the per-frame budget spent on IMU-only steps
    keyframe_every: int = 10
    iters_per_frame: int = 50
    keyframe_iters: Optional[int] = None  # f_o budget on keyframes; defaults to iters_per_frame
    replay: bool = True
    replay_steps: int = 20
    final_replay_steps: int = 200
    lambda_dof_frame: float = 1e-4  # per-frame DOF weight once f_o is fitted; ~0.25 of the noise floor
    decomp_steps: int = 200  # keyframe re-split of the stored motions into (f_o, f_I)
    dof: ml.DofConfig = field(default_factory=ml.DofConfig)
    lost_factor: float = 10.0
    lost_patience: int = 5
    floor_min: float = 1e-4
    sigma_obs: float = 0.01
    perturb_rot_deg: float = 90.0
    posenet: PoseNetConfig = field(
        default_factory=lambda: PoseNetConfig(
            layers=4, width=64, lr_trans=2e-3, lr_rot=2e-3, lr_trans_final=None, lr_rot_final=None
        )
    )
    seed: int = 0

    def __post_init__(self):
        ReferenceFrame(self.reference)  # validates the kind
        if self.intrinsic and self.reference not in ("default_prev_frame", "intrinsic"):
            raise ValueError("intrinsic decomposition is relative to the previous frame")
        if self.imu and self.reference != "imu":
            raise ValueError("IMU coupling needs the continuous 'imu' reference frame")
        if self.coupling not in ("tight", "loose"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.iters_per_frame < 1 or self.keyframe_every < 1:
            raise ValueError("iters_per_frame and keyframe_every must be >= 1")


@dataclass
class TrackReport:
    ate: float
    frame_errors: np.ndarray  # position error per frame, when first estimated
    rot_errors: np.ndarray  # degrees
    residuals: np.ndarray
    requery_errors: Optional[np.ndarray] = None  # position error of re-queried poses
    dof_naive: Optional[float] = None
    dof_intrinsic: Optional[float] = None
    dof_naive_l0: Optional[float] = None
    dof_intrinsic_l0: Optional[float] = None
    lost_frame: Optional[int] = None
    intrinsic_motions: Optional[list] = None  # learned T_I per frame pair, intrinsic runs only

    @property
    def lost(self) -> bool:
        return self.lost_frame is not None


# --------------------------------------------------------------- helpers


def _pose_t(T: RigidTransform3, dtype):
    return tgeom.pose_to_tensors(T, dtype)


def _compose_t(a, b):
    return tgeom.se3_compose(a[0], a[1], b[0], b[1])


class _Model:
    """Net output ``(q, v)`` at normalized times, for a PoseNet or an intrinsic pair."""

    def __init__(self, config: TrackConfig):
        c = config
        if c.intrinsic:
            self.pair = IntrinsicPair(
                PoseNet(c.posenet, seed=2 * c.seed + 101), PoseNet(c.posenet, seed=2 * c.seed), c.keyframe_every
            )
            self.opt_I = PoseOptimizer(self.pair.f_I, 1, decay=False)
            self.opt_o = PoseOptimizer(self.pair.f_o, 1, decay=False)
            self.net = None
        else:
            self.net = PoseNet(c.posenet, seed=c.seed)
            self.opt = PoseOptimizer(self.net, 1, decay=False)
            self.pair = None
        self.decomposed = False  # f_o has been fitted at least once
        self.dtype = c.posenet.torch_dtype

    def output(self, tau, tau_o=None):
        """``tau_o``: where ``f_o`` is read (the latest keyframe); defaults to ``tau``."""
        if self.pair is not None:
            qo, vo = self.pair.f_o.pose_tensors(tau if tau_o is None else tau_o)
            qi, vi = self.pair.f_I.pose_tensors(tau)
            return tgeom.se3_compose(qo, vo, qi, vi)
        return self.net.pose_tensors(tau)

    def parts(self, tau, tau_o=None):
        return self.pair.f_I.pose_tensors(tau), self.pair.f_o.pose_tensors(tau if tau_o is None else tau_o)

    def step(self, loss_fn, update_o: bool) -> float:
        if self.pair is None:
            return self.opt.step(loss_fn)
        tI, to = self.opt_I.tensors, self.opt_o.tensors
        if update_o:
            loss, grads = loss_gradients(tI + to, loss_fn)
            self.opt_I.apply(grads[: len(tI)])
            self.opt_o.apply(grads[len(tI) :])
        else:
            loss, grads = loss_gradients(tI, loss_fn)
            self.opt_I.apply(grads)
        return loss


def _relative_error(T: RigidTransform3, G: RigidTransform3) -> tuple[float, float]:
    ang, dist = g.transform_distance(T, G)
    return math.degrees(ang), dist


# ---------------------------------------------------------------- tracking


def track(
    traj,
    cloud: LandmarkCloud,
    frame_times: Sequence[float],
    config: TrackConfig = TrackConfig(),
    observations: Optional[list] = None,
    imu_stream: Optional[imu_mod.ImuStream] = None,
    raise_on_lost: bool = True,
):
    """Track ``traj`` frame by frame; returns ``(estimated poses, TrackReport)``.

    The first pose is taken from the ground truth (the usual tracking gauge).
    Observations are simulated with ``config.sigma_obs`` unless given. With
    ``config.imu`` an IMU stream is required.
    """
    c = config
    times = np.asarray(frame_times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("frames must be strictly time-ordered")
    if c.imu and imu_stream is None:
        raise ValueError("IMU coupling requested without a stream")
    obs = observations if observations is not None else simulate_observations(traj, cloud, times, c.sigma_obs, c.seed + 7)
    gt = traj.poses_at(times)
    tm = TimeMap.covering(times)
    tau = tm(times)
    # the intrinsic frame is held between keyframes: f_o is read at the latest one
    tau_key = tau[(np.arange(len(tau)) // c.keyframe_every) * c.keyframe_every]
    model = _Model(c)
    dt = model.dtype
    frame = ReferenceFrame(c.reference, perturb_rot_deg=c.perturb_rot_deg, seed=c.seed + 13)
    world = torch.as_tensor(cloud.points, dtype=dt)
    floor = noise_floor(c.sigma_obs, c.floor_min)
    threshold = c.lost_factor * floor

    est = [gt[0]]
    with torch.no_grad():
        q0, v0 = model.output(tau[:1])
    stored_q, stored_v = [q0[0].detach()], [v0[0].detach()]
    residuals = [registration_loss(gt[0], obs[0], cloud)]
    bad = 0
    lost_frame = None

    for i in range(1, len(times)):
        ref = reference_pose(frame, est[i - 1], i, tgeom.tensors_to_pose(stored_q[-1], stored_v[-1]))
        ref_t = _pose_t(ref, dt)
        obs_t = torch.as_tensor(obs[i].points, dtype=dt)
        wpts = world[obs[i].indices]
        ti, tk = tau[i : i + 1], tau_key[i : i + 1]
        keyframe = c.intrinsic and i % c.keyframe_every == 0
        idx = imu_stream.window(times[i - 1], times[i]) if c.imu else None

        def imu_terms(anchor: bool):
            loss = torch.zeros((), dtype=dt)
            if anchor:
                # pin the curve at the previous frame while the IMU shapes the new interval
                qp, vp = model.output(tau[i - 1 : i])
                qs, vs = stored_q[-1], stored_v[-1]
                loss = c.lambda_anchor * (((tgeom.sign_align(qp[0], qs) - qs) ** 2).sum() + ((vp[0] - vs) ** 2).sum())
            if c.coupling == "tight":
                rot = imu_mod.loss_tight(model.net, imu_stream, idx, tm) / max(len(idx), 1)
            else:
                rot = imu_mod.loss_loose(model.net, imu_stream, [(times[i - 1], times[i])], tm, q_prev=stored_q[-1][None])
            acc = imu_mod.loss_acc(model.net, imu_stream, idx, tm) / max(len(idx), 1)
            return loss + c.lambda_gyro * rot + c.lambda_acc * acc

        def loss_fn():
            q, v = model.output(ti, tk)
            qw, vw = _compose_t(ref_t, (q[0], v[0]))
            loss = registration_loss_tensors(qw, vw, obs_t, wpts)
            if c.intrinsic and model.decomposed:
                (qi, vi), (_, vo) = model.parts(ti, tk)
                loss = loss + c.lambda_dof_frame * ml.dof_loss_tensors(qi, vi, c.dof)
                loss = loss + c.lambda_dof_frame * c.dof.lambda_o * ml.l1_translation_reg_tensors(vo)
            if c.imu:
                loss = loss + imu_terms(anchor=c.lambda_anchor > 0)
            return loss

        n_it = c.keyframe_iters if (keyframe and c.keyframe_iters) else c.iters_per_frame
        n_warm = min(c.imu_warmup_iters, n_it - 1) if c.imu else 0
        # IMU-only propagation: extend the curve into the new interval before registering
        for _ in range(n_warm):
            model.step(lambda: imu_terms(anchor=True), update_o=False)
        for _ in range(n_it - n_warm):
            model.step(loss_fn, update_o=keyframe)

        with torch.no_grad():
            q, v = model.output(ti, tk)
        S = tgeom.tensors_to_pose(q[0], v[0])
        T_i = g.compose(ref, S)
        est.append(T_i)
        stored_q.append(q[0].detach().clone())
        stored_v.append(v[0].detach().clone())
        r = registration_loss(T_i, obs[i], cloud)
        residuals.append(r)
        bad = bad + 1 if (not math.isfinite(r) or r > threshold) else 0
        if bad >= c.lost_patience:
            lost_frame = i
            break

        if c.replay and i % c.keyframe_every == 0:
            _replay(model, tau[: i + 1], tau_key[: i + 1], stored_q, stored_v, c.replay_steps)
        if keyframe and c.decomp_steps:
            _refit_decomposition(model, tau[: i + 1], tau_key[: i + 1], stored_q, stored_v, c, c.decomp_steps)

    if c.replay and c.final_replay_steps and lost_frame is None:
        _replay(model, tau[: len(est)], tau_key[: len(est)], stored_q, stored_v, c.final_replay_steps)
        if c.intrinsic and c.decomp_steps:
            _refit_decomposition(model, tau[: len(est)], tau_key[: len(est)], stored_q, stored_v, c, c.decomp_steps)

    report = _report(model, est, gt, times, tau, tau_key, frame, stored_q, stored_v, residuals, c, lost_frame)
    if lost_frame is not None and raise_on_lost:
        raise TrackingLost(f"tracking lost at frame {lost_frame}", lost_frame, est, report)
    return est, report


def _replay(model: _Model, tau, tau_key, stored_q, stored_v, steps: int) -> None:
    """Refit the net to every stored optimal output so far."""
    sq = torch.stack(stored_q)
    sv = torch.stack(stored_v)

    def loss_fn():
        q, v = model.output(tau, tau_key)
        return ((tgeom.sign_align(q, sq) - sq).abs().sum(-1) + (v - sv).abs().sum(-1)).mean()

    for _ in range(steps):
        model.step(loss_fn, update_o=False)


def _refit_decomposition(model: _Model, tau, tau_key, stored_q, stored_v, c: TrackConfig, steps: int) -> None:
    """Re-split the stored frames as ``T_o ∘ T_I`` with the lowest DOF loss.

    First ``f_o`` alone is fitted so that the implied intrinsic motions
    ``T_o^-1 ∘ M_k`` (with the stored outputs ``M_k`` held fixed) have few active
    DOFs; then ``f_I`` is regressed onto those motions, so the composition, and
    with it every tracked pose, is kept.
    """
    sq = torch.stack(stored_q)
    sv = torch.stack(stored_v)
    n = len(tau)
    if n < 2:
        return

    def implied(qo, vo):
        return tgeom.se3_compose(*tgeom.se3_inverse(qo, vo), sq, sv)

    def loss_o():
        qo, vo = model.pair.f_o.pose_tensors(tau_key)
        qi, vi = implied(qo, vo)
        dof = ml.dof_loss_tensors(qi[1:], vi[1:], c.dof) + c.dof.lambda_o * ml.l1_translation_reg_tensors(vo[1:])
        return dof / (n - 1)

    _settle(model.pair.f_o, loss_o, steps)
    with torch.no_grad():
        tq, tv = implied(*model.pair.f_o.pose_tensors(tau_key))

    def loss_I():
        q, v = model.pair.f_I.pose_tensors(tau)
        return ((tgeom.sign_align(q, tq) - tq).abs().sum(-1) + (v - tv).abs().sum(-1)).mean()

    _settle(model.pair.f_I, loss_I, steps)
    model.decomposed = True


def _settle(net: PoseNet, loss_fn, steps: int) -> None:
    """Fresh Adam with the learning rate decaying 100x, so the fit ends still
    instead of jittering at the constant tracking rate."""
    tensors = net.parameters()
    state = AdamState.zeros_like(tensors)
    lr = LrSchedule(net.config.lr_trans, net.config.lr_trans / 100, steps)
    for k in range(steps):
        _, grads = loss_gradients(tensors, loss_fn)
        adam_step(state, tensors, grads, [lr(k)] * len(tensors))


def _report(model, est, gt, times, tau, tau_key, frame, stored_q, stored_v, residuals, c, lost_frame) -> TrackReport:
    n = len(est)
    errs = [_relative_error(est[k], gt[k]) for k in range(n)]
    pe = np.array([d for _, d in errs])
    re = np.array([a for a, _ in errs])
    P_est = np.stack([T.t for T in est])
    P_gt = np.stack([T.t for T in gt[:n]])
    try:
        ate = metrics.ate_rmse(P_est, P_gt, align=True)
    except metrics.DegenerateConfiguration:
        ate = metrics.ate_rmse(P_est, P_gt, align=False)

    # forgetting: rebuild every frame from the final net and compare with the pose
    # estimated when that frame was current
    requery = None
    if frame.kind in ("default_prev_frame", "intrinsic", "imu", "world") and n > 1:
        with torch.no_grad():
            q, v = model.output(tau[:n], tau_key[:n])
        rq = [0.0]
        for k in range(1, n):
            prev_out = tgeom.tensors_to_pose(stored_q[k - 1], stored_v[k - 1])
            ref = reference_pose(frame, est[k - 1], k, prev_out)
            Tk = g.compose(ref, tgeom.tensors_to_pose(q[k], v[k]))
            rq.append(float(np.linalg.norm(Tk.t - gt[k].t)))
        requery = np.array(rq)

    rep = TrackReport(float(ate), pe, re, np.array(residuals), requery, lost_frame=lost_frame)
    if c.intrinsic and n > 1:
        # the learned intrinsic motion, re-queried from the final nets
        with torch.no_grad():
            (qi, vi), _ = model.parts(tau[1:n], tau_key[1:n])
        learned = [tgeom.tensors_to_pose(qi[k], vi[k]) for k in range(n - 1)]
        naive = ml.relative_motions(est)
        l0 = replace(c.dof, relaxation="l0")
        rep.intrinsic_motions = learned
        rep.dof_naive = ml.dof_statistic(naive, c.dof)
        rep.dof_intrinsic = ml.dof_statistic(learned, c.dof)
        rep.dof_naive_l0 = ml.dof_statistic(naive, l0)
        rep.dof_intrinsic_l0 = ml.dof_statistic(learned, l0)
    return rep


# ------------------------------------------------------------ trajectories


def intrinsic_motion_trajectory(
    seed: int = 0,
    n_frames: int = 60,
    hz: float = 20.0,
    tilt_deg: float = 20.0,
    yaw_deg: float = 3.0,
    step: float = 0.05,
    start=(0.0, 0.0, -3.0),
):
    """Camera whose frame-to-frame motion has 2 DOF in a fixed tilted frame.

    ``T_{i-1,i} = T_o ∘ (Rz(θ_i), s_i e_x)`` with a constant rotation-only
    ``T_o`` tilted by ``tilt_deg``; ``θ_i`` and ``s_i`` vary smoothly around
    ``yaw_deg`` and ``step``. Returns ``(traj, frame_times, T_o)``.
    """
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis[2] = 0.0
    R_o = g.axis_angle_to_quat(axis, math.radians(tilt_deg))
    T_o = RigidTransform3(R_o)
    k = np.arange(n_frames)
    ph = rng.uniform(0, 2 * np.pi, 2)
    theta = np.radians(yaw_deg) * (1 + 0.5 * np.sin(2 * np.pi * k / n_frames + ph[0]))
    s = step * (1 + 0.5 * np.sin(2 * np.pi * k / n_frames + ph[1]))
    poses = [RigidTransform3(translation=start)]
    for i in range(1, n_frames):
        T_I = RigidTransform3(g.axis_angle_to_quat([0, 0, 1], theta[i]), (s[i], 0.0, 0.0))
        poses.append(g.compose(poses[-1], g.compose(T_o, T_I)))
    times = k / hz
    return ContinuousTrajectory(times, poses), times, T_o


# -------------------------------------------------------------- scenarios

IMU_ARMS = ("none", "tight", "loose")
REFERENCE_ARMS = ("default_prev_frame", "world", "random_perturbed", "intrinsic")


@dataclass
class TrialResult:
    times: np.ndarray
    estimate: list  # RigidTransform3 per tracked frame (partial when lost)
    ground_truth: list
    report: TrackReport
    imu_stream: Optional[imu_mod.ImuStream] = None


@dataclass(frozen=True)
class ImuScenario:
    """Handheld motion tracked at a quarter of the frame rate, with a simulated IMU."""

    duration: float = 6.0
    hz: float = 20.0
    decimate: int = 4
    imu_hz: float = 200.0
    gyro_noise: float = 0.01
    accel_noise: float = 0.05
    n_landmarks: int = 80
    extent: float = 1.0
    track: TrackConfig = field(
        default_factory=lambda: TrackConfig(reference="imu", iters_per_frame=150, sigma_obs=0.03)
    )

    def __post_init__(self):
        if self.decimate < 1 or self.duration <= 0:
            raise ValueError("decimate >= 1 and duration > 0 required")
        if self.track.reference != "imu":
            raise ValueError("the IMU scenario tracks against the 'imu' reference")


def imu_trial(scenario: ImuScenario, seed: int, arm: str = "tight") -> TrialResult:
    """One seed of the IMU scenario; ``arm`` is ``none``, ``tight`` or ``loose``."""
    if arm not in IMU_ARMS:
        raise ValueError(f"unknown IMU arm {arm!r}")
    s = scenario
    tr, times = sample_handheld_trajectory(seed, duration=s.duration, n_control=int(s.duration) + 1, hz=s.hz)
    times = times[:: s.decimate]
    stream = imu_mod.simulate_imu(tr, s.imu_hz, noise_std=(s.gyro_noise, s.accel_noise), seed=seed)
    cloud = LandmarkCloud.random(seed, s.n_landmarks, s.extent)
    use = arm != "none"
    cfg = replace(s.track, imu=use, coupling=arm if use else s.track.coupling, seed=seed)
    est, rep = track(tr, cloud, times, cfg, imu_stream=stream, raise_on_lost=False)
    return TrialResult(times, est, tr.poses_at(times[: len(est)]), rep, stream)


@dataclass(frozen=True)
class IntrinsicScenario:
    """Tilted 2-DOF motion for the reference-frame and intrinsic-decomposition arms."""

    n_frames: int = 40
    hz: float = 20.0
    tilt_deg: float = 20.0
    yaw_deg: float = 3.0
    step: float = 0.05
    n_landmarks: int = 80
    extent: float = 1.0
    track: TrackConfig = field(default_factory=TrackConfig)

    def __post_init__(self):
        if self.n_frames < 3:
            raise ValueError("need at least 3 frames")


def reference_trial(scenario: IntrinsicScenario, seed: int, arm: str = "default_prev_frame") -> TrialResult:
    """One seed on the 2-DOF motion; ``arm`` is a reference kind or ``intrinsic``."""
    if arm not in REFERENCE_ARMS:
        raise ValueError(f"unknown reference arm {arm!r}")
    s = scenario
    tr, times, _ = intrinsic_motion_trajectory(seed, s.n_frames, s.hz, s.tilt_deg, s.yaw_deg, s.step)
    cloud = LandmarkCloud.random(seed, s.n_landmarks, s.extent)
    intrinsic = arm == "intrinsic"
    cfg = replace(s.track, reference="default_prev_frame" if intrinsic else arm, intrinsic=intrinsic, seed=seed)
    est, rep = track(tr, cloud, times, cfg, raise_on_lost=False)
    return TrialResult(times, est, tr.poses_at(times[: len(est)]), rep)
