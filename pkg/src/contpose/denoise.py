"""Pose denoising on a synthetic orbit with a splat renderer.

A camera orbits a coloured landmark cloud. Each landmark renders as an
isotropic Gaussian splat in a small pinhole image, so the photometric loss
has a bounded basin like a radiance field does. Initial poses carry
time-correlated noise; the estimate for frame ``i`` is ``T_init_i ∘ P(f(t_i))``
(PoseNet) or ``T_init_i ∘ ΔT_i`` with free per-frame parameters (discrete).
Rays are sampled at random across all frames each iteration, and the splat
width is annealed from coarse to fine.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from contpose import metrics, tgeom
from contpose import traj as trj
from contpose.diffnet import AdamState, LrSchedule, NonFiniteLoss, adam_step, loss_gradients
from contpose.posenet import PoseNet, PoseNetConfig, PoseOptimizer, TimeMap

METHODS = ("posenet", "discrete")


@dataclass(frozen=True)
class SplatCamera:
    width: int = 40
    height: int = 40
    focal: float = 50.0  # pixels

    def pixels(self, dtype=torch.float32) -> torch.Tensor:
        """Pixel centres ``(H*W, 2)`` as ``(x, y)``, row-major."""
        yy, xx = torch.meshgrid(
            torch.arange(self.height, dtype=dtype), torch.arange(self.width, dtype=dtype), indexing="ij"
        )
        return torch.stack([xx, yy], -1).reshape(-1, 2)


@dataclass(frozen=True)
class SplatScene:
    points: np.ndarray
    colors: np.ndarray

    @classmethod
    def random(cls, seed: int, n: int = 60, extent: float = 0.5) -> "SplatScene":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-extent, extent, (n, 3)), rng.uniform(0.2, 1.0, (n, 3)))


def project(q: torch.Tensor, t: torch.Tensor, points: torch.Tensor, cam: SplatCamera) -> torch.Tensor:
    """Pixel coordinates ``(B, M, 2)`` of world points seen from camera-to-world poses ``(q, t)``.

    Camera +z looks forward, +x right, +y down. Depth is clamped at 1e-2 so
    points behind the camera stay finite.
    """
    pc = tgeom.se3_apply_inverse(q, t, points)
    z = pc[..., 2].clamp(min=1e-2)
    c = torch.tensor([cam.width / 2, cam.height / 2], dtype=pc.dtype)
    return cam.focal * pc[..., :2] / z[..., None] + c


def shade(uv: torch.Tensor, px: torch.Tensor, colors: torch.Tensor, sigma: float) -> torch.Tensor:
    """Colour of pixels ``px (R, 2)`` given per-ray splat centres ``uv (R, M, 2)``.

    ``Σ w_k c_k / (1 + Σ w_k)`` with Gaussian weights: a soft normalization
    that keeps overlapping splats in range and the background black.
    """
    w = torch.exp(-((px[:, None, :] - uv) ** 2).sum(-1) / (2 * sigma * sigma))
    return (w @ colors) / (1.0 + w.sum(-1, keepdim=True))


def render(pose, scene: SplatScene, cam: SplatCamera = SplatCamera(), sigma: float = 1.0) -> np.ndarray:
    """Full ``(H, W, 3)`` image at a ``RigidTransform3`` camera-to-world pose."""
    q, t = tgeom.pose_to_tensors(pose, torch.float64)
    P = torch.as_tensor(scene.points, dtype=torch.float64)
    C = torch.as_tensor(scene.colors, dtype=torch.float64)
    with torch.no_grad():
        uv = project(q[None], t[None], P, cam)[0]
        px = cam.pixels(torch.float64)
        img = shade(uv.expand(len(px), -1, -1), px, C, sigma)
    return img.reshape(cam.height, cam.width, 3).numpy()


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class DenoiseConfig:
    method: str = "posenet"
    seed: int = 0
    n_frames: int = 60
    radius: float = 2.0
    arc: float = math.pi  # orbit angle covered by the sequence
    z_amplitude: float = 0.2
    noise: trj.NoiseModel = field(default_factory=lambda: trj.NoiseModel(translation_max=0.2))
    n_landmarks: int = 60
    camera: SplatCamera = field(default_factory=SplatCamera)
    iterations: int = 1500
    rays: int = 2048
    sigma_start: float = 6.0
    sigma_end: float = 1.0
    anneal_frac: float = 0.6  # fraction of iterations over which the splat width shrinks
    posenet: PoseNetConfig = field(default_factory=lambda: PoseNetConfig(dtype="float32"))
    lr_discrete: float = 1e-3
    lr_discrete_final: float = 1e-5
    eval_every: int = 6  # frames rendered for PSNR/SSIM

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_frames < 3:
            raise ValueError("need at least 3 frames")
        if not 0 < self.sigma_end <= self.sigma_start:
            raise ValueError("need 0 < sigma_end <= sigma_start")
        if not 0 < self.anneal_frac <= 1:
            raise ValueError("anneal_frac must lie in (0, 1]")
        if self.iterations < 1 or self.rays < 1:
            raise ValueError("iterations and rays must be positive")

    def sigma(self, step: int) -> float:
        a = min(step / (self.anneal_frac * self.iterations), 1.0)
        return self.sigma_start + (self.sigma_end - self.sigma_start) * a


@dataclass
class DenoiseReport:
    method: str
    seed: int
    rot_error: float  # mean degrees
    trans_error: float  # mean scene units
    rot_error_init: float
    trans_error_init: float
    psnr: float
    ssim: float
    final_loss: float
    seconds: float

    @property
    def trans_reduction(self) -> float:
        return self.trans_error_init / max(self.trans_error, 1e-300)

    def row(self) -> dict:
        return {
            "seed": self.seed,
            "method": self.method,
            "RE": self.rot_error,
            "TE": self.trans_error,
            "RE_init": self.rot_error_init,
            "TE_init": self.trans_error_init,
            "PSNR": self.psnr,
            "SSIM": self.ssim,
        }


def make_problem(config: DenoiseConfig):
    """``(gt poses, noisy initial poses, frame times, scene)``."""
    c = config
    hz = 20.0
    speed = c.arc / ((c.n_frames - 1) / hz)
    traj, times = trj.circular_orbit(c.radius, speed, c.z_amplitude, c.n_frames, hz=hz)
    gt = traj.poses_at(times)
    init = trj.perturb(traj, c.noise, c.seed, times)
    return gt, init, times, SplatScene.random(c.seed, c.n_landmarks)


class _Refiner:
    """Refinement ``ΔT_i`` for every frame, from a PoseNet or free parameters."""

    def __init__(self, config: DenoiseConfig, times):
        c = config
        self.method = c.method
        if c.method == "posenet":
            self.net = PoseNet(c.posenet, seed=c.seed)
            self.opt = PoseOptimizer(self.net, c.iterations)
            self.tau = TimeMap.covering(times)(times)
            self.dtype = c.posenet.torch_dtype
        else:
            self.dtype = c.posenet.torch_dtype
            n = len(times)
            # quaternion imaginary part (w fixed to 1 before normalizing) and translation
            self.rot = torch.zeros(n, 3, dtype=self.dtype, requires_grad=True)
            self.trans = torch.zeros(n, 3, dtype=self.dtype, requires_grad=True)
            self.state = AdamState.zeros_like([self.rot, self.trans])
            self.lr = LrSchedule(c.lr_discrete, c.lr_discrete_final, c.iterations)
            self.k = 0

    def tensors(self):
        if self.method == "posenet":
            return self.net.pose_tensors(self.tau)
        w = torch.ones(len(self.rot), 1, dtype=self.dtype)
        return tgeom.qnormalize(torch.cat([w, self.rot], 1)), self.trans

    def step(self, loss_fn) -> float:
        if self.method == "posenet":
            return self.opt.step(loss_fn)
        loss, grads = loss_gradients([self.rot, self.trans], loss_fn)
        adam_step(self.state, [self.rot, self.trans], grads, self.lr(self.k))
        self.k += 1
        return loss


def run_denoise(config: DenoiseConfig = DenoiseConfig(), return_refiner: bool = False):
    """Refine the noisy poses; returns ``(estimated poses, DenoiseReport)``.

    Errors are measured in the fixed world frame of the landmarks, without a
    global alignment: the scene is known, so there is no gauge freedom.
    """
    c = config
    t0 = time.time()
    gt, init, times, scene = make_problem(c)
    ref = _Refiner(c, times)
    dt = ref.dtype
    P = torch.as_tensor(scene.points, dtype=dt)
    C = torch.as_tensor(scene.colors, dtype=dt)
    px_all = c.camera.pixels(dt)
    gq, gv = tgeom.poses_to_tensors(gt, dt)
    iq, iv = tgeom.poses_to_tensors(init, dt)
    with torch.no_grad():
        uv_gt = project(gq, gv, P, c.camera)
    n = len(times)
    gen = torch.Generator().manual_seed(c.seed)
    loss = math.nan
    for k in range(c.iterations):
        sigma = c.sigma(k)
        fr = torch.randint(0, n, (c.rays,), generator=gen)
        px = px_all[torch.randint(0, len(px_all), (c.rays,), generator=gen)]
        with torch.no_grad():
            target = shade(uv_gt[fr], px, C, sigma)

        def loss_fn():
            q, v = ref.tensors()
            Q, V = tgeom.se3_compose(iq, iv, q, v)
            return ((shade(project(Q, V, P, c.camera)[fr], px, C, sigma) - target) ** 2).mean()

        loss = ref.step(loss_fn)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {k}")

    with torch.no_grad():
        q, v = ref.tensors()
        Q, V = tgeom.se3_compose(iq, iv, q, v)
    est = [tgeom.tensors_to_pose(Q[i], V[i]) for i in range(n)]
    re, te = metrics.rot_trans_error(est, gt, aligned=False)
    re0, te0 = metrics.rot_trans_error(init, gt, aligned=False)
    ps, ss = [], []
    for i in range(0, n, c.eval_every):
        a = render(est[i], scene, c.camera, c.sigma_end)
        b = render(gt[i], scene, c.camera, c.sigma_end)
        ps.append(metrics.psnr(a, b))
        ss.append(metrics.ssim(a, b))
    ps = np.minimum(ps, 100.0)  # identical renders give inf; cap before averaging
    rep = DenoiseReport(c.method, c.seed, re, te, re0, te0, float(np.mean(ps)), float(np.mean(ss)), float(loss), time.time() - t0)
    if return_refiner:
        return est, rep, ref
    return est, rep
