"""Planar image alignment: a neural image fitted jointly with per-patch SE(2) warps.

Every patch ``i`` observes the source image through a rigid warp,
``patch_i(u) = I(R(θ_i) u + t_i)`` for ``u`` on a centred square grid. The
warps are recovered together with a neural image by minimizing the
photometric error. Three warp representations are compared: one SE(2)
PoseNet over patch time (``posenet``), free per-patch parameters
(``discrete``), and free parameters projected onto a cubic B-spline every
``reset_every`` steps (``bspline_reset``).

Coordinates are normalized so the image spans ``[-1, 1]`` on both axes
(x to the right along columns, y down along rows).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from contpose import diffnet as dn
from contpose import metrics
from contpose import traj as tr
from contpose.diffnet import AdamState, LrSchedule, NonFiniteLoss
from contpose.geometry import RigidTransform2
from contpose.posenet import PoseNet, PoseNetConfig, PoseOptimizer

METHODS = ("posenet", "discrete", "bspline_reset")
SUCCESS_PX = 1.0


class Diverged(FloatingPointError):
    pass


# ----------------------------------------------------------------- images


def procedural_image(kind: str = "blobs", seed: int = 0, size: int = 128) -> np.ndarray:
    """Bundled test images, ``(size, size, 3)`` in [0, 1].

    ``blobs``: 40 alpha-composited coloured Gaussians. ``rings``: smooth
    concentric colour bands around a few random centres.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    if kind == "blobs":
        img = np.zeros((size, size, 3))
        for _ in range(40):
            cx, cy = rng.uniform(0, 1, 2)
            s = rng.uniform(0.03, 0.12)
            col = rng.uniform(0, 1, 3)
            a = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))[..., None]
            img = img * (1 - a) + a * col
    elif kind == "rings":
        img = np.full((size, size, 3), 0.5)
        for _ in range(4):
            cx, cy = rng.uniform(0, 1, 2)
            f = rng.uniform(8, 20)
            ph = rng.uniform(0, 2 * np.pi, 3)
            r = np.hypot(xx - cx, yy - cy)
            img += 0.12 * np.sin(f * r[..., None] + ph)
    else:
        raise ValueError(f"unknown procedural image {kind!r}")
    return np.clip(img, 0.0, 1.0)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def save_png(path, img: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def pixel_grid(height: int, width: int, dtype=torch.float32) -> torch.Tensor:
    """Normalized coordinates of every pixel centre, ``(H*W, 2)`` row-major."""
    x = torch.linspace(-1, 1, width, dtype=dtype)
    y = torch.linspace(-1, 1, height, dtype=dtype)
    return torch.stack(torch.meshgrid(x, y, indexing="xy"), -1).reshape(-1, 2)


def bilinear(img: torch.Tensor, xy: torch.Tensor) -> torch.Tensor:
    """Sample ``img (H, W, C)`` at normalized ``xy (M, 2)``; edge-clamped."""
    h, w, _ = img.shape
    x = (xy[:, 0] + 1) / 2 * (w - 1)
    y = (xy[:, 1] + 1) / 2 * (h - 1)
    x0 = torch.floor(x).clamp(0, w - 2)
    y0 = torch.floor(y).clamp(0, h - 2)
    fx, fy = (x - x0)[:, None], (y - y0)[:, None]
    x0, y0 = x0.long(), y0.long()
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


# ------------------------------------------------------------ neural image


def encode_xy(xy: torch.Tensor, bands: int) -> torch.Tensor:
    """``[x, y, sin(2^k pi x), sin(2^k pi y), cos(2^k pi x), cos(2^k pi y)]_k``."""
    out = [xy]
    for k in range(bands):
        f = (2.0**k) * math.pi
        out += [torch.sin(f * xy), torch.cos(f * xy)]
    return torch.cat(out, -1)


@dataclass(frozen=True)
class NeuralImageConfig:
    bands: int = 8
    layers: int = 4
    width: int = 128
    lr: float = 1e-3

    @property
    def in_dim(self) -> int:
        return 2 + 4 * self.bands


class NeuralImage:
    """MLP from encoded ``(x, y)`` to RGB; sigmoid output keeps values in [0, 1]."""

    def __init__(self, config: NeuralImageConfig = NeuralImageConfig(), seed: int = 0, dtype=torch.float32):
        self.config = config
        self.params = dn.init_mlp(
            config.in_dim, 3, config.layers, config.width, seed=seed, zero_last=False, init="uniform", dtype=dtype
        )

    @property
    def dtype(self):
        return self.params.weights[0].dtype

    def parameters(self) -> list:
        return self.params.parameters()

    def __call__(self, xy: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(dn.mlp_apply(self.params, encode_xy(xy.to(self.dtype), self.config.bands)))

    def render(self, height: int, width: int, warp: Optional[RigidTransform2] = None) -> np.ndarray:
        """Whole-image raster; ``warp`` maps output pixel coordinates into net coordinates."""
        xy = pixel_grid(height, width, self.dtype)
        if warp is not None:
            xy = apply_warp(torch.tensor([warp.angle], dtype=self.dtype), torch.tensor(np.array([warp.t]), dtype=self.dtype), xy)[0]
        with torch.no_grad():
            return self(xy).reshape(height, width, 3).double().numpy()


# ----------------------------------------------------------------- patches


@dataclass(frozen=True)
class PatchGeometry:
    """Square sampling grid of ``size²`` pixels over ``[-extent, extent]²``."""

    size: int = 40
    extent: float = 0.4

    def grid(self, dtype=torch.float32) -> torch.Tensor:
        lin = torch.linspace(-self.extent, self.extent, self.size, dtype=dtype)
        return torch.stack(torch.meshgrid(lin, lin, indexing="xy"), -1).reshape(-1, 2)

    def corners(self) -> np.ndarray:
        e = self.extent
        return np.array([[-e, -e], [e, -e], [e, e], [-e, e]])

    @property
    def pixel_scale(self) -> float:
        """Patch pixels per normalized unit."""
        return (self.size - 1) / (2 * self.extent)


@dataclass(frozen=True)
class Patch:
    index: int
    size: int
    t: float
    gt_warp: RigidTransform2


def apply_warp(theta: torch.Tensor, trans: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
    """Warped coordinates ``(n, M, 2)`` for warps ``(n,)``/``(n, 2)`` and grid ``(M, 2)``."""
    c, s = torch.cos(theta)[:, None], torch.sin(theta)[:, None]
    x = c * uv[None, :, 0] - s * uv[None, :, 1] + trans[:, None, 0]
    y = s * uv[None, :, 0] + c * uv[None, :, 1] + trans[:, None, 1]
    return torch.stack([x, y], -1)


def render_patch(img: NeuralImage, warp, grid: torch.Tensor) -> torch.Tensor:
    """Neural image at the warped grid, ``(M, 3)``.

    ``warp`` is a ``RigidTransform2`` or a tensor ``(theta, tx, ty)``; the
    tensor form stays differentiable.
    """
    if isinstance(warp, RigidTransform2):
        warp = torch.tensor([warp.angle, *warp.t], dtype=img.dtype)
    xy = apply_warp(warp[0:1], warp[None, 1:3], grid.to(img.dtype))[0]
    return img(xy)


def make_patches(n: int, gt_warps: Sequence[RigidTransform2], size: int) -> list:
    times = np.linspace(0.0, 1.0, n)
    return [Patch(i, size, float(times[i]), gt_warps[i]) for i in range(n)]


# ---------------------------------------------------------------- metrics


def corner_error(est: RigidTransform2, gt: RigidTransform2, geometry: PatchGeometry = PatchGeometry()) -> float:
    """Mean distance, in patch pixels, between the four patch corners under both warps."""
    c = geometry.corners()
    d = c @ est.rotation_matrix().T + est.t - (c @ gt.rotation_matrix().T + gt.t)
    return float(np.linalg.norm(d, axis=1).mean() * geometry.pixel_scale)


def _procrustes2(A: np.ndarray, B: np.ndarray) -> RigidTransform2:
    """Rigid ``G`` minimizing ``Σ |B - G A|²`` in the plane."""
    mu_a, mu_b = A.mean(0), B.mean(0)
    U, _, Vt = np.linalg.svd((B - mu_b).T @ (A - mu_a))
    D = np.diag([1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return RigidTransform2(math.atan2(R[1, 0], R[0, 0]), mu_b - R @ mu_a)


def gauge_alignment(est: Sequence[RigidTransform2], gt: Sequence[RigidTransform2], geometry: PatchGeometry) -> RigidTransform2:
    """Global rigid motion of the image plane that best maps estimated corners onto true ones.

    The joint problem only fixes warps up to such a motion (it can be absorbed
    by the neural image), so it is removed before scoring.
    """
    c = geometry.corners()
    A = np.concatenate([c @ w.rotation_matrix().T + w.t for w in est])
    B = np.concatenate([c @ w.rotation_matrix().T + w.t for w in gt])
    return _procrustes2(A, B)


def trial_corner_errors(est, gt, geometry: PatchGeometry = PatchGeometry(), gauge: bool = True) -> np.ndarray:
    if len(est) != len(gt):
        raise metrics.LengthMismatch("warp lists differ in length")
    if gauge:
        G = gauge_alignment(est, gt, geometry)
        est = [G @ w for w in est]
    return np.array([corner_error(a, b, geometry) for a, b in zip(est, gt)])


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class PlanarConfig:
    method: str = "posenet"
    seed: int = 0
    n_patches: int = 8
    patch_size: int = 40
    patch_extent: float = 0.4
    iterations: int = 1000
    batch: int = 1536
    reset_every: int = 100
    bspline_knots: int = 5
    pose_warmup: int = 100
    lr_discrete: float = 1e-3
    # common starting warp (theta, tx, ty) for every method; off the identity so
    # the patches do not start on the lattice where the top image band aliases
    init_warp: tuple = (math.pi * math.tanh(0.05), 0.05, 0.05)
    image: NeuralImageConfig = field(default_factory=NeuralImageConfig)
    posenet: PoseNetConfig = field(
        default_factory=lambda: PoseNetConfig(space="SE2", dtype="float32", lr_trans=1e-3, lr_rot=2e-4)
    )
    # ground-truth motion
    n_control: int = 10
    rot_deg: float = 10.0
    trans: float = 0.15
    frame_window: float = 0.4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.posenet.space != "SE2":
            raise ValueError("planar alignment needs an SE2 PoseNet")
        if len(self.init_warp) != 3 or abs(self.init_warp[0]) >= math.pi:
            raise ValueError("init_warp is (theta, tx, ty) with |theta| < pi")
        if self.posenet.architecture != "decoupled":
            raise ValueError("planar alignment uses the decoupled SE2 PoseNet")
        if self.n_patches < 2 or self.iterations < 1 or self.batch < 1:
            raise ValueError("n_patches >= 2, iterations >= 1 and batch >= 1 required")
        if self.method == "bspline_reset" and (self.reset_every < 1 or self.n_patches < self.bspline_knots + 2):
            raise ValueError("bspline_reset needs reset_every >= 1 and more patches than spline coefficients")

    @property
    def geometry(self) -> PatchGeometry:
        return PatchGeometry(self.patch_size, self.patch_extent)


def ground_truth_warps(config: PlanarConfig) -> list:
    traj, times = tr.sample_planar_trajectory(
        config.seed, config.n_control, config.n_patches, tr.PlanarBounds(config.rot_deg, config.trans), config.frame_window
    )
    return traj.poses_at(times)


@dataclass
class PlanarReport:
    method: str
    seed: int
    corner_error: float
    corner_errors: np.ndarray
    psnr_full: float
    psnr_patch: float
    final_loss: float
    seconds: float

    @property
    def success(self) -> bool:
        return bool(self.corner_error < SUCCESS_PX)

    def row(self) -> dict:
        return {
            "seed": self.seed,
            "method": self.method,
            "CE": self.corner_error,
            "PSNR": self.psnr_full,
            "PSNR_patch": self.psnr_patch,
            "success": int(self.success),
        }


# ------------------------------------------------------------ warp models


class _WarpModel:
    """Produces the ``(n, 3)`` warp tensor ``(theta, tx, ty)`` and steps its parameters."""

    def __init__(self, config: PlanarConfig, dtype):
        self.config = config
        n = config.n_patches
        self.times = np.linspace(0.0, 1.0, n)
        if config.method == "posenet":
            self.net = PoseNet(config.posenet, seed=config.seed)
            th0, tx0, ty0 = config.init_warp
            with torch.no_grad():
                self.net.rot_params.biases[-1].fill_(math.atanh(th0 / math.pi))
                self.net.trans_params.biases[-1].copy_(torch.tensor([tx0, ty0], dtype=dtype))
            self.opt = PoseOptimizer(self.net, config.iterations, warmup_steps=config.pose_warmup, decay=False)
            self.tensors = self.net.parameters()
        else:
            self.free = torch.tensor([config.init_warp] * n, dtype=dtype, requires_grad=True)
            self.tensors = [self.free]
            self.state = AdamState.zeros_like(self.tensors)
            self.sched = LrSchedule(config.lr_discrete, None, config.iterations, config.pose_warmup)
        self.k = 0

    def warps(self) -> torch.Tensor:
        if self.config.method == "posenet":
            th, v = self.net.pose_tensors(self.times)
            return torch.cat([th[:, None], v], 1)
        return self.free

    def step(self, grads) -> None:
        if self.config.method == "posenet":
            self.opt.apply(grads)
        else:
            dn.adam_step(self.state, self.tensors, grads, self.sched(self.k))
        self.k += 1
        c = self.config
        if c.method == "bspline_reset" and self.k % c.reset_every == 0 and self.k < c.iterations:
            self.reset()

    def reset(self) -> None:
        """Project the free warps onto a cubic B-spline in patch time."""
        vals = self.free.detach().double().numpy()
        curve = tr.bspline_fit(self.times, vals, knots=self.config.bspline_knots, degree=3)
        with torch.no_grad():
            self.free.copy_(torch.as_tensor(tr.bspline_eval(curve, self.times), dtype=self.free.dtype))

    def estimates(self) -> list:
        w = self.warps().detach().double().numpy()
        return [RigidTransform2(float(a), (float(x), float(y))) for a, x, y in w]


def warp_lipschitz(net: PoseNet, n: int = 2001) -> float:
    """Empirical bound on ``|d warp / d tau|`` (angle and translation stacked) over [0, 1]."""
    with torch.no_grad():
        j = net.pose_jets(np.linspace(0.0, 1.0, n))
    d = torch.cat([j["dtheta"][:, None], j["dv"]], 1)
    return float(d.norm(dim=1).max())


# ------------------------------------------------------------------ runner


def run_alignment(image: np.ndarray, config: PlanarConfig = PlanarConfig(), gt_warps=None, return_model: bool = False):
    """Jointly fit a neural image and the patch warps.

    Returns ``(estimated warps, NeuralImage, PlanarReport)`` (plus the warp
    model when ``return_model``). Ground-truth warps come from the seeded
    planar trajectory sampler unless given.
    """
    image = np.asarray(image, dtype=float)
    geo = config.geometry
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    if min(image.shape[:2]) < 2 * geo.size:
        raise ValueError("image must be at least twice the patch size")
    dtype = config.posenet.torch_dtype
    gt = list(gt_warps) if gt_warps is not None else ground_truth_warps(config)
    if len(gt) != config.n_patches:
        raise ValueError("need one ground-truth warp per patch")
    t_start = time.perf_counter()

    src = torch.as_tensor(image, dtype=dtype)
    uv = geo.grid(dtype)
    gt_t = torch.tensor([[w.angle, *w.t] for w in gt], dtype=dtype)
    observed = torch.stack([bilinear(src, xy) for xy in apply_warp(gt_t[:, 0], gt_t[:, 1:], uv)])

    img = NeuralImage(config.image, seed=config.seed, dtype=dtype)
    img_state = AdamState.zeros_like(img.parameters())
    model = _WarpModel(config, dtype)
    gen = torch.Generator().manual_seed(config.seed + 1)
    n, m = config.n_patches, uv.shape[0]
    tensors = img.parameters() + model.tensors
    n_img = len(img.parameters())

    loss = float("nan")
    for _ in range(config.iterations):
        k = torch.randint(0, n, (config.batch,), generator=gen)
        j = torch.randint(0, m, (config.batch,), generator=gen)

        def loss_fn():
            w = model.warps()[k]
            u = uv[j]
            c, s = torch.cos(w[:, 0]), torch.sin(w[:, 0])
            xy = torch.stack([c * u[:, 0] - s * u[:, 1] + w[:, 1], s * u[:, 0] + c * u[:, 1] + w[:, 2]], 1)
            return ((img(xy) - observed[k, j]) ** 2).mean()

        try:
            loss, grads = dn.loss_gradients(tensors, loss_fn)
        except NonFiniteLoss as e:
            raise Diverged(f"non-finite photometric loss ({config.method}, seed {config.seed})") from e
        dn.adam_step(img_state, img.parameters(), grads[:n_img], config.image.lr)
        model.step(grads[n_img:])

    est = model.estimates()
    ces = trial_corner_errors(est, gt, geo)
    G = gauge_alignment(est, gt, geo)
    h, w_ = image.shape[:2]
    full = img.render(h, w_, warp=G.inverse())
    with torch.no_grad():
        w_est = model.warps()
        pred = torch.stack([img(xy) for xy in apply_warp(w_est[:, 0], w_est[:, 1:], uv)])
    p_patch = metrics.psnr(pred.double().numpy().clip(0, 1), observed.double().numpy().clip(0, 1))
    report = PlanarReport(
        config.method,
        config.seed,
        float(ces.mean()),
        ces,
        metrics.psnr(full, image),
        p_patch,
        float(loss),
        time.perf_counter() - t_start,
    )
    if return_model:
        return est, img, report, model
    return est, img, report


def run_suite(image_fn, config: PlanarConfig, seeds: Sequence[int]) -> list:
    """One trial per seed; ``image_fn(seed)`` supplies the source image."""
    from dataclasses import replace

    return [run_alignment(image_fn(s), replace(config, seed=s))[2] for s in seeds]
