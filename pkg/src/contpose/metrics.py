"""Trajectory and image-quality metrics.

Trajectories are compared after a closed-form Umeyama alignment (rigid by
default, similarity on request). Images are float arrays in [0, 1], shape
``(H, W)`` or ``(H, W, C)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from contpose import geometry as g
from contpose.geometry import RigidTransform3, UnitQuaternion

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


class DegenerateConfiguration(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentResult:
    """``gt ≈ scale * R(rotation) @ est + translation``; ``residual`` is the aligned RMSE."""

    rotation: UnitQuaternion
    translation: tuple
    scale: float
    residual: float

    @property
    def matrix(self) -> np.ndarray:
        return g.quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.matrix.T + np.asarray(self.translation)

    def as_transform(self) -> RigidTransform3:
        # scale dropped; only meaningful for rigid alignments
        return RigidTransform3(self.rotation, self.translation)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {x.shape}")
    return x


def _check_lengths(a, b) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} estimated vs {len(b)} reference entries")


def umeyama_align(est, gt, with_scale: bool = False) -> AlignmentResult:
    """Least-squares ``(s, R, t)`` minimizing ``Σ |gt - s R est - t|²``."""
    est, gt = _as_points(est), _as_points(gt)
    _check_lengths(est, gt)
    if len(est) < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")
    mu_e, mu_g = est.mean(0), gt.mean(0)
    de, dg = est - mu_e, gt - mu_g
    sv_e = np.linalg.svd(de, compute_uv=False)
    sv_g = np.linalg.svd(dg, compute_uv=False)
    scale_e = max(sv_e[0], 1e-300)
    scale_g = max(sv_g[0], 1e-300)
    # rank < 2 leaves a free rotation about the common line
    if sv_e[1] <= 1e-9 * scale_e or sv_g[1] <= 1e-9 * scale_g:
        raise DegenerateConfiguration("points are collinear or coincident")
    cov = dg.T @ de / len(est)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_e = (de**2).sum() / len(est)
        s = float(np.trace(np.diag(D) @ S) / var_e)
    else:
        s = 1.0
    t = mu_g - s * R @ mu_e
    res = gt - (s * est @ R.T + t)
    rmse = float(np.sqrt((res**2).sum(1).mean()))
    return AlignmentResult(g.matrix_to_quat(R), tuple(float(x) for x in t), s, rmse)


def ate_rmse(est, gt, align: bool = True, with_scale: bool = False) -> float:
    """RMS position error, optionally after Umeyama alignment of ``est`` onto ``gt``."""
    est, gt = _as_points(est), _as_points(gt)
    _check_lengths(est, gt)
    if align:
        return umeyama_align(est, gt, with_scale).residual
    return float(np.sqrt(((est - gt) ** 2).sum(1).mean()))


def _rotation_only_alignment(est: Sequence[RigidTransform3], gt: Sequence[RigidTransform3]) -> AlignmentResult:
    # chordal mean of R_gt R_estᵀ, then centroid matching
    M = sum(g.quat_to_matrix(b.rotation) @ g.quat_to_matrix(a.rotation).T for a, b in zip(est, gt))
    U, _, Vt = np.linalg.svd(M)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ S @ Vt
    pe = np.stack([T.t for T in est])
    pg = np.stack([T.t for T in gt])
    t = pg.mean(0) - R @ pe.mean(0)
    res = pg - (pe @ R.T + t)
    return AlignmentResult(g.matrix_to_quat(R), tuple(t), 1.0, float(np.sqrt((res**2).sum(1).mean())))


def rot_trans_error(
    est: Sequence[RigidTransform3], gt: Sequence[RigidTransform3], aligned: bool = True
) -> tuple[float, float]:
    """Mean geodesic error in degrees and mean translation distance.

    With ``aligned`` a global rigid transform fitted on positions is applied
    to every estimated pose first. When the positions are degenerate (e.g. a
    pure rotation sequence) the global rotation comes from the orientations.
    """
    _check_lengths(est, gt)
    if len(est) == 0:
        raise ValueError("empty pose lists")
    if aligned:
        try:
            A = umeyama_align(np.stack([T.t for T in est]), np.stack([T.t for T in gt]))
        except DegenerateConfiguration:
            A = _rotation_only_alignment(est, gt)
        G = A.as_transform()
        est = [g.compose(G, T) for T in est]
    rot = [math.degrees(g.geodesic_angle(a.rotation, b.rotation)) for a, b in zip(est, gt)]
    tra = [float(np.linalg.norm(np.asarray(a.t) - np.asarray(b.t))) for a, b in zip(est, gt)]
    return float(np.mean(rot)), float(np.mean(tra))


# ------------------------------------------------------------------ images


def _as_image_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1]; ``inf`` when identical."""
    a, b = _as_image_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the first two axes
    n = len(k)
    h, w = img.shape[:2]
    rows = sum(k[i] * img[i : h - n + 1 + i] for i in range(n))
    return sum(k[j] * rows[:, j : w - n + 1 + j] for j in range(n))


def ssim(a, b) -> float:
    """Mean SSIM over all fully-contained 11×11 Gaussian windows (σ 1.5).

    Colour images are scored per channel and averaged. Dynamic range is 1.
    """
    a, b = _as_image_pair(a, b)
    if a.ndim not in (2, 3):
        raise ValueError("expected (H, W) or (H, W, C) images")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on each side")
    k = gaussian_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    saa = _filter_valid(a * a, k) - mu_a**2
    sbb = _filter_valid(b * b, k) - mu_b**2
    sab = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# --------------------------------------------------------------- summaries


def success_rate(errors, threshold: float) -> float:
    """Fraction of trials with error strictly below ``threshold``; NaN/inf count as failures."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no trials")
    return float(np.mean(np.isfinite(e) & (e < threshold)))
