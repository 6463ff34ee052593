import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from contpose import geometry as g
from contpose import metrics as m
from contpose.geometry import RigidTransform3, UnitQuaternion


def cloud(rng, n=20):
    return rng.normal(size=(n, 3))


def random_rt(rng):
    return Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(), rng.normal(size=3)


def test_umeyama_identity(rng):
    p = cloud(rng)
    a = m.umeyama_align(p, p)
    assert a.residual < 1e-12 and a.scale == 1.0
    assert g.geodesic_angle(a.rotation, UnitQuaternion.identity()) < 1e-9
    np.testing.assert_allclose(a.translation, 0, atol=1e-12)


def test_umeyama_recovers_construction(rng):
    p = cloud(rng)
    R, t = random_rt(rng)
    gt = p @ R.T + t
    a = m.umeyama_align(p, gt)
    assert a.residual < 1e-9
    np.testing.assert_allclose(a.matrix, R, atol=1e-9)
    np.testing.assert_allclose(a.translation, t, atol=1e-9)
    s = m.umeyama_align(p, 2.5 * gt, with_scale=True)
    assert s.scale == pytest.approx(2.5) and s.residual < 1e-9


def test_umeyama_matches_local_search(rng):
    est = cloud(rng, 15)
    R, t = random_rt(rng)
    gt = est @ R.T + t + 0.1 * rng.normal(size=est.shape)
    a = m.umeyama_align(est, gt)

    def rmse(x):
        Rx = Rotation.from_rotvec(x[:3]).as_matrix() @ a.matrix
        return np.sqrt(((gt - est @ Rx.T - x[3:]) ** 2).sum(1).mean())

    x0 = np.concatenate([np.zeros(3), a.translation])
    best = minimize(rmse, x0, method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-12, maxiter=20000))
    assert a.residual <= best.fun + 1e-9
    assert a.residual == pytest.approx(best.fun, abs=1e-7)
    # random restarts around the closed form cannot beat it
    for _ in range(50):
        assert rmse(x0 + 0.02 * rng.normal(size=6)) >= a.residual - 1e-12


def test_umeyama_degenerate():
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(m.DegenerateConfiguration):
        m.umeyama_align(line, line)
    with pytest.raises(m.DegenerateConfiguration):
        m.umeyama_align(np.ones((5, 3)), np.ones((5, 3)))
    with pytest.raises(m.DegenerateConfiguration):
        m.umeyama_align(np.eye(3)[:2], np.eye(3)[:2])
    with pytest.raises(m.LengthMismatch):
        m.umeyama_align(np.eye(3), np.eye(4)[:, :3])


def test_ate_examples(rng):
    p = cloud(rng)
    assert m.ate_rmse(p, p, align=False) == 0.0 and m.ate_rmse(p, p) < 1e-12
    off = p + np.array([0.0, 1.0, 0.0])
    assert m.ate_rmse(off, p, align=False) == pytest.approx(1.0)
    assert m.ate_rmse(off, p, align=True) < 1e-9
    with pytest.raises(m.LengthMismatch):
        m.ate_rmse(p, p[:-1])


@given(st.integers(0, 10_000))
def test_alignment_never_worse_and_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    gt = cloud(rng, 12)
    est = gt + 0.3 * rng.normal(size=gt.shape)
    assert m.ate_rmse(est, gt, align=True) <= m.ate_rmse(est, gt, align=False) + 1e-12
    R, t = random_rt(rng)
    moved = m.ate_rmse(est @ R.T + t, gt @ R.T + t)
    assert moved == pytest.approx(m.ate_rmse(est, gt), rel=1e-9, abs=1e-12)
    assert m.ate_rmse(est @ R.T + t, gt @ R.T + t, align=False) == pytest.approx(
        m.ate_rmse(est, gt, align=False), rel=1e-9
    )


def _poses(rng, n=10):
    return [
        RigidTransform3(UnitQuaternion.from_array(rng.normal(size=4)), rng.normal(size=3)) for _ in range(n)
    ]


def test_rot_trans_error_examples(rng):
    gt = _poses(rng)
    assert m.rot_trans_error(gt, gt) == pytest.approx((0.0, 0.0), abs=1e-9)
    G = RigidTransform3(g.axis_angle_to_quat([0.2, 1.0, 0.3], math.radians(2.0)), [0, 0, 0])
    est = [g.compose(G, T) for T in gt]
    re, te = m.rot_trans_error(est, gt, aligned=True)
    assert re < 1e-6 and te < 1e-9
    re, _ = m.rot_trans_error(est, gt, aligned=False)
    assert re == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(m.LengthMismatch):
        m.rot_trans_error(gt, gt[:-1])


def test_rot_trans_error_direct_oracle(rng):
    gt = _poses(rng, 25)
    est = [
        RigidTransform3(
            g.quat_mul(T.rotation, g.rotvec_to_quat(0.05 * rng.normal(size=3))), np.asarray(T.t) + 0.02 * rng.normal(size=3)
        )
        for T in gt
    ]
    qe = np.stack([T.rotation.as_array() for T in est])
    qg = np.stack([T.rotation.as_array() for T in gt])
    re_direct = np.degrees((Rotation.from_quat(qe[:, [1, 2, 3, 0]]).inv() * Rotation.from_quat(qg[:, [1, 2, 3, 0]])).magnitude()).mean()
    te_direct = np.linalg.norm(np.stack([T.t for T in est]) - np.stack([T.t for T in gt]), axis=1).mean()
    re, te = m.rot_trans_error(est, gt, aligned=False)
    assert re == pytest.approx(re_direct, rel=1e-9) and te == pytest.approx(te_direct, rel=1e-12)


def test_rot_trans_error_pure_rotation_sequence():
    gt = [RigidTransform3(g.axis_angle_to_quat([0, 0, 1], a), [0, 0, 0]) for a in np.linspace(0, 1, 6)]
    G = g.axis_angle_to_quat([1, 0, 0], 0.1)
    est = [RigidTransform3(g.quat_mul(G, T.rotation), [0, 0, 0]) for T in gt]
    assert m.rot_trans_error(est, gt)[0] < 1e-6


# ------------------------------------------------------------------ images


def test_psnr_examples():
    a = np.full((16, 16), 0.5)
    assert m.psnr(a, a) == math.inf
    assert m.psnr(a, a + 0.1) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        m.psnr(a, a[:8])


def test_psnr_decreasing_in_noise(rng):
    a = rng.uniform(size=(32, 32))
    z = rng.normal(size=a.shape)
    vals = [m.psnr(a, a + s * z) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def ssim_reference(a, b):
    """Window-by-window loop, independent of the vectorized filter."""
    k = m.gaussian_window()
    w = np.outer(k, k)
    c1, c2 = (0.01) ** 2, (0.03) ** 2
    out = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cab = (w * (pa - ma) * (pb - mb)).sum()
            out.append((2 * ma * mb + c1) * (2 * cab + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(out))


def test_ssim_identity_and_reference(rng):
    grad = np.tile(np.linspace(0, 1, 40), (32, 1))
    noisy = np.clip(grad + 0.1 * rng.normal(size=grad.shape), 0, 1)
    assert m.ssim(grad, grad) == pytest.approx(1.0, abs=1e-12)
    assert m.ssim(grad, noisy) == pytest.approx(ssim_reference(grad, noisy), abs=1e-6)
    rgb = np.stack([grad, noisy, grad[::-1]], -1)
    rgb2 = np.stack([noisy, grad, grad], -1)
    expect = np.mean([ssim_reference(rgb[..., c], rgb2[..., c]) for c in range(3)])
    assert m.ssim(rgb, rgb2) == pytest.approx(expect, abs=1e-6)
    with pytest.raises(ValueError):
        m.ssim(grad[:5], grad[:5])


@given(st.integers(0, 10_000))
def test_ssim_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 14, 14))
    s = m.ssim(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(m.ssim(b, a), abs=1e-12)


def test_success_rate():
    assert m.success_rate([0.1, 0.5, 2.0, float("nan")], 1.0) == 0.5
    with pytest.raises(ValueError):
        m.success_rate([], 1.0)
