import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from contpose import geometry as g
from contpose import tgeom
from contpose.diffnet import EncodingConfig
from contpose.geometry import RigidTransform2, RigidTransform3
from contpose.posenet import (
    IntrinsicPair,
    PoseNet,
    PoseNetConfig,
    PoseOptimizer,
    ReferenceFrame,
    intrinsic_pose,
    refined_pose,
    tracked_pose,
)

SMALL = PoseNetConfig(layers=3, width=32)


def randomize(net: PoseNet, seed: int, scale: float = 0.3):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return net


def is_identity(T, tol=1e-9):
    rot, trans = g.transform_distance(T, type(T).identity())
    return rot < tol and trans < tol


@pytest.mark.parametrize("arch", ["coupled", "decoupled"])
@pytest.mark.parametrize("space", ["SE2", "SE3"])
def test_fresh_net_is_identity(arch, space):
    net = PoseNet(PoseNetConfig(architecture=arch, space=space, layers=4, width=64), seed=3)
    for t in (0.0, 0.3, 1.0):
        T = net.pose_at(t)
        assert is_identity(T, 1e-5)
        assert isinstance(T, RigidTransform3 if space == "SE3" else RigidTransform2)


def test_default_config():
    c = PoseNetConfig()
    assert (c.layers, c.width, c.encoding.bands, c.architecture) == (8, 256, 5, "decoupled")
    assert (c.lr_trans, c.lr_rot) == (1e-3, 2e-4)
    net = PoseNet(c)
    assert len(net.trans_params.weights) == 8 and net.rot_params is not net.trans_params
    coupled = PoseNet(PoseNetConfig(architecture="coupled", layers=2, width=8))
    assert coupled.coupled and coupled.trans_params.out_dim == 7


def test_determinism():
    a = randomize(PoseNet(SMALL, seed=1), 0)
    b = randomize(PoseNet(SMALL, seed=1), 0)
    assert a.pose_at(0.4) == a.pose_at(0.4) == b.pose_at(0.4)


def _fit(net, ts, targets, steps):
    qt, vt = tgeom.poses_to_tensors(targets)
    opt = PoseOptimizer(net, steps, decay=False)

    def loss():
        q, v = net.pose_tensors(ts)
        q = tgeom.sign_align(q, qt)
        return (q - qt).pow(2).sum() + (v - vt).pow(2).sum()

    for _ in range(steps):
        opt.step(loss)


def test_overfit_seven_waypoints():
    rng = np.random.default_rng(0)
    ts = np.linspace(0, 1, 7)
    targets = [
        RigidTransform3(g.rotvec_to_quat(rng.uniform(-0.5, 0.5, 3)), rng.uniform(-1, 1, 3)) for _ in ts
    ]
    cfg = PoseNetConfig(layers=8, width=256, lr_trans=1e-3, lr_rot=1e-3)
    net = PoseNet(cfg, seed=0)
    _fit(net, ts, targets, 400)
    for t, T in zip(ts, targets):
        rot, trans = g.transform_distance(net.pose_at(t), T)
        assert trans < 1e-3
        assert math.degrees(rot) < 0.1


def test_refined_pose_composition():
    net = PoseNet(SMALL)
    T0 = RigidTransform3(g.axis_angle_to_quat([1, 0, 1], 0.8), [1, 2, 3])
    assert is_identity(g.compose(g.inverse(refined_pose(net, 0.2, T0)), T0), 1e-5)
    randomize(net, 5)
    assert refined_pose(net, 0.2) == net.pose_at(0.2)
    rng = np.random.default_rng(2)
    for k in range(10):
        T0 = RigidTransform3(g.rotvec_to_quat(rng.normal(size=3)), rng.normal(size=3))
        t = float(rng.uniform())
        expect = T0.matrix() @ net.pose_at(t).matrix()
        np.testing.assert_allclose(refined_pose(net, t, T0).matrix(), expect, atol=1e-12)


def test_tracked_pose_frames():
    net = PoseNet(SMALL)
    prev = RigidTransform3(g.axis_angle_to_quat([0, 0, 1], 0.4), [1, 0, 0])
    assert is_identity(g.compose(g.inverse(tracked_pose(net, 0.1, prev, ReferenceFrame())), prev), 1e-5)
    randomize(net, 1)
    world = tracked_pose(net, 0.1, prev, ReferenceFrame("world"))
    assert world == net.pose_at(0.1)
    rf = ReferenceFrame("random_perturbed", seed=4)
    expect = prev.matrix() @ rf.perturbation(7).matrix() @ net.pose_at(0.1).matrix()
    np.testing.assert_allclose(tracked_pose(net, 0.1, prev, rf, index=7).matrix(), expect, atol=1e-12)
    assert rf.perturbation(7) != rf.perturbation(8)


def test_chain_of_ten_relative_steps():
    net = randomize(PoseNet(SMALL), 9)
    ts = np.linspace(0, 1, 10)
    T = RigidTransform3.identity()
    m = np.eye(4)
    for t in ts:
        T = tracked_pose(net, t, T, ReferenceFrame())
        m = m @ net.pose_at(t).matrix()
    np.testing.assert_allclose(T.matrix(), m, atol=1e-9)


def test_imu_frame_uses_stored_output():
    net = randomize(PoseNet(SMALL), 2)
    prev = RigidTransform3(g.axis_angle_to_quat([0, 1, 0], 0.3), [0, 1, 0])
    S = net.pose_at(0.2)
    T = tracked_pose(net, 0.3, prev, ReferenceFrame("imu"), prev_output=S)
    expect = prev.matrix() @ np.linalg.inv(S.matrix()) @ net.pose_at(0.3).matrix()
    np.testing.assert_allclose(T.matrix(), expect, atol=1e-12)


def test_intrinsic_pose():
    f_o = PoseNet(SMALL, seed=0)
    f_I = randomize(PoseNet(SMALL, seed=1), 3)
    T, T_I, T_o = intrinsic_pose(IntrinsicPair(f_o, f_I), 0.6)
    assert g.transform_distance(T, T_I)[0] < 1e-5 and g.transform_distance(T, T_I)[1] < 1e-9
    f_o = randomize(PoseNet(SMALL, seed=0), 4)
    f_I = PoseNet(SMALL, seed=1)
    T, _, T_o = intrinsic_pose(IntrinsicPair(f_o, f_I), 0.6)
    assert sum(g.transform_distance(T, T_o)) < 1e-5
    f_I = randomize(f_I, 6)
    pair = IntrinsicPair(f_o, f_I)
    T, T_I, T_o = intrinsic_pose(pair, 0.25)
    assert T == g.compose(T_o, T_I)
    assert pair.is_keyframe(0) and pair.is_keyframe(20) and not pair.is_keyframe(5)


def test_dq_matches_finite_difference():
    net = randomize(PoseNet(PoseNetConfig(layers=3, width=16, activation="sigmoid")), 1, 1.0)
    t, h = 0.37, 1e-5
    jets = net.pose_jets([t])
    qp, vp = net.pose_tensors([t + h])
    qm, vm = net.pose_tensors([t - h])
    np.testing.assert_allclose(jets["dq"].detach().numpy(), ((qp - qm) / (2 * h)).detach().numpy(), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(jets["dv"].detach().numpy(), ((vp - vm) / (2 * h)).detach().numpy(), rtol=1e-6, atol=1e-9)
    q0, v0 = net.pose_tensors([t])
    ddv_fd = (vp - 2 * v0 + vm) / h**2
    np.testing.assert_allclose(jets["ddv"].detach().numpy(), ddv_fd.detach().numpy(), rtol=1e-3, atol=1e-4)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_unit_and_bounded_outputs(seed, ts):
    net = randomize(PoseNet(SMALL, seed=seed), seed, 2.0)
    with torch.no_grad():
        u = net.pre_normalized(ts)
        q, _ = net.pose_tensors(ts)
    assert torch.all(u.abs() <= 1)
    np.testing.assert_allclose(q.norm(dim=-1).numpy(), 1.0, atol=1e-12)


def test_lipschitz_on_grid():
    net = randomize(PoseNet(SMALL, seed=0), 0, 0.5)
    ts = np.linspace(0, 1, 10_001)
    with torch.no_grad():
        q, v = net.pose_tensors(ts)
        jets = net.pose_jets(ts)
    step = torch.cat([q, v], 1).diff(dim=0).norm(dim=1).max().item()
    C = torch.cat([jets["dq"], jets["dv"]], 1).norm(dim=1).max().item()
    # bounded speed means a grid step can move the pose by at most ~C * dt
    assert step <= 1.05 * C * 1e-4 + 1e-12


def test_continuity_coupling():
    torch.manual_seed(0)
    net = PoseNet(PoseNetConfig(layers=8, width=256), seed=0)
    before = {t: net.pose_tensors([t]) for t in (0.51, 0.99)}
    opt = PoseOptimizer(net, 1, decay=False)
    target = torch.tensor([[0.5, 0.2, -0.3]], dtype=torch.float64)
    opt.step(lambda: (net.pose_tensors([0.5])[1] - target).abs().sum())
    after = {t: net.pose_tensors([t]) for t in (0.51, 0.99)}
    d = {t: (after[t][1] - before[t][1]).norm().item() for t in before}
    assert d[0.51] > 0
    assert d[0.99] < d[0.51]


def test_checkpoint(tmp_path):
    net = randomize(PoseNet(SMALL, seed=3), 3)
    net.save(tmp_path / "p.ckpt", {"note": "x"})
    from contpose.diffnet import load_checkpoint

    nets, meta = load_checkpoint(tmp_path / "p.ckpt")
    assert set(nets) == {"trans", "rot"} and meta["note"] == "x" and meta["encoding"]["bands"] == 5


def test_invalid_config():
    with pytest.raises(ValueError):
        PoseNetConfig(architecture="shared")
    with pytest.raises(ValueError):
        ReferenceFrame("camera")
