"""Batched torch versions of the quaternion / SE(3) algebra in ``geometry``.

Same conventions (Hamilton, scalar first, ``R(q)`` body -> parent). Shapes are
``(..., 4)`` for quaternions and ``(..., 3)`` for vectors; no canonicalization.
"""

from __future__ import annotations

import numpy as np
import torch

from contpose.geometry import RigidTransform2, RigidTransform3, UnitQuaternion


def qmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        -1,
    )


def qconj(q: torch.Tensor) -> torch.Tensor:
    return q * q.new_tensor([1.0, -1.0, -1.0, -1.0])


def qnormalize(q: torch.Tensor) -> torch.Tensor:
    return q / q.norm(dim=-1, keepdim=True)


def qmat(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = qnormalize(q).unbind(-1)
    m = torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        -1,
    )
    return m.reshape(m.shape[:-1] + (3, 3))


def qrot(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Rotate vectors ``v`` by unit quaternions ``q`` (broadcasting)."""
    return (qmat(q) @ v.unsqueeze(-1)).squeeze(-1)


def sign_align(q: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Flip ``q`` onto the hemisphere of ``ref`` (double-cover handling)."""
    s = torch.where((q * ref).sum(-1, keepdim=True) < 0, -1.0, 1.0).to(q.dtype)
    return q * s


def geodesic(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    d = qmul(qconj(a), b)
    return 2 * torch.atan2(d[..., 1:].norm(dim=-1), d[..., 0].abs())


def se3_compose(qa, ta, qb, tb):
    return qmul(qa, qb), qrot(qa, tb) + ta


def se3_inverse(q, t):
    qi = qconj(q)
    return qi, -qrot(qi, t)


def se3_apply_inverse(q, t, p):
    """``T⁻¹ p`` for pose ``(q, t)``; ``p`` is ``(..., M, 3)``, q/t ``(..., 4)``/``(..., 3)``."""
    r = qmat(q)
    return (p - t.unsqueeze(-2)) @ r


def se2_compose(a_th, a_t, b_th, b_t):
    c, s = torch.cos(a_th), torch.sin(a_th)
    x = c * b_t[..., 0] - s * b_t[..., 1] + a_t[..., 0]
    y = s * b_t[..., 0] + c * b_t[..., 1] + a_t[..., 1]
    return a_th + b_th, torch.stack([x, y], -1)


# ---------------------------------------------------------- value wrappers


def pose_to_tensors(T: RigidTransform3, dtype=torch.float64):
    return torch.tensor(T.rotation.as_array(), dtype=dtype), torch.tensor(T.t, dtype=dtype)


def poses_to_tensors(Ts, dtype=torch.float64):
    q = torch.tensor(np.stack([T.rotation.as_array() for T in Ts]), dtype=dtype)
    t = torch.tensor(np.stack([T.t for T in Ts]), dtype=dtype)
    return q, t


def tensors_to_pose(q: torch.Tensor, t: torch.Tensor) -> RigidTransform3:
    return RigidTransform3(
        UnitQuaternion.from_array(q.detach().double().cpu().numpy()), t.detach().double().cpu().numpy()
    )


def tensors_to_pose2(theta: torch.Tensor, t: torch.Tensor) -> RigidTransform2:
    return RigidTransform2(float(theta.detach()), t.detach().double().cpu().numpy())
