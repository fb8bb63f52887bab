"""Relative pose regression (Procrustes head) and absolute pose regression loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError, InputError, SingularInputError
from ..nn import Linear, Module, Parameter

_RANK_TOL = 1e-10


def _special_svd(M: np.ndarray):
    """SVD rearranged so that U' diag(s') V'^T = M with det(U' V'^T) = +1."""
    U, S, Vt = np.linalg.svd(M)
    if np.any(S[..., 2] <= _RANK_TOL * S[..., 0]):
        raise SingularInputError("rank-deficient 3x3 input to Procrustes")
    d = np.sign(np.linalg.det(U @ Vt))
    flip = d < 0
    if np.any(flip & (S[..., 1] - S[..., 2] <= _RANK_TOL * S[..., 0])):
        raise SingularInputError("reflection with repeated smallest singular values")
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    S = S.copy()
    S[..., 2] *= d
    return U, S, Vt


def procrustes_orthonormalize(M) -> np.ndarray:
    """Nearest rotation to M (Frobenius norm): U diag(1, 1, det(U V^T)) V^T."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[-2:] != (3, 3):
        raise DimensionError(f"expected (..., 3, 3), got {M.shape}")
    U, _, Vt = _special_svd(M)
    return U @ Vt


def procrustes(M) -> Tensor:
    """Differentiable special Procrustes on (..., 3, 3) tensors."""
    M = ad.tensor(M)
    if M.shape[-2:] != (3, 3):
        raise DimensionError(f"expected (..., 3, 3), got {M.shape}")
    U, S, Vt = _special_svd(M.data.astype(np.float64))
    R = U @ Vt
    denom = S[..., :, None] + S[..., None, :]

    def backward(g):
        Gp = np.swapaxes(U, -1, -2) @ g.astype(np.float64) @ np.swapaxes(Vt, -1, -2)
        skew = Gp - np.swapaxes(Gp, -1, -2)
        X = np.where(np.eye(3, dtype=bool), 0.0, skew / np.where(np.eye(3, dtype=bool), 1.0, denom))
        return ((U @ X @ Vt).astype(M.dtype),)

    return ad.make_op(R.astype(M.dtype), (M,), backward)


@dataclass
class Pose:
    R: object  # (..., 3, 3) rotation, array or Tensor
    t: object  # (..., 3) metres


def relative_pose_loss(pred: Pose, gt: Pose, lam: float = 100.0) -> Tensor:
    """||R - R_gt||_F^2 + lam * ||t - t_gt||^2, averaged over any batch axes."""
    dR = ad.sub(pred.R, gt.R)
    dt = ad.sub(pred.t, gt.t)
    per = ad.sum_(dR * dR, axis=(-2, -1)) + lam * ad.sum_(dt * dt, axis=-1)
    return ad.mean(per)


class PoseHead(Module):
    """Tokens -> 64-d -> flatten -> MLP(1024, ReLU) -> 12 numbers -> (Procrustes(M), t)."""

    def __init__(self, dim: int, num_tokens: int, rng=None, token_dim: int = 64, hidden: int = 1024):
        self.num_tokens = num_tokens
        self.reduce = Linear(dim, token_dim, rng)
        self.fc1 = Linear(num_tokens * token_dim, hidden, rng)
        self.fc2 = Linear(hidden, 12, rng)

    def raw(self, features) -> Tensor:
        features = ad.tensor(features)
        if features.shape[-2] != self.num_tokens:
            raise DimensionError(f"expected {self.num_tokens} tokens, got {features.shape[-2]}")
        x = self.reduce(features)
        x = ad.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))
        return self.fc2(ad.relu(self.fc1(x)))

    def forward(self, features) -> Pose:
        out = self.raw(features)
        lead = out.shape[:-1]
        M = ad.reshape(out[(Ellipsis, slice(0, 9))], lead + (3, 3))
        return Pose(procrustes(M), out[(Ellipsis, slice(9, 12))])


def _hemisphere(q: np.ndarray) -> np.ndarray:
    return np.where(q[..., :1] < 0, -1.0, 1.0)


def quat_log(q) -> Tensor:
    """Rotation vector of a unit quaternion (w, x, y, z), after flipping to w >= 0.

    theta = 2 atan2(|xyz|, w), result = theta * xyz / |xyz|; near the identity
    the ratio is replaced by its series 2/w.
    """
    q = ad.tensor(q)
    qd = q.data.astype(np.float64)
    if q.shape[-1] != 4:
        raise DimensionError(f"quaternions need 4 components, got {q.shape}")
    if np.any(np.abs(np.linalg.norm(qd, axis=-1) - 1.0) > 1e-4):
        raise InputError("quaternion is not unit norm (tolerance 1e-4)")
    sign = _hemisphere(qd)
    qs = qd * sign
    w, v = qs[..., 0], qs[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    small = s < 1e-8
    s_safe = np.where(small, 1.0, s)
    ang = np.arctan2(s, w)
    phi = np.where(small, 2.0 / w, 2.0 * ang / s_safe)
    out = phi[..., None] * v

    def backward(g):
        g = g.astype(np.float64)
        r2 = s * s + w * w
        # d phi / d s, zero in the series branch
        dphi_ds = np.where(small, 0.0, (2.0 * w / r2) / s_safe - 2.0 * ang / (s_safe * s_safe))
        gv_dot = (g * v).sum(axis=-1)
        gvec = phi[..., None] * g + (dphi_ds * gv_dot / s_safe)[..., None] * v
        dphi_dw = np.where(small, -2.0 / (w * w), -2.0 / r2)
        gw = dphi_dw * gv_dot
        full = np.concatenate([gw[..., None], gvec], axis=-1) * sign
        return (full.astype(q.dtype),)

    return ad.make_op(out.astype(q.dtype), (q,), backward)


class AprWeights(Module):
    """Learned position/rotation balance, initialised to beta = 0, gamma = -3."""

    def __init__(self, beta: float = 0.0, gamma: float = -3.0):
        self.beta = Parameter(np.array(beta))
        self.gamma = Parameter(np.array(gamma))


def apr_loss(pred, gt, w: AprWeights) -> Tensor:
    """exp(-beta) |p - p_gt|_1 + exp(-gamma) |log q - log q_gt|_1 + beta + gamma, batch-averaged."""
    p, q = pred
    p_gt, q_gt = gt
    dp = ad.abs_(ad.sub(p, p_gt))
    dq = ad.abs_(ad.sub(quat_log(q), quat_log(q_gt)))
    pos = ad.mean(ad.sum_(dp, axis=-1))
    rot = ad.mean(ad.sum_(dq, axis=-1))
    return ad.exp(-w.beta) * pos + ad.exp(-w.gamma) * rot + w.beta + w.gamma


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.r_[np.cos(angle / 2.0), np.sin(angle / 2.0) * axis]
