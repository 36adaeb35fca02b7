"""Encoder training losses: triplet, relative-pose, and distance-based.

Each public function returns the scalar loss. The ``*_grads`` helpers also
return gradients with respect to the descriptor inputs, which is what the
encoder training loop feeds back through the network. Subgradient 0 is
used at the non-differentiable kinks (active hinge boundary, zero
residuals).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimMismatch, ZeroVector

_EPS = 1e-15


def _unit(f: np.ndarray) -> tuple[np.ndarray, float]:
    n = float(np.linalg.norm(f))
    if n <= _EPS:
        raise ZeroVector("cannot L2-normalize a zero descriptor")
    return f / n, n


def loss_triplet(f_q, f_p, f_n, margin: float) -> float:
    """Hinged triplet loss on L2-normalized descriptors.

    max(d(q, p) - d(q, n) + margin, 0), where d is Euclidean distance and
    all three inputs are normalized to unit length first.
    """
    f_q = np.asarray(f_q, dtype=np.float64)
    f_p = np.asarray(f_p, dtype=np.float64)
    f_n = np.asarray(f_n, dtype=np.float64)
    if not (f_q.shape == f_p.shape == f_n.shape):
        raise DimMismatch("triplet descriptors must share one dimension")
    u_q, _ = _unit(f_q)
    u_p, _ = _unit(f_p)
    u_n, _ = _unit(f_n)
    d_p = float(np.linalg.norm(u_q - u_p))
    d_n = float(np.linalg.norm(u_q - u_n))
    return max(d_p - d_n + margin, 0.0)


def loss_relative(dp_hat, dp_gt) -> float:
    """Euclidean norm of the stacked 7-component relative-pose residual."""
    a = np.asarray(dp_hat, dtype=np.float64).reshape(-1)
    b = np.asarray(dp_gt, dtype=np.float64).reshape(-1)
    if a.shape[0] != 7 or b.shape[0] != 7:
        raise DimMismatch("relative-pose vectors must have exactly 7 components")
    return float(np.linalg.norm(a - b))


def loss_distance(f_1, f_2, t_1, t_2) -> float:
    """| descriptor distance minus physical distance |.

    Penalizes the gap between the Euclidean feature distance and the
    Euclidean translation distance of the same pair.
    """
    f_1 = np.asarray(f_1, dtype=np.float64)
    f_2 = np.asarray(f_2, dtype=np.float64)
    if f_1.shape != f_2.shape:
        raise DimMismatch("descriptor pair must share one dimension")
    df = float(np.linalg.norm(f_1 - f_2))
    dt = float(np.linalg.norm(np.asarray(t_1, dtype=np.float64) - np.asarray(t_2, dtype=np.float64)))
    return abs(df - dt)


def _normalize_rows_with_grad(f: np.ndarray):
    """Row-normalize; returns (units, function mapping dL/du to dL/df)."""
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms <= _EPS):
        raise ZeroVector("cannot L2-normalize a zero descriptor")
    u = f / norms

    def backprop(g: np.ndarray) -> np.ndarray:
        # d u / d f = (I - u u^T) / ||f||, applied row-wise.
        proj = np.sum(g * u, axis=1, keepdims=True)
        return (g - proj * u) / norms

    return u, backprop


def triplet_grads(f_q: np.ndarray, f_p: np.ndarray, f_n: np.ndarray, margin: float):
    """Batched triplet loss and input gradients.

    Inputs are (batch, dim) raw descriptors; returns (mean loss, g_q, g_p,
    g_n) where each gradient is dMeanLoss/dInput.
    """
    b = f_q.shape[0]
    u_q, back_q = _normalize_rows_with_grad(f_q)
    u_p, back_p = _normalize_rows_with_grad(f_p)
    u_n, back_n = _normalize_rows_with_grad(f_n)
    diff_p = u_q - u_p
    diff_n = u_q - u_n
    d_p = np.linalg.norm(diff_p, axis=1)
    d_n = np.linalg.norm(diff_n, axis=1)
    raw = d_p - d_n + margin
    active = raw > 0.0
    loss = float(np.mean(np.maximum(raw, 0.0)))

    w = active.astype(np.float64) / b
    safe_p = np.maximum(d_p, _EPS)[:, None]
    safe_n = np.maximum(d_n, _EPS)[:, None]
    g_dp = w[:, None] * diff_p / safe_p
    g_dn = -w[:, None] * diff_n / safe_n
    g_uq = g_dp + g_dn
    g_up = -g_dp
    g_un = -g_dn
    return loss, back_q(g_uq), back_p(g_up), back_n(g_un)


def relative_grads(dp_hat: np.ndarray, dp_gt: np.ndarray):
    """Batched relative-pose loss and gradient w.r.t. the estimate."""
    resid = dp_hat - dp_gt
    norms = np.linalg.norm(resid, axis=1)
    loss = float(np.mean(norms))
    safe = np.maximum(norms, _EPS)[:, None]
    g = np.where(norms[:, None] > 0.0, resid / safe, 0.0) / dp_hat.shape[0]
    return loss, g


def distance_grads(f_1: np.ndarray, f_2: np.ndarray, t_1: np.ndarray, t_2: np.ndarray):
    """Batched distance loss and gradients w.r.t. both descriptors."""
    diff = f_1 - f_2
    df = np.linalg.norm(diff, axis=1)
    dt = np.linalg.norm(t_1 - t_2, axis=1)
    gap = df - dt
    loss = float(np.mean(np.abs(gap)))
    b = f_1.shape[0]
    safe = np.maximum(df, _EPS)[:, None]
    sign = np.sign(gap)[:, None]
    g1 = np.where(df[:, None] > 0.0, sign * diff / safe, 0.0) / b
    return loss, g1, -g1
