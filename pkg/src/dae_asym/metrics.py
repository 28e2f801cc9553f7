"""Learning metrics predicted from a replica solution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import Activation, Quadrature, psd_sqrt
from .replica import ReplicaSolution, _moments, hat_update

UNDEFINED = float("nan")


@dataclass
class TheoryMetrics:
    mse: float
    mse_circ: float
    theta: np.ndarray
    weight_norm2_per_d: float
    b_hat: float
    train_error: float
    gap_per_d: Optional[float] = None


def mse_rescaling(source, weights, delta: float, d: int, b_hat: float) -> float:
    """MSE of the pure rescaling denoiser x -> b_hat * x_noisy at dimension d."""
    if d < 1:
        raise ValueError("d must be positive")
    g, t2 = _moments(source)
    s = np.sqrt(1.0 - delta)
    return float(d * delta * b_hat**2 + (1.0 - s * b_hat) ** 2 * np.dot(weights, t2 + d * g))


def bottleneck_gap(source, weights, delta: float) -> float:
    """Per-dimension MSE gap between the no-skip network and the full DAE."""
    g, _ = _moments(source)
    T = float(np.dot(weights, g))
    den = T * (1.0 - delta) + delta
    return 0.0 if den == 0 else T**2 * (1.0 - delta) / den


def _setting(sol: ReplicaSolution):
    """(delta, b, s) as seen by the metric formulas; the reconstruction case has no noise."""
    if sol.variant == "rae":
        return 0.0, 0.0, 1.0
    return sol.delta, sol.b_hat, np.sqrt(1.0 - sol.delta)


def mse_corrections(sol: ReplicaSolution, quad: Optional[Quadrature] = None) -> float:
    """mse - mse_circ: the two Gaussian averages over z and (u, v)."""
    quad = sol.cfg.quadrature if quad is None else quad
    st, act = sol.stats, sol.act
    p = st.p
    delta, b, s = _setting(sol)
    z, wz = quad.rule(p)
    uv, wuv = quad.rule(2 * p)
    u, v = uv[:, :p], uv[:, p:]
    q_root = psd_sqrt(st.q)
    total = 0.0
    for k in range(st.K):
        qk_root = psd_sqrt(st.qk[k])
        C_root = psd_sqrt(delta * st.q + (1.0 - delta) * st.qk[k])
        S = act(s * st.mk[k] + z @ C_root.T)
        t1 = wz @ np.einsum("ni,ij,nj->n", S, st.q, S)
        lam_k = st.mk[k] + u @ qk_root.T
        noise = np.sqrt(delta) * v @ q_root.T
        S2 = act(s * lam_k + noise)
        t2 = wuv @ np.sum(S2 * ((1.0 - b * s) * lam_k - b * noise), axis=1)
        total += sol.weights[k] * (t1 - 2.0 * t2)
    return float(total)


def mse_theory(sol: ReplicaSolution, source, d: int, quad: Optional[Quadrature] = None) -> float:
    """Asymptotic test MSE at explicit dimension d (Theta(d) part included)."""
    delta, b, _ = _setting(sol)
    return mse_rescaling(source, sol.weights, delta, d, b) + mse_corrections(sol, quad)


def cosine_theory(sol: ReplicaSolution, source) -> np.ndarray:
    """theta_ik = (m_k)_i / sqrt(q_ii * ||mu_k||^2); undefined entries are nan.

    Rows are sign-aligned so that the overlap with the first mean is
    nonnegative, the convention also used for simulated weights.
    """
    _, t2 = _moments(source)
    st = sol.stats
    qd = np.diag(st.q)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = st.mk.T / np.sqrt(np.outer(qd, t2))
    ok = (qd[:, None] > 0) & (t2[None, :] > 0)
    theta = np.where(ok, theta, UNDEFINED)
    sign = np.where(np.nan_to_num(theta[:, :1]) < 0, -1.0, 1.0)
    return theta * sign


def train_error_theory(sol: ReplicaSolution, source, d: int) -> float:
    """Asymptotic training error (mean over samples of ||x - f||^2)."""
    delta, b, s = _setting(sol)
    _, nodes = hat_update(sol.stats, sol.b_hat, sol.delta, max(sol.alpha, 1.0), sol.weights, sol.act, sol.cfg,
                          "rae" if sol.variant == "rae" else "full_dae", return_prox=True)
    st, act = sol.stats, sol.act
    total = mse_rescaling(source, sol.weights, delta, d, b)
    for k, nd in enumerate(nodes):
        X, Y = nd["X"], nd["Y"]
        S = act(s * Y + X)
        val = np.einsum("ni,ij,nj->n", S, st.q, S) - 2.0 * np.sum(S * ((1.0 - s * b) * Y - b * X), axis=1)
        total += sol.weights[k] * float(nd["w"] @ val)
    return float(total)


def theory_metrics(sol: ReplicaSolution, source, d: int, with_train: bool = True) -> TheoryMetrics:
    delta, b, _ = _setting(sol)
    gap = bottleneck_gap(source, sol.weights, sol.delta) if sol.variant in ("full_dae", "anisotropic_k2") else None
    return TheoryMetrics(
        mse=mse_theory(sol, source, d),
        mse_circ=mse_rescaling(source, sol.weights, delta, d, b),
        theta=cosine_theory(sol, source),
        weight_norm2_per_d=float(np.trace(sol.stats.q)),
        b_hat=sol.b_hat,
        train_error=train_error_theory(sol, source, d) if with_train else UNDEFINED,
        gap_per_d=gap,
    )
