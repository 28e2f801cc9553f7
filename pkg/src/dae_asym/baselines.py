"""Reference denoisers: Tweedie oracle, Bayes (means-agnostic) and PCA.

The closed forms for the oracle and Bayes MSEs concern the symmetric binary
mixture with means +-mu (|mu| = 1 unless stated) and covariances sigma2 * I.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import NoConvergence, RankDeficient, SingularCovariance
from .mixture import MixtureSpec
from .numerics import _hermgauss, gauss_expect_1d


def _rescaling_mse(d, delta, b, sigma2, mu_norm2):
    s = np.sqrt(1.0 - delta)
    return d * delta * b**2 + (1.0 - s * b) ** 2 * (mu_norm2 + d * sigma2)


def tweedie_denoise(x_noisy: np.ndarray, spec: MixtureSpec, delta: float, return_resp: bool = False):
    """Posterior mean E[x | x_noisy] under the mixture.

    Per cluster, x_noisy ~ N(s mu_k, s^2 Sigma_k + delta I) with
    s = sqrt(1 - delta), and E[x | x_noisy, k] = mu_k + s Sigma_k C_k^{-1}
    (x_noisy - s mu_k).  Responsibilities use log-sum-exp.
    """
    X = np.atleast_2d(np.asarray(x_noisy, dtype=float))
    n, d = X.shape
    s = np.sqrt(1.0 - delta)
    logp = np.empty((n, spec.K))
    cond = np.empty((spec.K, n, d))
    for k in range(spec.K):
        C = s * s * spec.covariances[k] + delta * np.eye(d)
        ev, U = np.linalg.eigh(C)
        if ev[0] <= 1e-14 * max(ev[-1], 1e-300):
            raise SingularCovariance(f"noisy covariance of cluster {k} is singular")
        R = (X - s * spec.means[k]) @ U
        logp[:, k] = (np.log(spec.weights[k]) if spec.weights[k] > 0 else -np.inf) - 0.5 * (
            np.sum(R**2 / ev, axis=1) + np.sum(np.log(ev)))
        cond[k] = spec.means[k] + s * ((R / ev) @ U.T) @ spec.covariances[k]
    resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    out = np.einsum("nk,knd->nd", resp, cond)
    if np.ndim(x_noisy) == 1:
        out, resp = out[0], resp[0]
    return (out, resp) if return_resp else out


def binary_tweedie(x_noisy: np.ndarray, mu: np.ndarray, sigma2: float, delta: float) -> np.ndarray:
    """Closed-form posterior mean for means +-mu, covariance sigma2 I, rho = 1/2."""
    s = np.sqrt(1.0 - delta)
    D = sigma2 * (1.0 - delta) + delta
    X = np.asarray(x_noisy, dtype=float)
    return (s * sigma2 / D) * X + (delta / D) * np.tanh((X @ mu) * s / D)[..., None] * mu


def pca_plugin_denoise(x_noisy: np.ndarray, mu_hat: np.ndarray, sigma2: float, delta: float) -> np.ndarray:
    """Binary Tweedie formula with the mean replaced by an estimate."""
    return binary_tweedie(x_noisy, np.asarray(mu_hat, dtype=float), sigma2, delta)


def oracle_mse_theory(sigma2: float, delta: float, d: int, mu_norm2: float = 1.0, nodes: int = 80):
    """(mse* - mse_circ, mse_circ) for the oracle denoiser at dimension d.

    With D = sigma2 (1 - delta) + delta and a = ((1-delta) r + sqrt(1-delta)
    sqrt(D r) z) / D (r = |mu|^2), the excess is
    (delta/D)^2 r E tanh(a)^2 - 2 (delta/D)(1 - b sqrt(1-delta)) r E tanh(a).
    """
    s = np.sqrt(1.0 - delta)
    D = sigma2 * (1.0 - delta) + delta
    b = s * sigma2 / D
    c = delta / D
    r = mu_norm2
    arg = lambda z: ((1.0 - delta) * r + s * np.sqrt(D * r) * z) / D
    e2 = gauss_expect_1d(lambda z: np.tanh(arg(z)) ** 2, nodes)
    e1 = gauss_expect_1d(lambda z: np.tanh(arg(z)), nodes)
    excess = c * c * r * e2 - 2.0 * c * (1.0 - b * s) * r * e1
    return float(excess), float(_rescaling_mse(d, delta, b, sigma2, r))


@dataclass
class BayesStats:
    q: float
    m: float
    V: float
    qh: float
    mh: float
    Vh: float
    sigma2: float
    alpha: float
    sigma_hat2: float
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    small_alpha: bool = False


@dataclass(frozen=True)
class BayesConfig:
    damping: float = 0.5
    tol: float = 1e-10
    max_iter: int = 10000
    nodes: int = 80
    m_init: float = 0.1
    # "nishimori": q is the two-replica overlap and qh = alpha E tanh^2 / sigma2, so that m = q at the fixed point.
    # "printed": q carries an extra sigma_hat2/(1 + Vh sigma_hat2) term and qh = alpha V / sigma2; this breaks
    # m = q and its MSE can exceed that of the PCA plug-in, so it is kept for comparison only.
    convention: str = "nishimori"


def _bayes_hats(q, m, V, alpha, sigma2, nodes, convention):
    sig = np.sqrt(sigma2)
    x, w = _hermgauss(nodes)
    th = np.tanh((sig * np.sqrt(max(q, 0.0)) * x + m) / sigma2)
    if q > 0:
        Vh = -alpha / (sig * np.sqrt(q)) * np.sum(w * th * x)
    else:  # Stein limit of the same average
        Vh = -alpha / sigma2 * np.sum(w * (1.0 - th**2))
    qh = alpha * V / sigma2 if convention == "printed" else alpha / sigma2 * np.sum(w * th**2)
    mh = alpha / sigma2 * np.sum(w * th)
    return qh, mh, Vh


def _bayes_stats(qh, mh, Vh, sh2, convention):
    den = 1.0 + Vh * sh2
    V = sh2 / den
    q = sh2**2 * (qh + mh**2) / den**2 + (sh2 / den if convention == "printed" else 0.0)
    m = sh2 * mh / den
    return q, m, V


def bayes_fixed_point(alpha: float, sigma2: float, cfg: BayesConfig = BayesConfig()) -> BayesStats:
    """Damped iteration of the six scalar equations for the means-agnostic denoiser."""
    if alpha < 0 or sigma2 <= 0:
        raise ValueError("need alpha >= 0 and sigma2 > 0")
    if cfg.convention not in ("printed", "nishimori"):
        raise ValueError(f"unknown convention {cfg.convention!r}")
    sh2 = sigma2 / (sigma2 + alpha)
    q, m, V = sh2, cfg.m_init, sh2
    res = np.inf
    for it in range(1, cfg.max_iter + 1):
        qh, mh, Vh = _bayes_hats(q, m, V, alpha, sigma2, cfg.nodes, cfg.convention)
        nq, nm, nV = _bayes_stats(qh, mh, Vh, sh2, cfg.convention)
        res = max(abs(nq - q), abs(nm - m), abs(nV - V))
        if res <= cfg.tol:
            return BayesStats(q, m, V, qh, mh, Vh, sigma2, alpha, sh2, it, res, True, alpha < 1e-3)
        g = cfg.damping
        q, m, V = (1 - g) * q + g * nq, (1 - g) * m + g * nm, (1 - g) * V + g * nV
    raise NoConvergence([res])


def bayes_residual(st: BayesStats, cfg: BayesConfig = BayesConfig()) -> float:
    qh, mh, Vh = _bayes_hats(st.q, st.m, st.V, st.alpha, st.sigma2, cfg.nodes, cfg.convention)
    nq, nm, nV = _bayes_stats(qh, mh, Vh, st.sigma_hat2, cfg.convention)
    return max(abs(nq - st.q), abs(nm - st.m), abs(nV - st.V))


def bayes_mse(st: BayesStats, sigma2: float, delta: float, d: int, nodes: int = 80):
    """(mse_b - mse_circ, mse_circ) from converged Bayes statistics."""
    s = np.sqrt(1.0 - delta)
    D = sigma2 * (1.0 - delta) + delta
    b = s * sigma2 / D
    c = delta / D
    q, m, V = st.q, st.m, st.V
    # the posterior-mean denoiser thresholds s x_noisy . mu_a / D, whose field is s m + sqrt(D) u
    arg = lambda g: s * (s * m + np.sqrt(D) * g) / D
    t1 = gauss_expect_1d(lambda z: np.tanh(arg(np.sqrt(q + V) * z)), nodes)
    # (u, v) ~ N(0, [[q+V, q], [q, q+V]]) = sqrt(q) g + sqrt(V) (z1, z2)
    x, w = _hermgauss(nodes)
    if q > 0:
        g = np.sqrt(q) * x
        inner = np.array([np.sum(w * np.tanh(arg(gi + np.sqrt(V) * x))) for gi in g])
        t2 = float(np.sum(w * inner**2))
    else:
        t2 = 0.0
    excess = -2.0 * c * (1.0 - b * s) * m * t1 + c * c * q * t2
    return float(excess), float(_rescaling_mse(d, delta, b, sigma2, 1.0))


@dataclass(frozen=True, eq=False)
class PcaBasis:
    components: np.ndarray  # (p, d), orthonormal rows
    eigenvalues: np.ndarray  # all eigenvalues of the sample covariance, descending
    gap_ratio: float  # lambda_p / lambda_{p+1}

    @property
    def low_separation(self) -> bool:
        return self.gap_ratio < 1.5


def pca_fit(clean: np.ndarray, p: int = 1, center: bool = True) -> PcaBasis:
    """Top-p eigenvectors of the sample covariance (first nonzero entry positive)."""
    X = np.asarray(clean, dtype=float)
    n, d = X.shape
    if n < 2:
        raise RankDeficient("need at least 2 samples")
    Xc = X - X.mean(0) if center else X
    C = Xc.T @ Xc / (n - 1)
    ev, U = np.linalg.eigh((C + C.T) / 2)
    ev, U = ev[::-1], U[:, ::-1]
    rank = int(np.sum(ev > 1e-12 * max(ev[0], 1e-300)))
    if p > rank:
        raise RankDeficient(f"p={p} exceeds the sample covariance rank {rank}")
    comps = U[:, :p].T.copy()
    for i in range(p):
        nz = np.flatnonzero(np.abs(comps[i]) > 1e-12)
        if nz.size and comps[i, nz[0]] < 0:
            comps[i] *= -1
    gap = ev[p - 1] / ev[p] if p < d and ev[p] > 0 else np.inf
    return PcaBasis(comps, ev, float(gap))


def pca_denoise(x_noisy: np.ndarray, basis: PcaBasis, rescaled: bool = False, delta: Optional[float] = None):
    """Orthogonal projection onto the PCA span.

    With ``rescaled`` each component is additionally shrunk by the linear
    MMSE factor sqrt(1-delta) l / ((1-delta) l + delta), l the clean
    eigenvalue along it.
    """
    P = basis.components
    coef = np.asarray(x_noisy, dtype=float) @ P.T
    if rescaled:
        if delta is None:
            raise ValueError("the rescaled variant needs delta")
        lam = basis.eigenvalues[: P.shape[0]]
        coef = coef * np.sqrt(1 - delta) * lam / ((1 - delta) * lam + delta)
    return coef @ P


def pca_reconstruction_mse(basis: PcaBasis, spec: MixtureSpec) -> float:
    """Exact population error E||x - P P^T x||^2 for the mixture."""
    P = basis.components
    second = np.einsum("k,kij->ij", spec.weights, spec.covariances) + np.einsum(
        "k,ki,kj->ij", spec.weights, spec.means, spec.means)
    return float(np.trace(second) - np.trace(P @ second @ P.T))
