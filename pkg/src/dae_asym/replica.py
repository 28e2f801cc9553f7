"""Damped fixed-point solver for the replica saddle-point equations.

The order parameters are p x p matrices q, V and per cluster q_k, V_k and
p-vectors m_k; their conjugates carry hats.  One iteration maps
stats -> hats (Gaussian averages of the inner minimizer) -> stats (exact
resolvent sums over the spectral measure, or dense traces for the
anisotropic binary case).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import DegenerateProblem, NoConvergence, SingularResolvent
from .mixture import MixtureSpec, SpectralMeasure, binary_spec
from .numerics import Activation, Quadrature, psd_pinv_sqrt, psd_sqrt, sym
from .prox import ProxProblem, solve_batch

log = logging.getLogger(__name__)

VARIANTS = ("full_dae", "bottleneck", "rae", "anisotropic_k2")


@dataclass(frozen=True, eq=False)
class SummaryStats:
    q: np.ndarray  # (p, p)
    V: np.ndarray  # (p, p)
    qk: np.ndarray  # (K, p, p)
    Vk: np.ndarray  # (K, p, p)
    mk: np.ndarray  # (K, p)

    @property
    def p(self) -> int:
        return self.q.shape[0]

    @property
    def K(self) -> int:
        return self.mk.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in (self.q, self.V, self.qk, self.Vk, self.mk)])

    def mix(self, other: "SummaryStats", gamma: float) -> "SummaryStats":
        """(1 - gamma) * self + gamma * other, field by field."""
        f = lambda a, b: (1.0 - gamma) * a + gamma * b
        return SummaryStats(f(self.q, other.q), f(self.V, other.V), f(self.qk, other.qk),
                            f(self.Vk, other.Vk), f(self.mk, other.mk))


@dataclass(frozen=True, eq=False)
class HatStats:
    qh: np.ndarray
    Vh: np.ndarray
    qkh: np.ndarray
    Vkh: np.ndarray
    mkh: np.ndarray

    @classmethod
    def zeros(cls, p: int, K: int) -> "HatStats":
        z = np.zeros((p, p))
        return cls(z, z.copy(), np.zeros((K, p, p)), np.zeros((K, p, p)), np.zeros((K, p)))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in (self.qh, self.Vh, self.qkh, self.Vkh, self.mkh)])


@dataclass(frozen=True)
class SolverConfig:
    damping: float = 0.3
    tol: float = 1e-7
    max_iter: int = 2000
    quadrature: Quadrature = field(default_factory=Quadrature)
    prox_tol: float = 1e-10
    prox_max_iter: int = 100
    m_init: float = 0.1
    raise_on_fail: bool = True

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(eq=False)
class ReplicaSolution:
    stats: SummaryStats
    hats: HatStats
    b_hat: float
    iterations: int
    converged: bool
    residual: float
    variant: str
    alpha: float
    delta: float
    lam: float
    weights: np.ndarray
    act: Activation
    cfg: SolverConfig
    residual_trace: list = field(default_factory=list, repr=False)
    prox_cache: Optional[list] = field(default=None, repr=False)


def _moments(source: Union[SpectralMeasure, MixtureSpec]) -> tuple[np.ndarray, np.ndarray]:
    """(mean of gamma_k, second moment of tau_k) for either problem description."""
    if isinstance(source, SpectralMeasure):
        return source.gamma_mean(), source.tau_second_moment()
    d = source.d
    return np.trace(source.covariances, axis1=1, axis2=2) / d, np.sum(source.means**2, axis=1)


def _mean_overlaps(source) -> np.ndarray:
    """Matrix of integrals of tau_j tau_k (equivalently mu_j . mu_k)."""
    if isinstance(source, SpectralMeasure):
        return np.einsum("a,aj,ak->jk", source.weight, source.tau, source.tau)
    return source.means @ source.means.T


def skip_strength(source, weights, delta: float) -> float:
    """Learned skip strength T sqrt(1-delta) / (T (1-delta) + delta)."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    g, _ = _moments(source)
    T = float(np.dot(weights, g))
    den = T * (1.0 - delta) + delta
    if den <= 0:
        raise DegenerateProblem("skip strength undefined at delta=0 with zero covariance")
    return T * np.sqrt(1.0 - delta) / den


def initial_stats(source, p: int, m_init: float = 0.1, q_init: float = 0.5) -> SummaryStats:
    g, _ = _moments(source)
    K = len(g)
    if np.any(g <= 0):
        raise DegenerateProblem("every cluster needs a nonzero covariance")
    I = np.eye(p)
    q = q_init * I
    ov = _mean_overlaps(source)
    sign = np.sign(ov[:, 0]) if ov[0, 0] > 0 else np.sign(np.diag(ov))
    sign = np.where(sign == 0, 1.0, sign)
    return SummaryStats(q, I.copy(), g[:, None, None] * q, g[:, None, None] * I,
                        m_init * sign[:, None] * np.ones((K, p)))


def _prox_nodes(stats: SummaryStats, b_hat, delta, act, cfg: SolverConfig, rae: bool, warm=None):
    """Inner minimizers on the quadrature nodes, one entry per cluster.

    Each entry is (points, weights, X, Y, centres) with points laid out as
    [xi, eta] (full) or [eta] (reconstruction).
    """
    p, K = stats.p, stats.K
    pts, wts = cfg.quadrature.rule(p if rae else 2 * p)
    if rae:
        eta, xi = pts, None
    else:
        xi, eta = pts[:, :p], pts[:, p:]
    q_root = psd_sqrt(stats.q)
    out = []
    for k in range(K):
        qk_root = psd_sqrt(stats.qk[k])
        cy = eta @ qk_root.T + stats.mk[k]
        prob = ProxProblem(Vk_inv=np.linalg.inv(stats.Vk[k]), q=stats.q, cy=cy, act=act)
        if not rae:
            prob.b = b_hat
            prob.delta = delta
            prob.V_inv = np.linalg.inv(stats.V)
            prob.cx = np.sqrt(delta) * xi @ q_root.T
        Z, _, _ = solve_batch(prob, cfg.prox_tol, cfg.prox_max_iter, None if warm is None else warm[k])
        X, Y = prob.split(Z)
        out.append(dict(xi=xi, eta=eta, w=wts, X=X, Y=Y, cy=cy, cx=prob.cx, Z=Z))
    return out


def hat_update(stats: SummaryStats, b_hat: float, delta: float, alpha: float, weights, act: Activation,
               cfg: SolverConfig, variant: str = "full_dae", warm=None, return_prox: bool = False):
    """Conjugate parameters from the current order parameters."""
    p, K = stats.p, stats.K
    rae = variant == "rae"
    if alpha == 0:
        hats = HatStats.zeros(p, K)
        return (hats, None) if return_prox else hats
    if not rae and delta <= 0:
        raise DegenerateProblem("the denoising variants need delta > 0")
    nodes = _prox_nodes(stats, b_hat, delta, act, cfg, rae, warm)
    qh = np.zeros((p, p))
    Vh = np.zeros((p, p))
    qkh = np.zeros((K, p, p))
    Vkh = np.zeros((K, p, p))
    mkh = np.zeros((K, p))
    V_inv = np.linalg.inv(stats.V)
    q_pinv_root = psd_pinv_sqrt(stats.q)
    s = 1.0 if rae else np.sqrt(1.0 - delta)
    for k, nd in enumerate(nodes):
        w = nd["w"]
        ak = alpha * weights[k]
        Vk_inv = np.linalg.inv(stats.Vk[k])
        ry = nd["Y"] - nd["cy"]
        Ery = w @ ry
        Eryry = np.einsum("n,ni,nj->ij", w, ry, ry)
        Eryeta = np.einsum("n,ni,nj->ij", w, ry, nd["eta"])
        qkh[k] = ak * Vk_inv @ Eryry @ Vk_inv
        Vkh[k] = sym(-ak * psd_pinv_sqrt(stats.qk[k]) @ Vk_inv @ Eryeta)
        mkh[k] = ak * Vk_inv @ Ery
        a = s * nd["Y"] + nd["X"]
        S = act(a)
        Ess = np.einsum("n,ni,nj->ij", w, S, S)
        if rae:
            Vh += ak * Ess
            continue
        rx = nd["X"] - nd["cx"]
        Erxrx = np.einsum("n,ni,nj->ij", w, rx, rx)
        Erxxi = np.einsum("n,ni,nj->ij", w, rx, nd["xi"])
        qh += (ak / delta) * V_inv @ Erxrx @ V_inv
        Vh += -ak * (q_pinv_root @ V_inv @ Erxxi / np.sqrt(delta) - Ess)
    hats = HatStats(sym(qh), sym(Vh), sym(qkh), Vkh, mkh)
    if return_prox:
        return hats, nodes
    return hats


def stat_update(hats: HatStats, measure: SpectralMeasure, lam: float) -> SummaryStats:
    """Order parameters as exact weighted sums over the atoms of the measure."""
    G, Tau, w = measure.gamma, measure.tau, measure.weight
    p = hats.qh.shape[0]
    A = lam * np.eye(p) + hats.Vh + np.einsum("ak,kij->aij", G, hats.Vkh)
    A = sym(A)
    ev = np.linalg.eigvalsh(A)
    bad = ev[:, 0] <= 0
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SingularResolvent(i, float(ev[i, 0]))
    R = np.linalg.inv(A)
    v = Tau @ hats.mkh  # (A, p)
    B = hats.qh + np.einsum("ak,kij->aij", G, hats.qkh) + v[:, :, None] * v[:, None, :]
    RBR = sym(R @ B @ R)
    q = np.einsum("a,aij->ij", w, RBR)
    qk = np.einsum("a,ak,aij->kij", w, G, RBR)
    V = np.einsum("a,aij->ij", w, R)
    Vk = np.einsum("a,ak,aij->kij", w, G, R)
    Rv = np.einsum("aij,aj->ai", R, v)
    mk = np.einsum("a,ak,ai->ki", w, Tau, Rv)
    return SummaryStats(sym(q), sym(V), sym(qk), sym(Vk), mk)


def dense_stat_update(hats: HatStats, spec: MixtureSpec, lam: float) -> SummaryStats:
    """p=1 order parameters from dense covariances via one eigendecomposition.

    The resolvent (lam + Vh) I + sum_k Vkh_k Sigma_k need not commute with the
    covariances, so traces are taken in its eigenbasis.
    """
    if hats.qh.shape != (1, 1):
        raise ValueError("the dense update is implemented for p=1")
    d = spec.d
    Vh, qh = hats.Vh[0, 0], hats.qh[0, 0]
    Vkh, qkh, mkh = hats.Vkh[:, 0, 0], hats.qkh[:, 0, 0], hats.mkh[:, 0]
    A = (lam + Vh) * np.eye(d) + np.einsum("k,kij->ij", Vkh, spec.covariances)
    ev, U = np.linalg.eigh(sym(A))
    if ev[0] <= 0:
        raise SingularResolvent(int(np.argmin(ev)), float(ev[0]))
    inv = 1.0 / ev
    Sig = np.einsum("ia,kij,jb->kab", U, spec.covariances, U)  # covariances in the resolvent basis
    vt = U.T @ (mkh @ spec.means)  # v = sum_k mkh_k mu_k
    mut = spec.means @ U
    # B = qh I + sum_k qkh_k Sigma_k + d v v^T, all in the eigenbasis
    B = qh * np.eye(d) + np.einsum("k,kab->ab", qkh, Sig) + d * np.outer(vt, vt)
    RBR = inv[:, None] * B * inv[None, :]
    q = np.trace(RBR) / d
    qk = np.einsum("kab,ba->k", Sig, RBR) / d
    V = np.sum(inv) / d
    Vk = np.einsum("kaa,a->k", Sig, inv) / d
    mk = mut @ (inv * vt)
    K = spec.K
    return SummaryStats(np.array([[q]]), np.array([[V]]), qk.reshape(K, 1, 1), Vk.reshape(K, 1, 1),
                        mk.reshape(K, 1))


def _iterate(init: SummaryStats, step: Callable, cfg: SolverConfig):
    """Damped iteration; ``step(stats, warm)`` returns (F(stats), hats, prox)."""
    stats = init
    warm = None
    trace = []
    for it in range(1, cfg.max_iter + 1):
        new, hats, nodes = step(stats, warm)
        res = float(np.max(np.abs(new.flat() - stats.flat())))
        trace.append(res)
        if not np.isfinite(res):
            break
        if res <= cfg.tol:
            # the undamped update is returned: it pairs exactly with ``hats``
            return new, hats, nodes, it, True, res, trace
        warm = None if nodes is None else [nd["Z"] for nd in nodes]
        stats = stats.mix(new, cfg.damping)
    if cfg.raise_on_fail:
        raise NoConvergence(trace)
    log.warning("fixed point not converged after %d iterations (residual %.3e)", len(trace), trace[-1])
    return stats, hats, nodes, len(trace), False, trace[-1], trace


def _solve(source, stat_fn, weights, alpha, delta, lam, act, cfg, variant, b_hat, p, init=None):
    weights = np.asarray(weights, dtype=float)
    rae = variant == "rae"

    def step(stats, warm):
        hats, nodes = hat_update(stats, b_hat, delta, alpha, weights, act, cfg, "rae" if rae else "full_dae",
                                 warm, return_prox=True)
        return stat_fn(hats), hats, nodes

    init = initial_stats(source, p, cfg.m_init) if init is None else init
    stats, hats, nodes, it, ok, res, trace = _iterate(init, step, cfg)
    return ReplicaSolution(stats, hats, float(b_hat), it, ok, res, variant, float(alpha), float(delta), float(lam),
                           weights, act, cfg, trace, nodes)


def solve_fixed_point(measure: SpectralMeasure, weights, alpha: float, delta: float, lam: float,
                      act: Activation = Activation("tanh"), cfg: SolverConfig = SolverConfig(),
                      variant: str = "full_dae", p: int = 1, b_hat: Optional[float] = None,
                      init: Optional[SummaryStats] = None) -> ReplicaSolution:
    """Solve the DAE system (``full_dae``) or its no-skip version (``bottleneck``).

    ``b_hat`` overrides the skip strength otherwise fixed by the variant.
    """
    if variant == "rae":
        return solve_rae(measure, weights, alpha, lam, act, cfg, p, init)
    if variant not in ("full_dae", "bottleneck"):
        raise ValueError(f"unsupported variant {variant!r}")
    if not 0.0 < delta <= 1.0:
        raise DegenerateProblem("the denoising variants need delta in (0, 1]")
    if b_hat is None:
        b_hat = skip_strength(measure, weights, delta) if variant == "full_dae" else 0.0
    return _solve(measure, lambda h: stat_update(h, measure, lam), weights, alpha, delta, lam, act, cfg,
                  variant, b_hat, p, init)


def solve_rae(measure: SpectralMeasure, weights, alpha: float, lam: float, act: Activation = Activation("tanh"),
              cfg: SolverConfig = SolverConfig(), p: int = 1, init: Optional[SummaryStats] = None) -> ReplicaSolution:
    """Reconstruction autoencoder: no noise, no skip, prox over y alone.

    The default start has q = 2: the -sigma(y) y term makes the inner problem
    amplify its centre, and from small q the first hats already give a
    resolvent that is not positive definite.  w = 0 is also a fixed point and
    attracts iterations started too close to it.
    """
    if init is None:
        init = initial_stats(measure, p, cfg.m_init, q_init=2.0)
    return _solve(measure, lambda h: stat_update(h, measure, lam), weights, alpha, 0.0, lam, act, cfg,
                  "rae", 0.0, p, init)


def solve_dense(spec: MixtureSpec, alpha: float, delta: float, lam: float, act: Activation = Activation("tanh"),
                cfg: SolverConfig = SolverConfig(), variant: str = "full_dae") -> ReplicaSolution:
    """p=1 solver for arbitrary (non-commuting) cluster covariances."""
    if not 0.0 < delta <= 1.0:
        raise DegenerateProblem("the denoising variants need delta in (0, 1]")
    b_hat = skip_strength(spec, spec.weights, delta) if variant in ("full_dae", "anisotropic_k2") else 0.0
    return _solve(spec, lambda h: dense_stat_update(h, spec, lam), spec.weights, alpha, delta, lam, act, cfg,
                  variant, b_hat, 1)


def solve_anisotropic_binary(sigma_plus, sigma_minus, mu, rho: float, alpha: float, delta: float, lam: float,
                             act: Activation = Activation("tanh"), cfg: SolverConfig = SolverConfig()) -> ReplicaSolution:
    """Binary mixture with means +-mu and arbitrary covariances (p=1)."""
    spec = binary_spec(np.asarray(mu, dtype=float), np.asarray(sigma_plus, dtype=float),
                       np.asarray(sigma_minus, dtype=float), rho)
    return solve_dense(spec, alpha, delta, lam, act, cfg, "anisotropic_k2")


def fixed_point_residual(sol: ReplicaSolution, source) -> float:
    """Max entrywise change of one undamped application of the update map."""
    rae = sol.variant == "rae"
    hats = hat_update(sol.stats, sol.b_hat, sol.delta, sol.alpha, sol.weights, sol.act, sol.cfg,
                      "rae" if rae else "full_dae")
    if isinstance(source, SpectralMeasure):
        new = stat_update(hats, source, sol.lam)
    else:
        new = dense_stat_update(hats, source, sol.lam)
    return float(np.max(np.abs(new.flat() - sol.stats.flat())))
