"""Activations, Gaussian quadrature rules and PSD matrix roots."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import norm, qmc

ACTIVATIONS = ("tanh", "identity", "zero")


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with first and second derivatives.

    ``zero`` is the constant-zero map, used only to exercise degenerate cases.
    """

    kind: str = "tanh"

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")

    def __call__(self, a):
        if self.kind == "tanh":
            return np.tanh(a)
        if self.kind == "identity":
            return np.asarray(a, dtype=float).copy()
        return np.zeros_like(a, dtype=float)

    def d1(self, a):
        if self.kind == "tanh":
            return 1.0 - np.tanh(a) ** 2
        if self.kind == "identity":
            return np.ones_like(a, dtype=float)
        return np.zeros_like(a, dtype=float)

    def d2(self, a):
        if self.kind == "tanh":
            t = np.tanh(a)
            return -2.0 * t * (1.0 - t**2)
        return np.zeros_like(a, dtype=float)


@lru_cache(maxsize=None)
def _hermgauss(n: int):
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


@lru_cache(maxsize=None)
def _qmc_normal(dim: int, samples: int, seed: int):
    # Scrambled Sobol points mapped through the normal quantile; points are
    # clipped away from 0 and 1 so ppf stays finite.
    m = int(np.ceil(np.log2(max(samples, 2))))
    u = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)[:samples]
    u = np.clip(u, 1e-12, 1 - 1e-12)
    return norm.ppf(u)


@dataclass(frozen=True)
class Quadrature:
    """Expectation rule for standard normal vectors.

    ``gauss_hermite`` is a tensor rule with ``nodes`` points per variable and
    is used when the dimension is at most ``max_tensor_dim``; otherwise (or
    with kind ``monte_carlo``) a fixed-seed scrambled Sobol rule with
    ``samples`` points is used.
    """

    kind: str = "gauss_hermite"
    nodes: int = 40
    samples: int = 4096
    seed: int = 0
    max_tensor_dim: int = 2

    def __post_init__(self):
        if self.kind not in ("gauss_hermite", "monte_carlo"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.kind == "gauss_hermite" and self.nodes < 2:
            raise ValueError("need at least 2 nodes")
        if self.samples < 1:
            raise ValueError("need at least 1 sample")

    def rule(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Points of shape (N, dim) and weights of shape (N,) summing to 1."""
        if self.kind == "gauss_hermite" and dim <= self.max_tensor_dim:
            x, w = _hermgauss(self.nodes)
            pts = np.array(list(itertools.product(x, repeat=dim))).reshape(-1, dim)
            wts = np.prod(np.array(list(itertools.product(w, repeat=dim))).reshape(-1, dim), axis=1)
            return pts, wts
        pts = _qmc_normal(dim, self.samples, self.seed)
        return pts, np.full(len(pts), 1.0 / len(pts))

    def doubled(self) -> "Quadrature":
        return Quadrature(self.kind, 2 * self.nodes, 2 * self.samples, self.seed, self.max_tensor_dim)


def sym(M: np.ndarray) -> np.ndarray:
    return (M + np.swapaxes(M, -1, -2)) / 2


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root with eigenvalues clipped at 0."""
    ev, U = np.linalg.eigh(sym(M))
    return (U * np.sqrt(np.clip(ev, 0.0, None))[..., None, :]) @ np.swapaxes(U, -1, -2)


def psd_pinv_sqrt(M: np.ndarray, rtol: float = 1e-14) -> np.ndarray:
    """Pseudo-inverse square root; null directions map to zero."""
    ev, U = np.linalg.eigh(sym(M))
    cut = rtol * max(np.max(np.abs(ev), initial=0.0), 1e-300)
    inv = np.where(ev > cut, 1.0 / np.sqrt(np.where(ev > cut, ev, 1.0)), 0.0)
    return (U * inv[..., None, :]) @ np.swapaxes(U, -1, -2)


def gauss_expect_1d(fn, nodes: int = 80) -> float:
    """E f(z) for z ~ N(0, 1) by Gauss-Hermite."""
    x, w = _hermgauss(nodes)
    return float(np.sum(w * fn(x)))
