"""Gaussian-mixture problems, their spectral measure, sampling and estimation.

A mixture with K clusters is described by weights rho_k, means mu_k and
covariances Sigma_k.  The replica equations only see the mixture through
the joint distribution of covariance eigenvalues ``gamma`` and rescaled mean
projections ``tau = sqrt(d) e_i^T mu_k`` in a common eigenbasis, which is
what :class:`SpectralMeasure` stores (one atom per eigenvector, exact at the
construction dimension).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CommutativityViolation, DegenerateCluster, NotPSD


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Explicit K-cluster Gaussian mixture in dimension d."""

    weights: np.ndarray
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        if not (len(w) == mu.shape[0] == cov.shape[0]):
            raise ValueError("weights, means and covariances disagree on K")
        if cov.shape[1:] != (mu.shape[1], mu.shape[1]):
            raise ValueError("means and covariances disagree on d")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        for k, s in enumerate(cov):
            if np.max(np.abs(s - s.T), initial=0.0) > 1e-10:
                raise NotPSD(f"covariance {k} is not symmetric")
            ev = np.linalg.eigvalsh(s)
            if ev.size and ev[0] < -1e-10 * max(ev[-1], 0.0) - 1e-300:
                raise NotPSD(f"covariance {k} has eigenvalue {ev[0]:.3e}")
        for name, val in (("weights", w), ("means", mu), ("covariances", cov)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class SpectralAtom:
    weight: float
    gamma: tuple
    tau: tuple


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Weighted atoms (gamma, tau), stored column-wise for vectorized sums.

    ``weight`` has shape (A,), ``gamma`` and ``tau`` have shape (A, K).
    """

    weight: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    d: int

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float).ravel()
        g = np.asarray(self.gamma, dtype=float).reshape(len(w), -1)
        t = np.asarray(self.tau, dtype=float).reshape(len(w), -1)
        if g.shape != t.shape:
            raise ValueError("gamma and tau must have the same shape")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("atom weights must be positive and sum to 1")
        if np.any(g < 0):
            raise ValueError("gamma components must be nonnegative")
        for name, val in (("weight", w), ("gamma", g), ("tau", t)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def K(self) -> int:
        return self.gamma.shape[1]

    @property
    def atoms(self) -> list[SpectralAtom]:
        return [SpectralAtom(float(w), tuple(g), tuple(t)) for w, g, t in zip(self.weight, self.gamma, self.tau)]

    def gamma_mean(self) -> np.ndarray:
        """First moments of gamma_k, one per cluster."""
        return self.weight @ self.gamma

    def tau_second_moment(self) -> np.ndarray:
        """Second moments of tau_k, equal to ||mu_k||^2."""
        return self.weight @ self.tau**2

    def tau_mean(self) -> np.ndarray:
        return self.weight @ self.tau


@dataclass(frozen=True, eq=False)
class Dataset:
    clean: np.ndarray
    noisy: np.ndarray
    labels: np.ndarray
    delta: float
    seed: Optional[int]
    xi: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.clean.shape[0]


def _sign_fix(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip columns so that their first nonzero component is positive."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > tol)
        if nz.size and out[nz[0], j] < 0:
            out[:, j] *= -1
    return out


def _split_groups(values: np.ndarray, rtol: float) -> list[np.ndarray]:
    """Index groups of (descending-sorted) values that are equal within rtol."""
    scale = max(np.max(np.abs(values), initial=0.0), 1e-300)
    groups, start = [], 0
    for i in range(1, len(values) + 1):
        if i == len(values) or abs(values[i] - values[i - 1]) > rtol * scale:
            groups.append(np.arange(start, i))
            start = i
    return groups


def _refine(basis: np.ndarray, mats: Sequence[np.ndarray], rtol: float) -> np.ndarray:
    """Split a degenerate subspace further by the restricted matrices."""
    if basis.shape[1] <= 1 or not mats:
        return basis
    restricted = basis.T @ mats[0] @ basis
    ev, U = np.linalg.eigh((restricted + restricted.T) / 2)
    order = np.argsort(-ev, kind="stable")
    ev, U = ev[order], U[:, order]
    new = basis @ U
    scale = max(np.max(np.abs(np.linalg.eigvalsh(mats[0])), initial=0.0), 1e-300)
    parts = []
    start = 0
    for i in range(1, len(ev) + 1):
        if i == len(ev) or abs(ev[i] - ev[i - 1]) > rtol * scale:
            parts.append(_refine(new[:, start:i], mats[1:], rtol))
            start = i
    return np.concatenate(parts, axis=1)


def common_eigenbasis(spec: MixtureSpec, rtol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (columns) diagonalizing every covariance.

    Sorted by descending eigenvalue of the weighted average covariance.
    Degenerate eigenspaces are split by each cluster covariance in turn and
    then rotated so that the cluster means occupy as few directions as
    possible, which keeps tau concentrated on few atoms.
    """
    avg = np.einsum("k,kij->ij", spec.weights, spec.covariances)
    ev, U = np.linalg.eigh(avg)
    order = np.argsort(-ev, kind="stable")
    ev, U = ev[order], U[:, order]
    cols = []
    for g in _split_groups(ev, rtol):
        block = _refine(U[:, g], list(spec.covariances), rtol)
        if block.shape[1] > 1:
            # Further groups within the block are those with equal diagonal
            # forms for every cluster; rotate each toward the means.
            diag = np.stack([np.einsum("ia,ij,ja->a", block, s, block) for s in spec.covariances], 1)
            sub_start = 0
            pieces = []
            for i in range(1, block.shape[1] + 1):
                if i == block.shape[1] or np.max(np.abs(diag[i] - diag[i - 1])) > rtol * max(np.max(np.abs(diag)), 1e-300):
                    sub = block[:, sub_start:i]
                    proj = sub.T @ spec.means.T
                    if sub.shape[1] > 1 and np.any(np.abs(proj) > 0):
                        P, _, _ = np.linalg.svd(proj, full_matrices=True)
                        sub = sub @ P
                    pieces.append(sub)
                    sub_start = i
            block = np.concatenate(pieces, axis=1)
        cols.append(block)
    return _sign_fix(np.concatenate(cols, axis=1))


def build_spectral_measure(spec: MixtureSpec, commute_tol: float = 1e-8) -> SpectralMeasure:
    """Spectral measure of a mixture with jointly diagonalizable covariances."""
    covs = spec.covariances
    norms = [np.linalg.norm(s) for s in covs]
    worst, pair = 0.0, None
    for j in range(spec.K):
        for k in range(j + 1, spec.K):
            c = np.linalg.norm(covs[j] @ covs[k] - covs[k] @ covs[j])
            denom = norms[j] * norms[k]
            rel = c / denom if denom > 0 else 0.0
            if rel > worst:
                worst, pair = rel, (j, k)
    if worst > commute_tol:
        raise CommutativityViolation(pair, worst)
    d = spec.d
    E = common_eigenbasis(spec)
    gamma = np.clip(np.stack([np.einsum("ia,ij,ja->a", E, s, E) for s in covs], 1), 0.0, None)
    tau = np.sqrt(d) * (E.T @ spec.means.T)
    return SpectralMeasure(np.full(d, 1.0 / d), gamma, tau, d)


def isotropic_binary_measure(sigma2: float, mu_norm2: float, d: int) -> SpectralMeasure:
    """Symmetric binary mixture with covariances sigma2*I and means +-mu."""
    if sigma2 < 0 or mu_norm2 < 0 or d < 1:
        raise ValueError("need sigma2 >= 0, mu_norm2 >= 0, d >= 1")
    gamma = np.full((d, 2), float(sigma2))
    tau = np.zeros((d, 2))
    t = np.sqrt(d * mu_norm2)
    tau[0] = (t, -t)
    return SpectralMeasure(np.full(d, 1.0 / d), gamma, tau, d)


def random_unit_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def binary_isotropic_spec(d: int, sigma2: float, mu: Optional[np.ndarray] = None, rho: float = 0.5,
                          seed: Optional[int] = 0) -> MixtureSpec:
    """Means +-mu (random unit vector unless given) and covariances sigma2*I."""
    if mu is None:
        mu = random_unit_vector(d, np.random.default_rng(seed))
    cov = sigma2 * np.eye(d)
    return MixtureSpec(np.array([rho, 1 - rho]), np.stack([mu, -mu]), np.stack([cov, cov]))


def binary_spec(mu: np.ndarray, sigma_plus: np.ndarray, sigma_minus: np.ndarray, rho: float = 0.5) -> MixtureSpec:
    return MixtureSpec(np.array([rho, 1 - rho]), np.stack([mu, -mu]), np.stack([sigma_plus, sigma_minus]))


def wishart_covariance(d: int, ratio: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Wishart matrix G G^T / m with m = d / ratio columns, multiplied by scale."""
    m = int(round(d / ratio))
    G = rng.standard_normal((d, m))
    S = scale * (G @ G.T) / m
    return (S + S.T) / 2


def sample_dataset(spec: MixtureSpec, n: int, delta: float, seed=None) -> Dataset:
    """Draw n clean samples, labels and their noisy versions."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    rng = np.random.default_rng(seed)
    labels = rng.choice(spec.K, size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.d))
    clean = spec.means[labels].copy()
    for k in range(spec.K):
        idx = labels == k
        if not idx.any():
            continue
        ev, U = np.linalg.eigh(spec.covariances[k])
        root = U * np.sqrt(np.clip(ev, 0.0, None))
        clean[idx] += z[idx] @ root.T
    xi = rng.standard_normal((n, spec.d))
    noisy = np.sqrt(1.0 - delta) * clean + np.sqrt(delta) * xi
    return Dataset(clean, noisy, labels, float(delta), seed, xi)


def empirical_cluster_stats(vectors: np.ndarray, labels: np.ndarray) -> MixtureSpec:
    """Per-label sample means, unbiased covariances and label frequencies."""
    X = np.asarray(vectors, dtype=float)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < 2):
        bad = classes[counts < 2]
        raise DegenerateCluster(f"labels {bad.tolist()} have fewer than 2 samples")
    means, covs = [], []
    for c in classes:
        Xc = X[labels == c]
        means.append(Xc.mean(0))
        C = np.cov(Xc, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
        covs.append((C + C.T) / 2)
    w = counts / counts.sum()
    return MixtureSpec(w / w.sum(), np.array(means), np.array(covs))


def load_labeled_csv(path, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Read a CSV with header f0..f{d-1},label; features are divided by scale."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if not header or header[-1] != "label":
        raise ValueError("last CSV column must be 'label'")
    expected = [f"f{i}" for i in range(len(header) - 1)]
    if header[:-1] != expected:
        raise ValueError("feature columns must be named f0..f{d-1}")
    data = np.array([[float(v) for v in r[:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows])
    return data / scale, labels


def write_labeled_csv(path, vectors: np.ndarray, labels: np.ndarray) -> None:
    d = vectors.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(d)] + ["label"])
        for x, l in zip(vectors, labels):
            w.writerow([repr(float(v)) for v in x] + [int(l)])


def realize_measure(measure: SpectralMeasure, rho: Sequence[float]) -> MixtureSpec:
    """Diagonal mixture whose spectral measure is ``measure`` in the canonical basis.

    Atom a occupies weight_a * d coordinates, which must be an integer
    count; coordinate i of mu_k is tau_ik / sqrt(d).
    """
    d = measure.d
    counts = measure.weight * d
    if np.max(np.abs(counts - np.round(counts))) > 1e-8:
        raise ValueError("atom weights times d must be integers to realize the measure")
    reps = np.round(counts).astype(int)
    gamma = np.repeat(measure.gamma, reps, axis=0)
    tau = np.repeat(measure.tau, reps, axis=0)
    covs = np.stack([np.diag(g) for g in gamma.T])
    return MixtureSpec(np.asarray(rho, dtype=float), tau.T / np.sqrt(d), covs)
