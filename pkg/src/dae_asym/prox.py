"""Batched solver for the 2p-dimensional inner minimization.

For one cluster the objective in (x, y) is

    (y - c_y)^T V_k^{-1} (y - c_y) + (x - c_x)^T V^{-1} (x - c_x) / delta
    + s(a)^T q s(a) - 2 s(a)^T ((1 - sqrt(1-delta) b) y - b x),

with a = sqrt(1-delta) y + x and s the activation.  The reconstruction
variant drops x (and the 1/delta term) and uses a = y, b = 0.  All nodes of
a quadrature rule are minimized together with damped Newton steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ProxNoConvergence
from .numerics import Activation


@dataclass(frozen=True)
class ProxPoint:
    x: np.ndarray
    y: np.ndarray
    objective: float
    grad_norm: float


@dataclass
class ProxProblem:
    """Objective parameters for one cluster; ``cx``/``cy`` are (N, p) centres."""

    Vk_inv: np.ndarray
    q: np.ndarray
    cy: np.ndarray
    act: Activation
    b: float = 0.0
    delta: float = 0.0
    V_inv: Optional[np.ndarray] = None  # None -> reconstruction variant (no x)
    cx: Optional[np.ndarray] = None

    @property
    def with_x(self) -> bool:
        return self.V_inv is not None

    @property
    def p(self) -> int:
        return self.q.shape[0]

    @property
    def s(self) -> float:
        return np.sqrt(1.0 - self.delta) if self.with_x else 1.0

    def split(self, Z):
        p = self.p
        if self.with_x:
            return Z[:, :p], Z[:, p:]
        return np.zeros_like(Z), Z

    def start_quadratic(self, idx=slice(None)):
        if self.with_x:
            return np.concatenate([self.cx[idx], self.cy[idx]], axis=1)
        return self.cy[idx].copy()

    def _parts(self, Z, idx):
        X, Y = self.split(Z)
        s, b = self.s, self.b
        a = s * Y + X
        S = self.act(a)
        r = (1.0 - s * b) * Y - b * X
        return X, Y, a, S, r

    def objective(self, Z, idx=slice(None)):
        X, Y, a, S, r = self._parts(Z, idx)
        dy = Y - self.cy[idx]
        F = np.einsum("ni,ij,nj->n", dy, self.Vk_inv, dy)
        if self.with_x:
            dx = X - self.cx[idx]
            F = F + np.einsum("ni,ij,nj->n", dx, self.V_inv, dx) / self.delta
        F = F + np.einsum("ni,ij,nj->n", S, self.q, S) - 2.0 * np.sum(S * r, axis=1)
        return F

    def grad_hess(self, Z, idx=slice(None)):
        X, Y, a, S, r = self._parts(Z, idx)
        s, b = self.s, self.b
        J = self.act.d1(a)
        D2 = self.act.d2(a)
        g_a = 2.0 * S @ self.q - 2.0 * r  # derivative of the last two terms w.r.t. s(a)
        h = J * g_a
        gy = 2.0 * (Y - self.cy[idx]) @ self.Vk_inv + s * h - 2.0 * (1.0 - s * b) * S
        n, p = Y.shape
        eye = np.eye(p)
        Ha = D2[:, :, None] * eye * g_a[:, :, None] + 2.0 * J[:, :, None] * self.q[None] * J[:, None, :]
        Jd = J[:, :, None] * eye
        Hyy = 2.0 * self.Vk_inv[None] + s * s * Ha - 4.0 * s * (1.0 - s * b) * Jd
        if not self.with_x:
            return gy, Hyy
        gx = 2.0 * (X - self.cx[idx]) @ self.V_inv / self.delta + h + 2.0 * b * S
        Hxx = 2.0 * self.V_inv[None] / self.delta + Ha + 4.0 * b * Jd
        Hxy = s * Ha + 2.0 * s * b * Jd - 2.0 * (1.0 - s * b) * Jd
        H = np.empty((n, 2 * p, 2 * p))
        H[:, :p, :p] = Hxx
        H[:, :p, p:] = Hxy
        H[:, p:, :p] = np.swapaxes(Hxy, 1, 2)
        H[:, p:, p:] = Hyy
        return np.concatenate([gx, gy], axis=1), H


def _newton(prob: ProxProblem, Z0, tol, max_iter, c_armijo=1e-4):
    """Damped Newton from Z0 on every node; returns Z, objective, grad norm."""
    Z = Z0.copy()
    N = Z.shape[0]
    idx_all = np.arange(N)
    F = prob.objective(Z)
    g, _ = prob.grad_hess(Z)
    gn = np.linalg.norm(g, axis=1)
    active = gn > tol
    for _ in range(max_iter):
        if not active.any():
            break
        ia = idx_all[active]
        Za = Z[ia]
        g, H = prob.grad_hess(Za, ia)
        ev, U = np.linalg.eigh(H)
        scale = np.max(np.abs(ev), axis=1)
        pd = ev[:, 0] > 1e-12 * np.maximum(scale, 1e-300)
        gU = np.einsum("nij,ni->nj", U, g)
        safe = np.where(pd[:, None], ev, 1.0)
        step = -np.einsum("nij,nj->ni", U, gU / safe)
        # gradient-descent fallback on non-PD Hessians, scaled by the curvature
        gd = -g / np.maximum(scale, 1e-12)[:, None]
        step = np.where(pd[:, None], step, gd)
        slope = np.sum(g * step, axis=1)
        Fa = F[ia]
        t = np.ones(len(ia))
        accepted = np.zeros(len(ia), dtype=bool)
        Znew = Za.copy()
        Fnew = Fa.copy()
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            trial = Za[todo] + t[todo, None] * step[todo]
            Ft = prob.objective(trial, ia[todo])
            # the slack admits steps whose decrease is below rounding level
            slack = 8 * np.finfo(float).eps * (1.0 + np.abs(Fa[todo]))
            ok = Ft <= Fa[todo] + c_armijo * t[todo] * slope[todo] + slack
            sel = np.flatnonzero(todo)[ok]
            Znew[sel] = trial[ok]
            Fnew[sel] = Ft[ok]
            accepted[sel] = True
            t[todo] *= 0.5
        Z[ia] = Znew
        F[ia] = Fnew
        gnew, _ = prob.grad_hess(Z[ia], ia)
        gn[ia] = np.linalg.norm(gnew, axis=1)
        active[ia] = (gn[ia] > tol) & accepted
    return Z, F, gn


def solve_batch(prob: ProxProblem, tol: float = 1e-10, max_iter: int = 100, warm: Optional[np.ndarray] = None,
                accept_tol: Optional[float] = None):
    """Multi-start minimization over all nodes.

    Starts: the minimizer of the quadratic part, the origin and ``warm``
    (typically the previous outer iteration's solution).  For each node the
    converged candidate with the lowest objective is kept.  Raises
    ProxNoConvergence if some node converges from no start.
    """
    accept_tol = tol if accept_tol is None else accept_tol
    starts = [prob.start_quadratic(), np.zeros_like(prob.start_quadratic())]
    if warm is not None:
        starts.append(warm)
    best_Z = best_F = best_g = None
    for Z0 in starts:
        Z, F, gn = _newton(prob, Z0, tol, max_iter)
        conv = gn <= accept_tol
        F_eff = np.where(conv, F, np.inf)
        if best_Z is None:
            best_Z, best_F, best_g = Z, F_eff, gn
            best_raw_g = gn.copy()
            continue
        margin = np.where(np.isfinite(best_F), 1e-13 * (1.0 + np.abs(best_F)), 0.0)
        better = F_eff < best_F - margin
        best_Z = np.where(better[:, None], Z, best_Z)
        best_F = np.where(better, F_eff, best_F)
        best_g = np.where(better, gn, best_g)
        best_raw_g = np.minimum(best_raw_g, gn)
    bad = ~np.isfinite(best_F)
    if bad.any():
        node = int(np.flatnonzero(bad)[0])
        raise ProxNoConvergence(float(best_raw_g[node]), node)
    return best_Z, best_F, best_g


def prox_solve(xi, eta, q, qk_root, mk, V, Vk, b_hat, delta, act: Activation, q_root=None,
               tol: float = 1e-10, max_iter: int = 100) -> ProxPoint:
    """Single-node convenience wrapper (full variant).

    ``qk_root`` is q_k^{1/2}; ``q_root`` defaults to the PSD root of q.
    """
    from .numerics import psd_sqrt

    q = np.atleast_2d(q)
    q_root = psd_sqrt(q) if q_root is None else np.atleast_2d(q_root)
    xi, eta, mk = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (xi, eta, mk))
    prob = ProxProblem(
        Vk_inv=np.linalg.inv(np.atleast_2d(Vk)),
        q=q,
        cy=(np.atleast_2d(qk_root) @ eta + mk)[None],
        act=act,
        b=float(b_hat),
        delta=float(delta),
        V_inv=np.linalg.inv(np.atleast_2d(V)),
        cx=(np.sqrt(delta) * q_root @ xi)[None],
    )
    Z, F, gn = solve_batch(prob, tol, max_iter)
    p = q.shape[0]
    return ProxPoint(Z[0, :p], Z[0, p:], float(F[0]), float(gn[0]))
