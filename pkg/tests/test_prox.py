import numpy as np
import pytest
from scipy.optimize import minimize

from dae_asym.errors import ProxNoConvergence
from dae_asym.numerics import Activation
from dae_asym.prox import ProxProblem, prox_solve, solve_batch

TANH = Activation("tanh")


def _problem(q, qk, V, Vk, m, delta, b, xi, eta, act=TANH):
    return ProxProblem(Vk_inv=np.array([[1 / Vk]]), q=np.array([[q]]), cy=np.array([[np.sqrt(qk) * eta + m]]),
                       act=act, b=b, delta=delta, V_inv=np.array([[1 / V]]), cx=np.array([[np.sqrt(delta * q) * xi]]))


def _grid_min(prob, step=0.01, lo=-5.0, hi=5.0):
    """Brute-force minimum on a grid over (x, y), refined around the best cells."""
    g = np.arange(lo, hi + step / 2, step)
    best = (np.inf, None)
    for x0 in np.array_split(g, 20):
        X, Y = np.meshgrid(x0, g, indexing="ij")
        Z = np.stack([X.ravel(), Y.ravel()], 1)
        F = prob.objective(Z, np.zeros(len(Z), dtype=int))
        i = int(np.argmin(F))
        if F[i] < best[0]:
            best = (F[i], Z[i])
    fine = np.arange(-step, step + 1e-4, 1e-3)
    X, Y = np.meshgrid(best[1][0] + fine, best[1][1] + fine, indexing="ij")
    Z = np.stack([X.ravel(), Y.ravel()], 1)
    F = prob.objective(Z, np.zeros(len(Z), dtype=int))
    z0 = Z[np.argmin(F)]
    res = minimize(lambda z: prob.objective(z[None], [0])[0], z0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    return min(res.fun, F.min()), res.x


def test_zero_activation_closed_form():
    xi, eta, q, qk, m, V, Vk, delta = 0.7, -1.3, 0.5, 0.09, 0.3, 0.2, 0.4, 0.5
    pt = prox_solve(xi, eta, q, np.sqrt(qk), m, V, Vk, 0.1, delta, Activation("zero"))
    np.testing.assert_allclose(pt.x, np.sqrt(delta * q) * xi, atol=1e-12)
    np.testing.assert_allclose(pt.y, np.sqrt(qk) * eta + m, atol=1e-12)


def test_origin_is_stationary():
    prob = _problem(0.5, 0.09, 0.2, 0.2, 0.0, 0.5, 0.1168, 0.0, 0.0)
    g, _ = prob.grad_hess(np.zeros((1, 2)))
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_grid_oracle_example():
    prob = _problem(0.5, 0.09, 0.2, 0.2, 0.3, 0.5, 0.1168, 1.0, 1.0)
    pt = prox_solve(1.0, 1.0, 0.5, 0.3, 0.3, 0.2, 0.2, 0.1168, 0.5, TANH)
    assert pt.grad_norm <= 1e-10
    Fg, zg = _grid_min(prob, step=0.01)
    np.testing.assert_allclose([pt.x[0], pt.y[0]], zg, atol=1e-3)
    assert pt.objective <= Fg + 1e-6


def test_grid_oracle_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        q, qk = rng.uniform(0.05, 2.0), rng.uniform(0.01, 1.0)
        V, Vk = rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)
        m, delta, b = rng.uniform(-1, 1), rng.uniform(0.1, 0.9), rng.uniform(0, 0.5)
        xi, eta = rng.standard_normal(2)
        prob = _problem(q, qk, V, Vk, m, delta, b, xi, eta)
        Z, F, gn = solve_batch(prob)
        assert gn[0] <= 1e-10
        Fg, _ = _grid_min(prob, step=0.02)
        assert F[0] <= Fg + 1e-6


def test_gradient_and_hessian_match_finite_differences():
    rng = np.random.default_rng(1)
    for p in (1, 2, 3):
        A = rng.standard_normal((p, p))
        q = A @ A.T / p
        B = rng.standard_normal((p, p))
        Vk_inv = np.linalg.inv(B @ B.T / p + 0.3 * np.eye(p))
        C = rng.standard_normal((p, p))
        V_inv = np.linalg.inv(C @ C.T / p + 0.3 * np.eye(p))
        n = 4
        for with_x in (True, False):
            prob = ProxProblem(Vk_inv, q, rng.standard_normal((n, p)), TANH, b=0.2, delta=0.4,
                               V_inv=V_inv if with_x else None, cx=rng.standard_normal((n, p)) if with_x else None)
            dim = 2 * p if with_x else p
            Z = rng.standard_normal((n, dim))
            g, H = prob.grad_hess(Z)
            h = 1e-6
            for j in range(dim):
                e = np.zeros(dim)
                e[j] = h
                fd = (prob.objective(Z + e) - prob.objective(Z - e)) / (2 * h)
                np.testing.assert_allclose(g[:, j], fd, rtol=1e-6, atol=1e-7)
                gp, _ = prob.grad_hess(Z + e)
                gm, _ = prob.grad_hess(Z - e)
                np.testing.assert_allclose(H[:, :, j], (gp - gm) / (2 * h), rtol=1e-5, atol=1e-6)


def test_reconstruction_variant_has_no_x():
    prob = ProxProblem(np.eye(1) * 3, np.eye(1) * 0.5, np.array([[0.4]]), TANH)
    Z, F, gn = solve_batch(prob)
    assert Z.shape == (1, 1) and gn[0] <= 1e-10


def test_no_convergence_raises():
    prob = _problem(0.5, 0.09, 0.2, 0.2, 0.3, 0.5, 0.1168, 1.0, 1.0)
    with pytest.raises(ProxNoConvergence) as exc:
        solve_batch(prob, tol=1e-30, max_iter=1)
    assert exc.value.residual >= 0
