import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dae_asym.errors import DegenerateProblem, NoConvergence, SingularResolvent
from dae_asym.metrics import mse_rescaling, mse_theory
from dae_asym.mixture import SpectralMeasure, binary_isotropic_spec, isotropic_binary_measure
from dae_asym.numerics import Activation, Quadrature
from dae_asym.prox import ProxProblem, solve_batch
from dae_asym.numerics import psd_pinv_sqrt, psd_sqrt
from dae_asym.replica import (HatStats, SolverConfig, SummaryStats, dense_stat_update, fixed_point_residual,
                              hat_update, initial_stats, skip_strength, solve_anisotropic_binary, solve_fixed_point,
                              solve_rae, stat_update)

W = np.array([0.5, 0.5])
FIG1 = isotropic_binary_measure(0.09, 1.0, 10)  # the order parameters do not depend on d


@pytest.fixture(scope="module")
def fig1_solution():
    return solve_fixed_point(FIG1, W, 1.0, 0.5, 0.1)


@pytest.mark.parametrize("delta,expected", [(0.0, 1.0), (1.0, 0.0), (0.5, 0.116770)])
def test_skip_strength_examples(delta, expected):
    assert skip_strength(FIG1, W, delta) == pytest.approx(expected, abs=1e-6)


def test_skip_strength_degenerate():
    with pytest.raises(DegenerateProblem):
        skip_strength(isotropic_binary_measure(0.0, 1.0, 5), W, 0.0)


def test_stat_update_zero_hats():
    m = SpectralMeasure([1.0], [[2.0]], [[0.0]], 1)
    st_ = stat_update(HatStats.zeros(1, 1), m, 1.0)
    np.testing.assert_allclose([st_.V[0, 0], st_.Vk[0, 0, 0], st_.q[0, 0], st_.qk[0, 0, 0], st_.mk[0, 0]],
                               [1.0, 2.0, 0.0, 0.0, 0.0])


def test_stat_update_large_lambda_decay():
    hats = HatStats(np.eye(1) * 0.1, np.eye(1) * 0.2, np.full((2, 1, 1), 0.3), np.full((2, 1, 1), 0.4),
                    np.array([[0.5], [-0.5]]))
    scaled = []
    for lam in (1e3, 1e4):
        s = stat_update(hats, FIG1, lam)
        assert abs(s.V[0, 0] * lam - 1) < 1e-2
        scaled.append((s.mk[0, 0] * lam, s.q[0, 0] * lam**2))
    np.testing.assert_allclose(scaled[0], scaled[1], rtol=1e-2)


def test_stat_update_independent_sum():
    lam = 0.1
    qh, Vh, qkh, Vkh, mkh = 0.1, 0.2, 0.3, 0.4, 0.5
    hats = HatStats(np.eye(1) * qh, np.eye(1) * Vh, np.full((2, 1, 1), qkh), np.full((2, 1, 1), Vkh),
                    np.full((2, 1), mkh))
    s = stat_update(hats, FIG1, lam)
    q = V = 0.0
    qk, Vk, mk = np.zeros(2), np.zeros(2), np.zeros(2)
    for w, g, t in zip(FIG1.weight, FIG1.gamma, FIG1.tau):
        r = 1.0 / (lam + Vh + Vkh * g.sum())
        v = mkh * t.sum()
        b = qh + qkh * g.sum() + v * v
        q += w * r * b * r
        V += w * r
        qk += w * g * r * b * r
        Vk += w * g * r
        mk += w * t * r * v
    np.testing.assert_allclose(s.q[0, 0], q, rtol=1e-12)
    np.testing.assert_allclose(s.V[0, 0], V, rtol=1e-12)
    np.testing.assert_allclose(s.qk[:, 0, 0], qk, rtol=1e-12)
    np.testing.assert_allclose(s.Vk[:, 0, 0], Vk, rtol=1e-12)
    np.testing.assert_allclose(s.mk[:, 0], mk, rtol=1e-12, atol=1e-15)


def test_singular_resolvent():
    hats = HatStats(np.eye(1), -np.eye(1), np.zeros((2, 1, 1)), np.zeros((2, 1, 1)), np.zeros((2, 1)))
    with pytest.raises(SingularResolvent):
        stat_update(hats, FIG1, 0.5)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_stat_update_preserves_psd(seed, p):
    rng = np.random.default_rng(seed)
    def psd():
        A = rng.standard_normal((p, p))
        return A @ A.T
    hats = HatStats(psd(), psd(), np.stack([psd(), psd()]), np.stack([psd(), psd()]), rng.standard_normal((2, p)))
    s = stat_update(hats, FIG1, 0.1)
    for M in (s.q, *s.qk):
        assert np.linalg.eigvalsh(M)[0] >= -1e-10
    for M in (s.V, *s.Vk):
        assert np.linalg.eigvalsh(M)[0] > 0


def test_hat_update_alpha_zero_and_zero_activation():
    init = initial_stats(FIG1, 1)
    cfg = SolverConfig(quadrature=Quadrature(nodes=10))
    h = hat_update(init, 0.1168, 0.5, 0.0, W, Activation(), cfg)
    np.testing.assert_array_equal(h.flat(), 0.0)
    h = hat_update(init, 0.1168, 0.5, 1.0, W, Activation("zero"), cfg)
    np.testing.assert_allclose(h.qh, 0.0, atol=1e-20)
    np.testing.assert_allclose(h.qkh, 0.0, atol=1e-20)
    np.testing.assert_allclose(h.mkh, 0.0, atol=1e-12)


def test_hats_match_monte_carlo(fig1_solution):
    """Hat expectations by quadrature against plain Monte Carlo of the same integrands."""
    sol = fig1_solution
    s, delta, alpha = sol.stats, 0.5, 1.0
    hats = hat_update(s, sol.b_hat, delta, alpha, W, Activation(), sol.cfg)
    rng = np.random.default_rng(7)
    n = 200_000
    xi, eta = rng.standard_normal((n, 1)), rng.standard_normal((n, 1))
    k = 0
    cy = eta @ psd_sqrt(s.qk[k]).T + s.mk[k]
    cx = np.sqrt(delta) * xi @ psd_sqrt(s.q).T
    prob = ProxProblem(np.linalg.inv(s.Vk[k]), s.q, cy, Activation(), sol.b_hat, delta, np.linalg.inv(s.V), cx)
    Z, _, _ = solve_batch(prob)
    X, Y = Z[:, :1], Z[:, 1:]
    ak = alpha * W[k]
    Vk_inv = 1.0 / s.Vk[k, 0, 0]
    ry = (Y - cy)[:, 0]
    samples = {
        "qkh": ak * Vk_inv**2 * ry**2,
        "mkh": ak * Vk_inv * ry,
        "Vkh": -ak / np.sqrt(s.qk[k, 0, 0]) * Vk_inv * ry * eta[:, 0],
    }
    expected = {"qkh": hats.qkh[k, 0, 0], "mkh": hats.mkh[k, 0], "Vkh": hats.Vkh[k, 0, 0]}
    for key, v in samples.items():
        se = v.std(ddof=1) / np.sqrt(n)
        assert abs(v.mean() - expected[key]) <= 3 * se + 1e-12, key


def test_alpha_zero_converges_to_zero_hat_solution():
    sol = solve_fixed_point(FIG1, W, 0.0, 0.5, 0.1, cfg=SolverConfig(damping=1.0))
    zero = stat_update(HatStats.zeros(1, 2), FIG1, 0.1)
    assert sol.converged and sol.iterations == 2
    np.testing.assert_allclose(sol.stats.flat(), zero.flat())


def test_infinite_regularization_collapses():
    sol = solve_fixed_point(FIG1, W, 1.0, 0.5, 1e6)
    assert sol.stats.q[0, 0] <= 1e-9
    assert np.max(np.abs(sol.stats.mk)) <= 1e-6
    d = 100
    assert abs(mse_theory(sol, FIG1, d) - mse_rescaling(FIG1, W, 0.5, d, sol.b_hat)) <= 1e-6


def test_fixed_point_residual(fig1_solution):
    sol = fig1_solution
    assert sol.converged and sol.residual <= sol.cfg.tol
    assert fixed_point_residual(sol, FIG1) <= 2 * sol.cfg.tol


def test_psd_along_iterations():
    cfg = SolverConfig(quadrature=Quadrature(nodes=16))
    s = initial_stats(FIG1, 1)
    b = skip_strength(FIG1, W, 0.5)
    for _ in range(8):
        hats = hat_update(s, b, 0.5, 1.0, W, Activation(), cfg)
        for M in (hats.qh, *hats.qkh):
            assert np.linalg.eigvalsh(M)[0] >= -1e-10
        s = s.mix(stat_update(hats, FIG1, 0.1), cfg.damping)
        for M in (s.q, *s.qk):
            assert np.linalg.eigvalsh(M)[0] >= -1e-10


def test_quadrature_doubling(fig1_solution):
    """Doubling the nodes moves the stats by ~1e-5.

    The inner minimizer jumps between two branches along a curve in
    (xi, eta), so the integrands are discontinuous and Gauss-Hermite
    converges only algebraically.
    """
    cfg = SolverConfig(quadrature=Quadrature(nodes=80))
    fine = solve_fixed_point(FIG1, W, 1.0, 0.5, 0.1, cfg=cfg, init=fig1_solution.stats)
    assert np.max(np.abs(fine.stats.flat() - fig1_solution.stats.flat())) < 1e-4


def test_bottleneck_equals_full_with_zero_skip():
    cfg = SolverConfig(quadrature=Quadrature(nodes=20))
    a = solve_fixed_point(FIG1, W, 1.0, 0.5, 0.1, cfg=cfg, variant="bottleneck")
    b = solve_fixed_point(FIG1, W, 1.0, 0.5, 0.1, cfg=cfg, variant="full_dae", b_hat=0.0)
    np.testing.assert_array_equal(a.stats.flat(), b.stats.flat())


def test_spectral_and_dense_agree():
    d = 12
    cfg = SolverConfig(tol=1e-10, quadrature=Quadrature(nodes=20))
    mu = np.eye(d)[0]
    cov = 0.09 * np.eye(d)
    dense = solve_anisotropic_binary(cov, cov, mu, 0.5, 1.0, 0.5, 0.1, cfg=cfg)
    spec = solve_fixed_point(isotropic_binary_measure(0.09, 1.0, d), W, 1.0, 0.5, 0.1, cfg=cfg)
    np.testing.assert_allclose(dense.stats.flat(), spec.stats.flat(), atol=1e-6)
    assert dense.variant == "anisotropic_k2"


def test_dense_zero_hats_closed_form():
    spec = binary_isotropic_spec(6, 0.09, seed=0)
    s = dense_stat_update(HatStats.zeros(1, 2), spec, 2.0)
    np.testing.assert_allclose([s.q[0, 0], s.V[0, 0]], [0.0, 0.5])
    np.testing.assert_allclose(s.Vk[:, 0, 0], 0.045)
    np.testing.assert_allclose(s.mk, 0.0)


def test_rae_large_lambda():
    sol = solve_rae(isotropic_binary_measure(0.3, 1.0, 10), W, 1.0, 1e6)
    assert sol.stats.q[0, 0] < 1e-9
    d = 50
    m = isotropic_binary_measure(0.3, 1.0, d)
    assert mse_theory(sol, m, d) == pytest.approx(1.0 + 0.3 * d, abs=1e-5)


def test_rae_nontrivial_solution():
    """From the default start the reconstruction system reaches the learned, aligned solution."""
    m = isotropic_binary_measure(0.3, 1.0, 10)
    sol = solve_rae(m, W, 1.0, 0.1)
    assert sol.converged and sol.stats.q[0, 0] > 1.0
    assert sol.stats.mk[0, 0] == pytest.approx(-sol.stats.mk[1, 0])
    assert fixed_point_residual(sol, m) <= 2 * sol.cfg.tol
    d = 200
    assert mse_theory(sol, m, d) < 1.0 + 0.3 * d


def test_no_convergence_reports_trace():
    cfg = SolverConfig(max_iter=2, quadrature=Quadrature(nodes=10))
    with pytest.raises(NoConvergence) as exc:
        solve_fixed_point(FIG1, W, 1.0, 0.5, 0.1, cfg=cfg)
    assert len(exc.value.residual_trace) == 2


def test_p2_runs_and_is_symmetric():
    cfg = SolverConfig(quadrature=Quadrature(samples=512), tol=1e-6)
    sol = solve_fixed_point(FIG1, W, 1.0, 0.5, 0.1, cfg=cfg, p=2)
    s = sol.stats
    np.testing.assert_allclose(s.q, s.q.T, atol=1e-10)
    assert np.linalg.eigvalsh(s.q)[0] >= -1e-10
    assert np.linalg.eigvalsh(s.V)[0] > 0
