from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dae_asym.errors import Divergence
from dae_asym.mixture import binary_isotropic_spec, sample_dataset
from dae_asym.numerics import Activation
from dae_asym.sim import (DaeParams, TrainConfig, adam_train, align_signs, cosine_matrix, dae_forward,
                          dae_loss_grad, empirical_metrics, fit_rescaling, rescaling_mse_exact, run_metrics,
                          simulate_point)


def test_forward_examples():
    x = np.array([1.0, -2.0, 0.5, 3.0])
    w = np.zeros((1, 4))
    np.testing.assert_allclose(dae_forward(DaeParams(w, 0.7), x), 0.7 * x)
    w = np.array([[2.0, 0.0, 0.0, 0.0]])
    expected = 0.5 * x + np.array([np.tanh(1.0), 0, 0, 0])
    np.testing.assert_allclose(dae_forward(DaeParams(w, 0.5), x), expected)
    np.testing.assert_allclose(dae_forward(DaeParams(w, 0.5, "bottleneck"), x), expected - 0.5 * x)
    np.testing.assert_allclose(dae_forward(DaeParams(w, 0.5, "rescaling"), x), 0.5 * x)
    batch = np.stack([x, -x])
    np.testing.assert_allclose(dae_forward(DaeParams(w, 0.5), batch)[1], -expected)


def test_unknown_variant():
    with pytest.raises(ValueError):
        DaeParams(np.zeros((1, 2)), 0.0, "tied")


@settings(max_examples=50)
@given(st.integers(0, 100_000), st.sampled_from(["full", "bottleneck", "rescaling"]))
def test_gradients_match_finite_differences(seed, variant):
    rng = np.random.default_rng(seed)
    d, p, n = 10, 2, 5
    params = DaeParams(rng.standard_normal((p, d)), float(rng.standard_normal()), variant)
    clean, noisy = rng.standard_normal((2, n, d))
    wd = 0.3
    _, gw, gb = dae_loss_grad(params, clean, noisy, wd)

    def total(w, b):
        loss, _, _ = dae_loss_grad(DaeParams(w, b, variant), clean, noisy, 0.0)
        return loss + (0.5 * wd * np.sum(w * w) if variant != "rescaling" else 0.0)

    h = 1e-6
    fd_w = np.zeros_like(params.w)
    for idx in np.ndindex(*params.w.shape):
        e = np.zeros_like(params.w)
        e[idx] = h
        fd_w[idx] = (total(params.w + e, params.b) - total(params.w - e, params.b)) / (2 * h)
    fd_b = (total(params.w, params.b + h) - total(params.w, params.b - h)) / (2 * h)
    if variant != "rescaling":
        assert np.linalg.norm(gw - fd_w) <= 1e-5 * max(np.linalg.norm(fd_w), 1e-3)
    else:
        assert np.all(gw == 0)
    if variant != "bottleneck":
        assert abs(gb - fd_b) <= 1e-5 * max(abs(fd_b), 1e-3)
    else:
        assert gb == 0.0


def test_seed_determinism():
    spec = binary_isotropic_spec(20, 0.09, seed=0)
    ds = sample_dataset(spec, 40, 0.4, seed=3)
    cfg = TrainConfig(epochs=50, seed=7)
    a, b = adam_train(ds, 2, cfg=cfg), adam_train(ds, 2, cfg=cfg)
    assert np.array_equal(a.params.w, b.params.w) and a.params.b == b.params.b
    c = adam_train(ds, 2, cfg=TrainConfig(epochs=50, seed=8))
    assert not np.array_equal(a.params.w, c.params.w)


def test_signed_permutation_equivariance(rng):
    """Adam acts coordinate-wise, so relabeling and flipping coordinates commutes with training."""
    d = 20
    spec = binary_isotropic_spec(d, 0.09, seed=0)
    ds = sample_dataset(spec, 60, 0.4, seed=1)
    perm = rng.permutation(d)
    signs = rng.choice([-1.0, 1.0], d)
    O = np.eye(d)[perm] * signs[:, None]
    rot = replace(ds, clean=ds.clean @ O.T, noisy=ds.noisy @ O.T)
    cfg = TrainConfig(epochs=100)
    w0 = 0.3 * rng.standard_normal((1, d))
    a = adam_train(ds, 1, cfg=cfg, init=DaeParams(w0, 0.5))
    b = adam_train(rot, 1, cfg=cfg, init=DaeParams(w0 @ O.T, 0.5))
    np.testing.assert_allclose(b.params.w, a.params.w @ O.T, atol=1e-10)
    assert b.params.b == pytest.approx(a.params.b, abs=1e-12)


def test_forward_orthogonal_equivariance(rng):
    d = 8
    O, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w = rng.standard_normal((2, d))
    x = rng.standard_normal((3, d))
    f = dae_forward(DaeParams(w, 0.3), x)
    g = dae_forward(DaeParams(w @ O.T, 0.3), x @ O.T)
    np.testing.assert_allclose(g, f @ O.T, atol=1e-12)


def test_large_decay_collapses_weights():
    spec = binary_isotropic_spec(50, 0.09, seed=0)
    ds = sample_dataset(spec, 50, 0.5, seed=1)
    res = adam_train(ds, 1, cfg=TrainConfig(weight_decay=1e3, epochs=1500, lr=0.01))
    assert np.sum(res.params.w**2) / 50 < 1e-4


def test_rescaling_reaches_least_squares():
    d = 500
    spec = binary_isotropic_spec(d, 0.09, seed=0)
    ds = sample_dataset(spec, d, 0.5, seed=1)
    res = adam_train(ds, 1, "rescaling", TrainConfig(epochs=2000, lr=0.01))
    assert res.params.b == pytest.approx(fit_rescaling(ds), abs=1e-3)


def test_loss_settles():
    spec = binary_isotropic_spec(50, 0.09, seed=0)
    ds = sample_dataset(spec, 50, 0.5, seed=1)
    trace = adam_train(ds, 1, cfg=TrainConfig(epochs=2000, lr=0.01)).loss_trace
    tail = trace[-200:]
    # at convergence Adam jitters at the 1e-8 relative level
    assert np.all(np.diff(tail) <= 1e-6 * np.abs(tail[:-1]))
    assert tail[-1] < trace[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raised():
    spec = binary_isotropic_spec(10, 0.09, seed=0)
    ds = sample_dataset(spec, 10, 0.5, seed=1)
    bad = replace(ds, clean=ds.clean * np.inf)
    with pytest.raises(Divergence):
        adam_train(bad, 1, cfg=TrainConfig(epochs=3))


def test_cosines_and_signs():
    means = np.array([[1.0, 0.0], [-1.0, 0.0]])
    w = np.array([[-2.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    th = cosine_matrix(align_signs(w, means), means)
    np.testing.assert_allclose(th[:2], [[1.0, -1.0], [np.sqrt(0.5), -np.sqrt(0.5)]])
    assert np.all(np.isnan(th[2]))


def test_metrics_trivial_cases():
    d = 20
    spec = binary_isotropic_spec(d, 0.09, seed=0)
    zero = DaeParams(np.zeros((1, d)), 0.0, "rescaling")
    m = empirical_metrics(zero, spec, 0.5, n_test=20000, n_seeds=3)
    second = 1.0 + d * 0.09
    assert m.test_mse == pytest.approx(second, abs=4 * m.test_mse_se + 1e-9)
    assert m.mse_minus_reference == 0.0
    c = 0.4
    r = run_metrics(DaeParams(np.zeros((1, d)), c, "rescaling"), spec, 0.5, 50000, 0)
    assert r["mse_minus_reference"] == 0.0
    assert r["test_mse"] == pytest.approx(rescaling_mse_exact(spec, 0.5, c), rel=2e-2)


def test_metrics_validate_n_test():
    spec = binary_isotropic_spec(5, 0.09, seed=0)
    with pytest.raises(ValueError):
        empirical_metrics(DaeParams(np.zeros((1, 5)), 0.0), spec, 0.5, n_test=0)


def test_simulate_point_shapes():
    spec = binary_isotropic_spec(20, 0.09, seed=0)
    em, params, data = simulate_point(spec, 1.0, 0.5, p=1, n_seeds=3, cfg=TrainConfig(epochs=100), n_test=500)
    assert em.n_runs == 3 and len(params) == 3 and data[0].clean.shape == (20, 20)
    assert em.theta.shape == (1, 2) and em.test_mse_se > 0
