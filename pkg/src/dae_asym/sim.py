"""Training the tied-weight DAE with full-batch Adam and measuring it.

The network is f(x) = b x + w^T s(w x / sqrt(d)) / sqrt(d) with w of shape
(p, d).  Component variants: ``bottleneck`` and ``rae`` keep b = 0,
``rescaling`` keeps w = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import Divergence
from .mixture import Dataset, MixtureSpec, sample_dataset
from .numerics import Activation

SIM_VARIANTS = ("full", "bottleneck", "rescaling", "rae")


@dataclass(frozen=True, eq=False)
class DaeParams:
    w: np.ndarray
    b: float
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in SIM_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch Adam settings.

    ``weight_decay`` is the ridge strength lambda of the objective
    (1/2) sum_mu ||x - f||^2 + (lambda/2) ||w||_F^2.  With ``decay_mode``
    ``"objective"`` the trainer minimizes the sample mean of ||x - f||^2
    plus (lambda/n) ||w||_F^2, i.e. the same objective divided by n/2, so
    the additive term in grad_w is 2 lambda w / n.  ``"literal"`` adds
    lambda w to the gradient of the mean loss instead.
    """

    lr: float = 0.05
    epochs: int = 2000
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    act: Activation = field(default_factory=Activation)
    init_scale: float = 1.0  # entries of w start as N(0, init_scale^2 / d)
    b0: float = 0.5
    decay_mode: str = "objective"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.decay_mode not in ("objective", "literal"):
            raise ValueError("decay_mode must be 'objective' or 'literal'")

    def decay_coefficient(self, n: int) -> float:
        return 2.0 * self.weight_decay / n if self.decay_mode == "objective" else self.weight_decay


@dataclass
class TrainResult:
    params: DaeParams
    loss_trace: np.ndarray


@dataclass
class EmpiricalMetrics:
    test_mse: float
    train_mse: float
    mse_minus_reference: float
    train_mse_cv: float
    theta: np.ndarray
    weight_norm2_per_d: float
    b: float
    n_test: int
    n_runs: int
    test_mse_se: float = 0.0
    train_mse_se: float = 0.0
    mse_minus_reference_se: float = 0.0
    train_mse_cv_se: float = 0.0
    theta_se: Optional[np.ndarray] = None
    weight_norm2_per_d_se: float = 0.0
    b_se: float = 0.0


def dae_forward(params: DaeParams, x_noisy: np.ndarray, act: Activation = Activation()) -> np.ndarray:
    """Network output for one sample (d,) or a batch (n, d)."""
    X = np.atleast_2d(x_noisy)
    d = X.shape[1]
    out = np.zeros_like(X, dtype=float)
    if params.variant in ("full", "rescaling"):
        out += params.b * X
    if params.variant != "rescaling":
        w = params.w
        out += act(X @ w.T / np.sqrt(d)) @ w / np.sqrt(d)
    return out[0] if np.ndim(x_noisy) == 1 else out


def dae_loss_grad(params: DaeParams, clean: np.ndarray, noisy: np.ndarray, weight_decay: float,
                  act: Activation = Activation()):
    """Mean squared residual over the batch and its gradients.

    ``weight_decay * w`` is added to grad_w (the loss value excludes it).
    """
    n, d = clean.shape
    w = params.w
    sd = np.sqrt(d)
    use_w = params.variant != "rescaling"
    use_b = params.variant in ("full", "rescaling")
    out = params.b * noisy if use_b else np.zeros_like(clean)
    if use_w:
        pre = noisy @ w.T / sd
        h = act(pre)
        out = out + h @ w / sd
    R = clean - out
    loss = float(np.sum(R * R) / n)
    G = -2.0 * R / n  # d loss / d out
    grad_b = float(np.sum(G * noisy)) if use_b else 0.0
    grad_w = np.zeros_like(w)
    if use_w:
        grad_w = h.T @ G / sd
        dh = G @ w.T / sd
        grad_w = grad_w + (dh * act.d1(pre)).T @ noisy / sd
        grad_w = grad_w + weight_decay * w
    return loss, grad_w, grad_b


def init_params(d: int, p: int, variant: str, cfg: TrainConfig) -> DaeParams:
    rng = np.random.default_rng(cfg.seed)
    w = cfg.init_scale / np.sqrt(d) * rng.standard_normal((p, d))
    if variant == "rescaling":
        w = np.zeros((p, d))
    b = cfg.b0 if variant in ("full", "rescaling") else 0.0
    return DaeParams(w, b, variant)


def adam_train(dataset: Dataset, p: int, variant: str = "full", cfg: TrainConfig = TrainConfig(),
               init: Optional[DaeParams] = None) -> TrainResult:
    """Full-batch Adam with bias correction on the mean-normalized objective."""
    clean, noisy = dataset.clean, dataset.noisy
    n, d = clean.shape
    params = init_params(d, p, variant, cfg) if init is None else init
    wd = cfg.decay_coefficient(n)
    w, b = params.w.copy(), params.b
    mw, vw = np.zeros_like(w), np.zeros_like(w)
    mb = vb = 0.0
    b1, b2 = cfg.beta1, cfg.beta2
    trace = np.empty(cfg.epochs)
    train_b = variant in ("full", "rescaling")
    train_w = variant != "rescaling"
    for t in range(1, cfg.epochs + 1):
        loss, gw, gb = dae_loss_grad(DaeParams(w, b, variant), clean, noisy, wd, cfg.act)
        if not np.isfinite(loss):
            raise Divergence(f"loss became non-finite at epoch {t}")
        trace[t - 1] = loss
        c1, c2 = 1 - b1**t, 1 - b2**t
        if train_w:
            mw = b1 * mw + (1 - b1) * gw
            vw = b2 * vw + (1 - b2) * gw * gw
            w = w - cfg.lr * (mw / c1) / (np.sqrt(vw / c2) + cfg.eps)
        if train_b:
            mb = b1 * mb + (1 - b1) * gb
            vb = b2 * vb + (1 - b2) * gb * gb
            b = b - cfg.lr * (mb / c1) / (np.sqrt(vb / c2) + cfg.eps)
    return TrainResult(DaeParams(w, float(b), variant), trace)


def fit_rescaling(dataset: Dataset) -> float:
    """Least-squares c minimizing sum ||x - c x_noisy||^2 on the training set."""
    return float(np.sum(dataset.clean * dataset.noisy) / np.sum(dataset.noisy**2))


def cosine_matrix(w: np.ndarray, means: np.ndarray) -> np.ndarray:
    """theta_ik = w_i . mu_k / (|w_i| |mu_k|); zero rows or means give nan."""
    wn = np.linalg.norm(w, axis=1)
    mn = np.linalg.norm(means, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (w @ means.T) / np.outer(wn, mn)


def align_signs(w: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Flip rows so that each has a nonnegative overlap with the first mean.

    For odd activations w_i -> -w_i leaves the network unchanged.
    """
    s = np.sign(w @ means[0])
    s[s == 0] = 1.0
    return w * s[:, None]


def _mse(params, X, Xt, act):
    R = X - dae_forward(params, Xt, act)
    return np.sum(R * R, axis=1)


def rescaling_mse_exact(spec: MixtureSpec, delta: float, c: float) -> float:
    """E ||x - c x_noisy||^2 for the mixture, in closed form."""
    sq = float(np.dot(spec.weights, np.sum(spec.means**2, axis=1) + np.trace(spec.covariances, axis1=1, axis2=2)))
    return spec.d * delta * c**2 + (1.0 - np.sqrt(1.0 - delta) * c) ** 2 * sq


def run_metrics(params: DaeParams, spec: MixtureSpec, delta: float, n_test: int, seed, act: Activation = Activation(),
                train: Optional[Dataset] = None, reference_c: Optional[float] = None, chunk: int = 5000) -> dict:
    """Metrics of one trained network on a fresh test set.

    ``mse_minus_reference`` estimates mse(f) - E||x - c x_noisy||^2 by pairing
    every test sample with the rescaling c * x_noisy (c = ``reference_c``, or
    the least-squares fit on ``train``, or b), which cancels most of the
    Theta(d) sampling noise.  ``train_mse_cv`` is the training loss with the
    same control variate: mean ||x - f||^2 - mean ||x - c x_noisy||^2 plus the
    exact expectation of the latter.
    """
    if reference_c is not None:
        c = float(reference_c)
    elif train is not None:
        c = fit_rescaling(train)
    else:
        c = params.b
    ref = DaeParams(np.zeros_like(params.w), c, "rescaling")
    tot = diff = 0.0
    done = 0
    for child in np.random.SeedSequence(seed).spawn(int(np.ceil(n_test / chunk))):
        m = min(chunk, n_test - done)
        ds = sample_dataset(spec, m, delta, np.random.default_rng(child))
        e = _mse(params, ds.clean, ds.noisy, act)
        tot += e.sum()
        diff += (e - _mse(ref, ds.clean, ds.noisy, act)).sum()
        done += m
    w = align_signs(params.w, spec.means) if params.variant != "rescaling" else params.w
    out = dict(test_mse=tot / n_test, mse_minus_reference=diff / n_test, theta=cosine_matrix(w, spec.means),
               weight_norm2_per_d=float(np.sum(params.w**2) / spec.d), b=params.b, c=c)
    out["train_mse"] = out["train_mse_cv"] = float("nan")
    if train is not None:
        e = _mse(params, train.clean, train.noisy, act)
        e0 = _mse(ref, train.clean, train.noisy, act)
        out["train_mse"] = float(np.mean(e))
        out["train_mse_cv"] = float(np.mean(e - e0)) + rescaling_mse_exact(spec, train.delta, c)
    return out


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return v.mean(axis=0), np.zeros_like(v.mean(axis=0))
    return v.mean(axis=0), v.std(axis=0, ddof=1) / np.sqrt(len(v))


def empirical_metrics(params, spec: MixtureSpec, delta: float, n_test: int = 10000, n_seeds: Optional[int] = None,
                      seed: int = 0, act: Activation = Activation(), train: Optional[Sequence[Dataset]] = None,
                      reference_c: Optional[float] = None) -> EmpiricalMetrics:
    """Cross-run means and standard errors.

    ``params`` is one DaeParams or a sequence (one per training seed, with
    matching ``train`` datasets).  With a single network, ``n_seeds``
    independent test sets give the standard errors instead.
    """
    if n_test < 1:
        raise ValueError("n_test must be positive")
    plist = [params] if isinstance(params, DaeParams) else list(params)
    tlist = [None] * len(plist) if train is None else list(train)
    if len(plist) == 1 and n_seeds and n_seeds > 1:
        plist = plist * n_seeds
        tlist = tlist * n_seeds
    runs = [run_metrics(pr, spec, delta, n_test, (seed, i), act, tr, reference_c)
            for i, (pr, tr) in enumerate(zip(plist, tlist))]
    keys = ("test_mse", "train_mse", "train_mse_cv", "mse_minus_reference", "theta", "weight_norm2_per_d", "b")
    agg = {k: _mean_se([r[k] for r in runs]) for k in keys}
    kw = {}
    for k in keys:
        mean, se = agg[k]
        kw[k] = mean if k == "theta" else float(mean)
        kw[k + "_se"] = se if k == "theta" else float(se)
    return EmpiricalMetrics(n_test=n_test, n_runs=len(runs), **kw)


def simulate_point(spec: MixtureSpec, alpha: float, delta: float, p: int = 1, variant: str = "full",
                   n_seeds: int = 10, cfg: TrainConfig = TrainConfig(), n_test: int = 10000, seed: int = 0,
                   reference_c: Optional[float] = None):
    """Train ``n_seeds`` networks on independent datasets and aggregate their metrics.

    Returns (EmpiricalMetrics, list of DaeParams, list of Dataset).
    """
    n = max(int(round(alpha * spec.d)), 1)
    root = np.random.SeedSequence(seed)
    params, data = [], []
    for i, child in enumerate(root.spawn(n_seeds)):
        ds_seed, init_seed = child.generate_state(2)
        ds = sample_dataset(spec, n, delta, int(ds_seed))
        res = adam_train(ds, p, variant, replace(cfg, seed=int(init_seed)))
        params.append(res.params)
        data.append(ds)
    em = empirical_metrics(params, spec, delta, n_test, seed=seed, act=cfg.act, train=data, reference_c=reference_c)
    return em, params, data
