"""Config-driven sweep runner: theory, simulation and baseline grids to CSV.

Run specs are YAML files (JSON is accepted too, including a previous run's
``manifest.json``, whose echoed config is re-run as is).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .baselines import (bayes_fixed_point, bayes_mse, oracle_mse_theory, pca_denoise, pca_fit,
                        pca_plugin_denoise)
from .errors import CommutativityViolation, ConfigError
from .metrics import mse_rescaling, theory_metrics
from .mixture import (MixtureSpec, SpectralMeasure, binary_isotropic_spec, binary_spec, build_spectral_measure,
                      empirical_cluster_stats, isotropic_binary_measure, load_labeled_csv, random_unit_vector,
                      realize_measure, sample_dataset, wishart_covariance)
from .numerics import ACTIVATIONS, Activation, Quadrature
from .replica import SolverConfig, skip_strength, solve_dense, solve_fixed_point
from .sim import TrainConfig, rescaling_mse_exact, simulate_point

MODES = ("theory", "simulate", "baselines", "compare")
VARIANTS = ("full_dae", "bottleneck", "rae")
SIM_VARIANT = {"full_dae": "full", "bottleneck": "bottleneck", "rae": "rae"}
MIXTURE_KINDS = ("isotropic", "atoms", "csv", "wishart")
NA = "NA"

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


# ---------------------------------------------------------------- config types

@dataclass(frozen=True)
class MixtureBlock:
    """Exactly one mixture source with its parameters.

    isotropic: sigma2, mu_norm2=1, rho=0.5, seed=0 (direction of mu in simulations)
    atoms: weights, gamma (A x K), tau (A x K), rho (K); d from the spec
    csv: path, scale=1; Gaussian fit per label
    wishart: ratios (two aspect ratios), scale, mu_norm2=1, rho=0.5, seed=0
    """

    kind: str
    params: dict


@dataclass(frozen=True)
class ModelBlock:
    p: int = 1
    activation: str = "tanh"
    lam: float = 0.1
    variant: str = "full_dae"


@dataclass(frozen=True)
class SimBlock:
    n_seeds: int = 10
    n_test: int = 10000
    lr: float = 0.05
    epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 1.0
    b0: float = 0.5
    decay_mode: str = "objective"


@dataclass(frozen=True)
class RunSpec:
    mode: str
    mixture: MixtureBlock
    grid_axis: str
    grid: tuple
    alpha: float = 1.0
    delta: float = 0.5
    d: int = 200
    seed: int = 0
    out: str = "results"
    model: ModelBlock = field(default_factory=ModelBlock)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimBlock = field(default_factory=SimBlock)

    def points(self) -> list[tuple[float, float]]:
        """(delta, alpha) per grid point, in grid order."""
        if self.grid_axis == "delta":
            return [(float(v), self.alpha) for v in self.grid]
        return [(self.delta, float(v)) for v in self.grid]

    def train_config(self) -> TrainConfig:
        s = self.sim
        return TrainConfig(lr=s.lr, epochs=s.epochs, weight_decay=self.model.lam, beta1=s.beta1, beta2=s.beta2,
                           eps=s.eps, seed=self.seed, act=Activation(self.model.activation),
                           init_scale=s.init_scale, b0=s.b0, decay_mode=s.decay_mode)

    def to_dict(self) -> dict:
        """Fully resolved config, loadable again by :func:`parse_spec`."""
        solver = asdict(self.solver)
        return {
            "mode": self.mode,
            "seed": self.seed,
            "out": self.out,
            "d": self.d,
            "alpha": self.alpha,
            "delta": self.delta,
            "grid": {self.grid_axis: list(self.grid)},
            "mixture": {self.mixture.kind: dict(self.mixture.params)},
            "model": asdict(self.model),
            "solver": solver,
            "sim": asdict(self.sim),
        }


_MIXTURE_DEFAULTS = {
    "isotropic": {"mu_norm2": 1.0, "rho": 0.5, "seed": 0},
    "atoms": {},
    "csv": {"scale": 1.0},
    "wishart": {"mu_norm2": 1.0, "rho": 0.5, "seed": 0, "scale": 0.1, "ratios": [5 / 6, 5 / 7]},
}
_MIXTURE_REQUIRED = {
    "isotropic": ("sigma2",),
    "atoms": ("weights", "gamma", "tau", "rho"),
    "csv": ("path",),
    "wishart": (),
}


def _coerce(key: str, value: Any, typ):
    """Cast a scalar config value; YAML reads '1e-7' as a string, so floats accept numeric strings."""
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            raise TypeError
        if typ is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError
            return int(float(value))
        if typ is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if typ is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from None
    return value


def _fill(cls, raw: Any, prefix: str, skip=()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix}: expected a mapping")
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}: unknown key")
    kw = {}
    for name, val in raw.items():
        f = known[name]
        typ = {"int": int, "float": float, "str": str, "bool": bool}.get(
            f.type if isinstance(f.type, str) else getattr(f.type, "__name__", ""), None)
        kw[name] = _coerce(f"{prefix}.{name}", val, typ) if typ else val
    return kw


def _float_list(key, val) -> list:
    if not isinstance(val, (list, tuple)):
        raise ConfigError(f"{key}: expected a list")
    return [_coerce(f"{key}[{i}]", v, float) for i, v in enumerate(val)]


def _parse_mixture(raw) -> MixtureBlock:
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("mixture: missing mixture source")
    kinds = [k for k in raw if k in MIXTURE_KINDS]
    extra = [k for k in raw if k not in MIXTURE_KINDS]
    if extra:
        raise ConfigError(f"mixture.{extra[0]}: unknown mixture source")
    if len(kinds) != 1:
        raise ConfigError("mixture: exactly one source required")
    kind = kinds[0]
    body = raw[kind] or {}
    if not isinstance(body, dict):
        raise ConfigError(f"mixture.{kind}: expected a mapping")
    params = dict(_MIXTURE_DEFAULTS[kind])
    params.update(body)
    for key in _MIXTURE_REQUIRED[kind]:
        if key not in params:
            raise ConfigError(f"mixture.{kind}.{key}: required")
    allowed = set(_MIXTURE_DEFAULTS[kind]) | set(_MIXTURE_REQUIRED[kind])
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"mixture.{kind}.{unknown[0]}: unknown key")
    pre = f"mixture.{kind}"
    for key in ("sigma2", "mu_norm2", "rho", "scale"):
        if key in params and not isinstance(params[key], list):
            params[key] = _coerce(f"{pre}.{key}", params[key], float)
    if "seed" in params:
        params["seed"] = _coerce(f"{pre}.seed", params["seed"], int)
    if kind == "csv":
        params["path"] = _coerce(f"{pre}.path", params["path"], str)
    if kind == "wishart":
        params["ratios"] = _float_list(f"{pre}.ratios", params["ratios"])
    if kind == "atoms":
        params["weights"] = _float_list(f"{pre}.weights", params["weights"])
        params["rho"] = _float_list(f"{pre}.rho", params["rho"])
        for key in ("gamma", "tau"):
            rows = params[key]
            if not isinstance(rows, list):
                raise ConfigError(f"{pre}.{key}: expected a list of rows")
            params[key] = [_float_list(f"{pre}.{key}[{i}]", r) for i, r in enumerate(rows)]
    return MixtureBlock(kind, params)


def parse_spec(raw: Any) -> RunSpec:
    """Build a RunSpec from a parsed YAML/JSON document; raises ConfigError naming the key."""
    if isinstance(raw, dict) and "config" in raw and "points" in raw:
        raw = raw["config"]  # a previous run's manifest
    if not isinstance(raw, dict):
        raise ConfigError("spec: expected a mapping at top level")
    top = {"mode", "seed", "out", "d", "alpha", "delta", "grid", "mixture", "model", "solver", "sim"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    if "mode" not in raw:
        raise ConfigError("mode: required")
    mode = _coerce("mode", raw["mode"], str)
    if "mixture" not in raw:
        raise ConfigError("mixture: missing mixture source")
    mixture = _parse_mixture(raw["mixture"])
    grid = raw.get("grid")
    if not isinstance(grid, dict) or len(grid) != 1:
        raise ConfigError("grid: expected exactly one of delta or alpha")
    axis = next(iter(grid))
    if axis not in ("delta", "alpha"):
        raise ConfigError(f"grid.{axis}: unknown axis")
    values = tuple(_float_list(f"grid.{axis}", grid[axis]))
    model = ModelBlock(**_fill(ModelBlock, raw.get("model"), "model"))
    solver_raw = dict(raw.get("solver") or {})
    quad = Quadrature(**_fill(Quadrature, solver_raw.pop("quadrature", None), "solver.quadrature"))
    solver = SolverConfig(quadrature=quad, **_fill(SolverConfig, solver_raw, "solver", skip=("quadrature",)))
    sim = SimBlock(**_fill(SimBlock, raw.get("sim"), "sim"))
    kw = {k: _coerce(k, raw[k], t) for k, t in (("alpha", float), ("delta", float), ("d", int), ("seed", int),
                                               ("out", str)) if k in raw}
    return RunSpec(mode=mode, mixture=mixture, grid_axis=axis, grid=values, model=model, solver=solver, sim=sim, **kw)


def validate(spec: RunSpec) -> list[str]:
    """All invariant violations as messages that start with the offending key."""
    errs = []
    if spec.mode not in MODES:
        errs.append(f"mode: must be one of {', '.join(MODES)}")
    if not spec.grid:
        errs.append(f"grid.{spec.grid_axis}: grid is empty")
    m = spec.model
    if m.variant not in VARIANTS:
        errs.append(f"model.variant: must be one of {', '.join(VARIANTS)}")
    if m.activation not in ACTIVATIONS:
        errs.append(f"model.activation: must be one of {', '.join(ACTIVATIONS)}")
    if m.p < 1:
        errs.append("model.p: must be >= 1")
    if m.lam < 0:
        errs.append("model.lam: must be >= 0")
    lo_open = m.variant != "rae"
    for i, (delta, alpha) in enumerate(spec.points()):
        key = f"grid.delta[{i}]" if spec.grid_axis == "delta" else "delta"
        if not (0.0 <= delta <= 1.0) or (lo_open and delta == 0.0):
            bound = "(0, 1]" if lo_open else "[0, 1]"
            errs.append(f"{key}: delta={delta} outside {bound}")
        key = f"grid.alpha[{i}]" if spec.grid_axis == "alpha" else "alpha"
        if not alpha > 0:
            errs.append(f"{key}: alpha={alpha} must be > 0")
    if spec.d < 1:
        errs.append("d: must be >= 1")
    if spec.sim.n_seeds < 1:
        errs.append("sim.n_seeds: must be >= 1")
    if spec.sim.n_test < 1:
        errs.append("sim.n_test: must be >= 1")
    if spec.sim.lr <= 0:
        errs.append("sim.lr: must be > 0")
    if spec.sim.decay_mode not in ("objective", "literal"):
        errs.append("sim.decay_mode: must be 'objective' or 'literal'")
    mx = spec.mixture
    pre = f"mixture.{mx.kind}"
    P = mx.params
    if mx.kind in ("isotropic", "wishart"):
        if P.get("sigma2", 1.0) < 0:
            errs.append(f"{pre}.sigma2: must be >= 0")
        if not 0.0 <= P["rho"] <= 1.0:
            errs.append(f"{pre}.rho: must lie in [0, 1]")
        if P["mu_norm2"] < 0:
            errs.append(f"{pre}.mu_norm2: must be >= 0")
    if mx.kind == "wishart":
        if len(P["ratios"]) != 2 or min(P["ratios"]) <= 0:
            errs.append(f"{pre}.ratios: need two positive aspect ratios")
        if P["scale"] <= 0:
            errs.append(f"{pre}.scale: must be > 0")
    if mx.kind == "csv":
        if not Path(P["path"]).is_file():
            errs.append(f"{pre}.path: file not found: {P['path']}")
        if P["scale"] <= 0:
            errs.append(f"{pre}.scale: must be > 0")
    if mx.kind == "atoms":
        w, g, t, rho = (np.asarray(P[k], dtype=float) for k in ("weights", "gamma", "tau", "rho"))
        if g.shape != t.shape or g.ndim != 2 or g.shape[0] != w.size or g.shape[1] != rho.size:
            errs.append(f"{pre}.gamma: shapes of weights, gamma, tau, rho disagree")
        if np.any(w <= 0) or abs(w.sum() - 1) > 1e-10:
            errs.append(f"{pre}.weights: must be positive and sum to 1")
        if np.any(rho < 0) or abs(rho.sum() - 1) > 1e-10:
            errs.append(f"{pre}.rho: must be nonnegative and sum to 1")
        if g.size and np.any(g < 0):
            errs.append(f"{pre}.gamma: must be nonnegative")
    if mx.kind == "wishart" and m.p > 1:
        errs.append("model.p: non-commuting covariances support p = 1 only")
    if mx.kind == "wishart" and m.variant == "rae":
        errs.append("model.variant: rae needs commuting covariances")
    if spec.mode == "baselines" and mx.kind != "isotropic":
        errs.append("mode: baselines need the isotropic binary mixture")
    return errs


def load_spec(path) -> RunSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"spec: cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"spec: invalid YAML: {exc}") from None
    try:
        spec = parse_spec(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if spec.mixture.kind == "csv" and not Path(spec.mixture.params["path"]).is_absolute():
        # relative data paths are taken relative to the spec file
        p = str((Path(path).parent / spec.mixture.params["path"]).resolve())
        spec = replace(spec, mixture=MixtureBlock("csv", {**spec.mixture.params, "path": p}))
    return spec


# ---------------------------------------------------------------- problem setup

@dataclass(eq=False)
class Problem:
    """Theory source, simulation mixture and cluster weights of a run spec."""

    spec: Optional[MixtureSpec]  # explicit mixture (simulations, dense theory)
    measure: Optional[SpectralMeasure]  # None -> non-commuting, dense p=1 solver
    weights: np.ndarray
    d: int

    @property
    def source(self):
        return self.measure if self.measure is not None else self.spec


def build_problem(run: RunSpec) -> Problem:
    P = run.mixture.params
    kind = run.mixture.kind
    if kind == "isotropic":
        d = run.d
        mu = np.sqrt(P["mu_norm2"]) * random_unit_vector(d, np.random.default_rng(P["seed"]))
        spec = binary_isotropic_spec(d, P["sigma2"], mu=mu, rho=P["rho"])
        measure = isotropic_binary_measure(P["sigma2"], P["mu_norm2"], d)
        return Problem(spec, measure, np.array([P["rho"], 1 - P["rho"]]), d)
    if kind == "atoms":
        measure = SpectralMeasure(P["weights"], P["gamma"], P["tau"], run.d)
        try:
            spec = realize_measure(measure, P["rho"])
        except ValueError:
            spec = None
        return Problem(spec, measure, np.asarray(P["rho"], dtype=float), run.d)
    if kind == "csv":
        X, y = load_labeled_csv(P["path"], P["scale"])
        spec = empirical_cluster_stats(X, y)
    else:  # wishart
        d = run.d
        rng = np.random.default_rng(P["seed"])
        mu = np.sqrt(P["mu_norm2"]) * random_unit_vector(d, rng)
        covs = [wishart_covariance(d, r, P["scale"], rng) for r in P["ratios"]]
        spec = binary_spec(mu, covs[0], covs[1], P["rho"])
    try:
        measure = build_spectral_measure(spec)
    except CommutativityViolation:
        measure = None
    return Problem(spec, measure, np.asarray(spec.weights), spec.d)


# ---------------------------------------------------------------- one grid point

def _theta_names(prefix: str, p: int, K: int) -> list[str]:
    return [f"{prefix}theta_{i + 1}{k + 1}" for i in range(p) for k in range(K)]


def csv_columns(p: int, K: int) -> list[str]:
    """Fixed column order; the trailing block holds baseline and control-variate extras."""
    return (["delta", "alpha", "variant", "b_hat", "mse_theory", "mse_circ", "gap_per_d"]
            + _theta_names("", p, K)
            + ["trq_per_p", "train_error", "sim_mse", "sim_mse_se"]
            + _theta_names("sim_", p, K)
            + ["sim_b", "status"]
            + ["sim_mse_raw", "sim_mse_raw_se", "sim_train_mse", "sim_train_mse_se", "sim_q", "sim_q_se", "sim_b_se"]
            + [n + "_se" for n in _theta_names("sim_", p, K)]
            + ["oracle_mse", "bayes_mse", "pca_mse", "pca_mse_se", "plugin_mse", "plugin_mse_se", "error"])


def _theory(run: RunSpec, prob: Problem, delta: float, alpha: float, row: dict, diag: dict):
    m = run.model
    act = Activation(m.activation)
    if prob.measure is not None:
        sol = solve_fixed_point(prob.measure, prob.weights, alpha, delta, m.lam, act, run.solver, m.variant, m.p)
    else:
        if m.p != 1 or m.variant == "rae":
            raise ConfigError("model: non-commuting covariances support p = 1 denoising variants only")
        sol = solve_dense(prob.spec, alpha, delta, m.lam, act, run.solver, m.variant)
    tm = theory_metrics(sol, prob.source, prob.d)
    row.update(b_hat=tm.b_hat, mse_theory=tm.mse, mse_circ=tm.mse_circ,
               gap_per_d=NA if tm.gap_per_d is None else tm.gap_per_d,
               trq_per_p=tm.weight_norm2_per_d / m.p, train_error=tm.train_error)
    for name, v in zip(_theta_names("", m.p, len(prob.weights)), np.ravel(tm.theta)):
        row[name] = float(v)
    diag.update(converged=bool(sol.converged), iterations=int(sol.iterations), residual=float(sol.residual))
    return tm


def _simulate(run: RunSpec, prob: Problem, delta: float, alpha: float, row: dict, b_ref: Optional[float]):
    if prob.spec is None:
        raise ConfigError("mixture.atoms: weights times d must be integers to simulate")
    m = run.model
    if m.variant == "rae":
        delta, c = 0.0, 0.0
    elif m.variant == "bottleneck":
        c = 0.0
    else:
        c = b_ref if b_ref is not None else skip_strength(prob.source, prob.weights, delta)
    em, _, _ = simulate_point(prob.spec, alpha, delta, m.p, SIM_VARIANT[m.variant], run.sim.n_seeds,
                              run.train_config(), run.sim.n_test, run.seed, reference_c=c)
    # control-variate estimate of the test MSE: paired difference to c * x_noisy plus its exact mean
    row.update(sim_mse=em.mse_minus_reference + rescaling_mse_exact(prob.spec, delta, c),
               sim_mse_se=em.mse_minus_reference_se, sim_b=em.b, sim_b_se=em.b_se,
               sim_mse_raw=em.test_mse, sim_mse_raw_se=em.test_mse_se,
               sim_train_mse=em.train_mse_cv, sim_train_mse_se=em.train_mse_cv_se,
               sim_q=em.weight_norm2_per_d, sim_q_se=em.weight_norm2_per_d_se)
    names = _theta_names("sim_", m.p, len(prob.weights))
    for name, v, s in zip(names, np.ravel(em.theta), np.ravel(em.theta_se)):
        row[name] = float(v)
        row[name + "_se"] = float(s)


def _baselines(run: RunSpec, prob: Problem, delta: float, alpha: float, row: dict, diag: dict):
    P = run.mixture.params
    sigma2, r, d = P["sigma2"], P["mu_norm2"], prob.d
    if abs(P["rho"] - 0.5) > 1e-12 or abs(r - 1.0) > 1e-12:
        raise ConfigError("mixture.isotropic: baselines need rho = 0.5 and mu_norm2 = 1")
    ex, circ = oracle_mse_theory(sigma2, delta, d)
    st = bayes_fixed_point(alpha, sigma2)
    exb, _ = bayes_mse(st, sigma2, delta, d)
    row.update(oracle_mse=circ + ex, bayes_mse=circ + exb, mse_circ=circ)
    diag.update(bayes_iterations=st.iterations, bayes_small_alpha=st.small_alpha)
    s = math.sqrt(1.0 - delta)
    c = s * sigma2 / (sigma2 * s * s + delta)
    ref_exact = rescaling_mse_exact(prob.spec, delta, c)
    n = max(int(round(alpha * d)), 2)
    pca, plug = [], []
    for child in np.random.SeedSequence(run.seed).spawn(run.sim.n_seeds):
        tr_seed, te_seed = child.generate_state(2)
        train = sample_dataset(prob.spec, n, delta, int(tr_seed))
        basis = pca_fit(train.clean, 1)
        test = sample_dataset(prob.spec, run.sim.n_test, delta, int(te_seed))
        ref = np.sum((test.clean - c * test.noisy) ** 2, axis=1)
        err = lambda out: float(np.mean(np.sum((test.clean - out) ** 2, axis=1) - ref)) + ref_exact
        pca.append(err(pca_denoise(test.noisy, basis)))
        plug.append(err(pca_plugin_denoise(test.noisy, basis.components[0], sigma2, delta)))
    for key, vals in (("pca_mse", pca), ("plugin_mse", plug)):
        v = np.asarray(vals)
        row[key] = float(v.mean())
        row[key + "_se"] = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0


def run_point(run: RunSpec, index: int) -> tuple[dict, dict]:
    """Row and diagnostics for one grid point; errors are recorded, not raised."""
    delta, alpha = run.points()[index]
    row = {"delta": delta, "alpha": alpha, "variant": run.model.variant, "status": "ok", "error": ""}
    diag = {"index": index, "delta": delta, "alpha": alpha}
    t0 = time.perf_counter()
    try:
        prob = build_problem(run)
        b_ref = None
        if run.mode in ("theory", "compare"):
            tm = _theory(run, prob, delta, alpha, row, diag)
            b_ref = tm.b_hat
        if run.mode in ("simulate", "compare"):
            _simulate(run, prob, delta, alpha, row, b_ref)
            if run.mode == "simulate":
                d_eff = 0.0 if run.model.variant == "rae" else delta
                b = 0.0 if run.model.variant != "full_dae" else skip_strength(prob.source, prob.weights, delta)
                row["mse_circ"] = mse_rescaling(prob.source, prob.weights, d_eff, prob.d, b)
        if run.mode == "baselines":
            _baselines(run, prob, delta, alpha, row, diag)
    except Exception as exc:  # sweep isolation: one failing point never aborts the others
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
        diag["traceback"] = traceback.format_exc(limit=5)
    diag["status"] = row["status"]
    diag["wall_s"] = time.perf_counter() - t0
    return row, diag


def _run_point_star(args):
    return run_point(*args)


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return NA if math.isnan(v) else repr(v)  # repr round-trips exactly
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _n_clusters(run: RunSpec) -> int:
    mx = run.mixture
    if mx.kind in ("isotropic", "wishart"):
        return 2
    if mx.kind == "atoms":
        return len(mx.params["rho"])
    X, y = load_labeled_csv(mx.params["path"], mx.params["scale"])
    return len(np.unique(y))


def resolve_jobs(jobs: Optional[int]) -> int:
    env = os.environ.get("DAE_ASYM_THREADS")
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError(f"DAE_ASYM_THREADS: expected an integer, got {env!r}") from None
    return max(1, int(jobs or 1))


def run(run_spec: RunSpec, out: Optional[str] = None, jobs: Optional[int] = None) -> int:
    """Execute the sweep and write results.csv and manifest.json; returns the exit code."""
    errs = validate(run_spec)
    if errs:
        raise ConfigError("; ".join(errs))
    out_dir = Path(out if out is not None else run_spec.out)
    run_spec = replace(run_spec, out=str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    n_jobs = resolve_jobs(jobs)
    idx = list(range(len(run_spec.grid)))
    t0 = time.perf_counter()
    if n_jobs > 1 and len(idx) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(idx))) as pool:
            results = list(pool.map(_run_point_star, [(run_spec, i) for i in idx]))  # map keeps grid order
    else:
        results = [run_point(run_spec, i) for i in idx]
    cols = csv_columns(run_spec.model.p, _n_clusters(run_spec))
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row, _ in results:
            w.writerow([_fmt(row.get(c)) for c in cols])
    manifest = {
        "tool": "dae-asym",
        "version": _tool_version(),
        "config": run_spec.to_dict(),
        "jobs": n_jobs,
        "wall_s": time.perf_counter() - t0,
        "points": [diag for _, diag in results],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=_fmt)
    failed = sum(row["status"] != "ok" for row, _ in results)
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------- entry point

def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="dae-asym", description="Replica theory and simulation sweeps for DAEs.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a run spec")
    p_run.add_argument("spec")
    p_run.add_argument("--out", default=None, help="output directory (overrides the spec)")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes (DAE_ASYM_THREADS overrides)")
    p_run.add_argument("--seed", type=int, default=None, help="base seed (overrides the spec)")
    p_val = sub.add_parser("validate", help="check a run spec without running it")
    p_val.add_argument("spec")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        if args.command == "validate":
            errs = validate(spec)
            for e in errs:
                print(e, file=sys.stderr)
            return EXIT_CONFIG if errs else EXIT_OK
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        code = run(spec, args.out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if code == EXIT_PARTIAL:
        print("some grid points failed; see results.csv status column and manifest.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
