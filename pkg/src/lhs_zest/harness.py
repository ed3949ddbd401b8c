"""Replicated-fit experiment engine: sweeps, asymptotic oracle, Q-Q data.

For each (method, size) cell the engine runs independent replicates —
design, synthetic responses, Z-estimation — under per-replicate stream
keys, then summarizes per-parameter variance, squared bias, MSE and
normalized variance (n times variance) against the known truth.  The
asymptotic oracle estimates the large-sample normalized variances from
the mean score derivative and the remainder covariance of the score at
the truth, and Q-Q tables pair standardized estimates with normal
quantiles for normality diagnostics.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .anova import VectorField, remainder_covariance
from .design import generate
from .errors import (
    ExcessiveFailures,
    NumericalError,
    SingularJacobian,
    ValidationError,
)
from .glm import (
    ModelSpec,
    generate_dataset,
    get_model,
    make_generative_psi,
    make_psi,
    mean_problem,
    score_field,
)
from .normal import normal_quantile
from .rngperm import StreamKey, generator
from .zsolve import mean_jacobian, psi_bar, sandwich_lhs, solve

_ORACLE_CHUNK = 1 << 16
_SALT_ORACLE_A = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one replicated sweep."""

    model: str
    methods: tuple
    sizes: tuple
    replications: int
    master_seed: int
    n_oracle: int = 1_000_000
    stratify_aux: bool = False
    threads: Optional[int] = None

    def __post_init__(self):
        if self.replications < 2:
            raise ValidationError("replications must be >= 2")
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValidationError("sizes must be strictly increasing")
        if self.n_oracle < max(sizes):
            raise ValidationError("n_oracle must be >= max(sizes)")
        methods = tuple(str(m).lower() for m in self.methods)
        if not methods or any(m not in ("lhs", "iid") for m in methods):
            raise ValidationError("methods must be a subset of {lhs, iid}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "methods", methods)


@dataclass(frozen=True)
class ExperimentTable:
    """Per-(method, n, parameter) moment summaries plus raw estimates."""

    rows: tuple
    estimates: dict
    failures: dict
    theta0: np.ndarray
    model: str


@dataclass(frozen=True)
class QQTable:
    """Sorted standardized estimates paired with normal quantiles."""

    model: str
    method: str
    n: int
    replications: int
    standardization: str
    probs: np.ndarray
    normal_q: np.ndarray
    empirical_q: np.ndarray  # (L, q), sorted per column
    correlations: np.ndarray


@dataclass(frozen=True)
class OracleResult:
    """Asymptotic normalized variances and the matrices behind them."""

    model: str
    n_oracle: int
    normalized_variances: np.ndarray
    covariance: np.ndarray
    A: np.ndarray
    R: np.ndarray


def _fit_one(model: ModelSpec, method: str, n: int, rep: int, master_seed: int,
             stratify_aux: bool):
    """One replicate; returns the estimate or None on any fit failure."""
    key = StreamKey(master_seed=master_seed, replication_index=rep)
    design = generate(method, n, model.d, key)
    if model.kind == "glm":
        family = model.family()
        dataset = generate_dataset(
            family,
            model.theta0,
            design,
            key,
            stratify_aux=stratify_aux and method == "lhs",
        )
        problem = make_psi(family, model.d, model.theta_box)
        channel = dataset.responses
    else:
        problem = mean_problem(model.theta_box)
        channel = np.zeros(n)
    try:
        report = solve(problem, design, channel)
    except NumericalError:
        return None
    return report.theta_hat if report.converged else None


def run_cell(
    model: ModelSpec,
    method: str,
    n: int,
    replications: int,
    master_seed: int,
    stratify_aux: bool = False,
    threads: Optional[int] = None,
):
    """All replicates of one cell; deterministic for a given master seed."""
    workers = resolve_threads(threads)
    args = range(replications)
    runner = lambda rep: _fit_one(model, method, n, rep, master_seed, stratify_aux)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(runner, args))
    else:
        results = [runner(rep) for rep in args]
    estimates = np.array([r for r in results if r is not None])
    failures = sum(1 for r in results if r is None)
    return estimates, failures


def resolve_threads(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("LHS_ZEST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError("LHS_ZEST_THREADS must be an integer") from None
    return os.cpu_count() or 1


def run_sweep(config: ExperimentConfig) -> ExperimentTable:
    """Replicated fits over every (method, n) cell of the configuration.

    Failed fits are excluded from the moments and counted; a cell aborts
    the sweep if more than 20% of its replicates fail.
    """
    model = get_model(config.model)
    rows = []
    estimates = {}
    failures = {}
    for method in config.methods:
        for n in config.sizes:
            E, fails = run_cell(
                model,
                method,
                n,
                config.replications,
                config.master_seed,
                config.stratify_aux,
                config.threads,
            )
            if fails > 0.2 * config.replications:
                raise ExcessiveFailures(
                    f"{fails}/{config.replications} fits failed for "
                    f"method={method} n={n}"
                )
            estimates[(method, n)] = E
            failures[(method, n)] = fails
            var = E.var(axis=0, ddof=1)
            sq_bias = (E.mean(axis=0) - model.theta0) ** 2
            for j in range(model.q):
                rows.append(
                    {
                        "method": method,
                        "n": n,
                        "param": j + 1,
                        "variance": float(var[j]),
                        "sq_bias": float(sq_bias[j]),
                        "mse": float(var[j] + sq_bias[j]),
                        "norm_var": float(n * var[j]),
                        "replications": int(E.shape[0]),
                        "failures": int(fails),
                    }
                )
    return ExperimentTable(
        rows=tuple(rows),
        estimates=estimates,
        failures=failures,
        theta0=model.theta0,
        model=config.model,
    )


def _mean_score_jacobian(model: ModelSpec, n_oracle: int, key: StreamKey) -> np.ndarray:
    """Monte Carlo mean of the score derivative at the truth."""
    if model.kind == "glm":
        problem = make_generative_psi(
            model.family(), model.d, model.theta_box, model.theta0
        )
    else:
        problem = mean_problem(model.theta_box)
    gen = generator(key, _SALT_ORACLE_A)
    q = model.q
    acc = np.zeros((q, q))
    done = 0
    while done < n_oracle:
        m = min(_ORACLE_CHUNK, n_oracle - done)
        pts = gen.random((m, model.d))
        aux = gen.random(m)
        acc += np.asarray(problem.psi_dot(pts, aux, model.theta0)).sum(axis=0)
        done += m
    return acc / n_oracle


def asymptotic_oracle(
    model_name: str,
    n_oracle: int,
    master_seed: int,
    bins: int = 64,
    inner: int = 2048,
) -> OracleResult:
    """Large-sample normalized variances of the estimator under stratification.

    Estimates A (mean score derivative) and the score remainder covariance
    R at the truth with an MC budget of ``n_oracle`` points each, then
    returns the diagonal of ``A^-1 R A^-T`` (the limit of n times the
    estimator variance) together with the full matrix.
    """
    if n_oracle < 10_000:
        raise ValidationError("n_oracle must be >= 10000")
    model = get_model(model_name)
    key = StreamKey(master_seed=master_seed, purpose="oracle")
    A = _mean_score_jacobian(model, n_oracle, key)
    if model.kind == "glm":
        fld = score_field(
            model.family(), model.theta0, model.theta0, model.d, model.theta_box
        )
    else:
        problem = mean_problem(model.theta_box)
        fld_theta = model.theta0
        fld = VectorField(
            fn=lambda pts, aux: problem.psi(pts, aux, fld_theta),
            d=model.d,
            q=model.q,
            uses_auxiliary=False,
        )
    report = remainder_covariance(fld, outer=n_oracle, bins=bins, inner=inner, seed=key)
    cov = sandwich_lhs(A, report.R, 1, psd_tol=report.psd_tolerance)
    return OracleResult(
        model=model_name,
        n_oracle=n_oracle,
        normalized_variances=np.diag(cov).copy(),
        covariance=cov,
        A=A,
        R=report.R,
    )


def qq_data(
    model_name: str,
    n: int,
    replications: int,
    master_seed: int,
    standardization: str = "oracle",
    method: str = "lhs",
    stratify_aux: bool = False,
    oracle_values: Optional[np.ndarray] = None,
    threads: Optional[int] = None,
    estimates: Optional[np.ndarray] = None,
) -> QQTable:
    """Q-Q table of standardized estimates against the standard normal.

    ``oracle`` standardization divides centered estimates by the
    asymptotic standard deviation sqrt(oracle_j / n); ``empirical`` uses
    the replicate standard deviation.  Pre-computed ``estimates`` may be
    supplied to reuse sweep results.
    """
    if replications < 50:
        raise ValidationError("replications must be >= 50 for Q-Q data")
    if standardization not in ("oracle", "empirical"):
        raise ValidationError("standardization must be 'oracle' or 'empirical'")
    model = get_model(model_name)
    if estimates is None:
        estimates, _ = run_cell(
            model, method, n, replications, master_seed, stratify_aux, threads
        )
    L = estimates.shape[0]
    empirical_sd = estimates.std(axis=0, ddof=1)
    if standardization == "oracle":
        if oracle_values is None:
            oracle_values = asymptotic_oracle(
                model_name, max(10_000, n), master_seed
            ).normalized_variances
        sd = np.sqrt(np.maximum(np.asarray(oracle_values, float), 0.0) / n)
        # superefficient cases have a vanishing asymptotic scale; fall back
        sd = np.where(sd > 0, sd, empirical_sd)
    else:
        sd = empirical_sd
    std = (estimates - model.theta0) / sd
    emp = np.sort(std, axis=0)
    probs = (np.arange(L) + 0.5) / L
    nq = normal_quantile(probs)
    corr = np.array([np.corrcoef(emp[:, j], nq)[0, 1] for j in range(model.q)])
    return QQTable(
        model=model_name,
        method=method,
        n=n,
        replications=L,
        standardization=standardization,
        probs=probs,
        normal_q=nq,
        empirical_q=emp,
        correlations=corr,
    )


def expansion_correlation(
    model_name: str,
    n: int,
    replications: int,
    master_seed: int,
    stratify_aux: bool = False,
) -> np.ndarray:
    """Componentwise correlation of the estimate error with its linearization.

    Per replicate, the estimating equation's first-order expansion predicts
    the error as minus the inverse empirical score derivative (at the
    truth) applied to the mean score; the returned correlations measure
    how completely that linear term explains the fitted estimates.
    """
    model = get_model(model_name)
    diffs, linear = [], []
    for rep in range(replications):
        key = StreamKey(master_seed=master_seed, replication_index=rep)
        design = generate("lhs", n, model.d, key)
        if model.kind == "glm":
            family = model.family()
            dataset = generate_dataset(
                family, model.theta0, design, key, stratify_aux=stratify_aux
            )
            problem = make_psi(family, model.d, model.theta_box)
            channel = dataset.responses
        else:
            problem = mean_problem(model.theta_box)
            channel = np.zeros(n)
        try:
            report = solve(problem, design, channel)
        except NumericalError:
            continue
        if not report.converged:
            continue
        score0 = psi_bar(problem, design, channel, model.theta0)
        A0 = mean_jacobian(problem, design, channel, model.theta0)
        diffs.append(report.theta_hat - model.theta0)
        linear.append(-np.linalg.solve(A0, score0))
    D = np.array(diffs)
    T = np.array(linear)
    return np.array(
        [np.corrcoef(D[:, j], T[:, j])[0, 1] for j in range(model.q)]
    )
