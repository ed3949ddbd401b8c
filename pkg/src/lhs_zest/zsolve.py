"""Generic Z-estimation: damped projected Newton on an estimating equation.

A :class:`ZProblem` bundles a q-valued estimating function ``psi`` (zero
mean at the true parameter), its parameter derivative ``psi_dot``, and an
optional norm bound on the second derivative.  ``solve`` finds the root
of the sample mean of ``psi`` over a design and reports the estimate with
two asymptotic covariances: the classic sandwich (independent sampling)
and the stratified-design sandwich in which the score covariance is
replaced by its interaction remainder ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from typing import Callable, Optional

import numpy as np

from .design import DesignMatrix
from .errors import NonFiniteValue, NonPSDInput, SingularJacobian, ValidationError

_CHUNK = 1 << 16
_COND_LIMIT = 1e12
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class ZProblem:
    """Estimating-function problem definition.

    ``psi(points, aux, theta)`` -> (m, q) and
    ``psi_dot(points, aux, theta)`` -> (m, q, q) must be vectorized over
    the m sample rows.  ``theta_box`` is a (q, 2) array of finite closed
    intervals containing the admissible parameters.
    """

    psi: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    psi_dot: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    theta_dim: int
    domain_dim: int
    theta_box: np.ndarray
    psi_ddot_bound: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        box = np.asarray(self.theta_box, dtype=float)
        if box.shape != (self.theta_dim, 2):
            raise ValidationError("theta_box must have shape (q, 2)")
        if not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
            raise ValidationError("theta_box intervals must be finite and non-empty")
        box.setflags(write=False)
        object.__setattr__(self, "theta_box", box)

    def project(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.theta_box[:, 0], self.theta_box[:, 1])

    def center(self) -> np.ndarray:
        return 0.5 * (self.theta_box[:, 0] + self.theta_box[:, 1])


@dataclass(frozen=True)
class FitReport:
    """Outcome of one Z-estimation solve."""

    theta_hat: np.ndarray
    iterations: int
    residual_norm: float
    A_hat: np.ndarray
    B_iid: np.ndarray
    sandwich_iid: np.ndarray
    converged: bool
    design_method: str
    n: int
    sandwich_lhs: Optional[np.ndarray] = None

    def with_lhs_covariance(self, R: np.ndarray) -> "FitReport":
        """Attach the stratified-design covariance built from ``R``."""
        return dc_replace(self, sandwich_lhs=sandwich_lhs(self.A_hat, R, self.n))


def _points_of(design) -> np.ndarray:
    return design.points if isinstance(design, DesignMatrix) else np.asarray(design, float)


def _chunked_mean(fn, points, aux, theta, shape):
    n = points.shape[0]
    acc = np.zeros(shape)
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        vals = np.asarray(fn(points[done : done + m], aux[done : done + m], theta))
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValue("estimating function returned NaN or infinity")
        acc += vals.sum(axis=0)
        done += m
    return acc / n


def psi_bar(problem: ZProblem, design, aux: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Sample mean of the estimating function over the design rows."""
    points = _points_of(design)
    if points.shape[1] != problem.domain_dim:
        raise ValidationError("design dimension does not match problem")
    return _chunked_mean(problem.psi, points, np.asarray(aux, float), theta, (problem.theta_dim,))


def mean_jacobian(problem: ZProblem, design, aux: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Sample mean of the derivative of the estimating function."""
    points = _points_of(design)
    q = problem.theta_dim
    return _chunked_mean(problem.psi_dot, points, np.asarray(aux, float), theta, (q, q))


def _checked_solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cond = np.linalg.cond(A, 1)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularJacobian(f"condition estimate {cond:.3e} exceeds {_COND_LIMIT:.0e}")
    return np.linalg.solve(A, rhs)


def solve(
    problem: ZProblem,
    design,
    aux: np.ndarray,
    theta_init: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> FitReport:
    """Root-find the empirical estimating equation by damped Newton steps.

    Iterates are projected onto the parameter box; a step is halved (up
    to 30 times) until the residual norm decreases.  Non-convergence is
    reported through ``converged=False``, not an exception; a numerically
    singular empirical Jacobian raises :class:`SingularJacobian`.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    points = _points_of(design)
    aux = np.asarray(aux, float)
    n = points.shape[0]
    theta = problem.project(
        problem.center() if theta_init is None else np.asarray(theta_init, float)
    )

    r = psi_bar(problem, points, aux, theta)
    rnorm = float(np.linalg.norm(r))
    iterations = 0
    converged = rnorm <= tol
    while not converged and iterations < max_iter:
        A = mean_jacobian(problem, points, aux, theta)
        step = _checked_solve(A, -r)
        t = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand = problem.project(theta + t * step)
            rc = psi_bar(problem, points, aux, cand)
            rc_norm = float(np.linalg.norm(rc))
            if rc_norm < rnorm:
                theta, r, rnorm = cand, rc, rc_norm
                accepted = True
                break
            t *= 0.5
        iterations += 1
        if not accepted:
            break
        converged = rnorm <= tol

    A_hat = mean_jacobian(problem, points, aux, theta)
    B_iid = _chunked_mean(
        lambda p, a, th: _score_outer(problem, p, a, th),
        points,
        aux,
        theta,
        (problem.theta_dim, problem.theta_dim),
    )
    cov_iid = sandwich_iid(A_hat, B_iid, n)
    method = design.method if isinstance(design, DesignMatrix) else "iid"
    return FitReport(
        theta_hat=theta,
        iterations=iterations,
        residual_norm=rnorm,
        A_hat=A_hat,
        B_iid=B_iid,
        sandwich_iid=cov_iid,
        converged=converged,
        design_method=method,
        n=n,
    )


def _score_outer(problem, points, aux, theta):
    vals = np.asarray(problem.psi(points, aux, theta))
    return vals[:, :, None] * vals[:, None, :]


def sandwich_iid(A_hat: np.ndarray, B: np.ndarray, n: int) -> np.ndarray:
    """A^-1 B A^-T / n, symmetrized: the independent-sampling covariance."""
    Ainv_B = _checked_solve(A_hat, B)
    cov = _checked_solve(A_hat, Ainv_B.T).T / n
    return 0.5 * (cov + cov.T)


def sandwich_lhs(
    A_hat: np.ndarray, R: np.ndarray, n: int, psd_tol: Optional[float] = None
) -> np.ndarray:
    """A^-1 R A^-T / n with the remainder covariance in the middle.

    ``R`` must be symmetric positive semi-definite up to ``psd_tol``
    (defaults to 1e-8 of its trace).
    """
    R = np.asarray(R, float)
    scale = max(float(np.abs(np.trace(R))), 1e-300)
    if psd_tol is None:
        psd_tol = 1e-8 * scale
    if float(np.max(np.abs(R - R.T))) > psd_tol + 1e-12 * scale:
        raise NonPSDInput("remainder covariance is not symmetric")
    min_eig = float(np.linalg.eigvalsh(0.5 * (R + R.T)).min())
    if min_eig < -psd_tol:
        raise NonPSDInput(
            f"remainder covariance has eigenvalue {min_eig:.3e} below -{psd_tol:.3e}"
        )
    Ainv_R = _checked_solve(A_hat, 0.5 * (R + R.T))
    cov = _checked_solve(A_hat, Ainv_R.T).T / n
    return 0.5 * (cov + cov.T)


def check_jacobian(
    problem: ZProblem,
    rng: np.random.Generator,
    probes: int = 100,
    rel_step: float = 1e-6,
) -> float:
    """Max relative gap between ``psi_dot`` and central differences of ``psi``.

    Probes random (point, theta) pairs inside the domain and box; the
    returned value should be below 1e-5 for a correctly wired problem.
    """
    q, d = problem.theta_dim, problem.domain_dim
    lo, hi = problem.theta_box[:, 0], problem.theta_box[:, 1]
    worst = 0.0
    for _ in range(probes):
        x = rng.random((1, d))
        a = rng.random(1)
        theta = lo + rng.random(q) * (hi - lo)
        J = np.asarray(problem.psi_dot(x, a, theta))[0]
        fd = np.empty_like(J)
        for k in range(q):
            h = rel_step * (1.0 + abs(theta[k]))
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            fd[:, k] = (problem.psi(x, a, tp)[0] - problem.psi(x, a, tm)[0]) / (2 * h)
        gap = float(np.linalg.norm(J - fd) / (1.0 + np.linalg.norm(J)))
        worst = max(worst, gap)
    return worst
