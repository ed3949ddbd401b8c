"""Canonical exponential-family GLM layer: links, scores, synthetic data.

The estimating function of a canonical GLM with linear predictor
``eta = x . theta``, inverse link ``mu = h^{-1}(eta)`` and dispersion
``phi`` has components ``(z - mu)/phi * x_j``; its parameter derivative
is ``-x_j x_k / (phi * h_dot(mu))`` and the second derivative is bounded
in norm by ``|h_ddot(mu) / (phi h_dot(mu)^3)| * ||x||^3``.

Response values are materialized from one auxiliary uniform per
observation through the family's response quantile, which keeps every
score a deterministic function of uniforms and lets the decomposition
machinery treat response noise as an extra input channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaincc

from .anova import VectorField
from .design import DesignMatrix, generate, lhs_column
from .errors import DomainError, LinkDomainViolation, ValidationError
from .normal import normal_quantile
from .rngperm import StreamKey, uniform_stream
from .zsolve import ZProblem

_PROBE = 1024


@dataclass(frozen=True)
class GlmFamily:
    """Canonical family: link with derivatives plus a response quantile.

    ``resp_quantile(u, mu)`` must map auxiliary uniforms and conditional
    means to response values, vectorized.  ``eta_bounds`` is the interval
    of linear-predictor values the link tolerates.
    """

    label: str
    phi: float
    link: Callable
    link_inv: Callable
    link_dot: Callable
    link_ddot: Callable
    resp_quantile: Callable
    eta_bounds: tuple = (-math.inf, math.inf)

    def validate(self, eta_lo: float, eta_hi: float) -> None:
        """Round-trip, derivative and no-zero checks on a probe grid."""
        if eta_lo < self.eta_bounds[0] or eta_hi > self.eta_bounds[1]:
            raise LinkDomainViolation(
                f"linear predictor range [{eta_lo}, {eta_hi}] outside link domain"
            )
        etas = np.linspace(eta_lo, eta_hi, _PROBE)
        mus = np.asarray(self.link_inv(etas), float)
        back = np.asarray(self.link(mus), float)
        scale = 1.0 + np.abs(etas)
        if np.max(np.abs(back - etas) / scale) > 1e-12:
            raise ValidationError(f"{self.label}: link round-trip exceeds 1e-12")
        h = 1e-6 * np.abs(mus)
        h[h == 0.0] = 1e-12
        fd = (np.asarray(self.link(mus + h)) - np.asarray(self.link(mus - h))) / (2 * h)
        dots = np.asarray(self.link_dot(mus), float)
        if np.max(np.abs(fd - dots) / (1.0 + np.abs(dots))) > 1e-6:
            raise ValidationError(f"{self.label}: link derivative mismatch")
        if np.any(dots == 0.0):
            raise ValidationError(f"{self.label}: link derivative has a zero")


@dataclass(frozen=True)
class GlmDataset:
    """Covariate design, generated responses, and the generating truth."""

    design: DesignMatrix
    responses: np.ndarray
    truth: Optional[np.ndarray]
    aux: np.ndarray


def poisson_quantile(u: float, lam: float) -> int:
    """Smallest k with Poisson(lam) CDF above u.

    Forward summation of pmf terms, accumulated in log space so that
    large rates neither underflow nor lose the running total.  Cost grows
    with ``lam``; use :func:`poisson_quantile_batch` for arrays.
    """
    if not 0.0 <= u < 1.0:
        raise DomainError("u must lie in [0, 1)")
    if not lam > 0.0:
        raise DomainError("lam must be positive")
    if u == 0.0:
        return 0
    log_u = math.log(u)
    log_lam = math.log(lam)
    log_pmf = -lam
    log_cdf = log_pmf
    k = 0
    while log_cdf <= log_u:
        k += 1
        log_pmf += log_lam - math.log(k)
        log_cdf = np.logaddexp(log_cdf, log_pmf)
    return k


def poisson_quantile_batch(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Vectorized Poisson quantile by bisection on the regularized gamma CDF.

    Agrees with :func:`poisson_quantile` elementwise (same strict-CDF
    convention) at O(log lam) vectorized steps per batch.
    """
    u = np.asarray(u, float)
    lam = np.asarray(lam, float)
    u, lam = np.broadcast_arrays(u, lam)
    if u.size == 0:
        return np.zeros(u.shape)
    if u.min() < 0.0 or u.max() >= 1.0:
        raise DomainError("u must lie in [0, 1)")
    if lam.min() <= 0.0:
        raise DomainError("lam must be positive")
    hi = np.ceil(lam + 12.0 * np.sqrt(lam) + 20.0)
    while True:
        short = gammaincc(hi + 1.0, lam) <= u
        if not np.any(short):
            break
        hi = np.where(short, hi * 2.0 + 50.0, hi)
    lo = np.full_like(hi, -1.0)
    while np.max(hi - lo) > 1.0:
        mid = np.floor(0.5 * (lo + hi))
        above = gammaincc(mid + 1.0, lam) > u
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return hi


def poisson_log_family() -> GlmFamily:
    """Poisson response with logarithmic link; dispersion fixed at one."""
    return GlmFamily(
        label="poisson-log",
        phi=1.0,
        link=np.log,
        link_inv=np.exp,
        link_dot=lambda mu: 1.0 / mu,
        link_ddot=lambda mu: -1.0 / (mu * mu),
        resp_quantile=lambda u, mu: poisson_quantile_batch(u, mu),
    )


def gaussian_identity_family() -> GlmFamily:
    """Gaussian response with identity link and unit dispersion."""
    return GlmFamily(
        label="gaussian-identity",
        phi=1.0,
        link=lambda mu: np.asarray(mu, float),
        link_inv=lambda eta: np.asarray(eta, float),
        link_dot=lambda mu: np.ones_like(np.asarray(mu, float)),
        link_ddot=lambda mu: np.zeros_like(np.asarray(mu, float)),
        resp_quantile=lambda u, mu: mu
        + normal_quantile(np.clip(u, 1e-300, 1.0 - 1e-16)),
    )


def _eta_range(theta_box: np.ndarray) -> tuple:
    lo = float(np.minimum(theta_box[:, 0], 0.0).sum())
    hi = float(np.maximum(theta_box[:, 1], 0.0).sum())
    return lo, hi


def _glm_problem(family: GlmFamily, d: int, theta_box, z_of) -> ZProblem:
    box = np.asarray(theta_box, float)
    family.validate(*_eta_range(box))
    phi = family.phi

    def psi(points, aux, theta):
        mu = family.link_inv(points @ theta)
        return ((z_of(points, aux) - mu) / phi)[:, None] * points

    def psi_dot(points, aux, theta):
        mu = family.link_inv(points @ theta)
        w = -1.0 / (phi * family.link_dot(mu))
        return w[:, None, None] * points[:, :, None] * points[:, None, :]

    def psi_ddot_bound(points, aux):
        # Supremum over the box of |h_ddot/(phi*h_dot^3)| at the predictor,
        # times ||x||^3: a fixed dominating envelope for the second derivative.
        eta_sup = np.maximum(points * box[:, 1], points * box[:, 0]).sum(axis=1)
        eta_inf = np.minimum(points * box[:, 1], points * box[:, 0]).sum(axis=1)
        coef = np.maximum(_ddot_coef(family, eta_sup), _ddot_coef(family, eta_inf))
        return coef * np.linalg.norm(points, axis=1) ** 3

    return ZProblem(
        psi=psi,
        psi_dot=psi_dot,
        theta_dim=d,
        domain_dim=d,
        theta_box=box,
        psi_ddot_bound=psi_ddot_bound,
    )


def make_psi(family: GlmFamily, d: int, theta_box) -> ZProblem:
    """GLM problem for observed data.

    The per-observation channel (the ``aux`` argument of the problem's
    evaluators and of ``solve``) carries the observed responses, so data
    and design rows stay aligned under chunked evaluation.
    """
    return _glm_problem(family, d, theta_box, z_of=lambda points, aux: aux)


def make_generative_psi(
    family: GlmFamily, d: int, theta_box, theta_gen
) -> ZProblem:
    """GLM problem whose responses are materialized from uniforms.

    The per-observation channel carries auxiliary uniforms; responses are
    reconstructed through the family's response quantile at the fixed
    generating parameter ``theta_gen``.
    """
    theta_gen = np.asarray(theta_gen, float)

    def z_of(points, aux):
        mu = family.link_inv(points @ theta_gen)
        return np.asarray(family.resp_quantile(aux, mu), float)

    return _glm_problem(family, d, theta_box, z_of=z_of)


def _ddot_coef(family: GlmFamily, eta: np.ndarray) -> np.ndarray:
    mu = family.link_inv(eta)
    dot = np.asarray(family.link_dot(mu), float)
    return np.abs(np.asarray(family.link_ddot(mu), float) / (family.phi * dot**3))


def score_field(
    family: GlmFamily,
    theta_eval: np.ndarray,
    theta_gen: np.ndarray,
    d: int,
    theta_box: np.ndarray,
) -> VectorField:
    """Score as a vector field of (covariates, response uniform).

    Responses are materialized at ``theta_gen`` while the score formula is
    evaluated at ``theta_eval`` (equal for plug-in covariance estimation).
    """
    problem = make_generative_psi(family, d, theta_box, theta_gen)
    theta_eval = np.asarray(theta_eval, float)
    return VectorField(
        fn=lambda pts, aux: problem.psi(pts, aux, theta_eval),
        d=d,
        q=d,
        uses_auxiliary=True,
    )


def generate_dataset(
    family: GlmFamily,
    theta0: np.ndarray,
    design: DesignMatrix,
    seed: StreamKey,
    stratify_aux: bool = False,
) -> GlmDataset:
    """Draw responses for a design through the response quantile.

    One auxiliary uniform per observation comes from the response stream
    of ``seed``; with ``stratify_aux`` the uniforms instead form one extra
    stratified column (noise channel stratified alongside the covariates).
    """
    theta0 = np.asarray(theta0, float)
    n = design.n
    if n == 0:
        return GlmDataset(design, np.empty(0), theta0, np.empty(0))
    if stratify_aux:
        aux = lhs_column(seed, n, column=design.d)
    else:
        aux = uniform_stream(
            seed.with_fields(column_index=design.d, purpose="response"), n
        )
    mu = family.link_inv(design.points @ theta0)
    z = np.asarray(family.resp_quantile(aux, mu), float)
    return GlmDataset(design=design, responses=z, truth=theta0, aux=aux)


@dataclass(frozen=True)
class ModelSpec:
    """A named, fully specified estimation problem for the experiment engine."""

    name: str
    kind: str  # "glm" or "mean"
    d: int
    theta0: np.ndarray
    theta_box: np.ndarray
    family_factory: Optional[Callable[[], GlmFamily]] = None

    @property
    def q(self) -> int:
        return self.theta0.shape[0]

    def family(self) -> GlmFamily:
        return self.family_factory()


def _box(lo: float, hi: float, q: int) -> np.ndarray:
    return np.tile(np.array([lo, hi], float), (q, 1))


_THETA_D9 = np.array(
    [7.0, -math.sqrt(2.0), 0.5, -1.0 / 3.0, math.sqrt(5.0), -7.0, math.sqrt(2.0), -0.5, -math.sqrt(5.0)]
)

MODELS = {
    "poisson-log-d9": ModelSpec(
        name="poisson-log-d9",
        kind="glm",
        d=9,
        theta0=_THETA_D9,
        theta_box=_box(-10.0, 10.0, 9),
        family_factory=poisson_log_family,
    ),
    "poisson-log-d1": ModelSpec(
        name="poisson-log-d1",
        kind="glm",
        d=1,
        theta0=np.array([1.0]),
        theta_box=_box(-5.0, 5.0, 1),
        family_factory=poisson_log_family,
    ),
    "gaussian-identity-d2": ModelSpec(
        name="gaussian-identity-d2",
        kind="glm",
        d=2,
        theta0=np.array([0.5, -0.25]),
        theta_box=_box(-10.0, 10.0, 2),
        family_factory=gaussian_identity_family,
    ),
    "uniform-mean-d1": ModelSpec(
        name="uniform-mean-d1",
        kind="mean",
        d=1,
        theta0=np.array([0.5]),
        theta_box=_box(-10.0, 10.0, 1),
    ),
}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ValidationError(
            f"unknown model {name!r}; choose from {sorted(MODELS)}"
        ) from None


def mean_problem(box: np.ndarray) -> ZProblem:
    """Toy problem psi(x, theta) = x - theta; the root is the sample mean."""
    return ZProblem(
        psi=lambda pts, aux, th: pts - th[None, :],
        psi_dot=lambda pts, aux, th: np.broadcast_to(
            -np.eye(th.shape[0]), (pts.shape[0], th.shape[0], th.shape[0])
        ).copy(),
        theta_dim=box.shape[0],
        domain_dim=box.shape[0],
        theta_box=box,
        psi_ddot_bound=lambda pts, aux: np.zeros(pts.shape[0]),
    )
