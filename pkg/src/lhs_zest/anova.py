"""Additive decomposition of a vector field by nested Monte Carlo.

A field ``f`` on the unit cube (optionally consuming one auxiliary
uniform for response noise) is split into a grand mean, per-coordinate
main effects on a midpoint bin grid, and an interaction remainder.  The
remainder covariance ``R`` is the quantity that drives the stratified
sampling variance of sample means: the full covariance of ``f`` controls
plain independent sampling, while only ``R`` survives stratification.

Estimators:

* grand mean — plain MC with per-component standard errors;
* main effect of coordinate ``j`` — per-bin inner MC of the conditional
  mean of ``f - G`` given ``x_j`` at bin midpoints;
* remainder covariance — outer MC of the centered field minus linearly
  interpolated main-effect lookups.

The inner-MC noise in the main-effect tables would otherwise bias the
remainder covariance and the orthogonality residual upward, so both are
debiased by the estimated per-bin inner-mean covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateDecomposition, NonFiniteValue, ValidationError
from .rngperm import StreamKey, generator

_CHUNK = 1 << 16

# Counter-salt layout for nested streams under one key.
_SALT_GRAND = 1
_SALT_OUTER = 2
_SALT_MAIN = 16  # + coordinate index


@dataclass(frozen=True)
class VectorField:
    """Deterministic map (points in [0,1]^d, auxiliary uniform) -> R^q."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d: int
    q: int
    uses_auxiliary: bool = False

    def __call__(self, points: np.ndarray, aux: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.fn(points, aux), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape != (points.shape[0], self.q):
            raise ValidationError(
                f"field returned shape {vals.shape}, expected ({points.shape[0]}, {self.q})"
            )
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValue("field returned NaN or infinity")
        return vals


@dataclass(frozen=True)
class MainEffectTable:
    """Main effect of one coordinate on a midpoint grid.

    ``values[k]`` estimates the conditional mean of ``f - G`` given that
    the coordinate sits at ``midpoints[k]``.  ``inner_noise`` is the bin-
    averaged covariance of the inner-MC estimation error (q x q); it is
    the debias correction consumed by ``remainder_covariance``.
    """

    coordinate: int
    midpoints: np.ndarray
    values: np.ndarray
    bin_se: np.ndarray
    inner_noise: np.ndarray
    inner: int

    def interpolator(self):
        """Per-component linear interpolant with linear edge extension."""
        mids = self.midpoints
        h = mids[1] - mids[0]
        left = self.values[0] - 0.5 * (self.values[1] - self.values[0])
        right = self.values[-1] + 0.5 * (self.values[-1] - self.values[-2])
        xs = np.concatenate(([0.0], mids, [1.0]))
        ys = np.vstack([left, self.values, right])

        def lookup(x):
            out = np.empty((x.shape[0], ys.shape[1]))
            for c in range(ys.shape[1]):
                out[:, c] = np.interp(x, xs, ys[:, c])
            return out

        return lookup


@dataclass(frozen=True)
class DecompositionReport:
    """Grand mean, main-effect tables, remainder covariance and diagnostics."""

    G: np.ndarray
    G_se: np.ndarray
    main_effects: tuple
    R: np.ndarray
    full_cov: np.ndarray
    residual: np.ndarray
    standard_errors: np.ndarray
    residual_se: np.ndarray
    mc_sizes: dict
    psd_tolerance: float
    min_eigenvalue: float

    @property
    def psd_ok(self) -> bool:
        return self.min_eigenvalue >= -self.psd_tolerance


def _draw(gen, count, field: VectorField):
    pts = gen.random((count, field.d))
    aux = gen.random(count) if field.uses_auxiliary else np.zeros(count)
    return pts, aux


def grand_mean(f: VectorField, n_mc: int, seed: StreamKey, salt: int = _SALT_GRAND):
    """Monte Carlo estimate of E[f] with per-component standard errors."""
    if n_mc < 2:
        raise ValidationError("n_mc must be >= 2")
    gen = generator(seed, salt)
    s = np.zeros(f.q)
    s2 = np.zeros(f.q)
    done = 0
    while done < n_mc:
        m = min(_CHUNK, n_mc - done)
        pts, aux = _draw(gen, m, f)
        vals = f(pts, aux)
        s += vals.sum(axis=0)
        s2 += (vals * vals).sum(axis=0)
        done += m
    mean = s / n_mc
    var = np.maximum(s2 / n_mc - mean * mean, 0.0)
    se = np.sqrt(var / n_mc)
    return mean, se


def main_effect(
    f: VectorField,
    j: int,
    bins: int,
    inner: int,
    seed: StreamKey,
    grand: Optional[np.ndarray] = None,
    grand_budget: int = 100_000,
) -> MainEffectTable:
    """Estimate the main effect of coordinate ``j`` on a midpoint grid.

    For each of ``bins`` midpoints the other coordinates (and the
    auxiliary uniform, if consumed) are resampled ``inner`` times.
    Coordinates are 0-based.
    """
    if not 0 <= j < f.d:
        raise ValidationError(f"coordinate {j} outside [0, {f.d})")
    if bins < 2 or inner < 2:
        raise ValidationError("bins and inner must be >= 2")
    if grand is None:
        grand, _ = grand_mean(f, grand_budget, seed)
    gen = generator(seed, _SALT_MAIN + j)
    mids = (np.arange(bins) + 0.5) / bins
    values = np.empty((bins, f.q))
    bin_se = np.empty((bins, f.q))
    noise = np.zeros((f.q, f.q))
    for k in range(bins):
        pts, aux = _draw(gen, inner, f)
        pts[:, j] = mids[k]
        vals = f(pts, aux)
        mu = vals.mean(axis=0)
        values[k] = mu - grand
        centered = vals - mu
        cov = centered.T @ centered / (inner - 1)
        bin_se[k] = np.sqrt(np.diag(cov) / inner)
        noise += cov / inner
    noise /= bins
    return MainEffectTable(
        coordinate=j,
        midpoints=mids,
        values=values,
        bin_se=bin_se,
        inner_noise=noise,
        inner=inner,
    )


def remainder_covariance(
    f: VectorField,
    outer: int,
    bins: int,
    inner: int,
    seed: StreamKey,
    residual_check: bool = True,
) -> DecompositionReport:
    """Estimate the remainder covariance and decomposition diagnostics.

    The report carries the debiased remainder covariance ``R``, the full
    covariance of ``f`` under independent sampling, and the orthogonality
    residual ``full_cov - sum_j A_j - R`` (``A_j`` the integral of the
    squared main effect), whose departure from zero flags a bin grid too
    coarse for the field.
    """
    if outer < 100:
        raise ValidationError("outer must be >= 100")
    G, G_se = grand_mean(f, outer, seed)
    tables = tuple(
        main_effect(f, j, bins, inner, seed, grand=G) for j in range(f.d)
    )
    lookups = [t.interpolator() for t in tables]

    q = f.q
    gen = generator(seed, _SALT_OUTER)
    R_sum = np.zeros((q, q))
    R2_sum = np.zeros((q, q))
    D_sum = np.zeros((q, q))
    D2_sum = np.zeros((q, q))
    done = 0
    while done < outer:
        m = min(_CHUNK, outer - done)
        pts, aux = _draw(gen, m, f)
        c = f(pts, aux) - G
        rem = c.copy()
        for j, lk in enumerate(lookups):
            rem -= lk(pts[:, j])
        rr = rem[:, :, None] * rem[:, None, :]
        cc = c[:, :, None] * c[:, None, :]
        dd = cc - rr
        R_sum += rr.sum(axis=0)
        R2_sum += (rr * rr).sum(axis=0)
        D_sum += dd.sum(axis=0)
        D2_sum += (dd * dd).sum(axis=0)
        done += m

    R_raw = R_sum / outer
    se_R = np.sqrt(np.maximum(R2_sum / outer - R_raw**2, 0.0) / outer)
    D_mean = D_sum / outer
    se_D = np.sqrt(np.maximum(D2_sum / outer - D_mean**2, 0.0) / outer)
    full_cov = D_mean + R_raw

    # Linear interpolation transmits a fraction c_K of the per-bin noise
    # power into the remainder lookups (2/3 on interior spans, 5/3 on the
    # two extrapolated edge strips of combined width 1/K).
    c_k = 2.0 / 3.0 + 1.0 / bins
    nu_total = sum(t.inner_noise for t in tables)
    R = R_raw - c_k * nu_total
    A_sum = np.zeros((q, q))
    cross_var = np.zeros((q, q))
    table_var = np.zeros((q, q))
    for t in tables:
        A_raw = t.values.T @ t.values / bins
        A_sum += A_raw - t.inner_noise
        a_diag = np.diag(A_raw)
        n_diag = np.diag(t.inner_noise)
        cross_var += (np.outer(a_diag, n_diag) + np.outer(n_diag, a_diag)) / bins
        table_var += (np.outer(n_diag, n_diag) + t.inner_noise**2) / bins
    residual = full_cov - A_sum - R

    # Realized table noise scatters around its debiased mean; include that
    # in the error budgets alongside the outer MC scatter and the coupling
    # of table noise to the field's own main effects.
    se_table = c_k * np.sqrt(table_var)
    se_R_total = np.sqrt(se_R**2 + se_table**2)
    residual_se = (
        se_D
        + 2.0 * np.sqrt(cross_var)
        + 2.0 * se_table
        + 1e-15 * (1.0 + np.abs(full_cov))
    )

    scale = float(np.trace(R)) if q > 1 else float(R[0, 0])
    eig_se = float(np.linalg.norm(se_R_total))
    psd_tol = 1e-8 * abs(scale) + 3.0 * eig_se
    R_sym = 0.5 * (R + R.T)
    min_eig = float(np.linalg.eigvalsh(R_sym).min())

    report = DecompositionReport(
        G=G,
        G_se=G_se,
        main_effects=tables,
        R=R_sym,
        full_cov=0.5 * (full_cov + full_cov.T),
        residual=0.5 * (residual + residual.T),
        standard_errors=se_R_total,
        residual_se=residual_se,
        mc_sizes={"outer": outer, "bins": bins, "inner": inner},
        psd_tolerance=psd_tol,
        min_eigenvalue=min_eig,
    )
    if residual_check:
        bad = np.abs(report.residual) > 10.0 * residual_se
        if np.any(bad):
            worst = float(np.max(np.abs(report.residual) / residual_se))
            raise DegenerateDecomposition(
                f"orthogonality residual {worst:.1f}x its standard error; "
                "increase bins/inner"
            )
    return report
