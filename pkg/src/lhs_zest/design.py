"""Design generation on the unit hypercube and inverse-transform mapping.

Two sampling methods are provided:

* ``lhs`` — Latin hypercube: each column is ``(perm_j(i) - 1 + u_ij)/n``
  with an independent uniform permutation and independent jitter per
  column, so every column hits each stratum ``[(k-1)/n, k/n)`` exactly
  once.
* ``iid`` — plain independent uniforms (the jitter stream alone).

Both methods consume the same jitter streams, so for a fixed key the two
designs are coupled draws of the same underlying randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonMonotoneQuantile, ValidationError
from .rngperm import StreamKey, random_permutation, uniform_stream

METHODS = ("lhs", "iid")

_PROBE_POINTS = 1024


@dataclass(frozen=True)
class DesignMatrix:
    """n x d matrix of sample points with provenance.

    ``points`` is read-only; ``transformed`` marks designs already mapped
    out of the unit cube (range checks are skipped for those).
    """

    points: np.ndarray
    method: str
    n: int
    d: int
    seed: StreamKey
    transformed: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (self.n, self.d):
            raise ValidationError(
                f"points shape {pts.shape} != (n, d) = ({self.n}, {self.d})"
            )
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}")
        if not self.transformed and pts.size:
            if pts.min() < 0.0 or pts.max() >= 1.0:
                raise ValidationError("unit-cube design entries must lie in [0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class MarginalSpec:
    """One coordinate's quantile function Q: [0,1] -> support, with a label.

    ``quantile`` must be vectorized over numpy arrays and monotone
    non-decreasing; monotonicity is checked on a 1024-point probe grid at
    transform time.
    """

    label: str
    quantile: Callable[[np.ndarray], np.ndarray]


def generate(method: str, n: int, d: int, seed: StreamKey) -> DesignMatrix:
    """Sample an n x d design on [0,1)^d.

    Columns are generated from per-column streams derived from ``seed``
    (same master seed and replication index, varying column index), so the
    result is independent of evaluation order.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}")
    if n < 1 or d < 1:
        raise ValidationError("n and d must be >= 1")
    pts = np.empty((n, d))
    for j in range(d):
        jitter_key = seed.with_fields(column_index=j, purpose="jitter")
        u = uniform_stream(jitter_key, n)
        if method == "lhs":
            perm_key = seed.with_fields(column_index=j, purpose="permutation")
            perm = random_permutation(perm_key, n)
            # (perm - 1 + u)/n lands in [(perm-1)/n, perm/n): half-open strata
            pts[:, j] = (perm - 1 + u) / n
        else:
            pts[:, j] = u
    return DesignMatrix(points=pts, method=method, n=n, d=d, seed=seed)


def lhs_column(key: StreamKey, n: int, column: int) -> np.ndarray:
    """Single stratified column, used for optional auxiliary stratification."""
    perm = random_permutation(key.with_fields(column_index=column, purpose="permutation"), n)
    u = uniform_stream(key.with_fields(column_index=column, purpose="response"), n)
    return (perm - 1 + u) / n


def _check_monotone(q: Callable, label: str) -> None:
    grid = (np.arange(_PROBE_POINTS) + 0.5) / _PROBE_POINTS
    vals = np.asarray(q(grid), dtype=float)
    if vals.shape != grid.shape:
        raise ValidationError(f"quantile {label!r} must be vectorized")
    if not np.all(np.isfinite(vals)):
        raise NonMonotoneQuantile(f"quantile {label!r} is not finite on (0, 1)")
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.any(np.diff(vals) < -1e-12 * scale):
        raise NonMonotoneQuantile(f"quantile {label!r} decreases on the probe grid")


def transform(design: DesignMatrix, marginals: Sequence[MarginalSpec]) -> DesignMatrix:
    """Map a unit design through per-coordinate quantile functions.

    Entry (i, j) becomes ``marginals[j].quantile(points[i, j])``;
    stratification is preserved in quantile space.
    """
    if len(marginals) != design.d:
        raise ValidationError(
            f"need {design.d} marginals, got {len(marginals)}"
        )
    cols = []
    for j, spec in enumerate(marginals):
        _check_monotone(spec.quantile, spec.label)
        cols.append(np.asarray(spec.quantile(design.points[:, j]), dtype=float))
    pts = np.column_stack(cols) if cols else design.points.copy()
    return DesignMatrix(
        points=pts,
        method=design.method,
        n=design.n,
        d=design.d,
        seed=design.seed,
        transformed=True,
    )
