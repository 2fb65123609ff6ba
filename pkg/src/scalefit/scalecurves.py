"""Compute-efficient envelopes of learning curves and log-log power-law fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import MissingMetricError, ValidationError
from .runstore import CurveSet

Point = tuple[float, float]


@dataclass(frozen=True)
class PowerLawFit:
    """``value = coefficient * compute ** exponent`` fitted in log-log space."""

    coefficient: float
    exponent: float
    r_squared: float
    domain: tuple[float, float]
    n_points: int

    def predict(self, compute):
        return self.coefficient * np.asarray(compute, dtype=float) ** self.exponent

    def inverse(self, value: float) -> float:
        """Compute at which the law reaches ``value``."""
        if self.exponent == 0:
            raise ValidationError("a zero-exponent power law cannot be inverted")
        if not value > 0:
            raise ValidationError(f"value must be > 0, got {value!r}")
        return (value / self.coefficient) ** (1.0 / self.exponent)

    def in_domain(self, compute: float) -> bool:
        return self.domain[0] <= compute <= self.domain[1]


def pareto_envelope(points: Iterable[Point], orientation: str = "min") -> list[Point]:
    """Non-dominated ``(compute, value)`` points, sorted by compute.

    With ``orientation="min"`` a point is kept when its value is strictly
    lower than that of every point with smaller or equal compute (``"max"``
    mirrors this). Among equal-compute points only the best survives.
    """
    if orientation not in ("min", "max"):
        raise ValidationError(f"orientation must be 'min' or 'max', got {orientation!r}")
    pts = [(float(c), float(v)) for c, v in points]
    if not pts:
        raise ValidationError("pareto_envelope needs at least one point")
    for c, v in pts:
        if not c > 0 or not math.isfinite(c):
            raise ValidationError(f"compute must be finite and > 0, got {c!r}")
        if not math.isfinite(v):
            raise ValidationError(f"value must be finite, got {v!r}")
    sign = 1.0 if orientation == "min" else -1.0
    pts.sort(key=lambda p: (p[0], sign * p[1]))
    out: list[Point] = []
    best = math.inf
    for c, v in pts:
        if sign * v < best:
            out.append((c, v))
            best = sign * v
    return out


def fit_power_law(points: Sequence[Point]) -> PowerLawFit:
    """Ordinary least squares of ``log value`` on ``log compute``.

    A constant-valued input yields slope 0 and ``r_squared = 0`` by
    convention (no variance to explain).
    """
    pts = list(points)
    if len(pts) < 2:
        raise ValidationError(f"a power-law fit needs at least 2 points, got {len(pts)}")
    c = np.array([p[0] for p in pts], dtype=float)
    v = np.array([p[1] for p in pts], dtype=float)
    if np.any(c <= 0) or np.any(v <= 0):
        raise ValidationError("power-law fits need strictly positive compute and values")
    if len(np.unique(c)) < 2:
        raise ValidationError("compute values span a single point; slope is undefined")
    x = np.log(c)
    y = np.log(v)
    if np.all(v == v[0]):
        return PowerLawFit(float(v[0]), 0.0, 0.0, (float(c.min()), float(c.max())), len(pts))
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    slope = float(dx @ dy) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    r2 = 1.0 - float(resid @ resid) / syy
    return PowerLawFit(
        coefficient=math.exp(intercept),
        exponent=slope,
        r_squared=r2,
        domain=(float(c.min()), float(c.max())),
        n_points=len(pts),
    )


def _burn_in(curves: CurveSet, burn_in: float):
    """Drop each run's points below ``burn_in`` times its final compute."""
    if not 0.0 <= burn_in < 1.0:
        raise ValidationError(f"burn_in must lie in [0, 1), got {burn_in!r}")
    if burn_in == 0:
        return list(curves)
    kept = []
    for pts in curves.by_run().values():
        cutoff = burn_in * pts[-1].compute
        kept.extend(p for p in pts if p.compute >= cutoff)
    return kept


def loss_envelope(curves: CurveSet, burn_in: float = 0.0) -> list[Point]:
    return pareto_envelope(((p.compute, p.loss) for p in _burn_in(curves, burn_in)), "min")


def metric_envelope(curves: CurveSet, metric: str, burn_in: float = 0.0) -> list[Point]:
    pts = [(p.compute, p.metrics[metric]) for p in _burn_in(curves, burn_in) if metric in p.metrics]
    if len(pts) < 2:
        raise MissingMetricError(metric, f"present on {len(pts)} curve point(s), need 2")
    return pareto_envelope(pts, "max")


def loss_compute_law(curves: CurveSet, burn_in: float = 0.0) -> PowerLawFit:
    """Power law through the minimal-loss-per-FLOP envelope."""
    env = loss_envelope(curves, burn_in)
    if len(env) < 2:
        raise ValidationError("loss envelope has fewer than 2 points")
    return fit_power_law(env)


def metric_compute_law(curves: CurveSet, metric: str, burn_in: float = 0.0) -> PowerLawFit:
    """Power law through the maximal-metric-per-FLOP envelope (raw percentages).

    A metric that never changes collapses the envelope to one point; it is
    reported as a flat law (exponent 0, ``r_squared`` 0) over all points
    rather than as an error.
    """
    pts = [(p.compute, p.metrics[metric]) for p in _burn_in(curves, burn_in) if metric in p.metrics]
    if len(pts) >= 2 and len({v for _, v in pts}) == 1:
        return fit_power_law(pts)
    env = metric_envelope(curves, metric, burn_in)
    if len(env) < 2:
        raise ValidationError(f"{metric!r} envelope has fewer than 2 points")
    return fit_power_law(env)
