"""Loss-to-metric correlation, cross-modality efficiency, and compute parity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MissingMetricError, NumericalError, ValidationError
from .runstore import RunRecord
from .scalecurves import PowerLawFit


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    pearson_r: float
    n_points: int
    filter_applied: str = "none"

    def predict(self, loss):
        return self.intercept + self.slope * np.asarray(loss, dtype=float)


@dataclass(frozen=True)
class EfficiencyReport:
    metric: str
    gamma_ref: float
    gamma_other: float
    ratio: float
    compute_multiplier: float = field(init=False)

    def __post_init__(self):
        # A compute increase of one decade in the reference modality is
        # matched by ``ratio`` decades in the other.
        object.__setattr__(self, "compute_multiplier", 10.0**self.ratio)


@dataclass(frozen=True)
class ParityResult:
    compute: float
    target_value: float
    extrapolated: bool
    ref_in_domain: bool
    other_in_domain: bool


def loss_metric_correlation(
    runs: Sequence[RunRecord],
    metric: str,
    metric_cap: float | None = None,
    loss_min: float | None = None,
) -> LinearFit:
    """OLS of a downstream metric on test loss.

    Optional saturation filter: keep runs with ``metric <= metric_cap``
    and/or ``test_loss >= loss_min``. Nothing is filtered by default.
    """
    have = [r for r in runs if metric in r.metrics]
    if not have:
        raise MissingMetricError(metric, "absent from every run")
    parts = []
    kept = have
    if metric_cap is not None:
        kept = [r for r in kept if r.metrics[metric] <= metric_cap]
        parts.append(f"{metric} <= {metric_cap:g}")
    if loss_min is not None:
        kept = [r for r in kept if r.test_loss >= loss_min]
        parts.append(f"test_loss >= {loss_min:g}")
    applied = " and ".join(parts) if parts else "none"
    if len(kept) < 2:
        raise ValidationError(
            f"need at least 2 runs with {metric!r} after filtering ({applied}), got {len(kept)}"
        )
    x = np.array([r.test_loss for r in kept])
    y = np.array([r.metrics[metric] for r in kept])
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValidationError("all surviving runs share one test loss; slope is undefined")
    syy = float(dy @ dy)
    sxy = float(dx @ dy)
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    r = 0.0 if syy == 0.0 else max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    return LinearFit(slope, intercept, r, len(kept), applied)


def _check_exponents(g_ref: float, g_other: float):
    if g_ref == 0 or g_other == 0:
        raise ValidationError("exponents must be non-zero")
    if (g_ref > 0) != (g_other > 0):
        raise ValidationError(
            f"exponents of opposite sign ({g_ref!r}, {g_other!r}) describe an improvement "
            "and a degradation and cannot be compared"
        )


def efficiency_ratio(
    fit_ref: PowerLawFit | float, fit_other: PowerLawFit | float, metric: str = ""
) -> EfficiencyReport:
    """Ratio of the reference modality's exponent to the other's.

    Accepts fitted laws or bare exponents.
    """
    g_ref = fit_ref.exponent if isinstance(fit_ref, PowerLawFit) else float(fit_ref)
    g_other = fit_other.exponent if isinstance(fit_other, PowerLawFit) else float(fit_other)
    _check_exponents(g_ref, g_other)
    return EfficiencyReport(metric, g_ref, g_other, g_ref / g_other)


def project_parity(
    fit_ref: PowerLawFit,
    fit_other: PowerLawFit,
    c_ref: float,
    value_cap: float | None = 100.0,
) -> ParityResult:
    """Compute at which ``fit_other`` reaches the value ``fit_ref`` predicts at ``c_ref``.

    ``C_other = (k_ref / k_other) ** (1 / g_other) * c_ref ** (g_ref / g_other)``.
    Extrapolation beyond either law's fitted domain is reported, not rejected.
    Pass ``value_cap=None`` for unbounded quantities such as loss.

    Raises:
        ValidationError: exponents of opposite sign or zero, ``c_ref <= 0``,
            or a reference prediction above ``value_cap``.
        NumericalError: the parity compute over- or underflows double precision.
    """
    _check_exponents(fit_ref.exponent, fit_other.exponent)
    if not c_ref > 0:
        raise ValidationError(f"c_ref must be > 0, got {c_ref!r}")
    target = fit_ref.coefficient * c_ref**fit_ref.exponent
    if not target > 0 or not math.isfinite(target):
        raise ValidationError(f"reference prediction {target!r} is not a positive value")
    if value_cap is not None and target > value_cap:
        raise ValidationError(
            f"reference prediction {target:.4g} exceeds the metric ceiling {value_cap:g}"
        )
    log_c = (
        math.log(fit_ref.coefficient / fit_other.coefficient) / fit_other.exponent
        + (fit_ref.exponent / fit_other.exponent) * math.log(c_ref)
    )
    if not -708.0 < log_c < 709.0:
        raise NumericalError(
            f"parity compute exp({log_c:.4g}) FLOPs is outside the floating-point range"
        )
    c_other = math.exp(log_c)
    ref_ok = fit_ref.in_domain(c_ref)
    other_ok = fit_other.in_domain(c_other)
    return ParityResult(c_other, target, not (ref_ok and other_ok), ref_ok, other_ok)
