"""Parametric loss laws over model size and data, single- and multi-epoch.

The single-epoch law is ``L(N, D) = E + A / N**alpha + B / D**beta``. The
multi-epoch variant replaces ``N`` and ``D`` with effective counts in which
repeated tokens and excess parameters lose value exponentially.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ChinchillaParams:
    E: float
    A: float
    B: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("E", "A", "B", "alpha", "beta"):
            v = getattr(self, name)
            if not isinstance(v, numbers.Real) or isinstance(v, bool) or not math.isfinite(v):
                raise ValidationError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if not (self.E > 0 and self.A > 0 and self.B > 0):
            raise ValidationError(f"E, A, B must be > 0, got {self}")
        if not (0 < self.alpha < 2 and 0 < self.beta < 2):
            raise ValidationError(f"alpha, beta must lie in (0, 2), got {self}")

    def as_dict(self) -> dict[str, float]:
        return {"E": self.E, "A": self.A, "B": self.B, "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class MultiEpochParams:
    base: ChinchillaParams
    r_star_n: float
    r_star_d: float

    def __post_init__(self):
        for name in ("r_star_n", "r_star_d"):
            v = getattr(self, name)
            if not isinstance(v, numbers.Real) or not math.isfinite(v) or v <= 0:
                raise ValidationError(f"{name} must be a finite number > 0, got {v!r}")
            object.__setattr__(self, name, float(v))

    def as_dict(self) -> dict[str, float]:
        return {**self.base.as_dict(), "r_star_n": self.r_star_n, "r_star_d": self.r_star_d}


# Published fits: text (from the data-constrained scaling study), raw speech
# units, and unigram-compressed speech units.
TEXT = MultiEpochParams(ChinchillaParams(1.87, 521.0, 1488.0, 0.35, 0.35), 5.31, 15.4)
SPEECH = MultiEpochParams(ChinchillaParams(1.73, 13.9, 39.8, 0.25, 0.24), 31.0, 25.0)
SPEECH_UNIGRAM = ChinchillaParams(1.42, 3.85, 8.90, 0.15, 0.16)

PRESETS: dict[str, ChinchillaParams | MultiEpochParams] = {
    "text": TEXT,
    "speech": SPEECH,
    "speech-unigram": SPEECH_UNIGRAM,
}


def _positive(**values):
    for k, v in values.items():
        if not v > 0:
            raise ValidationError(f"{k} must be > 0, got {v!r}")


def predict_loss(params: ChinchillaParams, n: float, d: float) -> float:
    """Single-epoch loss at ``n`` parameters and ``d`` training tokens."""
    _positive(n=n, d=d)
    return params.E + params.A / n**params.alpha + params.B / d**params.beta


def effective_count(unique: float, repeats, r_star: float):
    """``U + U * R* * (1 - exp(-R / R*))``; elementwise on arrays.

    Negative ``repeats`` (fewer than one full use) return ``U * (1 + R)``
    unchanged, i.e. the raw count.
    """
    r = np.asarray(repeats, dtype=float)
    decayed = unique + unique * r_star * -np.expm1(-np.maximum(r, 0.0) / r_star)
    out = np.where(r > 0, decayed, unique * (1.0 + r))
    return float(out) if out.ndim == 0 else out


def effective_budget(
    params: MultiEpochParams, n: float, d: float, u_d: float, u_n: float
) -> tuple[float, float]:
    """Effective parameters and tokens ``(N', D')`` for a possibly repeated run.

    ``u_n`` is the compute-optimal model size for ``u_d`` unique tokens. When
    ``n < u_n`` the model is undersized and ``N' = n`` exactly.
    """
    _positive(n=n, d=d, u_d=u_d, u_n=u_n)
    if u_d > d:
        raise ValidationError(f"u_d ({u_d!r}) exceeds d ({d!r})")
    r_d = d / u_d - 1.0
    r_n = n / u_n - 1.0
    # min() guards against a 1-ulp overshoot when the repeat count is tiny
    d_eff = min(effective_count(u_d, r_d, params.r_star_d), d) if r_d > 0 else d
    n_eff = min(effective_count(u_n, r_n, params.r_star_n), n) if r_n > 0 else n
    return float(n_eff), float(d_eff)


def predict_loss_multi(
    params: MultiEpochParams, n: float, d: float, u_d: float, u_n: float
) -> float:
    n_eff, d_eff = effective_budget(params, n, d, u_d, u_n)
    return predict_loss(params.base, n_eff, d_eff)
