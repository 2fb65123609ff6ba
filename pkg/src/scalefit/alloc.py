"""Compute-optimal allocation of a FLOP budget between parameters and tokens.

Under ``C = 6 N D`` the single-epoch law is minimized by

    N_opt(C) = G * (C / 6) ** a,    D_opt(C) = (C / 6) ** b / G

with ``G = (alpha A / (beta B)) ** (1 / (alpha + beta))``,
``a = beta / (alpha + beta)`` and ``b = alpha / (alpha + beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import NumericalError, ValidationError
from .laws import ChinchillaParams, predict_loss

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class AllocationConstants:
    G: float
    a: float
    b: float


@dataclass(frozen=True)
class AllocationResult:
    compute: float
    n_opt: float
    d_opt: float
    predicted_loss: float


@dataclass(frozen=True)
class AllocationCheck:
    compute: float
    n_closed_form: float
    n_numeric: float
    rel_error: float
    tolerance: float


def _exponents(alpha: float, beta: float) -> tuple[float, float]:
    # Computing b as 1 - a keeps a + b == 1 up to one rounding; with exact
    # rational inputs this also reproduces e.g. 24/49 to the last bit.
    fa, fb = Fraction(alpha), Fraction(beta)
    a = fb / (fa + fb)
    return float(a), float(1 - a)


def allocation_constants(params: ChinchillaParams) -> AllocationConstants:
    a, b = _exponents(params.alpha, params.beta)
    ratio = (params.alpha * params.A) / (params.beta * params.B)
    G = ratio ** (1.0 / (params.alpha + params.beta))
    return AllocationConstants(G=G, a=a, b=b)


def optimal_allocation(params: ChinchillaParams, compute: float) -> AllocationResult:
    """Closed-form ``(N_opt, D_opt)`` for a FLOP budget.

    ``D_opt`` is taken as ``C / (6 N_opt)``, which equals the closed form
    exactly in real arithmetic (``a + b = 1``) and keeps the budget
    constraint tight in floating point.
    """
    if not compute > 0:
        raise ValidationError(f"compute must be > 0, got {compute!r}")
    k = allocation_constants(params)
    n_opt = k.G * (compute / 6.0) ** k.a
    d_opt = compute / (6.0 * n_opt)
    return AllocationResult(compute, n_opt, d_opt, predict_loss(params, n_opt, d_opt))


def optimal_params_for_tokens(params: ChinchillaParams, u_d: float) -> float:
    """Model size that is compute-optimal for ``u_d`` tokens: ``G (G U_D)^(a/b)``."""
    if not u_d > 0:
        raise ValidationError(f"u_d must be > 0, got {u_d!r}")
    k = allocation_constants(params)
    return k.G * (k.G * u_d) ** (k.a / k.b)


def compute_for_tokens(params: ChinchillaParams, u_d: float) -> float:
    """Budget whose optimal token count equals ``u_d``."""
    if not u_d > 0:
        raise ValidationError(f"u_d must be > 0, got {u_d!r}")
    k = allocation_constants(params)
    return 6.0 * (k.G * u_d) ** (1.0 / k.b)


def _optimal_path_loss(params: ChinchillaParams, log_c: float) -> float:
    return optimal_allocation(params, math.exp(log_c)).predicted_loss


def compute_for_loss(params: ChinchillaParams, target_loss: float, rel_tol: float = 1e-6) -> float:
    """Smallest budget whose optimally-allocated loss is at most ``target_loss``.

    Bisection on ``log C``; loss along the optimal path is strictly
    decreasing in ``C``, so the bracket is always valid. The returned value
    satisfies the target and is within ``rel_tol`` of the true threshold.

    Raises:
        ValidationError: ``target_loss <= E`` (the loss floor is unreachable).
    """
    if not target_loss > params.E:
        raise ValidationError(
            f"target loss {target_loss!r} is unreachable: must exceed the irreducible loss "
            f"E={params.E!r}"
        )
    lo, hi = math.log(6.0), math.log(6e24)
    while _optimal_path_loss(params, lo) <= target_loss:
        lo -= 10.0
        if lo < -700:
            return math.exp(lo)
    while _optimal_path_loss(params, hi) > target_loss:
        hi += 10.0
        if hi > 700:
            raise NumericalError(f"target loss {target_loss!r} needs more than 1e304 FLOPs")
    tol = math.log1p(rel_tol)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _optimal_path_loss(params, mid) <= target_loss:
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


def golden_section(f, lo: float, hi: float, xtol: float = 1e-10, max_iter: int = 500) -> float:
    """Minimizer of a unimodal ``f`` on ``[lo, hi]``."""
    x1 = hi - INVPHI * (hi - lo)
    x2 = lo + INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if hi - lo <= xtol * max(1.0, abs(lo), abs(hi)):
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INVPHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INVPHI * (hi - lo)
            f2 = f(x2)
    return x1 if f1 <= f2 else x2


def verify_allocation(
    params: ChinchillaParams, compute: float, tolerance: float = 1e-3
) -> AllocationCheck:
    """Numerically minimize the loss over ``N`` on the budget line and compare.

    The search variable is ``log N`` over ``[0, log(C/6)]`` (at least one
    parameter and one token); the objective is strictly convex there.

    Raises:
        NumericalError: closed form and numeric optimum differ by more than
            ``tolerance`` (relative).
    """
    if not compute > 0:
        raise ValidationError(f"compute must be > 0, got {compute!r}")
    c6 = compute / 6.0
    log_c6 = math.log(c6)

    def loss_at(log_n):
        n = math.exp(log_n)
        return predict_loss(params, n, c6 / n)

    log_n = golden_section(loss_at, 0.0, log_c6, xtol=1e-12)
    n_num = math.exp(log_n)
    n_cf = optimal_allocation(params, compute).n_opt
    rel = abs(n_num - n_cf) / n_cf
    check = AllocationCheck(compute, n_cf, n_num, rel, tolerance)
    if not rel <= tolerance:
        raise NumericalError(
            f"closed-form N_opt={n_cf!r} and numeric N_opt={n_num!r} differ by {rel:.3g} "
            f"(> {tolerance:g}) at C={compute!r}"
        )
    return check
