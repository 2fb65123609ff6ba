"""Unconstrained minimization: L-BFGS with a strong-Wolfe line search.

Also hosts the Huber error function used by the scaling-law fits and a
central-difference gradient checker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteError, ValidationError

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OptConfig:
    """L-BFGS settings.

    ``c1`` and ``c2`` are the sufficient-decrease and curvature constants of
    the strong Wolfe conditions; ``0 < c1 < c2 < 1``.
    """

    memory_pairs: int = 10
    grad_tol: float = 1e-8
    max_iters: int = 1000
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 40

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValidationError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory_pairs < 1:
            raise ValidationError("memory_pairs must be >= 1")
        if not self.grad_tol > 0:
            raise ValidationError("grad_tol must be > 0")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be >= 0")
        if self.max_ls_evals < 1:
            raise ValidationError("max_ls_evals must be >= 1")


@dataclass
class OptResult:
    x_min: np.ndarray
    f_min: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str = ""
    n_evals: int = field(default=0, compare=False)


# ---------------------------------------------------------------------------
# Huber


def huber(residual, delta: float):
    """Huber error: ``r**2 / 2`` inside ``|r| <= delta``, ``delta*(|r| - delta/2)`` outside.

    Works elementwise on arrays.
    """
    if not delta > 0:
        raise ValidationError(f"huber delta must be > 0, got {delta!r}")
    r = np.asarray(residual, dtype=float)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_grad(residual, delta: float):
    """Derivative of :func:`huber` with respect to the residual.

    At exactly ``|r| == delta`` the linear-branch value ``delta * sign(r)`` is
    used; it coincides with the quadratic-branch value ``r`` there.
    """
    if not delta > 0:
        raise ValidationError(f"huber delta must be > 0, got {delta!r}")
    r = np.asarray(residual, dtype=float)
    out = np.where(np.abs(r) < delta, r, delta * np.sign(r))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# gradient check


def grad_check(
    objective: Objective, gradient: Gradient, x, step: float = 1e-6
) -> float:
    """Max over coordinates of ``|g_analytic - g_fd| / max(1, |g_fd|)``.

    ``g_fd`` is the central difference with the given step; it serves as
    the reference value, so a gradient that is off by half reports 0.5.
    """
    x = np.array(x, dtype=float)
    g = np.asarray(gradient(x.copy()), dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite analytic gradient", x)
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fp = objective(xp)
        fm = objective(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError("non-finite objective in finite-difference stencil", x)
        fd = (fp - fm) / (xp[i] - xm[i])
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(fd)))
    return worst


# ---------------------------------------------------------------------------
# line search


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if math.isfinite(t) else None


class _LineSearch:
    """Strong-Wolfe search along ``p`` (bracketing phase then zoom).

    Follows the classic two-phase scheme from Nocedal & Wright, with cubic
    interpolation in the zoom phase safeguarded by bisection. Tracks the best
    point seen so a failure can still return progress.
    """

    def __init__(self, fun, x, f0, g0, p, cfg: OptConfig):
        self.fun = fun
        self.x = x
        self.p = p
        self.f0 = f0
        self.d0 = float(g0 @ p)
        self.cfg = cfg
        self.evals = 0
        self.best = (0.0, f0, None, None)  # step, f, x, g

    def phi(self, t):
        self.evals += 1
        xt = self.x + t * self.p
        f, g = self.fun(xt)
        d = float(g @ self.p)
        if math.isfinite(f) and math.isfinite(float(g @ g)):
            if f < self.best[1]:
                self.best = (t, f, xt, g)
            return f, d, xt, g
        return math.inf, math.nan, xt, g

    def run(self, t1):
        c1, c2 = self.cfg.c1, self.cfg.c2
        f0, d0 = self.f0, self.d0
        t_prev, f_prev, d_prev = 0.0, f0, d0
        t = t1
        first = True
        while self.evals < self.cfg.max_ls_evals:
            f, d, xt, g = self.phi(t)
            if not math.isfinite(f):
                # shrink toward the last finite point
                t = t_prev + 0.5 * (t - t_prev)
                continue
            if f > f0 + c1 * t * d0 or (not first and f >= f_prev):
                return self.zoom(t_prev, f_prev, d_prev, t, f, d)
            if abs(d) <= -c2 * d0:
                return t, f, xt, g
            if d >= 0:
                return self.zoom(t, f, d, t_prev, f_prev, d_prev)
            t_prev, f_prev, d_prev = t, f, d
            t = 2.0 * t
            first = False
        return None

    def zoom(self, lo, flo, dlo, hi, fhi, dhi):
        c1, c2 = self.cfg.c1, self.cfg.c2
        f0, d0 = self.f0, self.d0
        while self.evals < self.cfg.max_ls_evals:
            width = abs(hi - lo)
            if width <= 1e-16 * max(1.0, abs(lo)):
                return None
            t = _cubic_min(lo, flo, dlo, hi, fhi, dhi) if math.isfinite(fhi) else None
            left, right = min(lo, hi), max(lo, hi)
            if t is None or not (left + 0.1 * width <= t <= right - 0.1 * width):
                t = 0.5 * (lo + hi)
            f, d, xt, g = self.phi(t)
            if not math.isfinite(f) or f > f0 + c1 * t * d0 or f >= flo:
                hi, fhi, dhi = t, f, d
            else:
                if abs(d) <= -c2 * d0:
                    return t, f, xt, g
                if d * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = t, f, d
        return None


# ---------------------------------------------------------------------------
# L-BFGS


def _norm(v: np.ndarray) -> float:
    return math.sqrt(float(v @ v))


def lbfgs_apply(g: np.ndarray, S: np.ndarray | None, Y: np.ndarray | None) -> np.ndarray:
    """Product of the L-BFGS inverse-Hessian approximation with ``g``.

    ``S`` and ``Y`` hold the stored steps and gradient changes as rows,
    oldest first. Uses the compact representation of Byrd, Nocedal and
    Schnabel (1994), which equals the two-loop recursion with initial
    scaling ``gamma = s'y / y'y`` from the newest pair, but needs a handful
    of small matrix operations instead of a Python loop over pairs.
    """
    if S is None or len(S) == 0:
        return g.copy()
    mem = _Memory(len(S))
    for s, y in zip(S, Y):
        mem.push(np.asarray(s, dtype=float), np.asarray(y, dtype=float), float(s @ y))
    return mem.apply(g)


class _Memory:
    """Limited L-BFGS history kept in compact form.

    Holds ``S`` and ``Y`` (rows, oldest first) together with ``R^{-1}``
    (``R = triu(S Y')``), ``Y Y'`` and ``diag(S Y')``, all updated by
    bordering when a pair is added and by trimming when the oldest pair is
    dropped. For an upper-triangular ``R`` the inverse of a trailing block
    is the trailing block of the inverse, so both updates are exact and the
    product with ``g`` costs a few small matrix products.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.k = 0
        self._S = self._Y = None

    def clear(self):
        self.k = 0

    def __len__(self):
        return self.k

    def push(self, s: np.ndarray, y: np.ndarray, sy: float):
        cap = self.capacity
        if self._S is None:
            n = s.size
            self._S = np.zeros((cap, n))
            self._Y = np.zeros((cap, n))
            self._Rinv = np.zeros((cap, cap))
            self._YY = np.zeros((cap, cap))
            self._dsy = np.zeros(cap)
        S, Y, Rinv, YY, dsy = self._S, self._Y, self._Rinv, self._YY, self._dsy
        k = self.k
        if k == cap:
            # drop the oldest pair: shift every buffer up by one
            S[:-1] = S[1:]
            Y[:-1] = Y[1:]
            Rinv[:-1, :-1] = Rinv[1:, 1:]
            YY[:-1, :-1] = YY[1:, 1:]
            dsy[:-1] = dsy[1:]
            k -= 1
        # border with the new pair
        if k:
            col = -(Rinv[:k, :k] @ (S[:k] @ y)) / sy
            yy = Y[:k] @ y
            Rinv[:k, k] = col
            Rinv[k, :k] = 0.0
            YY[:k, k] = yy
            YY[k, :k] = yy
        Rinv[k, k] = 1.0 / sy
        YY[k, k] = y @ y
        dsy[k] = sy
        S[k] = s
        Y[k] = y
        self.k = k + 1

    def apply(self, g: np.ndarray) -> np.ndarray:
        k = self.k
        if k == 0:
            return g.copy()
        S, Y = self._S[:k], self._Y[:k]
        Rinv, YY, dsy = self._Rinv[:k, :k], self._YY[:k, :k], self._dsy[:k]
        gamma = dsy[-1] / YY[-1, -1]
        u = Rinv @ (S @ g)
        t = (dsy * u + gamma * (YY @ u - Y @ g)) @ Rinv
        return gamma * g + t @ S - gamma * (u @ Y)


def minimize(
    objective: Objective,
    gradient: Gradient | None,
    x0,
    config: OptConfig | None = None,
    *,
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
) -> OptResult:
    """Minimize a smooth function with L-BFGS.

    Either pass ``objective`` and ``gradient``, or a combined ``fun_and_grad``
    (then the other two may be ``None``). The result is deterministic for
    fixed inputs and never has ``f_min`` above ``f(x0)``. A line-search
    failure returns the best point found with ``converged=False``.

    Raises:
        NonFiniteError: objective or gradient is non-finite at ``x0``.
    """
    cfg = config or OptConfig()
    if fun_and_grad is None:
        if objective is None or gradient is None:
            raise ValidationError("need objective and gradient, or fun_and_grad")

        def fun_and_grad(x):
            return float(objective(x)), np.asarray(gradient(x), dtype=float)

    x = np.array(x0, dtype=float).ravel()
    f, g = fun_and_grad(x.copy())
    f = float(f)
    g = np.asarray(g, dtype=float).copy()
    n_evals = 1
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite objective or gradient", x)

    mem = _Memory(cfg.memory_pairs)
    gnorm = float(_norm(g))
    it = 0
    message = "max_iters reached"
    converged = False

    while True:
        if gnorm <= cfg.grad_tol:
            converged = True
            message = "gradient norm below tolerance"
            break
        if it >= cfg.max_iters:
            break

        p = -mem.apply(g)

        if not float(p @ g) < 0:
            # lost descent; restart from steepest descent
            mem.clear()
            p = -g
        t1 = 1.0 if len(mem) else min(1.0, 1.0 / gnorm)

        ls = _LineSearch(fun_and_grad, x, f, g, p, cfg)
        out = ls.run(t1)
        n_evals += ls.evals
        if out is None:
            t_best, f_best, x_best, g_best = ls.best
            if x_best is not None and f_best < f:
                x, f, g = x_best, f_best, g_best
                gnorm = float(_norm(g))
                it += 1
                if gnorm <= cfg.grad_tol:
                    converged = True
                    message = "gradient norm below tolerance"
                    break
                if len(mem):
                    # retry from steepest descent before giving up
                    mem.clear()
                    continue
            elif len(mem):
                mem.clear()
                continue
            message = "line search failed"
            break

        t, f_new, x_new, g_new = out
        s = x_new - x
        y = g_new - g
        x, f, g = x_new, f_new, g_new
        gnorm = float(_norm(g))
        it += 1
        sy = float(s @ y)
        if sy > 1e-12 * _norm(s) * _norm(y) and sy > 0:
            mem.push(s, y, sy)

    return OptResult(
        x_min=x, f_min=f, grad_norm=gnorm, iterations=it, converged=converged,
        message=message, n_evals=n_evals,
    )
