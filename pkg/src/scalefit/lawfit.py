"""Two-stage robust fitting of the loss laws to training runs.

Stage one fits ``(E, A, B, alpha, beta)`` on single-epoch runs by minimizing

    sum_i huber(LSE(e, a - alpha log N_i, b - beta log D_i) - log L_i)

over ``(e, a, b, alpha, beta)`` with ``E = exp(e)``, ``A = exp(a)``,
``B = exp(b)``, from every point of an initialization grid. Stage two holds
those fixed and fits ``(R*_N, R*_D) = exp(rho_N, rho_D)`` on the repeated-data
runs. The best start wins, ties broken by the lower grid index.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alloc import optimal_params_for_tokens
from .errors import NumericalError, ValidationError
from .laws import ChinchillaParams, MultiEpochParams
from .numopt import OptConfig, minimize
from .runstore import RunRecord, epochs

# Repeat counts at or below this are treated as a single epoch (a run at
# 0.99 of an epoch would otherwise be excluded by rounding).
SINGLE_EPOCH_MAX_REPEATS = 0.01

DEFAULT_ALPHA_GRID = (0.1, 0.3, 0.5, 0.7, 1.0)
DEFAULT_AB_GRID = (1.0, 3.0, 5.0, 7.0)
DEFAULT_E_GRID = (-0.5, 0.0, 0.5, 1.0)
DEFAULT_RHO_GRID = (0.0, 1.0, 2.0, 3.0, 4.0)


@dataclass(frozen=True)
class InitGrid:
    """Cartesian grid over the transformed stage-one parameters.

    Points are enumerated in the order ``(e, a, b, alpha, beta)`` with the
    last axis varying fastest.
    """

    e: tuple[float, ...] = DEFAULT_E_GRID
    a: tuple[float, ...] = DEFAULT_AB_GRID
    b: tuple[float, ...] = DEFAULT_AB_GRID
    alpha: tuple[float, ...] = DEFAULT_ALPHA_GRID
    beta: tuple[float, ...] = DEFAULT_ALPHA_GRID

    def points(self) -> np.ndarray:
        pts = list(itertools.product(self.e, self.a, self.b, self.alpha, self.beta))
        if not pts:
            raise ValidationError("initialization grid is empty")
        return np.array(pts, dtype=float)

    def as_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("e", "a", "b", "alpha", "beta")}


@dataclass(frozen=True)
class RhoGrid:
    rho_n: tuple[float, ...] = DEFAULT_RHO_GRID
    rho_d: tuple[float, ...] = DEFAULT_RHO_GRID

    def points(self) -> np.ndarray:
        pts = list(itertools.product(self.rho_n, self.rho_d))
        if not pts:
            raise ValidationError("stage-two grid is empty")
        return np.array(pts, dtype=float)

    def as_dict(self) -> dict:
        return {"rho_n": list(self.rho_n), "rho_d": list(self.rho_d)}


@dataclass(frozen=True)
class FitConfig:
    huber_delta: float = 0.03
    init_grid: InitGrid = field(default_factory=InitGrid)
    rho_grid: RhoGrid = field(default_factory=RhoGrid)
    opt: OptConfig = field(default_factory=OptConfig)
    workers: int = 1

    def __post_init__(self):
        if not self.huber_delta > 0:
            raise ValidationError(f"huber_delta must be > 0, got {self.huber_delta!r}")
        self.init_grid.points()
        self.rho_grid.points()
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    def as_dict(self) -> dict:
        return {
            "huber_delta": self.huber_delta,
            "init_grid": self.init_grid.as_dict(),
            "rho_grid": self.rho_grid.as_dict(),
            "opt": {
                "memory_pairs": self.opt.memory_pairs,
                "grad_tol": self.opt.grad_tol,
                "max_iters": self.opt.max_iters,
                "c1": self.opt.c1,
                "c2": self.opt.c2,
            },
        }


@dataclass
class FitReport:
    params: ChinchillaParams | MultiEpochParams
    objective: float
    n_runs_used: int
    winning_init: int
    per_run_residuals: list[float]
    run_ids: list[str]
    x_min: np.ndarray
    converged: bool
    n_starts_ok: int


# ---------------------------------------------------------------------------
# objectives


class SingleEpochObjective:
    """Huber objective over ``theta = (e, a, b, alpha, beta)``.

    The three log-terms ``(e, a - alpha log N, b - beta log D)`` are linear in
    ``theta``; they are evaluated for every run as one product with a fixed
    ``(3 * runs, 5)`` design matrix, and the gradient is its transpose applied
    to the Huber-weighted softmax weights.
    """

    def __init__(self, n, d, loss, delta: float):
        self.log_n = np.log(np.asarray(n, dtype=float))
        self.log_d = np.log(np.asarray(d, dtype=float))
        self.log_l = np.log(np.asarray(loss, dtype=float))
        self.delta = float(delta)
        k = self.log_n.size
        K = np.zeros((3, k, 5))
        K[0, :, 0] = 1.0
        K[1, :, 1] = 1.0
        K[1, :, 3] = -self.log_n
        K[2, :, 2] = 1.0
        K[2, :, 4] = -self.log_d
        self._K = K.reshape(3 * k, 5)
        self._shape = (3, k)

    def _terms(self, theta):
        T = (self._K @ np.asarray(theta, dtype=float)).reshape(self._shape)
        m = T.max(axis=0)
        W = np.exp(T - m)
        s = W.sum(axis=0)
        return m + np.log(s), W / s

    def log_pred(self, theta) -> np.ndarray:
        return self._terms(theta)[0]

    def residuals(self, theta) -> np.ndarray:
        return self.log_pred(theta) - self.log_l

    def __call__(self, theta) -> float:
        return _huber_sum(self.residuals(theta), self.delta)

    def value_and_grad(self, theta):
        lp, P = self._terms(theta)
        r = lp - self.log_l
        a = np.abs(r)
        q = np.minimum(a, self.delta)
        f = float(q @ (a - 0.5 * q))
        g = (P * np.copysign(q, r)).ravel() @ self._K
        return f, g

    def gradient(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]


def _huber_sum(r: np.ndarray, delta: float) -> float:
    # numopt.huber summed, without its argument checks (hot path):
    # with q = min(|r|, delta), q * (|r| - q/2) is r^2/2 inside and
    # delta * (|r| - delta/2) outside
    a = np.abs(r)
    q = np.minimum(a, delta)
    return float(q @ (a - 0.5 * q))


class MultiEpochObjective:
    """Huber objective over ``rho = (log R*_N, log R*_D)`` with the base law fixed."""

    def __init__(self, base: ChinchillaParams, n, d, u_d, u_n, loss, delta: float):
        self.base = base
        n = np.asarray(n, dtype=float)
        d = np.asarray(d, dtype=float)
        self.u_d = np.asarray(u_d, dtype=float)
        self.u_n = np.asarray(u_n, dtype=float)
        self.r_d = d / self.u_d - 1.0
        self.r_n = n / self.u_n - 1.0
        self.n = n
        self.d = d
        self.log_l = np.log(np.asarray(loss, dtype=float))
        self.delta = delta
        self._e = math.log(base.E)
        self._a = math.log(base.A)
        self._b = math.log(base.B)

    @staticmethod
    def _eff(raw, u, r, r_star):
        """Effective counts and their derivative with respect to ``log r_star``."""
        pos = r > 0
        rp = np.where(pos, r, 0.0)
        x = rp / r_star if r_star > 0 else np.full_like(rp, np.inf)
        one_m = -np.expm1(-x)
        eff = np.where(pos, np.minimum(u + u * r_star * one_m, raw), raw)
        xc = np.minimum(x, 700.0)  # x * exp(-x) is 0 to double precision beyond this
        deriv = np.where(pos, r_star * u * (one_m - xc * np.exp(-xc)), 0.0)
        return eff, deriv

    def parts(self, rho):
        rs_n, rs_d = math.exp(rho[0]), math.exp(rho[1])
        n_eff, dn = self._eff(self.n, self.u_n, self.r_n, rs_n)
        d_eff, dd = self._eff(self.d, self.u_d, self.r_d, rs_d)
        bp = self.base
        t = np.stack(
            [
                np.full_like(n_eff, self._e),
                self._a - bp.alpha * np.log(n_eff),
                self._b - bp.beta * np.log(d_eff),
            ]
        )
        m = t.max(axis=0)
        w = np.exp(t - m)
        s = w.sum(axis=0)
        return m + np.log(s), w / s, n_eff, dn, d_eff, dd

    def residuals(self, rho) -> np.ndarray:
        return self.parts(rho)[0] - self.log_l

    def __call__(self, rho) -> float:
        return _huber_sum(self.residuals(rho), self.delta)

    def value_and_grad(self, rho):
        lp, w, n_eff, dn, d_eff, dd = self.parts(rho)
        r = lp - self.log_l
        f = _huber_sum(r, self.delta)
        h = np.clip(r, -self.delta, self.delta)
        g = np.array(
            [
                -(h * w[1] * self.base.alpha * dn / n_eff).sum(),
                -(h * w[2] * self.base.beta * dd / d_eff).sum(),
            ]
        )
        return f, g

    def gradient(self, rho) -> np.ndarray:
        return self.value_and_grad(rho)[1]


# ---------------------------------------------------------------------------
# multistart


def _run_start(obj, x0, opt: OptConfig):
    """One local fit; returns ``(objective, x, converged)`` or ``None`` on failure."""
    try:
        res = minimize(None, None, x0, opt, fun_and_grad=obj.value_and_grad)
    except NumericalError:
        return None
    if not math.isfinite(res.f_min) or not np.all(np.isfinite(res.x_min)):
        return None
    return res.f_min, res.x_min, res.converged


def _run_chunk(obj, starts, opt):
    return [_run_start(obj, x0, opt) for x0 in starts]


def multistart(obj, starts: np.ndarray, opt: OptConfig, workers: int = 1, order=None):
    """Run every start and return ``(index, objective, x, converged, n_ok)`` for the best.

    The winner is the minimum under the total order (objective, grid index),
    so it does not depend on evaluation order or on ``workers``.
    """
    idx = list(range(len(starts))) if order is None else list(order)
    if sorted(idx) != list(range(len(starts))):
        raise ValidationError("order must be a permutation of the grid indices")
    results: dict[int, tuple | None] = {}
    if workers > 1 and len(idx) > 1:
        chunks = [idx[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [
                (c, pool.submit(_run_chunk, obj, [starts[i] for i in c], opt)) for c in chunks
            ]
            for c, fut in futs:
                results.update(zip(c, fut.result()))
    else:
        for i in idx:
            results[i] = _run_start(obj, starts[i], opt)
    ok = [(r[0], i, r[1], r[2]) for i, r in results.items() if r is not None]
    if not ok:
        raise NumericalError("every initialization failed")
    f, i, x, conv = min(ok, key=lambda t: (t[0], t[1]))
    return i, f, x, conv, len(ok)


# ---------------------------------------------------------------------------
# fits


def is_single_epoch(run: RunRecord) -> bool:
    return epochs(run) <= SINGLE_EPOCH_MAX_REPEATS


def theta_to_params(theta) -> ChinchillaParams:
    e, a, b, alpha, beta = (float(v) for v in theta)
    try:
        return ChinchillaParams(math.exp(e), math.exp(a), math.exp(b), alpha, beta)
    except ValidationError as exc:
        raise NumericalError(f"fit converged to an invalid law: {exc}") from None


def params_to_theta(p: ChinchillaParams) -> np.ndarray:
    return np.array([math.log(p.E), math.log(p.A), math.log(p.B), p.alpha, p.beta])


def fit_single_epoch(
    runs: Sequence[RunRecord], config: FitConfig | None = None, *, order=None
) -> FitReport:
    """Fit the single-epoch law to the runs with (at most ~1) epoch of data.

    Raises:
        ValidationError: six or fewer usable runs, or all runs share one ``N``
            or one ``D``.
        NumericalError: every grid start failed.
    """
    cfg = config or FitConfig()
    used = [r for r in runs if is_single_epoch(r)]
    if len(used) <= 5:
        raise ValidationError(
            f"single-epoch fit needs more than 5 runs (5 free parameters), got {len(used)}"
        )
    n = np.array([r.n_params for r in used])
    d = np.array([r.d_tokens for r in used])
    if len(np.unique(n)) < 2 or len(np.unique(d)) < 2:
        raise ValidationError("runs must span at least 2 distinct n_params and 2 distinct d_tokens")
    obj = SingleEpochObjective(n, d, [r.test_loss for r in used], cfg.huber_delta)
    idx, f, x, conv, n_ok = multistart(obj, cfg.init_grid.points(), cfg.opt, cfg.workers, order)
    params = theta_to_params(x)
    return FitReport(
        params=params,
        objective=f,
        n_runs_used=len(used),
        winning_init=idx,
        per_run_residuals=[float(v) for v in obj.residuals(x)],
        run_ids=[r.run_id for r in used],
        x_min=x,
        converged=conv,
        n_starts_ok=n_ok,
    )


def multi_epoch_inputs(runs: Sequence[RunRecord], base: ChinchillaParams):
    """Select repeated-data runs and attach their compute-optimal size ``U_N``."""
    used = [r for r in runs if not is_single_epoch(r)]
    u_n = [optimal_params_for_tokens(base, r.u_tokens) for r in used]
    return used, np.array(u_n, dtype=float)


def fit_multi_epoch(
    runs: Sequence[RunRecord],
    base: ChinchillaParams,
    config: FitConfig | None = None,
    *,
    order=None,
) -> FitReport:
    """Fit ``R*_N`` and ``R*_D`` on the repeated-data runs, ``base`` held fixed.

    Raises:
        ValidationError: fewer than two multi-epoch runs or an invalid ``base``.
    """
    cfg = config or FitConfig()
    if not isinstance(base, ChinchillaParams):
        raise ValidationError(f"base must be a fitted ChinchillaParams, got {type(base).__name__}")
    used, u_n = multi_epoch_inputs(runs, base)
    if len(used) < 2:
        raise ValidationError(f"multi-epoch fit needs at least 2 repeated-data runs, got {len(used)}")
    obj = MultiEpochObjective(
        base,
        [r.n_params for r in used],
        [r.d_tokens for r in used],
        [r.u_tokens for r in used],
        u_n,
        [r.test_loss for r in used],
        cfg.huber_delta,
    )
    idx, f, x, conv, n_ok = multistart(obj, cfg.rho_grid.points(), cfg.opt, cfg.workers, order)
    try:
        params = MultiEpochParams(base, math.exp(x[0]), math.exp(x[1]))
    except ValidationError as exc:
        raise NumericalError(f"fit converged to an invalid law: {exc}") from None
    return FitReport(
        params=params,
        objective=f,
        n_runs_used=len(used),
        winning_init=idx,
        per_run_residuals=[float(v) for v in obj.residuals(x)],
        run_ids=[r.run_id for r in used],
        x_min=x,
        converged=conv,
        n_starts_ok=n_ok,
    )


def objective_at(report: FitReport, runs: Sequence[RunRecord], delta: float) -> float:
    """Re-evaluate the Huber objective at ``report.params`` (self-consistency check)."""
    p = report.params
    if isinstance(p, MultiEpochParams):
        used, u_n = multi_epoch_inputs(runs, p.base)
        obj = MultiEpochObjective(
            p.base, [r.n_params for r in used], [r.d_tokens for r in used],
            [r.u_tokens for r in used], u_n, [r.test_loss for r in used], delta,
        )
        return obj([math.log(p.r_star_n), math.log(p.r_star_d)])
    used = [r for r in runs if is_single_epoch(r)]
    obj = SingleEpochObjective(
        [r.n_params for r in used], [r.d_tokens for r in used], [r.test_loss for r in used], delta
    )
    return obj(params_to_theta(p))
