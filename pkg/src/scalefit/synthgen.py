"""Seeded synthetic runs and learning curves drawn from a known law.

Random numbers come from SplitMix64 so fixtures can be reproduced bit-exactly
in any language:

* state update: ``state = (state + 0x9E3779B97F4A7C15) mod 2**64``
* output mix:   ``z = state``;
  ``z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64``;
  ``z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64``;
  ``z = z ^ (z >> 31)``
* uniform:      ``u = ((z >> 11) + 1) * 2**-53``, in ``(0, 1]``
* normal:       Box-Muller, one variate from two uniforms,
  ``sqrt(-2 ln u1) * cos(2 pi u2)``

The initial state is the seed reduced mod ``2**64``. Noise is applied to the
log-loss: ``loss = exp(log L + sigma * z)``; with ``sigma == 0`` no draws are
made and the loss is the law's value exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .alloc import optimal_params_for_tokens
from .errors import ValidationError
from .laws import ChinchillaParams, MultiEpochParams, predict_loss, predict_loss_multi
from .runstore import CurvePoint, CurveSet, RunRecord, RunSet

MASK64 = (1 << 64) - 1

# Model sizes of the reference speech-LM sweep and its token/parameter ratios.
DEFAULT_SIZES = (20e6, 85e6, 155e6, 309e6, 823e6)
DEFAULT_RATIOS = (2.0, 4.0, 8.0, 10.0, 20.0, 32.0, 64.0, 100.0)
DEFAULT_EPOCHS = (2.0, 4.0, 8.0, 10.0)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class SynthSpec:
    law: ChinchillaParams | MultiEpochParams
    sizes: Sequence[float] = DEFAULT_SIZES
    ratios: Sequence[float] = DEFAULT_RATIOS
    epoch_grid: Sequence[float] | None = DEFAULT_EPOCHS
    noise_sigma: float = 0.0
    seed: int = 0
    modality: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(float(s) for s in self.sizes))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if self.epoch_grid is not None:
            object.__setattr__(self, "epoch_grid", tuple(float(e) for e in self.epoch_grid))
        if not self.sizes or not self.ratios:
            raise ValidationError("sizes and ratios must be non-empty")
        if any(s <= 0 for s in self.sizes) or any(r <= 0 for r in self.ratios):
            raise ValidationError("sizes and ratios must be > 0")
        if self.epoch_grid is not None and any(e < 1 for e in self.epoch_grid):
            raise ValidationError("epoch counts must be >= 1")
        if not self.noise_sigma >= 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma!r}")

    @property
    def base(self) -> ChinchillaParams:
        return self.law.base if isinstance(self.law, MultiEpochParams) else self.law


def _noisy(loss: float, sigma: float, rng: SplitMix64) -> float:
    if sigma == 0:
        return loss
    return math.exp(math.log(loss) + sigma * rng.normal())


def _run_id(n: float, ratio: float, ep: float | None = None) -> str:
    rid = f"N{n:.6g}-r{ratio:g}"
    return rid if ep is None else f"{rid}-ep{ep:g}"


def generate_runs(spec: SynthSpec) -> RunSet:
    """One single-epoch run per (size, ratio); plus, for a multi-epoch law,
    one run per (size, ratio, epochs) with ``U_D = D / epochs``.

    Single-epoch losses come from the base law; repeated-data losses from
    the effective-budget law with ``U_N`` the compute-optimal size for ``U_D``.
    """
    rng = SplitMix64(spec.seed)
    base = spec.base
    out: list[RunRecord] = []
    for n in spec.sizes:
        for ratio in spec.ratios:
            d = ratio * n
            loss = _noisy(predict_loss(base, n, d), spec.noise_sigma, rng)
            out.append(RunRecord(_run_id(n, ratio), n, d, loss, modality=spec.modality))
    if isinstance(spec.law, MultiEpochParams) and spec.epoch_grid:
        for n in spec.sizes:
            for ratio in spec.ratios:
                d = ratio * n
                for ep in spec.epoch_grid:
                    u_d = d / ep
                    u_n = optimal_params_for_tokens(base, u_d)
                    loss = predict_loss_multi(spec.law, n, d, u_d, u_n)
                    loss = _noisy(loss, spec.noise_sigma, rng)
                    out.append(
                        RunRecord(_run_id(n, ratio, ep), n, d, loss, u_tokens=u_d,
                                  modality=spec.modality)
                    )
    return RunSet(tuple(out))


def checkpoint_tokens(d: float, checkpoints: int, min_fraction: float) -> list[float]:
    """Log-uniform token counts from ``min_fraction * d`` up to exactly ``d``."""
    k = checkpoints - 1
    return [d * min_fraction ** ((k - j) / k) for j in range(checkpoints)]


def generate_curves(
    spec: SynthSpec,
    checkpoints: int,
    min_fraction: float = 0.01,
    metric_maps: Mapping[str, tuple[float, float]] | None = None,
) -> CurveSet:
    """Learning curves for the single-epoch runs of ``spec``.

    A checkpoint after ``t`` tokens is scored as a finished run of ``t``
    tokens, so its loss is the base law at ``(N, t)`` and its compute is
    ``6 N t``. ``metric_maps`` attaches ``name -> slope * loss + intercept``
    (computed from the noisy loss) to every point.
    """
    if checkpoints < 2:
        raise ValidationError("checkpoints must be >= 2")
    if not 0 < min_fraction < 1:
        raise ValidationError("min_fraction must lie in (0, 1)")
    rng = SplitMix64(spec.seed)
    base = spec.base
    pts: list[CurvePoint] = []
    for n in spec.sizes:
        for ratio in spec.ratios:
            d = ratio * n
            rid = _run_id(n, ratio)
            for t in checkpoint_tokens(d, checkpoints, min_fraction):
                loss = _noisy(predict_loss(base, n, t), spec.noise_sigma, rng)
                metrics = {
                    name: slope * loss + intercept
                    for name, (slope, intercept) in (metric_maps or {}).items()
                }
                pts.append(CurvePoint(rid, 6.0 * n * t, loss, metrics))
    return CurveSet(tuple(pts))
