"""JSON persistence for fitted laws.

Every artifact is an object with a ``type`` tag (``single_epoch``,
``multi_epoch``, ``power_law`` or ``linear``), the numeric payload for that
type at top level, and a free-form ``fit_meta`` object. Floats are written
with ``repr`` precision, so loading a saved artifact is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .laws import ChinchillaParams, MultiEpochParams
from .linkage import LinearFit
from .scalecurves import PowerLawFit

__version__ = "0.1.0"

Law = ChinchillaParams | MultiEpochParams | PowerLawFit | LinearFit

_FIELDS = {
    "single_epoch": ("E", "A", "B", "alpha", "beta"),
    "multi_epoch": ("E", "A", "B", "alpha", "beta", "r_star_n", "r_star_d"),
    "power_law": ("coefficient", "exponent", "r_squared", "domain", "n_points"),
    "linear": ("slope", "intercept", "pearson_r", "n_points", "filter_applied"),
}


@dataclass(frozen=True)
class LawArtifact:
    law: Law
    fit_meta: dict[str, Any] = field(default_factory=dict)

    @property
    def type(self) -> str:
        return law_type(self.law)

    def to_dict(self) -> dict[str, Any]:
        law = self.law
        if isinstance(law, (ChinchillaParams, MultiEpochParams)):
            payload = law.as_dict()
        elif isinstance(law, PowerLawFit):
            payload = {
                "coefficient": law.coefficient,
                "exponent": law.exponent,
                "r_squared": law.r_squared,
                "domain": list(law.domain),
                "n_points": law.n_points,
            }
        else:
            payload = {
                "slope": law.slope,
                "intercept": law.intercept,
                "pearson_r": law.pearson_r,
                "n_points": law.n_points,
                "filter_applied": law.filter_applied,
            }
        return {"type": self.type, **payload, "fit_meta": self.fit_meta}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LawArtifact":
        if not isinstance(data, dict):
            raise ValidationError("law artifact must be a JSON object")
        kind = data.get("type")
        if kind not in _FIELDS:
            raise ValidationError(f"unknown law artifact type {kind!r}")
        missing = [k for k in _FIELDS[kind] if k not in data]
        if missing:
            raise ValidationError(f"{kind} artifact lacks field(s) {missing}")
        try:
            if kind in ("single_epoch", "multi_epoch"):
                base = ChinchillaParams(*(data[k] for k in _FIELDS["single_epoch"]))
                law: Law = (
                    base if kind == "single_epoch"
                    else MultiEpochParams(base, data["r_star_n"], data["r_star_d"])
                )
            elif kind == "power_law":
                lo, hi = data["domain"]
                law = PowerLawFit(
                    float(data["coefficient"]), float(data["exponent"]),
                    float(data["r_squared"]), (float(lo), float(hi)), int(data["n_points"]),
                )
            else:
                law = LinearFit(
                    float(data["slope"]), float(data["intercept"]), float(data["pearson_r"]),
                    int(data["n_points"]), str(data["filter_applied"]),
                )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed {kind} artifact: {exc}") from None
        return cls(law, dict(data.get("fit_meta") or {}))


def law_type(law: Law) -> str:
    if isinstance(law, MultiEpochParams):
        return "multi_epoch"
    if isinstance(law, ChinchillaParams):
        return "single_epoch"
    if isinstance(law, PowerLawFit):
        return "power_law"
    if isinstance(law, LinearFit):
        return "linear"
    raise ValidationError(f"not a law: {type(law).__name__}")


def save_artifact(artifact: LawArtifact, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(artifact.to_dict(), indent=2, allow_nan=False) + "\n")
    return path


def load_artifact(path: str | Path) -> LawArtifact:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"no such file: {str(path)!r}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{str(path)!r}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return LawArtifact.from_dict(data)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
