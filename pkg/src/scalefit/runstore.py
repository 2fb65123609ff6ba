"""Training-run records, learning-curve checkpoints, and their file formats.

Two on-disk formats are supported for both runs and curves:

* CSV with a header row. Run files use the columns
  ``run_id,modality,n_params,d_tokens,u_tokens,test_loss`` plus any number of
  ``metric.<name>`` columns; curve files use ``run_id,compute,loss`` plus
  optional ``metric.<name>`` columns. An empty cell means "absent".
* JSON: an array of objects with the same field names, where ``metrics`` is a
  nested object.

Numbers are parsed as 64-bit floats (scientific notation allowed) and written
back with ``repr`` so that a save/load cycle is bit-exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import MissingMetricError, ParseError, ValidationError

METRIC_PREFIX = "metric."
DEFAULT_MODALITY = "unspecified"
RUN_COLUMNS = ("run_id", "modality", "n_params", "d_tokens", "u_tokens", "test_loss")
CURVE_COLUMNS = ("run_id", "compute", "loss")


def _as_float(v: Any, name: str, run_id: str) -> float:
    if isinstance(v, bool):
        raise ValidationError(f"run {run_id!r}: {name} must be numeric, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ValidationError(f"run {run_id!r}: {name} must be numeric, got {v!r}") from None


def _as_metrics(metrics: Mapping[str, Any], run_id: str) -> dict[str, float]:
    return {str(k): _as_float(v, f"metric {k!r}", run_id) for k, v in metrics.items()}


@dataclass(frozen=True)
class RunRecord:
    """One completed training run.

    ``u_tokens`` defaults to ``d_tokens`` (a single-epoch run).
    """

    run_id: str
    n_params: float
    d_tokens: float
    test_loss: float
    u_tokens: float | None = None
    modality: str = DEFAULT_MODALITY
    metrics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.u_tokens is None:
            object.__setattr__(self, "u_tokens", self.d_tokens)
        for name in ("n_params", "d_tokens", "u_tokens", "test_loss"):
            object.__setattr__(self, name, _as_float(getattr(self, name), name, self.run_id))
        object.__setattr__(self, "metrics", _as_metrics(self.metrics, self.run_id))
        self.validate()

    def validate(self) -> None:
        where = f"run {self.run_id!r}"
        if not self.run_id:
            raise ValidationError("run_id must be non-empty")
        for name in ("n_params", "d_tokens", "u_tokens", "test_loss"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValidationError(f"{where}: {name} must be a finite number > 0, got {v!r}")
        if self.u_tokens > self.d_tokens:
            raise ValidationError(
                f"{where}: u_tokens ({self.u_tokens!r}) exceeds d_tokens ({self.d_tokens!r})"
            )
        for k, v in self.metrics.items():
            if not (0.0 <= v <= 100.0):
                raise ValidationError(f"{where}: metric {k!r} must lie in [0, 100], got {v!r}")

    def metric(self, name: str) -> float:
        try:
            return self.metrics[name]
        except KeyError:
            raise MissingMetricError(name, f"run {self.run_id!r}") from None


@dataclass(frozen=True)
class CurvePoint:
    """One checkpoint of a run: cumulative compute (FLOPs) and the loss there."""

    run_id: str
    compute: float
    loss: float
    metrics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        where = f"curve point of run {self.run_id!r}"
        if not self.run_id:
            raise ValidationError("run_id must be non-empty")
        for name in ("compute", "loss"):
            v = _as_float(getattr(self, name), name, self.run_id)
            object.__setattr__(self, name, v)
            if not math.isfinite(v) or v <= 0:
                raise ValidationError(f"{where}: {name} must be a finite number > 0, got {v!r}")
        object.__setattr__(self, "metrics", _as_metrics(self.metrics, self.run_id))
        for k, v in self.metrics.items():
            if not (0.0 <= v <= 100.0):
                raise ValidationError(f"{where}: metric {k!r} must lie in [0, 100], got {v!r}")


def derive_compute(record: RunRecord) -> float:
    """Training FLOPs under the ``C = 6 N D`` approximation."""
    return 6.0 * record.n_params * record.d_tokens


def epochs(record: RunRecord) -> float:
    """Number of repetitions of the unique data, ``D / U_D - 1`` (0 for one epoch)."""
    return record.d_tokens / record.u_tokens - 1.0


@dataclass(frozen=True)
class RunSet(Sequence[RunRecord]):
    """Immutable, ordered collection of runs with unique ids.

    Equality compares the records only; ``source`` and ``loaded_at`` are
    provenance and are ignored.
    """

    runs: tuple[RunRecord, ...]
    source: str | None = field(default=None, compare=False)
    loaded_at: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(self.runs))
        if not self.runs:
            raise ValidationError("a RunSet must contain at least one run")
        seen: set[str] = set()
        for r in self.runs:
            if r.run_id in seen:
                raise ValidationError(f"duplicate run_id {r.run_id!r}")
            seen.add(r.run_id)

    def __len__(self) -> int:
        return len(self.runs)

    def __getitem__(self, i):
        return self.runs[i]

    def __iter__(self) -> Iterator[RunRecord]:
        return iter(self.runs)

    def metric_names(self) -> list[str]:
        names: dict[str, None] = {}
        for r in self.runs:
            names.update(dict.fromkeys(r.metrics))
        return list(names)


@dataclass(frozen=True)
class CurveSet(Sequence[CurvePoint]):
    """Immutable collection of checkpoints, grouped by ``run_id``.

    Within a run, points must be strictly increasing in compute.
    """

    points: tuple[CurvePoint, ...]
    source: str | None = field(default=None, compare=False)
    loaded_at: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValidationError("a CurveSet must contain at least one point")
        last: dict[str, float] = {}
        for p in self.points:
            prev = last.get(p.run_id)
            if prev is not None and not p.compute > prev:
                raise ValidationError(
                    f"run {p.run_id!r}: compute must be strictly increasing "
                    f"({p.compute!r} follows {prev!r})"
                )
            last[p.run_id] = p.compute

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def __iter__(self) -> Iterator[CurvePoint]:
        return iter(self.points)

    def run_ids(self) -> list[str]:
        return list(dict.fromkeys(p.run_id for p in self.points))

    def by_run(self) -> dict[str, list[CurvePoint]]:
        out: dict[str, list[CurvePoint]] = {}
        for p in self.points:
            out.setdefault(p.run_id, []).append(p)
        return out


def curves_from_runs(runs: Iterable[RunRecord]) -> CurveSet:
    """Turn each run into a single-point curve at its final compute."""
    return CurveSet(
        tuple(CurvePoint(r.run_id, derive_compute(r), r.test_loss, r.metrics) for r in runs)
    )


# ---------------------------------------------------------------------------
# parsing helpers


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _num(value: Any, name: str, line: int | None) -> float:
    if isinstance(value, bool):
        raise ParseError(f"{name}: expected a number, got {value!r}", line)
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(str(value).strip())
    except ValueError:
        raise ParseError(f"{name}: expected a number, got {value!r}", line) from None


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("csv", "json"):
            raise ValidationError(f"unsupported format {fmt!r} (expected csv or json)")
        return fmt
    suffix = path.suffix.lower()
    if suffix == ".json":
        return "json"
    if suffix == ".csv":
        return "csv"
    raise ValidationError(f"cannot infer format of {str(path)!r}; pass format='csv' or 'json'")


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"no such file: {str(path)!r}") from None


def _csv_rows(text: str, required: Sequence[str]) -> Iterator[tuple[int, dict[str, str]]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ParseError("missing header row", 1)
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"header lacks required column(s) {missing}", 1)
    for row in reader:
        line = reader.line_num
        if None in row:
            raise ParseError("more cells than header columns", line)
        if any(v is None for v in row.values()):
            raise ParseError("fewer cells than header columns", line)
        yield line, {k: v.strip() for k, v in row.items()}


def _csv_metrics(row: Mapping[str, str], line: int) -> dict[str, float]:
    out = {}
    for k, v in row.items():
        if k.startswith(METRIC_PREFIX) and v != "":
            out[k[len(METRIC_PREFIX):]] = _num(v, k, line)
    return out


def _json_records(text: str) -> list[tuple[int, dict]]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(data, list):
        raise ParseError("top-level JSON value must be an array of objects", 1)
    out = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise ParseError(f"record {i} is not an object")
        out.append((i, obj))
    return out


def _json_metrics(obj: Mapping[str, Any], where: str) -> dict[str, float]:
    metrics = obj.get("metrics") or {}
    if not isinstance(metrics, dict):
        raise ParseError(f"{where}: metrics must be an object")
    return {
        str(k): _num(v, f"{where}: metrics.{k}", None) for k, v in metrics.items() if v is not None
    }


def _build(factory, where: str, line: int | None, **kwargs):
    try:
        return factory(**kwargs)
    except ParseError:
        raise
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


# ---------------------------------------------------------------------------
# runs


def load_runs(path: str | Path, format: str | None = None) -> RunSet:
    """Load a RunSet from CSV or JSON (format inferred from the suffix if omitted).

    Raises:
        ParseError: malformed file; the message carries the line number.
        ValidationError: duplicate ``run_id`` or a record violating an invariant.
    """
    path = Path(path)
    fmt = _detect_format(path, format)
    text = _read_text(path)
    records: list[RunRecord] = []
    ids: dict[str, str] = {}

    def add(rec: RunRecord, where: str):
        if rec.run_id in ids:
            raise ValidationError(
                f"{where}: duplicate run_id {rec.run_id!r} (first seen at {ids[rec.run_id]})"
            )
        ids[rec.run_id] = where
        records.append(rec)

    if fmt == "csv":
        for line, row in _csv_rows(text, ("run_id", "n_params", "d_tokens", "test_loss")):
            where = f"line {line}"
            u = row.get("u_tokens", "")
            rec = _build(
                RunRecord,
                where,
                line,
                run_id=row["run_id"],
                modality=row.get("modality") or DEFAULT_MODALITY,
                n_params=_num(row["n_params"], "n_params", line),
                d_tokens=_num(row["d_tokens"], "d_tokens", line),
                u_tokens=_num(u, "u_tokens", line) if u != "" else None,
                test_loss=_num(row["test_loss"], "test_loss", line),
                metrics=_csv_metrics(row, line),
            )
            add(rec, where)
    else:
        for i, obj in _json_records(text):
            where = f"record {i}"
            for key in ("run_id", "n_params", "d_tokens", "test_loss"):
                if obj.get(key) is None:
                    raise ParseError(f"{where}: missing field {key!r}")
            u = obj.get("u_tokens")
            rec = _build(
                RunRecord,
                where,
                None,
                run_id=str(obj["run_id"]),
                modality=obj.get("modality") or DEFAULT_MODALITY,
                n_params=_num(obj["n_params"], f"{where}: n_params", None),
                d_tokens=_num(obj["d_tokens"], f"{where}: d_tokens", None),
                u_tokens=_num(u, f"{where}: u_tokens", None) if u is not None else None,
                test_loss=_num(obj["test_loss"], f"{where}: test_loss", None),
                metrics=_json_metrics(obj, where),
            )
            add(rec, where)
    if not records:
        raise ValidationError(f"{str(path)!r} contains no runs")
    return RunSet(tuple(records), source=str(path), loaded_at=_now())


def save_runs(runs: Iterable[RunRecord], path: str | Path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = _detect_format(path, format)
    runs = list(runs)
    if fmt == "json":
        data = [
            {
                "run_id": r.run_id,
                "modality": r.modality,
                "n_params": r.n_params,
                "d_tokens": r.d_tokens,
                "u_tokens": r.u_tokens,
                "test_loss": r.test_loss,
                "metrics": dict(r.metrics),
            }
            for r in runs
        ]
        path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
        return path
    names = list(dict.fromkeys(k for r in runs for k in r.metrics))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(RUN_COLUMNS) + [METRIC_PREFIX + n for n in names])
        for r in runs:
            w.writerow(
                [r.run_id, r.modality, repr(r.n_params), repr(r.d_tokens), repr(r.u_tokens),
                 repr(r.test_loss)]
                + [repr(r.metrics[n]) if n in r.metrics else "" for n in names]
            )
    return path


# ---------------------------------------------------------------------------
# curves


def load_curves(path: str | Path, format: str | None = None) -> CurveSet:
    """Load a CurveSet; errors mirror :func:`load_runs`."""
    path = Path(path)
    fmt = _detect_format(path, format)
    text = _read_text(path)
    points: list[CurvePoint] = []
    last: dict[str, float] = {}

    def add(p: CurvePoint, where: str):
        prev = last.get(p.run_id)
        if prev is not None and not p.compute > prev:
            raise ValidationError(
                f"{where}: run {p.run_id!r} compute must be strictly increasing "
                f"({p.compute!r} follows {prev!r})"
            )
        last[p.run_id] = p.compute
        points.append(p)

    if fmt == "csv":
        for line, row in _csv_rows(text, CURVE_COLUMNS):
            where = f"line {line}"
            p = _build(
                CurvePoint,
                where,
                line,
                run_id=row["run_id"],
                compute=_num(row["compute"], "compute", line),
                loss=_num(row["loss"], "loss", line),
                metrics=_csv_metrics(row, line),
            )
            add(p, where)
    else:
        for i, obj in _json_records(text):
            where = f"record {i}"
            for key in CURVE_COLUMNS:
                if obj.get(key) is None:
                    raise ParseError(f"{where}: missing field {key!r}")
            p = _build(
                CurvePoint,
                where,
                None,
                run_id=str(obj["run_id"]),
                compute=_num(obj["compute"], f"{where}: compute", None),
                loss=_num(obj["loss"], f"{where}: loss", None),
                metrics=_json_metrics(obj, where),
            )
            add(p, where)
    if not points:
        raise ValidationError(f"{str(path)!r} contains no curve points")
    return CurveSet(tuple(points), source=str(path), loaded_at=_now())


def save_curves(points: Iterable[CurvePoint], path: str | Path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = _detect_format(path, format)
    points = list(points)
    if fmt == "json":
        data = [
            {"run_id": p.run_id, "compute": p.compute, "loss": p.loss, "metrics": dict(p.metrics)}
            for p in points
        ]
        path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
        return path
    names = list(dict.fromkeys(k for p in points for k in p.metrics))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(CURVE_COLUMNS) + [METRIC_PREFIX + n for n in names])
        for p in points:
            w.writerow(
                [p.run_id, repr(p.compute), repr(p.loss)]
                + [repr(p.metrics[n]) if n in p.metrics else "" for n in names]
            )
    return path
