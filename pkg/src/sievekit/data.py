"""Trial data containers and the CSV boundary.

Records are held column-wise (numpy arrays) because simulated trials run to
millions of subjects; :class:`SubjectRecord` and :class:`EventRecord` are the
row views used at the API boundary.  Every container carries an integer
frequency ``weight`` column, so a CSV row may stand for many identical
subjects (the ``count`` column) and bootstrap resamples can be represented
without materialising duplicated rows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ParseError

EXPOSURE_CODES = {"0": 0, "1": 1, "2": 2, "B": 3}
EXPOSURE_LABELS = ("0", "1", "2", "B")
BOTH = 3

RESERVED_TIME_FIXED = {"a", "y", "e", "d", "infected", "count"}
RESERVED_TTE = {"a", "time", "event", "count"}


@dataclass(frozen=True)
class SubjectRecord:
    a: int
    y: int
    e: str | None = None
    l: Mapping[str, str] = field(default_factory=dict)
    line: int | None = None


@dataclass(frozen=True)
class EventRecord:
    a: int
    event_time: int
    event_type: int
    l: Mapping[str, str] = field(default_factory=dict)
    line: int | None = None


@dataclass(frozen=True)
class MarkDichotomizationConfig:
    """Map a continuous genetic distance to a binary mark.

    Infected subjects with ``distance < threshold`` become variant 1 (close to
    the vaccine insert), all other infected subjects variant 2.  Ties go to
    variant 2.
    """

    threshold: float
    distance_column: str = "d"

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ConfigurationError("dichotomization threshold must be finite")

    def apply(self, infected, distance):
        infected = np.asarray(infected, dtype=bool)
        distance = np.asarray(distance, dtype=float)
        if np.any(infected & np.isnan(distance)):
            raise DomainError(
                f"infected rows must carry a value in column {self.distance_column!r}"
            )
        y = np.zeros(infected.shape, dtype=np.int8)
        y[infected & (distance < self.threshold)] = 1
        y[infected & ~(distance < self.threshold)] = 2
        return y


def _as_int_array(values, dtype=np.int8):
    return np.ascontiguousarray(np.asarray(values), dtype=dtype)


def _covariate_arrays(covariates, n):
    out = {}
    for name, values in (covariates or {}).items():
        arr = np.asarray(values).astype(str)
        if arr.shape != (n,):
            raise ConfigurationError(f"covariate {name!r} has wrong length")
        out[name] = arr
    return out


@dataclass(frozen=True, eq=False)
class TrialData:
    """Time-fixed trial data: treatment ``a``, outcome ``y``, optional exposure ``e``.

    ``e`` uses the codes 0, 1, 2 and 3 (= exposure to both variants) and is
    ``None`` when exposure was not measured.
    """

    a: np.ndarray
    y: np.ndarray
    e: np.ndarray | None = None
    covariates: dict = field(default_factory=dict)
    weight: np.ndarray | None = None
    line: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.a)
        object.__setattr__(self, "a", _as_int_array(self.a))
        object.__setattr__(self, "y", _as_int_array(self.y))
        if self.e is not None:
            object.__setattr__(self, "e", _as_int_array(self.e))
        object.__setattr__(self, "covariates", _covariate_arrays(self.covariates, n))
        w = np.ones(n, dtype=np.int64) if self.weight is None else _as_int_array(self.weight, np.int64)
        object.__setattr__(self, "weight", w)
        if len(self.y) != n or len(w) != n or (self.e is not None and len(self.e) != n):
            raise ConfigurationError("column lengths differ")

    def __len__(self):
        return len(self.a)

    @property
    def n_subjects(self) -> int:
        return int(self.weight.sum())

    @property
    def has_exposure(self) -> bool:
        return self.e is not None

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord]) -> "TrialData":
        records = list(records)
        if not records:
            raise ConfigurationError("no records")
        has_e = records[0].e is not None
        names = sorted(records[0].l)
        e = None
        if has_e:
            try:
                e = [EXPOSURE_CODES[str(r.e)] for r in records]
            except KeyError as exc:
                raise DomainError(f"exposure value {exc.args[0]!r} not in {{0,1,2,B}}") from None
        lines = [r.line for r in records]
        return cls(
            a=[r.a for r in records],
            y=[r.y for r in records],
            e=e,
            covariates={k: [r.l[k] for r in records] for k in names},
            line=None if any(x is None for x in lines) else np.asarray(lines),
        )

    def records(self):
        """Yield one :class:`SubjectRecord` per row (weights are not expanded)."""
        names = list(self.covariates)
        for i in range(len(self)):
            yield SubjectRecord(
                a=int(self.a[i]),
                y=int(self.y[i]),
                e=None if self.e is None else EXPOSURE_LABELS[self.e[i]],
                l={k: str(self.covariates[k][i]) for k in names},
                line=None if self.line is None else int(self.line[i]),
            )

    def take(self, index) -> "TrialData":
        return TrialData(
            a=self.a[index],
            y=self.y[index],
            e=None if self.e is None else self.e[index],
            covariates={k: v[index] for k, v in self.covariates.items()},
            weight=self.weight[index],
            line=None if self.line is None else self.line[index],
        )

    def with_weight(self, weight) -> "TrialData":
        return TrialData(self.a, self.y, self.e, self.covariates, weight, self.line)

    def collapse(self) -> "TrialData":
        """Merge identical rows, summing their weights."""
        return self.take(slice(None)) if len(self) == 0 else _collapse(self, ["a", "y", "e"])


@dataclass(frozen=True, eq=False)
class EventData:
    """First-event time-to-event data on a discrete grid ``1..horizon``.

    ``event`` is 0 for censoring (drop-out or end of follow-up), 1 or 2 for an
    infection with that variant at interval ``time``.
    """

    a: np.ndarray
    time: np.ndarray
    event: np.ndarray
    covariates: dict = field(default_factory=dict)
    weight: np.ndarray | None = None
    line: np.ndarray | None = None
    horizon: int | None = None

    def __post_init__(self):
        n = len(self.a)
        object.__setattr__(self, "a", _as_int_array(self.a))
        object.__setattr__(self, "time", _as_int_array(self.time, np.int32))
        object.__setattr__(self, "event", _as_int_array(self.event))
        object.__setattr__(self, "covariates", _covariate_arrays(self.covariates, n))
        w = np.ones(n, dtype=np.int64) if self.weight is None else _as_int_array(self.weight, np.int64)
        object.__setattr__(self, "weight", w)
        if len(self.time) != n or len(self.event) != n or len(w) != n:
            raise ConfigurationError("column lengths differ")
        if n and self.time.min() < 1:
            raise DomainError("event times must be >= 1")
        observed = int(self.time.max()) if n else 0
        if self.horizon is None:
            object.__setattr__(self, "horizon", observed)
        elif self.horizon < observed:
            raise DomainError(f"event time {observed} beyond declared horizon {self.horizon}")

    def __len__(self):
        return len(self.a)

    @property
    def n_subjects(self) -> int:
        return int(self.weight.sum())

    @classmethod
    def from_records(cls, records: Iterable[EventRecord], horizon=None) -> "EventData":
        records = list(records)
        if not records:
            raise ConfigurationError("no records")
        names = sorted(records[0].l)
        lines = [r.line for r in records]
        return cls(
            a=[r.a for r in records],
            time=[r.event_time for r in records],
            event=[r.event_type for r in records],
            covariates={k: [r.l[k] for r in records] for k in names},
            line=None if any(x is None for x in lines) else np.asarray(lines),
            horizon=horizon,
        )

    def records(self):
        names = list(self.covariates)
        for i in range(len(self)):
            yield EventRecord(
                a=int(self.a[i]),
                event_time=int(self.time[i]),
                event_type=int(self.event[i]),
                l={k: str(self.covariates[k][i]) for k in names},
                line=None if self.line is None else int(self.line[i]),
            )

    def take(self, index) -> "EventData":
        return EventData(
            a=self.a[index],
            time=self.time[index],
            event=self.event[index],
            covariates={k: v[index] for k, v in self.covariates.items()},
            weight=self.weight[index],
            line=None if self.line is None else self.line[index],
            horizon=self.horizon,
        )

    def with_weight(self, weight) -> "EventData":
        return EventData(self.a, self.time, self.event, self.covariates, weight, self.line, self.horizon)

    def collapse(self) -> "EventData":
        return _collapse(self, ["a", "time", "event"])


def _collapse(data, columns):
    keys = [getattr(data, c) for c in columns if getattr(data, c) is not None]
    keys += [np.unique(v, return_inverse=True)[1] for v in data.covariates.values()]
    stacked = np.stack([np.asarray(k, dtype=np.int64) for k in keys], axis=1)
    _, first, inverse = np.unique(stacked, axis=0, return_index=True, return_inverse=True)
    weight = np.bincount(inverse.ravel(), weights=data.weight, minlength=len(first)).astype(np.int64)
    out = data.take(first)
    out = out.with_weight(weight)
    return out


def collapse_events(events: EventData) -> TrialData:
    """Time-fixed view of first-event data: ``y`` is the observed event type (0 if censored)."""
    return TrialData(a=events.a, y=events.event, covariates=events.covariates, weight=events.weight)


# --- CSV ingestion ---------------------------------------------------------


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            rows.append((lineno, [c.strip() for c in row]))
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", line=1)
    return header, rows


def _parse_int(text, name, lineno, allowed=None):
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"column {name!r}: {text!r} is not an integer", line=lineno) from None
    if allowed is not None and value not in allowed:
        raise DomainError(f"line {lineno}: column {name!r} value {value} outside {sorted(allowed)}")
    return value


def ingest_time_fixed(path, config: MarkDichotomizationConfig | None = None) -> TrialData:
    """Read a time-fixed CSV (``a,y[,e][,d][,count][,covariates...]``).

    With a dichotomization ``config`` the outcome is derived from the
    ``infected`` column (or from ``y != 0`` when only ``y`` is present) and
    the distance column.
    """
    header, rows = _read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    if "a" not in col:
        raise ParseError("missing required column 'a'", line=1)
    dcol = config.distance_column if config is not None else "d"
    if config is None and "y" not in col:
        raise ParseError("missing required column 'y'", line=1)
    if config is not None and "y" not in col and "infected" not in col:
        raise ParseError("missing column 'infected' (or 'y') for dichotomization", line=1)
    if config is not None and dcol not in col:
        raise ParseError(f"missing distance column {dcol!r}", line=1)
    reserved = RESERVED_TIME_FIXED | {dcol}
    cov_names = [h for h in header if h not in reserved]

    n = len(rows)
    a = np.empty(n, dtype=np.int8)
    y = np.empty(n, dtype=np.int8)
    infected = np.zeros(n, dtype=bool)
    dist = np.full(n, np.nan)
    e = np.empty(n, dtype=np.int8) if "e" in col else None
    weight = np.ones(n, dtype=np.int64)
    lines = np.empty(n, dtype=np.int64)
    covs = {k: [] for k in cov_names}
    for i, (lineno, row) in enumerate(rows):
        lines[i] = lineno
        a[i] = _parse_int(row[col["a"]], "a", lineno, {0, 1})
        if "y" in col:
            y[i] = _parse_int(row[col["y"]], "y", lineno, {0, 1, 2})
            infected[i] = y[i] != 0
        if config is not None and "infected" in col:
            infected[i] = bool(_parse_int(row[col["infected"]], "infected", lineno, {0, 1}))
        if dcol in col and row[col[dcol]] != "":
            try:
                dist[i] = float(row[col[dcol]])
            except ValueError:
                raise ParseError(f"column {dcol!r}: {row[col[dcol]]!r} is not a number", line=lineno) from None
        if e is not None:
            code = EXPOSURE_CODES.get(row[col["e"]])
            if code is None:
                raise DomainError(f"line {lineno}: exposure {row[col['e']]!r} not in {{0,1,2,B}}")
            e[i] = code
        if "count" in col:
            weight[i] = _parse_int(row[col["count"]], "count", lineno)
            if weight[i] < 0:
                raise DomainError(f"line {lineno}: negative count")
        for k in cov_names:
            covs[k].append(row[col[k]])
    if config is not None:
        bad = infected & np.isnan(dist)
        if bad.any():
            raise DomainError(
                f"line {lines[bad][0]}: infected row without distance value in column {dcol!r}"
            )
        y = config.apply(infected, dist)
    return TrialData(a=a, y=y, e=e, covariates=covs, weight=weight, line=lines)


def ingest_time_to_event(path, horizon: int | None = None) -> EventData:
    """Read a time-to-event CSV (``a,time,event[,count][,covariates...]``)."""
    header, rows = _read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    for required in ("a", "time", "event"):
        if required not in col:
            raise ParseError(f"missing required column {required!r}", line=1)
    cov_names = [h for h in header if h not in RESERVED_TTE]
    n = len(rows)
    a = np.empty(n, dtype=np.int8)
    t = np.empty(n, dtype=np.int32)
    ev = np.empty(n, dtype=np.int8)
    weight = np.ones(n, dtype=np.int64)
    lines = np.empty(n, dtype=np.int64)
    covs = {k: [] for k in cov_names}
    for i, (lineno, row) in enumerate(rows):
        lines[i] = lineno
        a[i] = _parse_int(row[col["a"]], "a", lineno, {0, 1})
        t[i] = _parse_int(row[col["time"]], "time", lineno)
        if t[i] < 1:
            raise DomainError(f"line {lineno}: event time must be >= 1")
        ev[i] = _parse_int(row[col["event"]], "event", lineno, {0, 1, 2})
        if "count" in col:
            weight[i] = _parse_int(row[col["count"]], "count", lineno)
        for k in cov_names:
            covs[k].append(row[col[k]])
    return EventData(a=a, time=t, event=ev, covariates=covs, weight=weight, line=lines, horizon=horizon)


def write_time_fixed(data: TrialData, path, with_counts: bool | None = None) -> None:
    """Write ``data`` in the time-fixed CSV layout.

    A ``count`` column is emitted when any weight differs from 1 (or when
    ``with_counts`` forces it).
    """
    if with_counts is None:
        with_counts = bool(np.any(data.weight != 1))
    header = ["a", "y"] + (["e"] if data.e is not None else []) + list(data.covariates)
    header += ["count"] if with_counts else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            row = [int(data.a[i]), int(data.y[i])]
            if data.e is not None:
                row.append(EXPOSURE_LABELS[data.e[i]])
            row += [data.covariates[k][i] for k in data.covariates]
            if with_counts:
                row.append(int(data.weight[i]))
            w.writerow(row)


def write_time_to_event(data: EventData, path, with_counts: bool | None = None) -> None:
    if with_counts is None:
        with_counts = bool(np.any(data.weight != 1))
    header = ["a", "time", "event"] + list(data.covariates) + (["count"] if with_counts else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            row = [int(data.a[i]), int(data.time[i]), int(data.event[i])]
            row += [data.covariates[k][i] for k in data.covariates]
            if with_counts:
                row.append(int(data.weight[i]))
            w.writerow(row)


# --- validation --------------------------------------------------------------

RULES = {
    "A1": "unique exposure: exposure to both variants has probability zero",
    "A4": "exposure necessity: infection requires exposure",
    "A5": "no cross-infectivity: exposure to one variant cannot cause infection by the other",
}


@dataclass(frozen=True)
class Violation:
    rule: str
    line: int | None
    detail: str


@dataclass
class ValidationReport:
    violations: list
    counts: dict
    checked: tuple

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "violations": [{"rule": v.rule, "line": v.line, "detail": v.detail} for v in self.violations],
            "counts": dict(self.counts),
        }


def validate(data: TrialData, assumptions: Sequence[str] = ("A1", "A4", "A5")) -> ValidationReport:
    """List every row that contradicts one of the checked exposure assumptions.

    Violations are reported, never raised.  Without a measured exposure
    column all checks pass vacuously.
    """
    if len(data) == 0:
        raise ConfigurationError("validate needs at least one record")
    unknown = set(assumptions) - set(RULES)
    if unknown:
        raise ConfigurationError(f"unknown assumption ids: {sorted(unknown)}")
    counts = {rule: 0 for rule in assumptions}
    violations = []
    if data.e is None:
        return ValidationReport(violations, counts, tuple(assumptions))
    e, y = data.e, data.y
    masks = {
        "A1": e == BOTH,
        "A4": (y != 0) & (e == 0),
        "A5": (y != 0) & (e != 0) & (e != BOTH) & (e != y),
    }
    for rule in assumptions:
        idx = np.flatnonzero(masks[rule])
        counts[rule] = int(data.weight[idx].sum())
        for i in idx:
            line = None if data.line is None else int(data.line[i])
            detail = f"a={data.a[i]}, e={EXPOSURE_LABELS[e[i]]}, y={y[i]}"
            violations.append(Violation(rule, line, detail))
    violations.sort(key=lambda v: (v.line if v.line is not None else -1, v.rule))
    return ValidationReport(violations, counts, tuple(assumptions))


# --- tabulation --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountTable:
    """Cross-tabulated counts ``n[a, y]``, the sufficient statistic for time-fixed estimands.

    ``n_exposure[a, e, y]`` (e = 0, 1, 2, B) is present when exposure was
    measured.  When the table is stratified, ``strata`` maps each level of
    ``stratify_by`` to its own (unstratified) sub-table.
    """

    n: np.ndarray
    n_exposure: np.ndarray | None = None
    stratify_by: str | None = None
    strata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        if n.shape != (2, 3) or (n < 0).any():
            raise ConfigurationError("counts must be a nonnegative 2x3 array n[a, y]")
        object.__setattr__(self, "n", n)
        if self.n_exposure is not None:
            ne = np.asarray(self.n_exposure, dtype=np.int64)
            if ne.shape != (2, 4, 3) or (ne < 0).any():
                raise ConfigurationError("exposure counts must be a nonnegative 2x4x3 array")
            if not np.array_equal(ne.sum(axis=1), n):
                raise ConfigurationError("exposure-sliced counts do not sum to the outcome counts")
            object.__setattr__(self, "n_exposure", ne)

    @classmethod
    def from_counts(cls, treated, control, **kw) -> "CountTable":
        """Build a table from ``(n0, n1, n2)`` outcome counts per arm."""
        return cls(n=np.array([control, treated]), **kw)

    @property
    def has_exposure(self) -> bool:
        return self.n_exposure is not None

    @property
    def arm_totals(self) -> np.ndarray:
        return self.n.sum(axis=1)

    def unique_exposure(self) -> np.ndarray:
        """Outcome counts with rows exposed to both variants removed."""
        if self.n_exposure is None:
            return self.n
        return self.n - self.n_exposure[:, BOTH, :]

    def stratum(self, level) -> "CountTable":
        if self.stratify_by is None:
            raise ConfigurationError("table is not stratified")
        try:
            return self.strata[str(level)]
        except KeyError:
            raise ConfigurationError(
                f"{self.stratify_by!r} has no level {level!r}; levels: {sorted(self.strata)}"
            ) from None

    def to_dict(self) -> dict:
        out = {"n": self.n.tolist()}
        if self.n_exposure is not None:
            out["n_exposure"] = self.n_exposure.tolist()
        if self.stratify_by is not None:
            out["stratify_by"] = self.stratify_by
            out["strata"] = {k: v.to_dict() for k, v in self.strata.items()}
        return out


def _count(data: TrialData) -> CountTable:
    w = data.weight
    n = np.bincount(data.a.astype(np.int64) * 3 + data.y, weights=w, minlength=6)
    ne = None
    if data.e is not None:
        idx = data.a.astype(np.int64) * 12 + data.e.astype(np.int64) * 3 + data.y
        ne = np.bincount(idx, weights=w, minlength=24).reshape(2, 4, 3)
    return CountTable(n=n.reshape(2, 3).round().astype(np.int64),
                      n_exposure=None if ne is None else ne.round().astype(np.int64))


def tabulate(data: TrialData, stratify_by: str | None = None, levels: Sequence[str] | None = None) -> CountTable:
    """Count subjects by arm and outcome (and exposure, and stratum when requested)."""
    if data.a.size and (data.a.min() < 0 or data.a.max() > 1):
        raise DomainError("treatment must be 0 or 1")
    if data.y.size and (data.y.min() < 0 or data.y.max() > 2):
        raise DomainError("outcome must be in {0, 1, 2}")
    table = _count(data)
    if stratify_by is None:
        return table
    if stratify_by not in data.covariates:
        raise ConfigurationError(
            f"unknown covariate {stratify_by!r}; available: {sorted(data.covariates)}"
        )
    values = data.covariates[stratify_by]
    all_levels = sorted(set(np.unique(values).tolist()) | set(levels or ()))
    strata = {lvl: _count(data.take(values == lvl)) for lvl in all_levels}
    return CountTable(n=table.n, n_exposure=table.n_exposure, stratify_by=stratify_by, strata=strata)


def expand_counts(table: CountTable) -> TrialData:
    """Weighted rows reproducing ``table`` (stratum column included when stratified)."""
    rows_a, rows_y, rows_e, rows_w, rows_l = [], [], [], [], []
    parts = table.strata.items() if table.stratify_by else [(None, table)]
    for level, sub in parts:
        if sub.n_exposure is not None:
            for (a, e, y), c in np.ndenumerate(sub.n_exposure):
                if c:
                    rows_a.append(a), rows_y.append(y), rows_e.append(e), rows_w.append(c), rows_l.append(level)
        else:
            for (a, y), c in np.ndenumerate(sub.n):
                if c:
                    rows_a.append(a), rows_y.append(y), rows_w.append(c), rows_l.append(level)
    covs = {table.stratify_by: rows_l} if table.stratify_by else {}
    return TrialData(
        a=rows_a, y=rows_y, e=rows_e if table.n_exposure is not None else None,
        covariates=covs, weight=rows_w,
    )
