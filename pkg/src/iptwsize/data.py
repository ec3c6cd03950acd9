"""Pilot and simulated datasets: representation, CSV ingestion, resampling."""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from iptwsize.errors import DataError


class OutcomeKind(str, enum.Enum):
    BINARY = "binary"
    COUNT = "count"
    CONTINUOUS = "continuous"


class Observation(NamedTuple):
    x: tuple[float, ...]
    t: int
    y: float


def _check_outcome(y: np.ndarray, kind: OutcomeKind) -> None:
    if kind is OutcomeKind.BINARY:
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("outcome out of range for kind 'binary'")
    elif kind is OutcomeKind.COUNT:
        if not np.all((y >= 0.0) & (y == np.floor(y))):
            raise DataError("outcome out of range for kind 'count'")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` subjects with covariates ``x`` (n, p), treatment ``t`` and outcome ``y``.

    Arrays are copied on construction and made read-only, so a dataset can be
    shared freely between workers.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    kind: OutcomeKind = OutcomeKind.CONTINUOUS
    _validated: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        kind = OutcomeKind(self.kind)
        x = _frozen(self.x)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        t = _frozen(np.ravel(self.t))
        y = _frozen(np.ravel(self.y))
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        if not self._validated:
            return
        n = t.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one observation")
        if x.ndim != 2 or x.shape[0] != n or y.shape[0] != n:
            raise DataError("x, t and y must have matching numbers of rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DataError("all entries must be finite")
        if not np.all((t == 0.0) | (t == 1.0)):
            raise DataError("invalid treatment value (must be 0 or 1)")
        _check_outcome(y, kind)

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(tuple(float(v) for v in xi), int(ti), float(yi))
            for xi, ti, yi in zip(self.x, self.t, self.y)
        ]

    @classmethod
    def from_observations(cls, observations, kind) -> Dataset:
        observations = list(observations)
        if not observations:
            raise DataError("dataset must contain at least one observation")
        p = len(observations[0].x)
        if any(len(o.x) != p for o in observations):
            raise DataError("all observations must share covariate dimension")
        x = np.array([o.x for o in observations], dtype=float).reshape(len(observations), p)
        t = np.array([o.t for o in observations], dtype=float)
        y = np.array([o.y for o in observations], dtype=float)
        return cls(x, t, y, kind)

    def take(self, index: np.ndarray) -> Dataset:
        """Rows at ``index`` (a subset or resample of this dataset)."""
        return Dataset(self.x[index], self.t[index], self.y[index], self.kind, _validated=False)

    def equals(self, other: Dataset) -> bool:
        return (
            self.kind is other.kind
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True)
class Diagnostics:
    n: int
    n_treated: int
    n_control: int
    events_treated: float | None
    events_control: float | None
    flags: tuple[str, ...]

    @property
    def counts(self) -> tuple[int, int]:
        return (self.n_treated, self.n_control)

    @property
    def ok(self) -> bool:
        return not self.flags

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "events_treated": self.events_treated,
            "events_control": self.events_control,
            "flags": list(self.flags),
        }


def validate(d: Dataset) -> Diagnostics:
    """Per-arm counts and event totals, with flags for degenerate arms."""
    treated = d.t == 1.0
    n1 = int(treated.sum())
    n0 = d.n - n1
    flags = []
    if n0 == 0:
        flags.append("control arm empty")
    if n1 == 0:
        flags.append("treated arm empty")
    ev1 = ev0 = None
    if d.kind is not OutcomeKind.CONTINUOUS:
        ev1 = float(d.y[treated].sum())
        ev0 = float(d.y[~treated].sum())
        if n1 > 0 and ev1 == 0:
            flags.append("no events in arm 1")
        if n0 > 0 and ev0 == 0:
            flags.append("no events in arm 0")
    return Diagnostics(d.n, n1, n0, ev1, ev0, tuple(flags))


def resample_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n, size=n)


def resample(d: Dataset, rng: np.random.Generator) -> Dataset:
    """Nonparametric bootstrap resample: ``n`` rows drawn uniformly with replacement."""
    return d.take(resample_indices(d.n, rng))


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} at row {row}, column {column!r}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {cell!r} at row {row}, column {column!r}")
    return value


def load_csv(path: str | os.PathLike, kind: OutcomeKind | str) -> Dataset:
    """Read a pilot dataset with header ``y,t,x1,...,xp``.

    Columns may appear in any order; covariates must be named ``x1..xp``
    without gaps. Row order is preserved.
    """
    kind = OutcomeKind(kind)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    position = {name: j for j, name in enumerate(header)}
    for required in ("y", "t"):
        if required not in position:
            raise DataError(f"missing column {required!r}")
    xnames = [h for h in header if h.startswith("x")]
    p = len(xnames)
    for k in range(1, p + 1):
        if f"x{k}" not in position:
            raise DataError(f"missing column 'x{k}'")
    if not rows:
        raise DataError(f"{path}: no data rows")

    x = np.empty((len(rows), p))
    t = np.empty(len(rows))
    y = np.empty(len(rows))
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} cells, expected {len(header)}")
        t[i - 2] = _parse_float(row[position["t"]], i, "t")
        y[i - 2] = _parse_float(row[position["y"]], i, "y")
        for k in range(p):
            name = f"x{k + 1}"
            x[i - 2, k] = _parse_float(row[position[name]], i, name)
    return Dataset(x, t, y, kind)


def write_csv(d: Dataset, path: str | os.PathLike) -> None:
    """Write ``d`` so that :func:`load_csv` reproduces it exactly."""
    integral_y = d.kind is not OutcomeKind.CONTINUOUS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y", "t"] + [f"x{k + 1}" for k in range(d.p)])
        for xi, ti, yi in zip(d.x, d.t, d.y):
            y_cell = str(int(yi)) if integral_y else repr(float(yi))
            writer.writerow([y_cell, str(int(ti))] + [repr(float(v)) for v in xi])
