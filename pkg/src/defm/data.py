"""Panel data containers, CSV ingestion, and transition records.

A panel holds N individuals observed over a varying number of waves; each
wave carries a binary vector of K outcomes and a real vector of C
covariates.  Downstream code consumes :class:`Transitions`, a stacked set
of (previous wave, current wave) pairs.
"""
from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DuplicateWave, MissingColumn, NonBinaryOutcome, UnparseableValue

logger = logging.getLogger(__name__)

__all__ = [
    "IndividualSeries",
    "PanelDataset",
    "TransitionRecord",
    "Transitions",
    "load_panel",
    "write_panel",
    "build_transitions",
]


def _as2d(a, n, width):
    a = np.asarray(a, dtype=float)
    if n == 0:
        return np.zeros((0, width or 0))
    return a.reshape(n, -1)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IndividualSeries:
    """Waves of one individual, sorted by time.

    ``y`` is (T, K) with entries in {0, 1}; ``x`` is (T, C).
    """

    id: str
    times: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times, np.int64)
        y = _frozen(self.y, np.int8).reshape(len(times), -1)
        x = _frozen(self.x, np.float64).reshape(len(times), -1)
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            dup = times[:-1][np.diff(times) == 0]
            if len(dup):
                raise DuplicateWave(self.id, int(dup[0]))
            raise ValueError(f"wave times of {self.id!r} are not increasing")
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError(f"outcomes of {self.id!r} must be 0/1")
        if not np.isfinite(x).all():
            raise ValueError(f"covariates of {self.id!r} must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n_waves(self) -> int:
        return len(self.times)

    @property
    def waves(self) -> list[tuple[int, tuple[int, ...], tuple[float, ...]]]:
        return [
            (int(t), tuple(int(v) for v in yy), tuple(float(v) for v in xx))
            for t, yy, xx in zip(self.times, self.y, self.x)
        ]


@dataclass(frozen=True, eq=False)
class PanelDataset:
    individuals: tuple[IndividualSeries, ...]
    outcome_names: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()
    dropped: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "individuals", tuple(self.individuals))
        object.__setattr__(self, "outcome_names", tuple(self.outcome_names))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if len(self.outcome_names) < 1:
            raise ValueError("a panel needs at least one outcome")
        for names in (self.outcome_names, self.covariate_names):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate column names in {names}")
        k, c = len(self.outcome_names), len(self.covariate_names)
        for ind in self.individuals:
            if ind.y.shape[1] != k or ind.x.shape[1] != c:
                raise ValueError(f"individual {ind.id!r} does not match the panel layout")

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    @property
    def n_rows(self) -> int:
        return sum(ind.n_waves for ind in self.individuals)

    @property
    def K(self) -> int:
        return len(self.outcome_names)

    def wave_counts(self) -> dict[int, int]:
        """Number of observed rows per wave time."""
        counts: dict[int, int] = {}
        for ind in self.individuals:
            for t in ind.times:
                counts[int(t)] = counts.get(int(t), 0) + 1
        return dict(sorted(counts.items()))

    def __iter__(self) -> Iterator[IndividualSeries]:
        return iter(self.individuals)


@dataclass(frozen=True)
class TransitionRecord:
    """One (y[t-1], y[t]) pair; ``time`` is the wave time of ``cur``."""

    individual_id: str
    time: int
    prev: tuple[int, ...]
    cur: tuple[int, ...]
    x: tuple[float, ...]


class Transitions(Sequence):
    """Stacked transition records.

    Behaves as a read-only sequence of :class:`TransitionRecord` while
    exposing the underlying arrays (``prev``, ``cur``, ``x``) for
    vectorised evaluation.
    """

    def __init__(self, ids, times, prev, cur, x, outcome_names=None, covariate_names=None):
        n = len(ids)
        k = len(outcome_names) if outcome_names is not None else None
        c = len(covariate_names) if covariate_names is not None else None
        self.ids = tuple(str(i) for i in ids)
        self.times = _frozen(times, np.int64).reshape(n)
        self.prev = _frozen(_as2d(prev, n, k), np.int8)
        self.cur = _frozen(_as2d(cur, n, self.prev.shape[1]), np.int8)
        self.x = _frozen(_as2d(x, n, c), np.float64)
        self.outcome_names = tuple(outcome_names) if outcome_names is not None else None
        self.covariate_names = tuple(covariate_names) if covariate_names is not None else None

    @classmethod
    def from_records(cls, records, outcome_names=None, covariate_names=None) -> "Transitions":
        if isinstance(records, Transitions):
            return records
        records = list(records)
        return cls(
            [r.individual_id for r in records],
            [r.time for r in records],
            [r.prev for r in records],
            [r.cur for r in records],
            [r.x for r in records],
            outcome_names,
            covariate_names,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = range(len(self))[i]
            return Transitions(
                [self.ids[j] for j in idx],
                self.times[i],
                self.prev[i],
                self.cur[i],
                self.x[i],
                self.outcome_names,
                self.covariate_names,
            )
        return TransitionRecord(
            self.ids[i],
            int(self.times[i]),
            tuple(int(v) for v in self.prev[i]),
            tuple(int(v) for v in self.cur[i]),
            tuple(float(v) for v in self.x[i]),
        )

    def __repr__(self):
        return f"Transitions(n={len(self)}, K={self.prev.shape[1]})"


def build_transitions(data: PanelDataset, strict_gaps: bool = False) -> Transitions:
    """Pair each wave with the previous observed wave of the same individual.

    Adjacent observed waves count as one Markov step even when their times
    skip values.  With ``strict_gaps=True`` only pairs whose times differ by
    exactly one are kept.  Covariates come from the current wave.
    """
    ids, times, prev, cur, x = [], [], [], [], []
    skipped = 0
    for ind in data.individuals:
        if ind.n_waves < 2:
            continue
        keep = np.ones(ind.n_waves - 1, dtype=bool)
        if strict_gaps:
            keep = np.diff(ind.times) == 1
            skipped += int((~keep).sum())
        sel = np.flatnonzero(keep)
        ids.extend([ind.id] * len(sel))
        times.append(ind.times[1:][sel])
        prev.append(ind.y[:-1][sel])
        cur.append(ind.y[1:][sel])
        x.append(ind.x[1:][sel])
    if skipped:
        logger.info("strict gap policy dropped %d non-consecutive wave pairs", skipped)
    k, c = data.K, len(data.covariate_names)
    return Transitions(
        ids,
        np.concatenate(times) if times else np.zeros(0, np.int64),
        np.concatenate(prev) if prev else np.zeros((0, k)),
        np.concatenate(cur) if cur else np.zeros((0, k)),
        np.concatenate(x) if x else np.zeros((0, c)),
        data.outcome_names,
        data.covariate_names,
    )


def load_panel(path, id_col="id", time_col="time", outcome_cols=(), covariate_cols=()) -> PanelDataset:
    """Read a long-format panel from a CSV file.

    One row per (individual, wave).  Rows with an empty outcome or
    covariate cell are dropped and counted in ``PanelDataset.dropped``.
    Raises MissingColumn, NonBinaryOutcome, UnparseableValue, or
    DuplicateWave on malformed input.
    """
    outcome_cols = list(outcome_cols)
    covariate_cols = list(covariate_cols)
    if not outcome_cols:
        raise ValueError("at least one outcome column is required")

    rows: dict[str, list] = {}
    dropped = {"missing_outcome": 0, "missing_covariate": 0}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [id_col, time_col, *outcome_cols, *covariate_cols]:
            if col not in header:
                raise MissingColumn(col, path)
        for row in reader:
            line = reader.line_num
            rid = row[id_col]
            if rid is None or rid == "":
                raise UnparseableValue(line, id_col, rid)
            traw = row[time_col]
            try:
                t = int(traw)
            except (TypeError, ValueError):
                raise UnparseableValue(line, time_col, traw) from None
            y = []
            missing = False
            for col in outcome_cols:
                v = row[col]
                if v is None:
                    raise UnparseableValue(line, col, v)
                v = v.strip()
                if v == "":
                    missing = True
                elif v in ("0", "1"):
                    y.append(int(v))
                else:
                    raise NonBinaryOutcome(line, col, v)
            if missing:
                dropped["missing_outcome"] += 1
                continue
            x = []
            for col in covariate_cols:
                v = row[col]
                if v is None:
                    raise UnparseableValue(line, col, v)
                v = v.strip()
                if v == "":
                    missing = True
                    continue
                try:
                    fv = float(v)
                except ValueError:
                    raise UnparseableValue(line, col, v) from None
                if not math.isfinite(fv):
                    raise UnparseableValue(line, col, v)
                x.append(fv)
            if missing:
                dropped["missing_covariate"] += 1
                continue
            rows.setdefault(rid, []).append((t, y, x))

    for reason, n in dropped.items():
        if n:
            logger.warning("dropped %d rows from %s (%s)", n, path, reason.replace("_", " "))

    individuals = []
    for rid, waves in rows.items():
        waves.sort(key=lambda w: w[0])
        times = [w[0] for w in waves]
        for a, b in zip(times, times[1:]):
            if a == b:
                raise DuplicateWave(rid, a)
        individuals.append(
            IndividualSeries(
                rid,
                times,
                np.array([w[1] for w in waves]).reshape(len(waves), len(outcome_cols)),
                np.array([w[2] for w in waves], dtype=float).reshape(len(waves), len(covariate_cols)),
            )
        )
    return PanelDataset(tuple(individuals), tuple(outcome_cols), tuple(covariate_cols), dropped)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_panel(data: PanelDataset, path, id_col="id", time_col="time") -> None:
    """Write a panel in the same long CSV layout :func:`load_panel` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_col, time_col, *data.outcome_names, *data.covariate_names])
        for ind in data.individuals:
            for t, yy, xx in zip(ind.times, ind.y, ind.x):
                w.writerow([ind.id, int(t), *(int(v) for v in yy), *(_fmt(v) for v in xx)])
