"""Sufficient statistics, change statistics, and the motif census."""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import UnknownOutcome
from .terms import TermSet

__all__ = ["suff_stats", "change_stats", "MotifCensus", "motif_census"]


def suff_stats(terms: TermSet, prev, cur, x=None) -> np.ndarray:
    """Statistic vector s(cur, prev, x) of length d, in term order.

    Entry j is the number of term-j patterns matched by (prev, cur), scaled
    by the term's covariate when it has one.
    """
    return terms.evaluate(np.asarray(prev), np.asarray(cur), None if x is None else np.asarray(x, float))


def change_stats(terms: TermSet, prev, cur, k: int, x=None) -> np.ndarray:
    """s(cur with cell k = 1) - s(cur with cell k = 0), other cells held fixed.

    Works on single rows or stacked (n, K) arrays.
    """
    cur = np.array(cur, dtype=np.int8, copy=True)
    if not 0 <= k < cur.shape[-1]:
        raise IndexError(f"cell index {k} out of range for K={cur.shape[-1]}")
    hi = cur.copy()
    hi[..., k] = 1
    lo = cur
    lo[..., k] = 0
    return suff_stats(terms, prev, hi, x) - suff_stats(terms, prev, lo, x)


def _encode(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


@dataclass(frozen=True)
class MotifCensus:
    """Counts of observed (prev, cur) patterns over a subset of outcomes.

    ``counts`` maps ``(prev_bits, cur_bits)`` tuples to positive counts.
    """

    outcome_subset: tuple[str, ...]
    counts: dict

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def rows(self) -> list[tuple[tuple[int, ...], tuple[int, ...], int]]:
        """Observed patterns, by descending count then by the prev||cur code."""
        items = [(p, c, n) for (p, c), n in self.counts.items() if n > 0]
        items.sort(key=lambda r: (-r[2], _encode(r[0] + r[1])))
        return items

    def full(self) -> list[tuple[tuple[int, ...], tuple[int, ...], int]]:
        """All 2**(2m) patterns including zero counts, in code order."""
        m = len(self.outcome_subset)
        out = []
        for bits in itertools.product((0, 1), repeat=2 * m):
            p, c = bits[:m], bits[m:]
            out.append((p, c, self.counts.get((p, c), 0)))
        return out

    def marginal(self, subset) -> "MotifCensus":
        """Census of a sub-subset obtained by summing out the other outcomes."""
        pos = []
        for name in subset:
            if name not in self.outcome_subset:
                raise UnknownOutcome(name)
            pos.append(self.outcome_subset.index(name))
        counts: dict = {}
        for (p, c), n in self.counts.items():
            key = (tuple(p[i] for i in pos), tuple(c[i] for i in pos))
            counts[key] = counts.get(key, 0) + n
        return MotifCensus(tuple(subset), counts)

    def header(self) -> list[str]:
        names = self.outcome_subset
        return [f"prev_{n}" for n in names] + [f"cur_{n}" for n in names] + ["count"]

    def to_csv(self, path=None, include_zero=False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        rows = self.full() if include_zero else self.rows()
        for p, c, n in rows:
            w.writerow([*p, *c, n])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_text(self) -> str:
        m = len(self.outcome_subset)
        names = list(self.outcome_subset)
        width = max([5] + [len(str(n)) for _, _, n in self.rows()])
        cells = [max(len(n), 1) for n in names]
        lines = [
            " " * width + " | " + "t-1".center(sum(cells) + m - 1) + " | " + "t".center(sum(cells) + m - 1),
            "count".rjust(width) + " | " + " ".join(names) + " | " + " ".join(names),
        ]
        lines.append("-" * len(lines[1]))
        for p, c, n in self.rows():
            mark = "*" if p == c else " "
            pv = " ".join(str(b).center(w) for b, w in zip(p, cells))
            cv = " ".join(str(b).center(w) for b, w in zip(c, cells))
            lines.append(f"{(mark + str(n)).rjust(width)} | {pv} | {cv}")
        lines.append("(*) no change between t-1 and t")
        return "\n".join(lines) + "\n"


def motif_census(transitions, subset, outcome_names=None) -> MotifCensus:
    """Count (prev, cur) patterns of ``transitions`` restricted to ``subset``.

    ``outcome_names`` defaults to ``transitions.outcome_names``.
    """
    subset = tuple(subset)
    if not subset:
        raise ValueError("census subset must name at least one outcome")
    names = outcome_names if outcome_names is not None else transitions.outcome_names
    if names is None:
        raise ValueError("outcome names are required to resolve the subset")
    names = list(names)
    for n in subset:
        if n not in names:
            raise UnknownOutcome(n)
    idx = [names.index(n) for n in subset]
    prev = np.asarray(transitions.prev)[:, idx]
    cur = np.asarray(transitions.cur)[:, idx]
    m = len(subset)
    weights = 1 << np.arange(2 * m - 1, -1, -1)
    codes = np.concatenate([prev, cur], axis=1).astype(np.int64) @ weights
    uniq, n = np.unique(codes, return_counts=True)
    counts = {}
    for code, cnt in zip(uniq.tolist(), n.tolist()):
        bits = tuple((code >> s) & 1 for s in range(2 * m - 1, -1, -1))
        counts[(bits[:m], bits[m:])] = cnt
    return MotifCensus(subset, counts)
