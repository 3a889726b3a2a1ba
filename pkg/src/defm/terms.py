"""Compiled sufficient-statistic terms.

:func:`compile_model` turns a parsed :class:`~defm.dsl.ModelSpec` into a
:class:`TermSet` bound to a column layout.  Outcome vectors passed to a
TermSet are in model order (``TermSet.outcome_names``); covariate vectors
follow ``TermSet.covariate_names``, which is the dataset's covariate order
when compiled against a dataset.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import ModelSpec, PatternPair, format_term_expr
from .errors import UnknownCovariate, UnknownOutcome

__all__ = ["CompiledPattern", "TermSet", "compile_model"]


@dataclass(frozen=True, eq=False)
class CompiledPattern:
    prev_idx: np.ndarray
    prev_val: np.ndarray
    cur_idx: np.ndarray
    cur_val: np.ndarray

    @classmethod
    def from_pair(cls, pair: PatternPair, index: dict[str, int]) -> "CompiledPattern":
        def split(c):
            return (
                np.array([index[n] for n, _ in c], dtype=np.intp),
                np.array([v for _, v in c], dtype=np.int8),
            )

        pi, pv = split(pair.prev)
        ci, cv = split(pair.cur)
        return cls(pi, pv, ci, cv)

    def matches(self, prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
        """Boolean match over broadcast rows of ``prev`` and ``cur`` (..., K)."""
        m = np.ones(np.broadcast_shapes(prev.shape[:-1], cur.shape[:-1]), dtype=bool)
        for i, v in zip(self.prev_idx, self.prev_val):
            m &= prev[..., i] == v
        for i, v in zip(self.cur_idx, self.cur_val):
            m &= cur[..., i] == v
        return m


class TermSet:
    """Ordered list of d statistics plus the model's forbid rules."""

    def __init__(self, spec: ModelSpec, covariate_names=None, source_outcomes=None):
        self.spec = spec
        self.outcome_names = tuple(spec.outcomes)
        self.covariate_names = tuple(covariate_names) if covariate_names is not None else tuple(spec.covariates)
        index = {n: i for i, n in enumerate(self.outcome_names)}
        cov_index = {n: i for i, n in enumerate(self.covariate_names)}

        self.names = tuple(t.name for t in spec.terms)
        self.kinds = tuple(t.kind for t in spec.terms)
        self.patterns = []
        self.covariate_cols = []
        for t in spec.terms:
            for name in sorted(t.outcomes):
                if name not in index:
                    raise UnknownOutcome(name, t.line)
            if t.covariate is not None and t.covariate not in cov_index:
                raise UnknownCovariate(t.covariate, t.line)
            self.patterns.append(tuple(CompiledPattern.from_pair(p, index) for p in t.patterns))
            self.covariate_cols.append(None if t.covariate is None else cov_index[t.covariate])
        self.forbids = tuple(CompiledPattern.from_pair(p, index) for p in spec.forbids)
        # covariate columns that can change a statistic, in column order
        self.used_covariate_cols = np.array(
            sorted({c for c in self.covariate_cols if c is not None}), dtype=np.intp
        )

        if source_outcomes is None:
            source_outcomes = self.outcome_names
        source_outcomes = tuple(source_outcomes)
        for name in self.outcome_names:
            if name not in source_outcomes:
                raise UnknownOutcome(name)
        self.source_outcomes = source_outcomes
        self.source_outcome_index = np.array([source_outcomes.index(n) for n in self.outcome_names], dtype=np.intp)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def K(self) -> int:
        return len(self.outcome_names)

    @property
    def C(self) -> int:
        return len(self.covariate_names)

    def describe(self) -> list[str]:
        return [format_term_expr(t) for t in self.spec.terms]

    def evaluate(self, prev, cur, x=None) -> np.ndarray:
        """Statistics for broadcast rows of (prev, cur, x); returns shape (..., d)."""
        prev = np.asarray(prev)
        cur = np.asarray(cur)
        shape = np.broadcast_shapes(prev.shape[:-1], cur.shape[:-1])
        if x is not None:
            x = np.asarray(x, dtype=float)
            shape = np.broadcast_shapes(shape, x.shape[:-1])
        out = np.zeros(shape + (self.d,))
        for j, (pats, col) in enumerate(zip(self.patterns, self.covariate_cols)):
            acc = np.zeros(shape)
            for p in pats:
                acc += p.matches(prev, cur)
            if col is not None:
                if x is None:
                    raise ValueError(f"term {self.names[j]!r} needs covariate {self.covariate_names[col]!r}")
                acc = acc * x[..., col]
            out[..., j] = acc
        return out

    def allowed(self, prev, cur) -> np.ndarray:
        """True where no forbid rule matches the (prev, cur) pair."""
        prev = np.asarray(prev)
        cur = np.asarray(cur)
        ok = np.ones(np.broadcast_shapes(prev.shape[:-1], cur.shape[:-1]), dtype=bool)
        for f in self.forbids:
            ok &= ~f.matches(prev, cur)
        return ok

    def project(self, transitions):
        """Model-layout (prev, cur, x) arrays of a :class:`~defm.data.Transitions`."""
        idx = self.source_outcome_index
        names = getattr(transitions, "outcome_names", None)
        if names is not None and tuple(names) != self.source_outcomes:
            idx = np.array([list(names).index(n) for n in self.outcome_names], dtype=np.intp)
        x = transitions.x
        cnames = getattr(transitions, "covariate_names", None)
        if cnames is not None and tuple(cnames) != self.covariate_names:
            missing = [c for c in self.covariate_names if c not in cnames]
            if missing:
                raise UnknownCovariate(missing[0])
            x = x[:, [list(cnames).index(c) for c in self.covariate_names]]
        return transitions.prev[:, idx], transitions.cur[:, idx], x

    def __repr__(self):
        return f"TermSet(d={self.d}, K={self.K}, terms={list(self.names)})"


def compile_model(spec: ModelSpec, data=None, covariate_names=None) -> TermSet:
    """Bind a spec to a dataset layout (or to its own outcome/covariate order).

    Raises UnknownOutcome when the dataset lacks a model outcome and
    UnknownCovariate when a referenced covariate cannot be resolved.
    """
    if data is not None:
        for name in spec.outcomes:
            if name not in data.outcome_names:
                raise UnknownOutcome(name)
        return TermSet(spec, data.covariate_names, data.outcome_names)
    return TermSet(spec, covariate_names)

