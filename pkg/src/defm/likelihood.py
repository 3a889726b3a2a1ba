"""Exact conditional likelihood by enumeration of the transition support.

Each transition contributes

    log Pr(cur | prev, x) = theta . s(cur, prev, x) - log kappa(theta; prev, x)

where kappa sums exp(theta . s(y', prev, x)) over every candidate state y'
that survives the forbid rules.  The first wave of each individual is
conditioned on.

Numerics
--------
* theta . s is accumulated term by term in declaration order.
* log kappa uses max-subtraction before exponentiating.
* Support reductions always run along a contiguous last axis, so a
  transition's contribution does not depend on which other transitions
  share its cached statistic matrix.
* Totals over transitions use a fixed tree: transitions are split into
  consecutive blocks of ``REDUCE_BLOCK`` leaves, each block is summed by
  pairwise halving (fan-in 2, odd tails padded with +0.0), and the block
  totals are combined the same way.  The result is identical for any
  thread count.
"""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EmptySupport, ObservedStateExcluded, SupportTooLarge
from .terms import TermSet

__all__ = [
    "DEFAULT_MAX_K",
    "REDUCE_BLOCK",
    "SupportSet",
    "StatMatrix",
    "LikelihoodCache",
    "all_states",
    "enumerate_support",
    "stat_matrix",
    "log_normalizing_constant",
    "support_logprobs",
    "transition_logprob",
    "total_loglik",
    "gradient",
    "hessian",
    "tree_sum",
    "resolve_threads",
]

DEFAULT_MAX_K = 20
REDUCE_BLOCK = 1024
# bound on G * d * d * S elements materialised at once when forming covariances
_CHUNK_ELEMS = 1 << 22


def resolve_threads(threads=None) -> int:
    """Worker count: explicit value, else $DEFM_THREADS, else 1."""
    if threads is None:
        env = os.environ.get("DEFM_THREADS", "").strip()
        threads = int(env) if env else 1
    return max(1, int(threads))


def _map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def tree_sum(a) -> np.ndarray:
    """Sum along axis 0 by repeated pairwise halving."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    while a.shape[0] > 1:
        if a.shape[0] % 2:
            a = np.concatenate([a, np.zeros((1,) + a.shape[1:])])
        a = a[0::2] + a[1::2]
    return a[0]


def _blocked_sum(leaves_fn, n, shape, threads) -> np.ndarray:
    if n == 0:
        return np.zeros(shape)
    starts = range(0, n, REDUCE_BLOCK)
    totals = _map(lambda s: tree_sum(leaves_fn(s, min(s + REDUCE_BLOCK, n))), starts, threads)
    return tree_sum(np.stack(totals))


# -- supports ---------------------------------------------------------------

def all_states(K: int) -> np.ndarray:
    """Every vector of {0,1}^K in ascending order; outcome 0 is the high bit."""
    codes = np.arange(1 << K, dtype=np.int64)
    shifts = np.arange(K - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.int8)


def _codes(states: np.ndarray) -> np.ndarray:
    K = states.shape[-1]
    w = (1 << np.arange(K - 1, -1, -1)).astype(np.int64)
    return states.astype(np.int64) @ w


@dataclass(frozen=True, eq=False)
class SupportSet:
    prev: tuple[int, ...]
    states: np.ndarray  # (S, K)

    @property
    def codes(self) -> np.ndarray:
        return _codes(self.states)

    def __len__(self):
        return len(self.states)

    def index_of(self, cur) -> int:
        """Row of ``cur`` in the support, or -1 if excluded."""
        hit = np.flatnonzero(self.codes == int(_codes(np.asarray(cur)[None])[0]))
        return int(hit[0]) if len(hit) else -1


def _forbid_rules(forbids):
    if forbids is None:
        return ()
    if isinstance(forbids, TermSet):
        return forbids.forbids
    return tuple(forbids)


def enumerate_support(K: int, prev, forbids=None, max_k: int = DEFAULT_MAX_K) -> SupportSet:
    """States of {0,1}^K reachable from ``prev`` under the forbid rules.

    ``forbids`` is a TermSet or a sequence of compiled patterns.  States are
    returned in ascending binary order.
    """
    if K > max_k:
        raise SupportTooLarge(K, max_k)
    prev = np.asarray(prev, dtype=np.int8).reshape(K)
    states = all_states(K)
    ok = np.ones(len(states), dtype=bool)
    for f in _forbid_rules(forbids):
        ok &= ~f.matches(prev[None, :], states)
    if not ok.any():
        raise EmptySupport(prev)
    kept = states[ok]
    kept.setflags(write=False)
    return SupportSet(tuple(int(v) for v in prev), kept)


# -- per-support quantities --------------------------------------------------

def _covariate_signature(xu: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(xu, dtype=np.float64).tobytes(), digest_size=8).hexdigest()


@dataclass(frozen=True, eq=False)
class StatMatrix:
    """Statistics of every support state for one (prev, covariates) key."""

    prev: tuple[int, ...]
    states: np.ndarray  # (S, K)
    rows: np.ndarray  # (S, d)
    covariate_signature: str

    def row_of(self, cur) -> int:
        cur = np.asarray(cur, dtype=np.int8)
        hit = np.flatnonzero((self.states == cur).all(axis=1))
        if not len(hit):
            raise ObservedStateExcluded(self.prev, cur)
        return int(hit[0])


def stat_matrix(term_set: TermSet, prev, x=None, max_k: int = DEFAULT_MAX_K) -> StatMatrix:
    support = enumerate_support(term_set.K, prev, term_set, max_k)
    prev_a = np.asarray(support.prev, dtype=np.int8)
    xa = None if x is None else np.asarray(x, dtype=float)
    rows = term_set.evaluate(prev_a[None, :], support.states, None if xa is None else xa[None, :])
    xu = np.zeros(0) if xa is None else xa[term_set.used_covariate_cols]
    return StatMatrix(support.prev, support.states, rows, _covariate_signature(xu))


def _linear(stats_t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # stats_t is (..., d, S); accumulate in declaration order
    eta = stats_t[..., 0, :] * theta[0]
    for j in range(1, len(theta)):
        eta = eta + stats_t[..., j, :] * theta[j]
    return eta


def _moments(theta, stats_t, order):
    """log kappa (G,), mean (G, d), and covariance (G, d, d) per group."""
    eta = _linear(stats_t, theta)
    m = eta.max(axis=-1)
    w = np.exp(eta - m[:, None])
    z = w.sum(axis=-1)
    logk = m + np.log(z)
    if order == 0:
        return logk, None, None
    p = w / z[:, None]
    mu = (p[:, None, :] * stats_t).sum(axis=-1)
    if order == 1:
        return logk, mu, None
    G, d, S = stats_t.shape
    cov = np.empty((G, d, d))
    step = max(1, _CHUNK_ELEMS // max(1, d * d * S))
    for a in range(0, G, step):
        b = min(a + step, G)
        c = stats_t[a:b] - mu[a:b, :, None]
        pc = p[a:b, None, :] * c
        raw = (pc[:, :, None, :] * c[:, None, :, :]).sum(axis=-1)
        cov[a:b] = 0.5 * (raw + raw.transpose(0, 2, 1))
    return logk, mu, cov


def _theta(theta, d):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != d:
        raise ValueError(f"theta has length {theta.shape[0]}, model has {d} terms")
    if not np.isfinite(theta).all():
        raise ValueError("theta must be finite")
    return theta


def log_normalizing_constant(theta, sm: StatMatrix) -> float:
    theta = _theta(theta, sm.rows.shape[1])
    logk, _, _ = _moments(theta, np.ascontiguousarray(sm.rows.T[None]), 0)
    return float(logk[0])


def support_logprobs(theta, sm: StatMatrix) -> np.ndarray:
    """log Pr of every support state, in support order."""
    theta = _theta(theta, sm.rows.shape[1])
    st = np.ascontiguousarray(sm.rows.T[None])
    eta = _linear(st, theta)[0]
    logk, _, _ = _moments(theta, st, 0)
    return eta - logk[0]


def transition_logprob(theta, sm: StatMatrix, observed_row) -> float:
    """theta . s(observed) - log kappa.

    ``observed_row`` is a support index, or a state vector that is looked up
    (raising ObservedStateExcluded when it is not in the support).
    """
    if not np.isscalar(observed_row) and np.ndim(observed_row) == 1:
        observed_row = sm.row_of(observed_row)
    observed_row = int(observed_row)
    if not 0 <= observed_row < len(sm.states):
        raise IndexError(f"support has {len(sm.states)} rows, got row {observed_row}")
    return float(support_logprobs(theta, sm)[observed_row])


# -- whole-panel evaluation --------------------------------------------------

class _Block:
    """Transitions sharing one previous state."""

    __slots__ = ("prev", "states", "stats_t", "group_offset")

    def __init__(self, prev, states, stats_t, group_offset):
        self.prev = prev
        self.states = states
        self.stats_t = stats_t  # (G, d, S), contiguous
        self.group_offset = group_offset


class LikelihoodCache:
    """Statistic matrices for a set of transitions, keyed by (prev, covariates).

    Only covariates referenced by some term enter the key.  With
    ``caching=False`` every transition gets its own matrix; results are
    bit-identical either way.
    """

    def __init__(self, transitions, term_set: TermSet, caching=True, max_k=DEFAULT_MAX_K, threads=None):
        from .data import Transitions

        transitions = Transitions.from_records(transitions, term_set.source_outcomes, term_set.covariate_names)
        self.term_set = term_set
        self.threads = resolve_threads(threads)
        self.caching = caching
        K, d = term_set.K, term_set.d
        if K > max_k:
            raise SupportTooLarge(K, max_k)
        prev, cur, x = term_set.project(transitions)
        n = len(transitions)
        self.n = n
        self.d = d
        self.ids = transitions.ids
        self.times = transitions.times

        xu = x[:, term_set.used_covariate_cols] if n else np.zeros((0, len(term_set.used_covariate_cols)))
        prev_code = _codes(prev) if n else np.zeros(0, np.int64)
        cur_code = _codes(cur) if n else np.zeros(0, np.int64)
        if caching and n:
            key = np.column_stack([prev_code.astype(float), xu])
            ukeys, group = np.unique(key, axis=0, return_inverse=True)
            group = group.reshape(-1)
        else:
            ukeys = np.column_stack([prev_code.astype(float), xu]) if n else np.zeros((0, 1 + xu.shape[1]))
            group = np.arange(n)
            order = np.lexsort((np.arange(n), prev_code)) if n else np.zeros(0, np.intp)
            ukeys = ukeys[order]
            inv = np.empty(n, dtype=np.intp)
            inv[order] = np.arange(n)
            group = inv
        self.n_groups = len(ukeys)

        self.blocks: list[_Block] = []
        self.group = group
        self.obs_row = np.full(n, -1, dtype=np.intp)
        gprev = ukeys[:, 0].astype(np.int64) if len(ukeys) else np.zeros(0, np.int64)
        lookup = np.full(1 << K, -1, dtype=np.intp)
        start = 0
        for code in np.unique(gprev):
            stop = start + int(np.searchsorted(gprev[start:], code, side="right"))
            prev_vec = all_states(K)[code]
            support = enumerate_support(K, prev_vec, term_set, max_k)
            gx = None
            if term_set.C:
                gx = np.zeros((stop - start, term_set.C))
                gx[:, term_set.used_covariate_cols] = ukeys[start:stop, 1:]
            stats = term_set.evaluate(prev_vec[None, None, :], support.states[None, :, :], None if gx is None else gx[:, None, :])
            self.blocks.append(_Block(prev_vec, support.states, np.ascontiguousarray(stats.transpose(0, 2, 1)), start))

            lookup[:] = -1
            lookup[support.codes] = np.arange(len(support))
            members = np.flatnonzero((group >= start) & (group < stop))
            self.obs_row[members] = lookup[cur_code[members]]
            start = stop

        bad = np.flatnonzero(self.obs_row < 0)
        if len(bad):
            i = int(bad[0])
            raise ObservedStateExcluded(prev[i], cur[i], self.ids[i], int(self.times[i]))

        # observed statistic of each transition, gathered once
        self.obs_stats = np.zeros((n, d))
        self._block_of_group = np.zeros(self.n_groups, dtype=np.intp)
        for b, blk in enumerate(self.blocks):
            G = blk.stats_t.shape[0]
            self._block_of_group[blk.group_offset:blk.group_offset + G] = b
        for b, blk in enumerate(self.blocks):
            G = blk.stats_t.shape[0]
            members = np.flatnonzero((group >= blk.group_offset) & (group < blk.group_offset + G))
            local = group[members] - blk.group_offset
            self.obs_stats[members] = blk.stats_t[local, :, self.obs_row[members]]

    def stat_matrix(self, i: int) -> StatMatrix:
        """The cached matrix used by transition ``i``."""
        g = int(self.group[i])
        blk = self.blocks[int(self._block_of_group[g])]
        rows = blk.stats_t[g - blk.group_offset].T.copy()
        return StatMatrix(tuple(int(v) for v in blk.prev), blk.states, rows, "")

    def _group_moments(self, theta, order):
        tasks = []
        for blk in self.blocks:
            G = blk.stats_t.shape[0]
            step = max(1, -(-G // self.threads)) if self.threads > 1 else G
            for a in range(0, G, step):
                tasks.append((blk, a, min(a + step, G)))
        results = _map(lambda t: _moments(theta, t[0].stats_t[t[1]:t[2]], order), tasks, self.threads)
        logk = np.concatenate([r[0] for r in results]) if results else np.zeros(0)
        mu = np.concatenate([r[1] for r in results]) if order >= 1 and results else None
        cov = np.concatenate([r[2] for r in results]) if order >= 2 and results else None
        return logk, mu, cov

    def evaluate(self, theta, order=2):
        """(loglik, gradient or None, hessian or None) at ``theta``."""
        theta = _theta(theta, self.d)
        d, n = self.d, self.n
        if n == 0:
            return 0.0, (np.zeros(d) if order >= 1 else None), (np.zeros((d, d)) if order >= 2 else None)
        logk, mu, cov = self._group_moments(theta, order)
        eta_obs = _linear(self.obs_stats[:, :, None], theta)[:, 0]
        g = self.group

        ll = _blocked_sum(lambda a, b: eta_obs[a:b] - logk[g[a:b]], n, (), self.threads)
        grad = hess = None
        if order >= 1:
            grad = _blocked_sum(lambda a, b: self.obs_stats[a:b] - mu[g[a:b]], n, (d,), self.threads)
        if order >= 2:
            hess = -_blocked_sum(lambda a, b: cov[g[a:b]], n, (d, d), self.threads)
        return float(ll), grad, hess

    def transition_logprobs(self, theta) -> np.ndarray:
        theta = _theta(theta, self.d)
        logk, _, _ = self._group_moments(theta, 0)
        return _linear(self.obs_stats[:, :, None], theta)[:, 0] - logk[self.group]


def _cache_for(transitions, term_set, cache, threads=None):
    if cache is not None:
        if cache.term_set is not term_set or cache.n != len(transitions):
            raise ValueError("cache was built for different transitions or terms")
        return cache
    return LikelihoodCache(transitions, term_set, threads=threads)


def total_loglik(theta, transitions, term_set, cache=None, threads=None) -> float:
    return _cache_for(transitions, term_set, cache, threads).evaluate(theta, 0)[0]


def gradient(theta, transitions, term_set, cache=None, threads=None) -> np.ndarray:
    """Sum over transitions of s(observed) - E_theta[s]."""
    return _cache_for(transitions, term_set, cache, threads).evaluate(theta, 1)[1]


def hessian(theta, transitions, term_set, cache=None, threads=None) -> np.ndarray:
    """Minus the summed per-transition covariance of s under theta."""
    return _cache_for(transitions, term_set, cache, threads).evaluate(theta, 2)[2]
