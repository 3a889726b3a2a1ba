"""Forward simulation of panels from a fitted or hypothesised model.

Random numbers come from numpy's Philox4x64 counter-based generator.
Individual ``i`` of a run seeded with ``seed`` draws from its own substream,
``Philox(SeedSequence(seed, spawn_key=(i,)))``, so an individual's
trajectory depends only on (seed, i, model, its own inputs).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import IndividualSeries, PanelDataset
from .errors import ForbidsUnsupported, UnknownCovariate
from .likelihood import _codes, _linear, _theta, all_states, enumerate_support
from .stats import change_stats
from .terms import TermSet

__all__ = [
    "SimConfig",
    "individual_rng",
    "sample_transition_exact",
    "sample_transition_gibbs",
    "sample_exact_many",
    "sample_gibbs_many",
    "simulate_panel",
    "random_initial_states",
]


def individual_rng(seed: int, index: int) -> np.random.Generator:
    """Substream generator for individual ``index`` of a run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class SimConfig:
    theta: np.ndarray
    n_individuals: int
    n_waves: int
    initial_states: np.ndarray | None = None  # (N, K); zeros when omitted
    covariates: np.ndarray | None = None  # (N, T, C)
    covariate_names: tuple[str, ...] = ()
    seed: int = 0
    sampler: str = "exact"
    gibbs_sweeps: int = 50

    def __post_init__(self):
        if self.n_waves < 2:
            raise ValueError("n_waves must be at least 2")
        if self.n_individuals < 1:
            raise ValueError("n_individuals must be positive")
        if self.sampler not in ("exact", "gibbs"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "gibbs" and self.gibbs_sweeps < 1:
            raise ValueError("gibbs_sweeps must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")


def _rules(term_set, forbids):
    return term_set.forbids if forbids is None else tuple(forbids)


def _draw(cdf, u):
    # first index with cdf > u * total; guards against u * total == total
    total = cdf[..., -1:]
    idx = (cdf <= u[..., None] * total).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def _support_cdf(theta, term_set, prev_vec, states, x_rows):
    """CDF over ``states`` for each covariate row; x_rows is (G, C) or None."""
    xs = None if x_rows is None else x_rows[:, None, :]
    stats = term_set.evaluate(prev_vec[None, None, :], states[None, :, :], xs)
    st = np.ascontiguousarray(stats.transpose(0, 2, 1))
    eta = _linear(st, theta)
    w = np.exp(eta - eta.max(axis=-1, keepdims=True))
    return np.cumsum(w / w.sum(axis=-1, keepdims=True), axis=-1)


def sample_transition_exact(theta, prev, x, term_set: TermSet, forbids=None, rng=None) -> np.ndarray:
    """Draw y_t given y_{t-1} = prev from the enumerated support."""
    theta = _theta(theta, term_set.d)
    rng = rng if rng is not None else np.random.default_rng()
    prev = np.asarray(prev, dtype=np.int8)
    support = enumerate_support(term_set.K, prev, _rules(term_set, forbids))
    xr = None if x is None or term_set.C == 0 else np.asarray(x, float).reshape(1, -1)
    cdf = _support_cdf(theta, term_set, prev, support.states, xr)[0]
    return support.states[int(_draw(cdf, np.array(rng.random())))].copy()


def sample_exact_many(theta, prev, x, term_set: TermSet, uniforms, forbids=None) -> np.ndarray:
    """Vectorised exact draws: row i uses ``uniforms[i]``."""
    theta = _theta(theta, term_set.d)
    prev = np.asarray(prev, dtype=np.int8)
    u = np.asarray(uniforms, dtype=float).reshape(len(prev))
    rules = _rules(term_set, forbids)
    n, K = prev.shape
    out = np.empty((n, K), dtype=np.int8)
    codes = _codes(prev)
    xu = np.zeros((n, 0)) if x is None or term_set.C == 0 else np.asarray(x, float)[:, term_set.used_covariate_cols]
    for code in np.unique(codes):
        rows = np.flatnonzero(codes == code)
        prev_vec = all_states(K)[code]
        support = enumerate_support(K, prev_vec, rules)
        if xu.shape[1]:
            keys, inv = np.unique(xu[rows], axis=0, return_inverse=True)
            gx = np.zeros((len(keys), term_set.C))
            gx[:, term_set.used_covariate_cols] = keys
            cdf = _support_cdf(theta, term_set, prev_vec, support.states, gx)[inv.reshape(-1)]
        else:
            cdf = np.broadcast_to(_support_cdf(theta, term_set, prev_vec, support.states, None)[0], (len(rows), len(support)))
        out[rows] = support.states[_draw(cdf, u[rows])]
    return out


def sample_gibbs_many(theta, prev, x, term_set: TermSet, sweeps: int, uniforms) -> np.ndarray:
    """Vectorised Gibbs chains started at ``prev``.

    ``uniforms`` has shape (n, sweeps, K); cell k of sweep s of chain i is
    set to 1 when ``uniforms[i, s, k] < expit(theta . change_stats)``.
    """
    if term_set.forbids:
        raise ForbidsUnsupported()
    if sweeps < 1:
        raise ValueError("sweeps must be at least 1")
    theta = _theta(theta, term_set.d)
    cur = np.array(prev, dtype=np.int8, copy=True)
    n, K = cur.shape
    u = np.asarray(uniforms, dtype=float).reshape(n, sweeps, K)
    xx = None if x is None or term_set.C == 0 else np.asarray(x, float)
    for s in range(sweeps):
        for k in range(K):
            dchi = change_stats(term_set, prev, cur, k, xx)
            p1 = expit(_linear(dchi[:, :, None], theta)[:, 0])
            cur[:, k] = u[:, s, k] < p1
    return cur


def sample_transition_gibbs(theta, prev, x, term_set: TermSet, sweeps: int, rng=None) -> np.ndarray:
    """Run ``sweeps`` passes of single-cell updates starting from ``prev``.

    Each cell is set to one with probability 1 / (1 + exp(-theta . delta)),
    ``delta`` being its change statistic.  Forbid rules are rejected.
    """
    if term_set.forbids:
        raise ForbidsUnsupported()
    rng = rng if rng is not None else np.random.default_rng()
    prev = np.asarray(prev, dtype=np.int8).reshape(1, -1)
    xr = None if x is None else np.asarray(x, float).reshape(1, -1)
    u = rng.random((1, sweeps, prev.shape[1]))
    return sample_gibbs_many(theta, prev, xr, term_set, sweeps, u)[0]


def simulate_panel(config: SimConfig, term_set: TermSet, forbids=None) -> PanelDataset:
    """Simulate ``config.n_individuals`` trajectories of ``config.n_waves`` waves.

    Wave 1 is ``config.initial_states``; each later wave is drawn given the
    previous one and that wave's covariates.
    """
    theta = _theta(config.theta, term_set.d)
    N, T, K = config.n_individuals, config.n_waves, term_set.K
    rules = _rules(term_set, forbids)
    if config.sampler == "gibbs" and rules:
        raise ForbidsUnsupported()

    if config.initial_states is None:
        init = np.zeros((N, K), dtype=np.int8)
    else:
        init = np.asarray(config.initial_states, dtype=np.int8).reshape(N, K)
        if not np.isin(init, (0, 1)).all():
            raise ValueError("initial states must be 0/1")

    names = tuple(config.covariate_names)
    if config.covariates is None:
        cov = np.zeros((N, T, len(names)))
    else:
        cov = np.asarray(config.covariates, dtype=float).reshape(N, T, -1)
        if cov.shape[2] != len(names):
            raise ValueError("covariates do not match covariate_names")
    for c in term_set.covariate_names:
        if c not in names:
            raise UnknownCovariate(c)
    model_x = cov[:, :, [names.index(c) for c in term_set.covariate_names]] if term_set.C else None

    if config.sampler == "exact":
        u = np.stack([individual_rng(config.seed, i).random(T - 1) for i in range(N)])
    else:
        S = config.gibbs_sweeps
        u = np.stack([individual_rng(config.seed, i).random((T - 1, S, K)) for i in range(N)])

    y = np.empty((N, T, K), dtype=np.int8)
    y[:, 0] = init
    for t in range(1, T):
        xt = None if model_x is None else model_x[:, t]
        if config.sampler == "exact":
            y[:, t] = sample_exact_many(theta, y[:, t - 1], xt, term_set, u[:, t - 1], rules)
        else:
            y[:, t] = sample_gibbs_many(theta, y[:, t - 1], xt, term_set, config.gibbs_sweeps, u[:, t - 1])

    times = np.arange(1, T + 1)
    individuals = tuple(IndividualSeries(str(i + 1), times, y[i], cov[i]) for i in range(N))
    return PanelDataset(individuals, term_set.outcome_names, names)


def random_initial_states(n: int, K: int, prob: float, seed: int) -> np.ndarray:
    """Independent Bernoulli(prob) first-wave states, one substream per individual.

    Uses ``spawn_key=(i, 1)``, disjoint from the transition substreams.
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError("prob must lie in [0, 1]")
    out = np.empty((n, K), dtype=np.int8)
    for i in range(n):
        g = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(i, 1))))
        out[i] = g.random(K) < prob
    return out
