import math

import numpy as np
import pytest

from defm.data import Transitions
from defm.dsl import parse_model
from defm.errors import EmptySupport, ObservedStateExcluded, SupportTooLarge
from defm.likelihood import (
    LikelihoodCache,
    enumerate_support,
    gradient,
    hessian,
    log_normalizing_constant,
    stat_matrix,
    support_logprobs,
    total_loglik,
    transition_logprob,
    tree_sum,
)
from defm.stats import change_stats
from defm.terms import compile_model
from fixtures import random_model_text
from oracles import central_diff, enumerate_probs, irls_logistic, loglik_by_hand


def model(text, covs=()):
    spec = parse_model(text)
    return spec, compile_model(spec, covariate_names=list(covs))


def make_transitions(prev, cur, x=None, names=None):
    prev, cur = np.asarray(prev), np.asarray(cur)
    n = len(prev)
    x = np.zeros((n, 0)) if x is None else np.asarray(x, float)
    return Transitions([f"i{i}" for i in range(n)], np.full(n, 2), prev, cur, x, names)


def random_panel(rng, ts, n, C=0):
    """Transitions with random prev and cur drawn uniformly from the support."""
    prev = rng.integers(0, 2, (n, ts.K))
    x = rng.normal(size=(n, C))
    cur = np.empty_like(prev)
    for i in range(n):
        states = enumerate_support(ts.K, prev[i], ts).states
        cur[i] = states[rng.integers(len(states))]
    return make_transitions(prev, cur, x, ts.outcome_names)


# -- support -------------------------------------------------------------------

def test_support_sizes():
    _, ts = model("outcomes a, b\nterm x = logit(a)\nforbid {a+} -> {a-}\n")
    assert len(enumerate_support(2, (0, 0))) == 4
    s = enumerate_support(2, (1, 0), ts)
    assert s.states.tolist() == [[1, 0], [1, 1]]
    assert s.index_of((0, 1)) == -1 and s.index_of((1, 1)) == 1


def test_monotone_full_prev_is_singleton():
    text = "outcomes a, b, c\nterm x = logit(a)\n" + "".join(f"forbid {{{n}+}} -> {{{n}-}}\n" for n in "abc")
    _, ts = model(text)
    assert enumerate_support(3, (1, 1, 1), ts).states.tolist() == [[1, 1, 1]]
    assert len(enumerate_support(3, (0, 0, 0), ts)) == 8
    for prev in np.ndindex(2, 2, 2):
        states = enumerate_support(3, prev, ts).states
        assert len(states) == 2 ** (3 - sum(prev))
        assert np.all(states >= np.array(prev))


def test_support_errors():
    _, ts = model("outcomes a\nterm x = logit(a)\nforbid {a-} -> {a+}\nforbid {a-} -> {a-}\n")
    with pytest.raises(EmptySupport):
        enumerate_support(1, (0,), ts)
    with pytest.raises(SupportTooLarge):
        enumerate_support(21, np.zeros(21, int))
    assert len(enumerate_support(3, (0, 0, 0), max_k=3)) == 8


# -- normalising constant ------------------------------------------------------

def test_log_kappa_closed_forms():
    _, ts = model("outcomes a, b\nterm x = logit(a)\n")
    sm = stat_matrix(ts, (0, 0))
    assert log_normalizing_constant([0.0], sm) == pytest.approx(math.log(4), abs=1e-15)
    _, ts1 = model("outcomes a\nterm x = logit(a)\n")
    sm1 = stat_matrix(ts1, (0,))
    np.testing.assert_array_equal(sm1.rows, [[0], [1]])
    assert log_normalizing_constant([1.0], sm1) == pytest.approx(math.log(1 + math.e), abs=1e-15)
    assert log_normalizing_constant([800.0], sm1) == pytest.approx(800.0)


def test_log_kappa_matches_extended_precision():
    rng = np.random.default_rng(17)
    for _ in range(30):
        text = random_model_text(rng, 3, covariates=("z",))
        spec, ts = model(text, ["z"])
        theta = rng.normal(scale=2, size=ts.d)
        prev, x = tuple(rng.integers(0, 2, 3)), [float(rng.normal())]
        _, _, logz = enumerate_probs(spec, ["z"], theta, prev, x)
        assert log_normalizing_constant(theta, stat_matrix(ts, prev, x)) == pytest.approx(logz, abs=1e-12)


def test_transition_logprob_examples():
    _, ts = model("outcomes a, b\nterm x = logit(a)\nterm y = {a+, b+}\n")
    sm = stat_matrix(ts, (1, 0))
    for r in range(4):
        assert transition_logprob([0, 0], sm, r) == pytest.approx(-math.log(4))
    with pytest.raises(IndexError):
        transition_logprob([0, 0], sm, 4)
    assert transition_logprob([0, 0], sm, (1, 1)) == pytest.approx(-math.log(4))
    _, tsf = model("outcomes a, b\nterm x = logit(a)\nforbid {a+} -> {a-}\n")
    with pytest.raises(ObservedStateExcluded):
        transition_logprob([0.3], stat_matrix(tsf, (1, 0)), (0, 1))


def test_probabilities_match_enumeration_oracle():
    rng = np.random.default_rng(2024)
    spec, ts = model("outcomes a, b\nterm x = logit(a)\nterm y = {a+, b+} + {a-, b-}\nterm z = {a-} -> {b+}\n")
    theta = rng.normal(size=3)
    for prev in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        states, probs, _ = enumerate_probs(spec, [], theta, prev)
        sm = stat_matrix(ts, prev)
        assert [tuple(s) for s in sm.states.tolist()] == states
        lp = support_logprobs(theta, sm)
        np.testing.assert_allclose(np.exp(lp), probs, rtol=0, atol=1e-14)
        assert np.all(lp <= 0)
        assert abs(np.exp(lp).sum() - 1) < 1e-12


# -- totals ----------------------------------------------------------------------

def test_empty_and_uniform_totals():
    _, ts = model("outcomes a, b, c\nterm x = logit(a)\nterm y = {a+} -> {b+, c-}\n")
    empty = make_transitions(np.zeros((0, 3)), np.zeros((0, 3)), names=ts.outcome_names)
    assert total_loglik([0.4, 1.0], empty, ts) == 0
    np.testing.assert_array_equal(gradient([0.4, 1.0], empty, ts), [0, 0])
    tr = random_panel(np.random.default_rng(1), ts, 37)
    assert total_loglik([0, 0], tr, ts) == pytest.approx(-37 * 3 * math.log(2), abs=1e-10)


def test_total_matches_oracle_with_covariates():
    rng = np.random.default_rng(9)
    for _ in range(5):
        spec, ts = model(random_model_text(rng, 3, covariates=("u", "v"), forbid_prob=0.6), ["u", "v"])
        try:
            tr = random_panel(rng, ts, 40, C=2)
        except EmptySupport:
            continue
        theta = rng.normal(size=ts.d)
        want = loglik_by_hand(spec, ["u", "v"], theta, tr.prev, tr.cur, tr.x)
        assert total_loglik(theta, tr, ts) == pytest.approx(want, abs=1e-10)


def test_logit_only_equals_independent_logistic_fits():
    rng = np.random.default_rng(5)
    _, ts = model("outcomes a, b\nterm ia = logit(a)\nterm xa = logit(a) * w\nterm ib = logit(b)\n", ["w"])
    n = 300
    prev = rng.integers(0, 2, (n, 2))
    cur = rng.integers(0, 2, (n, 2))
    w = rng.normal(size=(n, 1))
    tr = make_transitions(prev, cur, w, ts.outcome_names)
    theta = np.array([0.3, -0.7, 0.2])

    def ll(y, eta):
        return float(np.sum(y * eta - np.logaddexp(0, eta)))

    want = ll(cur[:, 0], theta[0] + theta[1] * w[:, 0]) + ll(cur[:, 1], np.full(n, theta[2]))
    assert total_loglik(theta, tr, ts) == pytest.approx(want, abs=1e-10)
    # and the MLE score vanishes at the IRLS solutions
    ba = irls_logistic(np.column_stack([np.ones(n), w[:, 0]]), cur[:, 0])
    bb = irls_logistic(np.ones((n, 1)), cur[:, 1])
    g = gradient(np.concatenate([ba, bb]), tr, ts)
    assert np.max(np.abs(g)) < 1e-8


# -- derivatives ---------------------------------------------------------------

def test_gradient_and_hessian_finite_differences():
    rng = np.random.default_rng(31)
    for _ in range(10):
        _, ts = model(random_model_text(rng, 3, n_terms=4, covariates=("u",)), ["u"])
        tr = random_panel(rng, ts, 60, C=1)
        cache = LikelihoodCache(tr, ts)
        theta = rng.normal(scale=0.7, size=ts.d)
        g = gradient(theta, tr, ts, cache)
        fd = central_diff(lambda t: total_loglik(t, tr, ts, cache), theta)
        assert np.max(np.abs(fd - g)) / max(1, np.max(np.abs(g))) < 1e-6
        H = hessian(theta, tr, ts, cache)
        fdh = central_diff(lambda t: gradient(t, tr, ts, cache), theta)
        assert np.max(np.abs(fdh - H)) / max(1, np.max(np.abs(H))) < 1e-5
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).max() < 1e-9


def test_gradient_zero_cases():
    _, ts = model("outcomes a\nterm ia = logit(a)\n")
    tr = make_transitions([[0], [1], [0], [1]], [[1], [0], [0], [1]], names=ts.outcome_names)
    np.testing.assert_allclose(gradient([0.0], tr, ts), [0.0], atol=1e-15)
    # saturated: observed frequency 3/4 matched at theta = logit(3/4)
    tr = make_transitions([[0]] * 4, [[1], [1], [1], [0]], names=ts.outcome_names)
    assert abs(gradient([math.log(3)], tr, ts)[0]) < 1e-12


def test_bernoulli_hessian_and_constant_term():
    _, ts = model("outcomes a\nterm ia = logit(a)\n")
    tr = make_transitions([[0]], [[1]], names=ts.outcome_names)
    assert hessian([0.0], tr, ts)[0, 0] == pytest.approx(-0.25, abs=1e-15)
    # {a+} -> {} is not expressible; a term that only looks at prev is constant over the support
    _, ts2 = model("outcomes a, b\nterm ia = logit(a)\nterm c = {a+} -> {b+} + {a+} -> {b-}\n")
    tr = random_panel(np.random.default_rng(0), ts2, 20)
    H = hessian([0.2, -0.4], tr, ts2)
    np.testing.assert_array_equal(H[1], [0, 0])
    np.testing.assert_array_equal(H[:, 1], [0, 0])


def test_log_kappa_convex_along_lines():
    rng = np.random.default_rng(8)
    for _ in range(20):
        _, ts = model(random_model_text(rng, 3, n_terms=4))
        sm = stat_matrix(ts, rng.integers(0, 2, 3))
        a, b = rng.normal(size=ts.d), rng.normal(size=ts.d)
        h = 1e-3
        for t in np.linspace(-2, 2, 9):
            f = [log_normalizing_constant(a + (t + e) * b, sm) for e in (-h, 0, h)]
            assert (f[0] - 2 * f[1] + f[2]) / h**2 >= -1e-6


# -- identities and determinism ---------------------------------------------------

def test_log_odds_identity():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(200):
        _, ts = model(random_model_text(rng, 3, covariates=("u",)), ["u"])
        theta = rng.normal(size=ts.d)
        prev, cur, k = rng.integers(0, 2, 3), rng.integers(0, 2, 3), int(rng.integers(3))
        x = rng.normal(size=1)
        sm = stat_matrix(ts, prev, x)
        hi, lo = cur.copy(), cur.copy()
        hi[k], lo[k] = 1, 0
        lhs = float(theta @ change_stats(ts, prev, cur, k, x))
        rhs = transition_logprob(theta, sm, hi) - transition_logprob(theta, sm, lo)
        worst = max(worst, abs(lhs - rhs))
    assert worst < 1e-12


def test_cache_and_threads_bit_identical():
    rng = np.random.default_rng(12)
    _, ts = model(random_model_text(rng, 3, n_terms=5, covariates=("u",)), ["u"])
    tr = random_panel(rng, ts, 3000, C=1)
    # discrete covariate so groups actually share matrices
    tr = Transitions(tr.ids, tr.times, tr.prev, tr.cur, np.round(tr.x), tr.outcome_names)
    theta = rng.normal(size=ts.d)
    ref = LikelihoodCache(tr, ts, caching=True, threads=1)
    assert ref.n_groups < len(tr)
    out = [ref.evaluate(theta)]
    out.append(LikelihoodCache(tr, ts, caching=False, threads=1).evaluate(theta))
    out.append(LikelihoodCache(tr, ts, caching=True, threads=4).evaluate(theta))
    out.append(LikelihoodCache(tr, ts, caching=False, threads=3).evaluate(theta))
    for ll, g, H in out[1:]:
        assert ll == out[0][0]
        assert g.tobytes() == out[0][1].tobytes()
        assert H.tobytes() == out[0][2].tobytes()


def test_excluded_observation_names_individual_and_wave():
    _, ts = model("outcomes a, b\nterm x = logit(a)\nforbid {a+} -> {a-}\n")
    tr = Transitions(["u1", "u2"], [2, 3], [[0, 0], [1, 1]], [[1, 0], [0, 1]], np.zeros((2, 0)), ("a", "b"))
    with pytest.raises(ObservedStateExcluded) as info:
        total_loglik([0.1], tr, ts)
    assert info.value.individual_id == "u2" and info.value.time == 3
    assert "u2" in str(info.value) and "3" in str(info.value)


def test_tree_sum_layout():
    a = np.arange(1, 8, dtype=float)
    assert tree_sum(a) == 28.0
    assert tree_sum(np.zeros((0, 2))).shape == (2,)
