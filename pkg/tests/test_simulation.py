import numpy as np
import pytest
from scipy.special import expit

from defm.data import build_transitions, load_panel, write_panel
from defm.dsl import parse_model
from defm.errors import EmptySupport, ForbidsUnsupported
from defm.likelihood import stat_matrix, support_logprobs
from defm.simulation import (
    SimConfig,
    individual_rng,
    random_initial_states,
    sample_exact_many,
    sample_gibbs_many,
    sample_transition_exact,
    sample_transition_gibbs,
    simulate_panel,
)
from defm.terms import compile_model
from oracles import total_variation

MONO3 = "outcomes a, b, c\nterm ia = logit(a)\nterm ib = logit(b)\nterm ab = {a+} -> {b+}\n" + "".join(
    f"forbid {{{n}+}} -> {{{n}-}}\n" for n in "abc"
)


def model(text, covs=()):
    return compile_model(parse_model(text), covariate_names=list(covs))


def frequencies(draws, K):
    codes = draws.astype(np.int64) @ (1 << np.arange(K - 1, -1, -1))
    return np.bincount(codes, minlength=2**K) / len(draws)


def test_exact_uniform_at_zero():
    ts = model("outcomes a, b\nterm ia = logit(a)\n")
    u = individual_rng(1, 0).random(100_000)
    draws = sample_exact_many([0.0], np.zeros((100_000, 2), int), None, ts, u)
    assert np.all(np.abs(frequencies(draws, 2) - 0.25) < 0.01)


def test_exact_single_draw_api():
    ts = model(MONO3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_transition_exact([1.0, -1.0, 2.0], (1, 1, 1), None, ts, rng=rng).tolist() == [1, 1, 1]
    y = sample_transition_exact([0.0, 0.0, 0.0], (1, 0, 0), None, ts, rng=rng)
    assert y[0] == 1


def test_exact_matches_enumeration():
    rng = np.random.default_rng(5)
    ts = model("outcomes a, b, c\nterm ia = logit(a)\nterm bc = {b+, c+}\nterm m = {a+} -> {c-}\n")
    theta = rng.normal(size=3)
    prev = (1, 0, 1)
    n = 100_000
    draws = sample_exact_many(theta, np.tile(prev, (n, 1)), None, ts, rng.random(n))
    p = np.exp(support_logprobs(theta, stat_matrix(ts, prev)))
    assert total_variation(frequencies(draws, 3), p) < 0.006


def test_exact_never_emits_forbidden_state():
    ts = model(MONO3)
    rng = np.random.default_rng(2)
    prev = rng.integers(0, 2, (5000, 3))
    draws = sample_exact_many([0.5, -0.3, 1.2], prev, None, ts, rng.random(5000))
    assert np.all(draws >= prev)


def test_exact_with_covariates_per_row():
    ts = model("outcomes a\nterm ia = logit(a) * w\n", ["w"])
    n = 40_000
    w = np.repeat([[-2.0], [0.0], [2.0]], n, axis=0)
    draws = sample_exact_many([1.0], np.zeros((3 * n, 1), int), w, ts, np.random.default_rng(0).random(3 * n))
    means = draws[:, 0].reshape(3, n).mean(axis=1)
    np.testing.assert_allclose(means, expit([-2.0, 0.0, 2.0]), atol=0.01)


def test_empty_support_propagates():
    ts = model("outcomes a\nterm ia = logit(a)\nforbid {a-} -> {a+}\nforbid {a-} -> {a-}\n")
    with pytest.raises(EmptySupport):
        sample_transition_exact([0.0], (0,), None, ts)


def test_gibbs_theta_zero_cells_are_fair():
    ts = model("outcomes a, b, c\nterm ab = {a+, b+}\nterm m = {a+} -> {c+}\n")
    n = 50_000
    u = np.random.default_rng(1).random((n, 1, 3))
    draws = sample_gibbs_many([0.0, 0.0], np.zeros((n, 3), int), None, ts, 1, u)
    # one sweep at theta = 0 gives exactly cur_k = [u_k < 1/2]
    np.testing.assert_array_equal(draws, (u[:, 0, :] < 0.5).astype(np.int8))
    np.testing.assert_allclose(draws.mean(axis=0), 0.5, atol=0.01)


def test_gibbs_logit_closed_form():
    ts = model("outcomes a, b\nterm ia = logit(a)\n")
    n = 100_000
    u = np.random.default_rng(4).random((n, 3, 2))
    draws = sample_gibbs_many([2.0], np.zeros((n, 2), int), None, ts, 3, u)
    assert abs(draws[:, 0].mean() - expit(2.0)) < 0.005


def test_gibbs_stationary_distribution():
    rng = np.random.default_rng(8)
    ts = model("outcomes a, b, c\nterm ia = logit(a)\nterm abc = {a+, b+} + {b-, c-}\nterm m = {a-} -> {b+, c+}\n")
    theta = rng.normal(size=3)
    prev = (0, 1, 0)
    n = 60_000
    draws = sample_gibbs_many(theta, np.tile(prev, (n, 1)), None, ts, 30, rng.random((n, 30, 3)))
    p = np.exp(support_logprobs(theta, stat_matrix(ts, prev)))
    assert total_variation(frequencies(draws, 3), p) < 0.012


def test_gibbs_rejects_forbids():
    ts = model(MONO3)
    with pytest.raises(ForbidsUnsupported):
        sample_transition_gibbs([0, 0, 0], (0, 0, 0), None, ts, 5)
    with pytest.raises(ForbidsUnsupported):
        simulate_panel(SimConfig(np.zeros(3), 3, 2, sampler="gibbs"), ts)


def test_gibbs_single_chain_api():
    ts = model("outcomes a, b\nterm ia = logit(a)\n")
    y = sample_transition_gibbs([50.0], (0, 1), None, ts, 2, np.random.default_rng(0))
    assert y[0] == 1


def test_panel_second_wave_mean():
    ts = model("outcomes a, b\nterm ia = logit(a)\nterm ab = {a+} -> {b+}\n")
    data = simulate_panel(SimConfig(np.zeros(2), 10_000, 2, seed=3), ts)
    y2 = np.array([ind.y[1] for ind in data.individuals])
    np.testing.assert_allclose(y2.mean(axis=0), 0.5, atol=0.01)
    assert data.n_rows == 20_000 and data.outcome_names == ("a", "b")


def test_panel_monotone_trajectories():
    ts = model(MONO3)
    init = random_initial_states(2000, 3, 0.2, seed=1)
    data = simulate_panel(SimConfig(np.array([0.2, -0.5, 1.0]), 2000, 5, initial_states=init, seed=9), ts)
    y = np.stack([ind.y for ind in data.individuals])
    np.testing.assert_array_equal(y[:, 0], init)
    assert np.all(np.diff(y, axis=1) >= 0)


def test_panel_determinism_and_substreams(tmp_path):
    ts = model("outcomes a, b\nterm ia = logit(a) * w\nterm ab = {a+, b+}\n", ["w"])
    cov = np.random.default_rng(0).normal(size=(50, 4, 1))
    cfg = dict(theta=np.array([0.4, 0.9]), n_waves=4, covariate_names=("w",), seed=12)
    a = simulate_panel(SimConfig(n_individuals=50, covariates=cov, **cfg), ts)
    b = simulate_panel(SimConfig(n_individuals=50, covariates=cov, **cfg), ts)
    write_panel(a, tmp_path / "a.csv")
    write_panel(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    # an individual's path depends only on its own substream
    c = simulate_panel(SimConfig(n_individuals=20, covariates=cov[:20], **cfg), ts)
    for i in range(20):
        np.testing.assert_array_equal(a.individuals[i].y, c.individuals[i].y)
    d = simulate_panel(SimConfig(n_individuals=50, covariates=cov, **{**cfg, "seed": 13}), ts)
    assert any((x.y != y.y).any() for x, y in zip(a.individuals, d.individuals))


def test_panel_round_trips_through_loader(tmp_path):
    ts = model("outcomes a, b\nterm ia = logit(a) * w\n", ["w"])
    cov = np.random.default_rng(1).normal(size=(30, 3, 1))
    data = simulate_panel(SimConfig(np.array([0.7]), 30, 3, covariates=cov, covariate_names=("w",), seed=2), ts)
    write_panel(data, tmp_path / "sim.csv")
    back = load_panel(tmp_path / "sim.csv", outcome_cols=["a", "b"], covariate_cols=["w"])
    for x, y in zip(data.individuals, back.individuals):
        assert x.id == y.id
        np.testing.assert_array_equal(x.y, y.y)
        np.testing.assert_array_equal(x.x, y.x)
    assert len(build_transitions(back)) == 60


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(np.zeros(1), 10, 1)
    with pytest.raises(ValueError):
        SimConfig(np.zeros(1), 10, 2, sampler="mh")
    with pytest.raises(ValueError):
        random_initial_states(3, 2, 1.5, 0)
