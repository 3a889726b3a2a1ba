"""
Exact enumeration versus the Gibbs sampler
==========================================

The exact sampler draws from the enumerated support; the Gibbs sampler
updates one cell at a time with probability expit(theta . dchi).  After
enough sweeps both reproduce the enumerated transition probabilities.
"""

import itertools

import numpy as np

import defm

spec = defm.parse_model(
    """
    outcomes a, b, c
    term ia = logit(a)
    term ib = logit(b)
    term ab = {a+, b+} + {a-, b-}
    term b2c = {b+, c-} -> {b+, c+}
    """
)
terms = defm.compile_model(spec)
theta = np.array([0.4, -0.8, 1.1, 0.9])
prev = np.array([0, 1, 0])

sm = defm.stat_matrix(terms, prev)
exact_p = np.exp(defm.support_logprobs(theta, sm))

n = 100_000
rng = np.random.default_rng(11)
prevs = np.tile(prev, (n, 1))
codes = 1 << np.arange(2, -1, -1)

print("sweeps   TV(gibbs, exact)")
for sweeps in (1, 2, 5, 20):
    draws = defm.sample_gibbs_many(theta, prevs, None, terms, sweeps, rng.random((n, sweeps, 3)))
    freq = np.bincount(draws @ codes, minlength=8) / n
    print(f"{sweeps:>6}   {0.5 * np.abs(freq - exact_p).sum():.4f}")

draws = defm.sample_exact_many(theta, prevs, None, terms, rng.random(n))
freq = np.bincount(draws @ codes, minlength=8) / n
print(f" exact   {0.5 * np.abs(freq - exact_p).sum():.4f}")

print("\nstate   P(exact)  freq")
for state, p, f in zip(itertools.product((0, 1), repeat=3), exact_p, freq):
    print("".join(map(str, state)), f"  {p:.4f}    {f:.4f}")
