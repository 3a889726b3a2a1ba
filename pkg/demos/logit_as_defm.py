"""
Independent logistic regressions as a DEFM
==========================================

A model made only of ``logit`` terms factorises over outcomes, so its
maximum likelihood estimates are those of one logistic regression per
outcome.  Here we check that against a few lines of IRLS.
"""

import numpy as np

import defm

rng = np.random.default_rng(0)
n = 2000
grades = rng.normal(3.9, 0.8, n)
female = (rng.random(n) < 0.5).astype(float)
eta_a = -0.5 + 0.3 * (grades - 3.9)
eta_t = -1.2 - 0.7 * female
cur = np.column_stack([rng.random(n) < 1 / (1 + np.exp(-eta_a)), rng.random(n) < 1 / (1 + np.exp(-eta_t))]).astype(int)
x = np.column_stack([grades - 3.9, female])

trans = defm.Transitions(
    [str(i) for i in range(n)], np.full(n, 2), rng.integers(0, 2, (n, 2)), cur, x,
    ("alcohol", "tobacco"), ("grades", "female"),
)
spec = defm.parse_model(
    """
    outcomes alcohol, tobacco
    term alc = logit(alcohol)
    term alc_grades = logit(alcohol) * grades
    term tob = logit(tobacco)
    term tob_female = logit(tobacco) * female
    """
)
terms = defm.compile_model(spec, covariate_names=["grades", "female"])
fit = defm.fit_mle(trans, terms)


def irls(X, y, iters=25):
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-X @ b))
        W = p * (1 - p)
        b = b + np.linalg.solve(X.T @ (X * W[:, None]), X.T @ (y - p))
    return b


one = np.ones(n)
ref = np.concatenate([irls(np.column_stack([one, x[:, 0]]), cur[:, 0]), irls(np.column_stack([one, x[:, 1]]), cur[:, 1])])
for name, a, b in zip(terms.names, fit.theta_hat, ref):
    print(f"{name:<12} DEFM {a: .8f}   IRLS {b: .8f}")
print("max abs difference", np.max(np.abs(fit.theta_hat - ref)))
