"""
Gateway motifs in substance-use initiation
==========================================

Simulate an ever-use panel for alcohol, tobacco and marijuana, look at
the motif census, fit a model with transition motifs, and test the
motifs jointly with a likelihood-ratio test.
"""

import numpy as np

import defm

# ever-use model: once a cell is 1 it stays 1
source = """
outcomes alcohol, tobacco, mj
term alc = logit(alcohol)
term alc_hisp = logit(alcohol) * hispanic
term tob = logit(tobacco)
term mj = logit(mj)
term a2t = {alcohol+, tobacco-} -> {alcohol+, tobacco+}
term a2m = {alcohol+, mj-} -> {alcohol+, mj+}
term t2m = {tobacco+, mj-} -> {tobacco+, mj+}
forbid {alcohol+} -> {alcohol-}
forbid {tobacco+} -> {tobacco-}
forbid {mj+} -> {mj-}
"""
spec = defm.parse_model(source)
terms = defm.compile_model(spec, covariate_names=["hispanic"])
print(terms)

# 655 students, four waves, about 60% Hispanic
n, waves = 655, 4
rng = np.random.default_rng(1)
hispanic = np.repeat((rng.random((n, 1, 1)) < 0.6).astype(float), waves, axis=1)
theta_true = np.array([-1.6, 0.9, -3.0, -3.2, 1.4, 1.2, 1.0])
config = defm.SimConfig(
    theta_true, n, waves,
    initial_states=defm.random_initial_states(n, 3, 0.12, seed=2),
    covariates=hispanic, covariate_names=("hispanic",), seed=3,
)
panel = defm.simulate_panel(config, terms)
trans = defm.build_transitions(panel)
print(f"{panel.n_individuals} individuals, {panel.n_rows} rows, {len(trans)} transitions")

###############################################################################
# Motif census for alcohol and tobacco.  Starred rows are unchanged.

print(defm.motif_census(trans, ["alcohol", "tobacco"]).to_text())

###############################################################################
# Fit the full model and print the coefficient table.

fit = defm.fit_mle(trans, terms, n_obs=panel.n_rows)
print(defm.summarize(fit, terms).to_text())

###############################################################################
# Drop the three gateway motifs and compare.

reduced_spec = defm.parse_model("\n".join(l for l in source.splitlines() if " = {" not in l))
reduced_terms = defm.compile_model(reduced_spec, covariate_names=["hispanic"])
reduced = defm.fit_mle(trans, reduced_terms, n_obs=panel.n_rows)
stat, df, p = defm.lr_test(fit, reduced)
print(f"LR statistic {stat:.2f} on {df} df, p = {p:.2e}")
