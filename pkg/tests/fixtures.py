"""Synthetic datasets shared by the tests."""
import csv

import numpy as np

# Alcohol/tobacco transition counts: (prev (a, t), cur (a, t)) -> count
ALC_TOB_CENSUS = [
    ((0, 0), (0, 0), 639),
    ((1, 0), (1, 0), 272),
    ((0, 0), (1, 0), 110),
    ((1, 0), (1, 1), 44),
    ((1, 1), (1, 1), 33),
    ((0, 0), (1, 1), 24),
    ((0, 0), (0, 1), 13),
    ((0, 1), (1, 1), 11),
    ((0, 1), (0, 1), 8),
]


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def alc_tob_panel(path, seed=4):
    """2-wave individuals whose transitions reproduce the alcohol/tobacco census.

    Individuals are emitted in a shuffled order so the census cannot lean
    on file order.
    """
    rows = []
    pairs = [(p, c) for p, c, n in ALC_TOB_CENSUS for _ in range(n)]
    order = np.random.default_rng(seed).permutation(len(pairs))
    for k, j in enumerate(order):
        p, c = pairs[j]
        rows.append([f"s{k:04d}", 1, *p])
        rows.append([f"s{k:04d}", 2, *c])
    write_rows(path, ["id", "time", "alcohol", "tobacco"], rows)
    return len(pairs)


def survey_shaped_panel(path, n_individuals=655, n_rows=2028, waves=4, seed=11):
    """Individuals with 2-4 waves each, 2,028 rows in total, some wave gaps.

    Returns the per-individual wave-time lists that were written.
    """
    rng = np.random.default_rng(seed)
    sizes = np.full(n_individuals, 2)
    extra = n_rows - sizes.sum()
    while extra > 0:
        i = rng.integers(n_individuals)
        if sizes[i] < waves:
            sizes[i] += 1
            extra -= 1
    rows, schedule = [], []
    for i, m in enumerate(sizes):
        times = sorted(rng.choice(np.arange(1, waves + 1), size=m, replace=False).tolist())
        schedule.append(times)
        ever = np.zeros(3, dtype=int)
        for t in times:
            ever = np.maximum(ever, rng.random(3) < 0.15)
            rows.append([f"p{i:03d}", t, *ever.tolist(), round(float(rng.normal(3.9, 0.8)), 2), int(rng.random() < 0.65)])
    # shuffle the file rows; the loader must sort waves itself
    rows = [rows[j] for j in rng.permutation(len(rows))]
    write_rows(path, ["id", "time", "alcohol", "tobacco", "mj", "grades", "hispanic"], rows)
    return schedule


# -- random models ------------------------------------------------------------

def _random_constraint(rng, names, max_len=None):
    m = int(rng.integers(1, (max_len or len(names)) + 1))
    chosen = rng.choice(len(names), size=min(m, len(names)), replace=False)
    return ", ".join(f"{names[j]}{'+' if rng.random() < 0.5 else '-'}" for j in sorted(chosen))


def random_model_text(rng, K, n_terms=None, covariates=(), forbid_prob=0.0, monotone=False):
    """DEFM source for a random model over outcomes y0..y{K-1}.

    Mixes logit, association and transition terms; covariate products are
    drawn from ``covariates``.  With ``monotone`` every outcome gets an
    ever-use forbid; otherwise each random forbid appears with
    ``forbid_prob``.
    """
    names = [f"y{k}" for k in range(K)]
    lines = ["outcomes " + ", ".join(names)]
    n_terms = n_terms or int(rng.integers(1, 5))
    for j in range(n_terms):
        kind = rng.integers(3)
        if kind == 0:
            expr = f"logit({names[rng.integers(K)]})"
        elif kind == 1:
            parts = [f"{{{_random_constraint(rng, names)}}}" for _ in range(int(rng.integers(1, 3)))]
            expr = " + ".join(parts)
        else:
            expr = f"{{{_random_constraint(rng, names)}}} -> {{{_random_constraint(rng, names)}}}"
        if covariates and rng.random() < 0.3:
            expr += f" * {covariates[rng.integers(len(covariates))]}"
        lines.append(f"term t{j} = {expr}")
    if monotone:
        lines += [f"forbid {{{n}+}} -> {{{n}-}}" for n in names]
    elif forbid_prob:
        for _ in range(2):
            if rng.random() < forbid_prob:
                lines.append(f"forbid {{{_random_constraint(rng, names, 2)}}} -> {{{_random_constraint(rng, names, 2)}}}")
    return "\n".join(lines) + "\n"
