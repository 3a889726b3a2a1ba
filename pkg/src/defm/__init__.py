"""Discrete exponential-family models for correlated binary outcomes.

Typical use::

    from defm import load_panel, build_transitions, parse_model, compile_model, fit_mle

    spec = parse_model(open("model.defm").read())
    data = load_panel("panel.csv", outcome_cols=spec.outcomes, covariate_cols=spec.covariates)
    terms = compile_model(spec, data)
    fit = fit_mle(build_transitions(data), terms)
"""
from .data import IndividualSeries, PanelDataset, TransitionRecord, Transitions, build_transitions, load_panel, write_panel
from .dsl import ModelSpec, PatternPair, TermDecl, format_model, load_model, parse_model
from .estimation import FitOptions, FitResult, ReportTable, fit_mle, lr_test, summarize
from .likelihood import (
    LikelihoodCache,
    StatMatrix,
    SupportSet,
    enumerate_support,
    gradient,
    hessian,
    log_normalizing_constant,
    stat_matrix,
    support_logprobs,
    total_loglik,
    transition_logprob,
)
from .simulation import (
    SimConfig,
    random_initial_states,
    sample_exact_many,
    sample_gibbs_many,
    sample_transition_exact,
    sample_transition_gibbs,
    simulate_panel,
)
from .stats import MotifCensus, change_stats, motif_census, suff_stats
from .terms import TermSet, compile_model

__version__ = "0.1.0"
