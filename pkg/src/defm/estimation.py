"""Maximum likelihood fitting, likelihood-ratio tests, and coefficient tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .errors import DataMismatch, NonConvergence, NotNested, SeparationDetected, SingularHessian
from .likelihood import DEFAULT_MAX_K, LikelihoodCache

logger = logging.getLogger(__name__)

__all__ = ["FitOptions", "FitResult", "fit_mle", "lr_test", "ReportRow", "ReportTable", "summarize", "significance_stars"]


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    grad_tol: float = 1e-6
    loglik_tol: float = 1e-10
    max_halvings: int = 50
    separation_threshold: float = 15.0
    threads: int | None = None
    max_k: int = DEFAULT_MAX_K


@dataclass(frozen=True, eq=False)
class FitResult:
    term_names: tuple[str, ...]
    theta_hat: np.ndarray
    std_errors: np.ndarray
    vcov: np.ndarray
    loglik: float
    n_transitions: int
    converged: bool
    iterations: int
    gradient_norm: float
    n_obs: int | None = None
    flags: tuple[str, ...] = ()
    term_exprs: tuple[str, ...] = ()
    data_signature: str = ""

    @property
    def d(self) -> int:
        return len(self.theta_hat)

    @property
    def aic(self) -> float:
        return 2.0 * self.d - 2.0 * self.loglik

    @property
    def bic(self) -> float:
        return self.d * math.log(self.n_transitions) - 2.0 * self.loglik

    def to_dict(self) -> dict:
        def fl(v):
            v = float(v)
            return v if math.isfinite(v) else None

        return {
            "terms": list(self.term_names),
            "expressions": list(self.term_exprs),
            "theta": [fl(v) for v in self.theta_hat],
            "std_errors": [fl(v) for v in self.std_errors],
            "vcov": [[fl(v) for v in row] for row in self.vcov],
            "loglik": fl(self.loglik),
            "aic": fl(self.aic),
            "bic": fl(self.bic),
            "n": self.n_obs,
            "n_events": self.n_transitions,
            "convergence": {
                "converged": bool(self.converged),
                "iterations": int(self.iterations),
                "gradient_norm": fl(self.gradient_norm),
                "flags": list(self.flags),
            },
            "data_signature": self.data_signature,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj) -> "FitResult":
        def arr(v):
            return np.array([np.nan if e is None else e for e in v], dtype=float)

        conv = obj["convergence"]
        return cls(
            term_names=tuple(obj["terms"]),
            theta_hat=arr(obj["theta"]),
            std_errors=arr(obj["std_errors"]),
            vcov=np.array([arr(r) for r in obj["vcov"]]).reshape(len(obj["theta"]), -1),
            loglik=float(obj["loglik"]),
            n_transitions=int(obj["n_events"]),
            converged=bool(conv["converged"]),
            iterations=int(conv["iterations"]),
            gradient_norm=float(conv["gradient_norm"]),
            n_obs=obj.get("n"),
            flags=tuple(conv.get("flags", ())),
            term_exprs=tuple(obj.get("expressions", ())),
            data_signature=obj.get("data_signature", ""),
        )


def _signature(transitions, term_set) -> str:
    prev, cur, _ = term_set.project(transitions)
    h = hashlib.sha256()
    h.update(",".join(term_set.outcome_names).encode())
    h.update("\x00".join(transitions.ids).encode())
    h.update(np.ascontiguousarray(transitions.times, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(prev, dtype=np.int8).tobytes())
    h.update(np.ascontiguousarray(cur, dtype=np.int8).tobytes())
    return h.hexdigest()[:16]


def _newton_direction(g, H):
    """Solve (-H) delta = g; None when -H is not positive definite."""
    try:
        c = linalg.cho_factor(-H, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return None
    delta = linalg.cho_solve(c, g)
    return delta if np.isfinite(delta).all() else None


def fit_mle(transitions, term_set, options: FitOptions | None = None, n_obs=None, cache=None, **overrides) -> FitResult:
    """Newton-Raphson maximisation of the exact conditional log-likelihood.

    Starts from theta = 0.  Each step is halved (at most ``max_halvings``
    times) until the log-likelihood does not decrease.  Iteration stops
    when max|gradient| < ``grad_tol``, or when a full Newton step changes
    the log-likelihood by less than ``loglik_tol``.  When -H is not
    positive definite the step falls back to the pseudo-inverse direction,
    or to the gradient if that is not an ascent direction.

    Problems are reported through ``FitResult.flags`` and a warning rather
    than an exception: ``"nonconvergence"``, ``"singular_hessian"``, and
    ``"separation"`` (some |theta_j| above ``separation_threshold``).
    """
    from .data import Transitions

    opts = options or FitOptions()
    if overrides:
        opts = FitOptions(**{**opts.__dict__, **overrides})
    transitions = Transitions.from_records(transitions, term_set.source_outcomes, term_set.covariate_names)
    if term_set.d < 1:
        raise ValueError("the model needs at least one term")
    if len(transitions) == 0:
        raise ValueError("cannot fit a model without transitions")
    if cache is None:
        cache = LikelihoodCache(transitions, term_set, max_k=opts.max_k, threads=opts.threads)

    d = term_set.d
    flags: list[str] = []
    theta = np.zeros(d)
    ll, g, H = cache.evaluate(theta, 2)
    converged = False
    iterations = 0
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(g)) < opts.grad_tol:
            converged = True
            break
        delta = _newton_direction(g, H)
        if delta is None:
            if "singular_hessian" not in flags:
                flags.append("singular_hessian")
            delta = np.linalg.pinv(-H) @ g
            if not (np.isfinite(delta).all() and g @ delta > 0):
                delta = g / max(1.0, float(np.linalg.norm(g)))
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = theta + step * delta
            ll_new = cache.evaluate(cand, 0)[0]
            if ll_new >= ll:
                break
            step *= 0.5
        else:
            logger.debug("step halving failed at iteration %d", it)
            break
        dll = ll_new - ll
        theta = cand
        ll, g, H = cache.evaluate(theta, 2)
        iterations = it
        logger.debug("iter %d: loglik=%.12g step=%g max|g|=%.3g", it, ll, step, np.max(np.abs(g)))
        if np.max(np.abs(g)) < opts.grad_tol:
            converged = True
            break
        if step == 1.0 and abs(dll) < opts.loglik_tol:
            converged = True
            break

    grad_norm = float(np.max(np.abs(g)))
    if not converged:
        flags.append("nonconvergence")
        warnings.warn(
            NonConvergence(f"no convergence after {iterations} iterations (max|gradient|={grad_norm:.3g})"),
            stacklevel=2,
        )

    info = -H
    try:
        c = linalg.cho_factor(info)
        vcov = linalg.cho_solve(c, np.eye(d))
    except (linalg.LinAlgError, ValueError):
        vcov = np.linalg.pinv(info)
        if "singular_hessian" not in flags:
            flags.append("singular_hessian")
    vcov = 0.5 * (vcov + vcov.T)
    if "singular_hessian" in flags:
        warnings.warn(SingularHessian("information matrix is singular; standard errors use a pseudo-inverse"), stacklevel=2)
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))

    if np.any(np.abs(theta) > opts.separation_threshold):
        flags.append("separation")
        big = [term_set.names[j] for j in np.flatnonzero(np.abs(theta) > opts.separation_threshold)]
        warnings.warn(SeparationDetected(f"possible complete separation in terms {big}"), stacklevel=2)

    return FitResult(
        term_names=tuple(term_set.names),
        theta_hat=theta,
        std_errors=se,
        vcov=vcov,
        loglik=float(ll),
        n_transitions=len(transitions),
        converged=converged,
        iterations=iterations,
        gradient_norm=grad_norm,
        n_obs=n_obs,
        flags=tuple(flags),
        term_exprs=tuple(term_set.describe()),
        data_signature=_signature(transitions, term_set),
    )


def lr_test(full: FitResult, reduced: FitResult) -> tuple[float, int, float]:
    """Likelihood-ratio test of ``reduced`` nested in ``full``.

    Returns (statistic, df, p-value) with p from the chi-square upper tail.
    """
    if full.data_signature != reduced.data_signature or full.n_transitions != reduced.n_transitions:
        raise DataMismatch("models were fitted on different transitions")
    full_terms = set(zip(full.term_names, full.term_exprs or full.term_names))
    red_terms = set(zip(reduced.term_names, reduced.term_exprs or reduced.term_names))
    if not red_terms <= full_terms:
        extra = sorted(n for n, _ in red_terms - full_terms)
        raise NotNested(f"terms {extra} of the reduced model are not in the full model")
    df = full.d - reduced.d
    stat = 2.0 * (full.loglik - reduced.loglik)
    if stat < -1e-8:
        warnings.warn(NonConvergence(f"reduced model fits better than the full model (statistic {stat:.3g})"), stacklevel=2)
    stat = max(stat, 0.0)
    p = 1.0 if df == 0 else float(stats.chi2.sf(stat, df))
    return float(stat), int(df), p


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class ReportRow:
    name: str
    estimate: float
    std_error: float
    z: float
    p: float
    stars: str
    expression: str = ""


@dataclass(frozen=True)
class ReportTable:
    rows: tuple[ReportRow, ...]
    footer: dict = field(default_factory=dict)

    def to_text(self) -> str:
        def num(v, spec):
            return format(v, spec) if np.isfinite(v) else "NA"

        head = ["term", "estimate", "std.err", "z", "p", ""]
        body = [
            [r.name, num(r.estimate, ".4f"), num(r.std_error, ".4f"), num(r.z, ".3f"), num(r.p, ".4f"), r.stars]
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        fmt = lambda row: "  ".join(  # noqa: E731
            row[i].ljust(widths[i]) if i in (0, 5) else row[i].rjust(widths[i]) for i in range(len(row))
        ).rstrip()
        lines = [fmt(head), "-" * (sum(widths) + 2 * (len(widths) - 1))]
        lines += [fmt(r) for r in body]
        lines.append("-" * len(lines[1]))
        for k, v in self.footer.items():
            if isinstance(v, float):
                v = f"{v:.2f}"
            lines.append(f"{k:<24}{v}")
        lines.append("*** p<0.001; ** p<0.01; * p<0.05")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "estimate", "std_error", "z", "p", "stars"])
        for r in self.rows:
            w.writerow([r.name, repr(r.estimate), repr(r.std_error), repr(r.z), repr(r.p), r.stars])
        for k, v in self.footer.items():
            w.writerow([k, v if not isinstance(v, float) else repr(v), "", "", "", ""])
        return buf.getvalue()

    def to_json(self) -> str:
        def fl(v):
            return float(v) if np.isfinite(v) else None

        obj = {
            "rows": [
                {"term": r.name, "estimate": fl(r.estimate), "std_error": fl(r.std_error), "z": fl(r.z), "p": fl(r.p), "stars": r.stars}
                for r in self.rows
            ],
            "footer": self.footer,
        }
        return json.dumps(obj, indent=2) + "\n"

    def render(self, fmt: str = "text") -> str:
        return {"text": self.to_text, "csv": self.to_csv, "json": self.to_json}[fmt]()


def summarize(fit: FitResult, term_set=None) -> ReportTable:
    """Coefficient table: estimate, standard error, Wald z, two-sided p, stars."""
    names = term_set.names if term_set is not None else fit.term_names
    exprs = term_set.describe() if term_set is not None else (fit.term_exprs or [""] * fit.d)
    rows = []
    for name, expr, est, se in zip(names, exprs, fit.theta_hat, fit.std_errors):
        est, se = float(est), float(se)
        z = est / se if se > 0 and np.isfinite(se) else float("nan")
        p = float(2.0 * stats.norm.sf(abs(z))) if np.isfinite(z) else float("nan")
        rows.append(ReportRow(name, est, se, z, p, significance_stars(p), expr))
    footer = {
        "Log-likelihood": fit.loglik,
        "AIC": fit.aic,
        "BIC": fit.bic,
        "N": fit.n_obs if fit.n_obs is not None else "NA",
        "N events (transitions)": fit.n_transitions,
        "Converged": "yes" if fit.converged else "no",
    }
    return ReportTable(tuple(rows), footer)
