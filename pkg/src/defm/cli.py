"""Command-line interface: ``defm census | fit | simulate``.

Exit codes
----------
0   success
2   invalid input (data, model file, or flag values)
3   fit did not converge (report and artifact are still written)
4   an observed transition lies outside the model's support
5   forbid rules leave no admissible state
64  usage error
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import build_transitions, load_panel, write_panel
from .dsl import load_model
from .errors import DefmError, EmptySupport, ForbidsUnsupported, ObservedStateExcluded
from .estimation import FitOptions, FitResult, fit_mle, summarize
from .simulation import SimConfig, random_initial_states, simulate_panel
from .stats import motif_census
from .terms import compile_model

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3
EXIT_EXCLUDED = 4
EXIT_EMPTY_SUPPORT = 5
EXIT_USAGE = 64

log = logging.getLogger("defm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command, inputs, seed=None, argv=None) -> str:
    """Record a run next to its primary output; returns the manifest path."""
    manifest = {
        "command": command,
        "argv": list(argv or []),
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "outputs": [str(out_path)],
        "seed": seed,
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


# -- commands ---------------------------------------------------------------

def cmd_census(args) -> int:
    subset = _names(args.subset)
    if not subset:
        raise UsageError("--subset must name at least one outcome")
    outcomes = _names(args.outcomes) if args.outcomes else subset
    data = load_panel(args.data, args.id_col, args.time_col, outcomes)
    trans = build_transitions(data, strict_gaps=args.strict_gaps)
    census = motif_census(trans, subset)
    census.to_csv(args.out, include_zero=args.include_zero)
    sys.stdout.write(census.to_text())
    write_manifest(args.out, "census", [args.data], argv=args.argv)
    return EXIT_OK


def _n_obs(data, strict_gaps) -> int:
    # waves belonging to individuals that contribute at least one transition
    total = 0
    for ind in data.individuals:
        if ind.n_waves < 2:
            continue
        if strict_gaps and not np.any(np.diff(ind.times) == 1):
            continue
        total += ind.n_waves
    return total


def cmd_fit(args) -> int:
    try:
        spec = load_model(args.model)
    except DefmError as err:
        raise DefmError(f"{args.model}: {err}") from err
    data = load_panel(args.data, args.id_col, args.time_col, spec.outcomes, spec.covariates)
    terms = compile_model(spec, data)
    trans = build_transitions(data, strict_gaps=args.strict_gaps)
    opts = FitOptions(max_iter=args.max_iter, threads=args.threads)
    fit = fit_mle(trans, terms, opts, n_obs=_n_obs(data, args.strict_gaps))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(fit.to_json())
    sys.stdout.write(summarize(fit, terms).render(args.format))
    write_manifest(args.out, "fit", [args.data, args.model], argv=args.argv)
    if not fit.converged:
        print(f"fit did not converge after {fit.iterations} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _parse_theta(text: str, d: int) -> np.ndarray:
    if text.startswith("@"):
        with open(text[1:], encoding="utf-8") as fh:
            theta = FitResult.from_dict(json.load(fh)).theta_hat
    else:
        try:
            theta = np.array([float(v) for v in text.split(",")], dtype=float)
        except ValueError:
            raise DefmError(f"--theta must be comma-separated numbers, got {text!r}") from None
    if len(theta) != d:
        raise DefmError(f"--theta has {len(theta)} values but the model has {d} terms")
    if not np.isfinite(theta).all():
        raise DefmError("--theta values must be finite")
    return theta


def _load_covariates(path, names, n, waves) -> np.ndarray:
    import csv

    cov = np.full((n, waves, len(names)), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ["id", *names]:
            if col not in header:
                raise DefmError(f"{path}: missing column {col!r}")
        has_time = "time" in header
        for row in reader:
            try:
                i = int(row["id"]) - 1
                vals = [float(row[c]) for c in names]
                t = int(row["time"]) - 1 if has_time else None
            except ValueError:
                raise DefmError(f"{path}: line {reader.line_num}: unparseable value") from None
            if not 0 <= i < n:
                continue
            if t is None:
                cov[i, :, :] = vals
            elif 0 <= t < waves:
                cov[i, t, :] = vals
    if np.isnan(cov).any():
        i, t, _ = np.argwhere(np.isnan(cov))[0]
        raise DefmError(f"{path}: no covariate values for individual {i + 1}, wave {t + 1}")
    return cov


def cmd_simulate(args) -> int:
    try:
        spec = load_model(args.model)
    except DefmError as err:
        raise DefmError(f"{args.model}: {err}") from err
    covs = spec.covariates
    terms = compile_model(spec, covariate_names=covs)
    if args.sampler == "gibbs" and terms.forbids:
        raise ForbidsUnsupported()
    if args.n < 1 or args.waves < 2:
        raise DefmError("--n must be >= 1 and --waves >= 2")
    theta = _parse_theta(args.theta, terms.d)
    cov = None
    if covs:
        if not args.covariates:
            raise DefmError(f"model uses covariates {covs}; pass --covariates")
        cov = _load_covariates(args.covariates, covs, args.n, args.waves)
    init = random_initial_states(args.n, terms.K, args.initial_prob, args.seed) if args.initial_prob > 0 else None
    config = SimConfig(
        theta=theta,
        n_individuals=args.n,
        n_waves=args.waves,
        initial_states=init,
        covariates=cov,
        covariate_names=tuple(covs),
        seed=args.seed,
        sampler=args.sampler,
        gibbs_sweeps=args.sweeps,
    )
    data = simulate_panel(config, terms)
    write_panel(data, args.out)
    inputs = [args.model] + ([args.covariates] if args.covariates else [])
    if args.theta.startswith("@"):
        inputs.append(args.theta[1:])
    write_manifest(args.out, "simulate", inputs, seed=args.seed, argv=args.argv)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="defm", description="Discrete exponential-family models for binary panel outcomes.")
    p.add_argument("--version", action="version", version=f"defm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_flags(sp):
        sp.add_argument("--data", required=True, help="long-format panel CSV")
        sp.add_argument("--id-col", default="id")
        sp.add_argument("--time-col", default="time")
        sp.add_argument("--strict-gaps", action="store_true", help="only pair waves whose times differ by 1")

    c = sub.add_parser("census", help="count observed (t-1, t) patterns")
    data_flags(c)
    c.add_argument("--outcomes", default=None, help="outcome columns to load (default: the subset)")
    c.add_argument("--subset", required=True, help="comma-separated outcomes to tabulate")
    c.add_argument("--out", required=True, help="census CSV to write")
    c.add_argument("--include-zero", action="store_true", help="write unobserved patterns too")
    c.set_defaults(func=cmd_census)

    f = sub.add_parser("fit", help="maximum likelihood fit")
    data_flags(f)
    f.add_argument("--model", required=True)
    f.add_argument("--out", required=True, help="JSON fit artifact to write")
    f.add_argument("--max-iter", type=int, default=200)
    f.add_argument("--format", choices=("text", "csv", "json"), default="text")
    f.add_argument("--threads", type=int, default=None, help="worker threads (default $DEFM_THREADS or 1)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate a panel from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--theta", required=True, help="comma-separated values in term order (write --theta=-1,2 when the first is negative), or @fit.json")
    s.add_argument("--n", type=int, required=True, help="number of individuals")
    s.add_argument("--waves", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sampler", choices=("exact", "gibbs"), default="exact")
    s.add_argument("--sweeps", type=int, default=50, help="Gibbs sweeps per transition")
    s.add_argument("--covariates", default=None, help="CSV with id[,time] and the model's covariate columns")
    s.add_argument("--initial-prob", type=float, default=0.0, help="P(cell = 1) at wave 1")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=None, help="accepted for symmetry; output never depends on it")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "threads", None) is None and os.environ.get("DEFM_THREADS"):
        args.threads = int(os.environ["DEFM_THREADS"])
    try:
        return args.func(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"defm: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ObservedStateExcluded as err:
        print(f"defm: error: {err}", file=sys.stderr)
        return EXIT_EXCLUDED
    except EmptySupport as err:
        print(f"defm: error: {err}", file=sys.stderr)
        return EXIT_EMPTY_SUPPORT
    except ForbidsUnsupported as err:
        print(f"defm: error: ForbidsUnsupported: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (DefmError, OSError, ValueError) as err:
        print(f"defm: error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
