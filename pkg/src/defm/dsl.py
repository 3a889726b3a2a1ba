"""A small line-oriented language for declaring model terms.

Example model file::

    outcomes alcohol, tobacco, mj
    term int_alc = logit(alcohol)
    term alc_age = logit(alcohol) * age
    term a2t     = {alcohol+, tobacco-} -> {alcohol+, tobacco+}
    term corr    = {alcohol+, tobacco+} + {alcohol-, tobacco-}
    forbid {alcohol+} -> {alcohol-}

Grammar (``#`` starts a comment)::

    outcomes <name> ("," <name>)*
    term <name> "=" <expr> ["*" <covariate>]
    forbid <pattern> "->" <pattern>
    <expr>    := "logit(" <outcome> ")" | <pair> ("+" <pair>)*
    <pair>    := <pattern> ["->" <pattern>]
    <pattern> := "{" <outcome> ("+"|"-") ("," <outcome> ("+"|"-"))* "}"

A pair without ``->`` constrains the current wave only.  The statistic of a
term is the sum of its pattern indicators, times the covariate if given.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import DuplicateTerm, ModelSyntaxError, UnknownCovariate, UnknownOutcome

__all__ = ["PatternPair", "TermDecl", "ModelSpec", "parse_model", "format_model", "load_model"]

Constraint = tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class PatternPair:
    """Partial assignments of outcomes at t-1 (``prev``) and t (``cur``)."""

    prev: Constraint = ()
    cur: Constraint = ()

    def __post_init__(self):
        if not self.prev and not self.cur:
            raise ValueError("a pattern needs at least one constraint")

    @property
    def outcomes(self) -> set[str]:
        return {n for n, _ in self.prev} | {n for n, _ in self.cur}


@dataclass(frozen=True)
class TermDecl:
    name: str
    kind: str  # "logit" | "transition" | "association"
    patterns: tuple[PatternPair, ...]
    covariate: str | None = None
    line: int | None = field(default=None, compare=False)

    @property
    def outcomes(self) -> set[str]:
        out: set[str] = set()
        for p in self.patterns:
            out |= p.outcomes
        return out


@dataclass(frozen=True)
class ModelSpec:
    outcomes: tuple[str, ...]
    terms: tuple[TermDecl, ...]
    forbids: tuple[PatternPair, ...] = ()

    @property
    def term_names(self) -> list[str]:
        return [t.name for t in self.terms]

    @property
    def covariates(self) -> list[str]:
        """Referenced covariates in order of first use."""
        seen: list[str] = []
        for t in self.terms:
            if t.covariate is not None and t.covariate not in seen:
                seen.append(t.covariate)
        return seen


def infer_kind(patterns) -> str:
    if any(p.prev for p in patterns):
        return "transition"
    names = set().union(*(p.outcomes for p in patterns))
    return "logit" if len(names) == 1 else "association"


# -- lexer ------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<arrow>->)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[{}(),+\-=*])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str  # "name", a punctuation char, "->", or "eol"
    value: str
    line: int
    col: int


def _tokenize(line: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(line):
        if line[pos] == "#":
            break
        m = _TOKEN.match(line, pos)
        if m is None:
            raise ModelSyntaxError(lineno, pos + 1, "a name or one of { } ( ) , + - = * ->", line[pos])
        kind = m.lastgroup
        if kind == "name":
            toks.append(_Tok("name", m.group(), lineno, pos + 1))
        elif kind == "arrow":
            toks.append(_Tok("->", "->", lineno, pos + 1))
        elif kind == "punct":
            toks.append(_Tok(m.group(), m.group(), lineno, pos + 1))
        pos = m.end()
    toks.append(_Tok("eol", "", lineno, len(line) + 1))
    return toks


class _Line:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind, what=None) -> _Tok:
        t = self.next()
        if t.kind != kind:
            raise ModelSyntaxError(t.line, t.col, what or repr(kind), t.value or "end of line")
        return t

    def accept(self, kind) -> bool:
        if self.peek().kind == kind:
            self.i += 1
            return True
        return False


def _pattern(ln: _Line) -> Constraint:
    ln.expect("{", "'{'")
    items = []
    seen = set()
    while True:
        t = ln.expect("name", "an outcome name")
        sign = ln.next()
        if sign.kind not in ("+", "-"):
            raise ModelSyntaxError(sign.line, sign.col, "'+' or '-' after outcome", sign.value or "end of line")
        if t.value in seen:
            raise ModelSyntaxError(t.line, t.col, "each outcome at most once per pattern", t.value)
        seen.add(t.value)
        items.append((t.value, 1 if sign.kind == "+" else 0))
        if ln.accept(","):
            continue
        ln.expect("}", "',' or '}'")
        return tuple(items)


def _pair(ln: _Line) -> PatternPair:
    first = _pattern(ln)
    if ln.accept("->"):
        return PatternPair(first, _pattern(ln))
    return PatternPair((), first)


def _expr(ln: _Line) -> tuple[PatternPair, ...]:
    t = ln.peek()
    if t.kind == "name" and t.value == "logit":
        ln.next()
        ln.expect("(", "'('")
        o = ln.expect("name", "an outcome name")
        ln.expect(")", "')'")
        return (PatternPair((), ((o.value, 1),)),)
    if t.kind != "{":
        raise ModelSyntaxError(t.line, t.col, "'logit(' or '{'", t.value or "end of line")
    pairs = [_pair(ln)]
    while ln.accept("+"):
        pairs.append(_pair(ln))
    return tuple(pairs)


def parse_model(text: str, covariates=None) -> ModelSpec:
    """Parse model text.

    Outcomes must be declared on an ``outcomes`` line; if ``covariates`` is
    given, term multipliers are checked against it.
    """
    outcomes: list[str] = []
    terms: list[TermDecl] = []
    forbids: list[tuple[PatternPair, int]] = []
    names: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        ln = _Line(_tokenize(raw, lineno))
        head = ln.peek()
        if head.kind == "eol":
            continue
        if head.kind != "name" or head.value not in ("outcomes", "term", "forbid"):
            raise ModelSyntaxError(head.line, head.col, "'outcomes', 'term' or 'forbid'", head.value)
        ln.next()
        if head.value == "outcomes":
            while True:
                t = ln.expect("name", "an outcome name")
                if t.value in outcomes:
                    raise ModelSyntaxError(t.line, t.col, "distinct outcome names", t.value)
                outcomes.append(t.value)
                if not ln.accept(","):
                    break
        elif head.value == "term":
            t = ln.expect("name", "a term name")
            if t.value in names:
                raise DuplicateTerm(t.value, lineno)
            ln.expect("=", "'='")
            patterns = _expr(ln)
            cov = None
            if ln.accept("*"):
                cov = ln.expect("name", "a covariate name").value
            names.add(t.value)
            terms.append(TermDecl(t.value, infer_kind(patterns), patterns, cov, lineno))
        else:
            prev = _pattern(ln)
            ln.expect("->", "'->'")
            forbids.append((PatternPair(prev, _pattern(ln)), lineno))
        end = ln.peek()
        if end.kind != "eol":
            raise ModelSyntaxError(end.line, end.col, "end of line", end.value)

    if not terms:
        raise ModelSyntaxError(max(1, len(text.splitlines())), 1, "at least one 'term' line")

    declared = set(outcomes)
    for term in terms:
        for name in sorted(term.outcomes - declared):
            raise UnknownOutcome(name, term.line)
        if covariates is not None and term.covariate is not None and term.covariate not in covariates:
            raise UnknownCovariate(term.covariate, term.line)
    for pair, lineno in forbids:
        for name in sorted(pair.outcomes - declared):
            raise UnknownOutcome(name, lineno)

    return ModelSpec(tuple(outcomes), tuple(terms), tuple(p for p, _ in forbids))


def load_model(path, covariates=None) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read(), covariates)


def _fmt_pattern(c: Constraint) -> str:
    return "{" + ", ".join(f"{n}{'+' if v else '-'}" for n, v in c) + "}"


def _fmt_pair(p: PatternPair) -> str:
    if p.prev:
        return f"{_fmt_pattern(p.prev)} -> {_fmt_pattern(p.cur)}"
    return _fmt_pattern(p.cur)


def format_term_expr(term: TermDecl) -> str:
    pats = term.patterns
    if len(pats) == 1 and not pats[0].prev and len(pats[0].cur) == 1 and pats[0].cur[0][1] == 1:
        expr = f"logit({pats[0].cur[0][0]})"
    else:
        expr = " + ".join(_fmt_pair(p) for p in pats)
    if term.covariate is not None:
        expr += f" * {term.covariate}"
    return expr


def format_model(spec: ModelSpec) -> str:
    """Render a spec back to model text; parsing the result gives an equal spec."""
    lines = ["outcomes " + ", ".join(spec.outcomes)]
    lines += [f"term {t.name} = {format_term_expr(t)}" for t in spec.terms]
    lines += [f"forbid {_fmt_pattern(f.prev)} -> {_fmt_pattern(f.cur)}" for f in spec.forbids]
    return "\n".join(lines) + "\n"
