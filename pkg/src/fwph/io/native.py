"""Line-oriented native instance format.

Example::

    fwph-native 1
    name tiny
    meta ref_smip -3.5
    first-stage
      n 2
      c 1.0 2.0
      lb 0.0 0.0
      ub 1.0 1.0
      kind B B
      row < 1.0 : 1.0 1.0
    scenario
      p 1.0
      n 1
      q 3.0
      lb 0.0
      ub inf
      kind C
      row > 2.0 : T 1.0 1.0 : W 1.0
    end

Floats are written with ``repr`` so ``parse_native(write_native(p))``
reproduces every value bit for bit. ``row`` senses are ``<``, ``=``, ``>``;
scenario rows read ``T x + W y (sense) rhs``.
"""
from __future__ import annotations

import math

import numpy as np

from ..model import KINDS, FirstStageData, ScenarioData, TwoStageProblem, validate

HEADER = "fwph-native 1"


class NativeParseError(ValueError):
    kind = "syntax"

    def __init__(self, line: int, col: int, message: str):
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"line {line}, column {col}: {message}")


class NativeSyntaxError(NativeParseError):
    kind = "syntax"


class NativeDimensionError(NativeParseError):
    kind = "dimension"


class NativeProbabilityError(NativeParseError):
    kind = "probability"


def _fmt(v: float) -> str:
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _vec(vals) -> str:
    return " ".join(_fmt(v) for v in vals)


def write_native(problem: TwoStageProblem) -> str:
    out = [HEADER]
    if problem.name:
        out.append(f"name {problem.name}")
    for k, v in problem.meta.items():
        out.append(f"meta {k} {v}")
    f = problem.first
    out += ["first-stage", f"  n {f.n}", f"  c {_vec(f.c)}", f"  lb {_vec(f.lb)}",
            f"  ub {_vec(f.ub)}", f"  kind {' '.join(f.kinds)}"]
    for i, s in enumerate(f.senses):
        out.append(f"  row {s} {_fmt(f.rhs[i])} : {_vec(f.A[i])}")
    for sc in problem.scenarios:
        out += ["scenario", f"  p {_fmt(sc.p)}", f"  n {sc.n}", f"  q {_vec(sc.q)}",
                f"  lb {_vec(sc.y_lb)}", f"  ub {_vec(sc.y_ub)}", f"  kind {' '.join(sc.y_kinds)}"]
        for i, s in enumerate(sc.senses):
            out.append(f"  row {s} {_fmt(sc.h[i])} : T {_vec(sc.T[i])} : W {_vec(sc.W[i])}")
    out.append("end")
    return "\n".join(out) + "\n"


class _Tok:
    __slots__ = ("text", "line", "col")

    def __init__(self, text, line, col):
        self.text, self.line, self.col = text, line, col


def _tokens(raw: str, lineno: int) -> list:
    toks = []
    i = 0
    while i < len(raw):
        if raw[i].isspace():
            i += 1
            continue
        j = i
        while j < len(raw) and not raw[j].isspace():
            j += 1
        toks.append(_Tok(raw[i:j], lineno, i + 1))
        i = j
    return toks


def _num(tok: _Tok) -> float:
    try:
        v = float(tok.text)
    except ValueError:
        raise NativeSyntaxError(tok.line, tok.col, f"expected a number, got {tok.text!r}") from None
    if math.isnan(v):
        raise NativeSyntaxError(tok.line, tok.col, "NaN is not allowed")
    return v


def _int(tok: _Tok) -> int:
    try:
        v = int(tok.text)
    except ValueError:
        raise NativeSyntaxError(tok.line, tok.col, f"expected an integer, got {tok.text!r}") from None
    if v < 0:
        raise NativeDimensionError(tok.line, tok.col, "dimension must be non-negative")
    return v


class _Section:
    def __init__(self, kind, line):
        self.kind = kind
        self.line = line
        self.n = None
        self.n_tok = None
        self.vals = {}
        self.rows = []
        self.p = None


def parse_native(text: str, check_boundedness: bool = True) -> TwoStageProblem:
    """Parse a native document; every failure is a located ``NativeParseError``."""
    if not isinstance(text, str):
        raise NativeSyntaxError(1, 1, "document must be text")
    lines = text.splitlines()
    name = ""
    meta = {}
    sections = []
    cur = None
    seen_header = False
    ended = False
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.split("#", 1)[0]
        toks = _tokens(stripped, lineno)
        if not toks:
            continue
        key = toks[0]
        if ended:
            raise NativeSyntaxError(lineno, key.col, "content after 'end'")
        if not seen_header:
            if key.text != "fwph-native" or len(toks) != 2 or toks[1].text != "1":
                raise NativeSyntaxError(lineno, key.col, f"expected header {HEADER!r}")
            seen_header = True
            continue
        if key.text == "name":
            name = stripped[key.col + 3:].strip()
            continue
        if key.text == "meta":
            if len(toks) < 3:
                raise NativeSyntaxError(lineno, key.col, "meta needs a key and a value")
            meta[toks[1].text] = stripped[toks[2].col - 1:].strip()
            continue
        if key.text in ("first-stage", "scenario"):
            if len(toks) != 1:
                raise NativeSyntaxError(lineno, toks[1].col, f"unexpected token after {key.text!r}")
            if key.text == "first-stage" and sections:
                raise NativeSyntaxError(lineno, key.col, "duplicate or misplaced first-stage section")
            if key.text == "scenario" and not sections:
                raise NativeSyntaxError(lineno, key.col, "scenario before first-stage section")
            cur = _Section(key.text, lineno)
            sections.append(cur)
            continue
        if key.text == "end":
            ended = True
            continue
        if cur is None:
            raise NativeSyntaxError(lineno, key.col, f"unexpected {key.text!r} outside a section")
        _section_line(cur, key, toks[1:], sections[0] if sections else None)
    if not seen_header:
        raise NativeSyntaxError(1, 1, f"missing header {HEADER!r}")
    if not ended:
        raise NativeSyntaxError(len(lines) + 1, 1, "missing 'end'")
    if not sections:
        raise NativeSyntaxError(len(lines), 1, "missing first-stage section")
    first = _build_first(sections[0])
    scen_secs = sections[1:]
    if not scen_secs:
        raise NativeSyntaxError(len(lines), 1, "no scenario sections")
    scenarios = [_build_scenario(sec, first.n) for sec in scen_secs]
    total = math.fsum(sc.p for sc in scenarios)
    if abs(total - 1.0) > 1e-12:
        raise NativeProbabilityError(scen_secs[0].line, 1, f"scenario probabilities sum to {total!r}, not 1")
    problem = TwoStageProblem(first, scenarios, name=name, meta=meta)
    report = validate(problem, check_boundedness=check_boundedness)
    if not report.ok:
        raise NativeDimensionError(sections[0].line, 1, "invalid instance: " + str(report))
    return problem


_VECTOR_KEYS = {"c", "q", "lb", "ub"}


def _section_line(sec: _Section, key: _Tok, rest: list, first_sec):
    k = key.text
    if k == "n":
        if len(rest) != 1:
            raise NativeSyntaxError(key.line, key.col, "'n' takes one integer")
        if sec.n is not None:
            raise NativeSyntaxError(key.line, key.col, "duplicate 'n'")
        sec.n = _int(rest[0])
        sec.n_tok = rest[0]
        return
    if k == "p":
        if sec.kind != "scenario" or len(rest) != 1:
            raise NativeSyntaxError(key.line, key.col, "'p' takes one number inside a scenario")
        sec.p = _num(rest[0])
        if not sec.p > 0:
            raise NativeProbabilityError(rest[0].line, rest[0].col, "probability must be positive")
        return
    if sec.n is None and k != "row":
        raise NativeSyntaxError(key.line, key.col, "'n' must come first in a section")
    if k == "c" and sec.kind != "first-stage" or k == "q" and sec.kind != "scenario":
        raise NativeSyntaxError(key.line, key.col, f"{k!r} not allowed in a {sec.kind} section")
    if k in _VECTOR_KEYS:
        if k in sec.vals:
            raise NativeSyntaxError(key.line, key.col, f"duplicate {k!r}")
        if len(rest) != sec.n:
            raise NativeDimensionError(key.line, key.col, f"{k!r} has {len(rest)} entries, expected {sec.n}")
        sec.vals[k] = [_num(t) for t in rest]
        return
    if k == "kind":
        if "kind" in sec.vals:
            raise NativeSyntaxError(key.line, key.col, "duplicate 'kind'")
        if len(rest) != sec.n:
            raise NativeDimensionError(key.line, key.col, f"'kind' has {len(rest)} entries, expected {sec.n}")
        for t in rest:
            if t.text not in KINDS:
                raise NativeSyntaxError(t.line, t.col, f"kind must be one of {KINDS}, got {t.text!r}")
        sec.vals["kind"] = [t.text for t in rest]
        return
    if k == "row":
        if sec.n is None:
            raise NativeSyntaxError(key.line, key.col, "'n' must come before rows")
        sec.rows.append(_parse_row(sec, key, rest, first_sec))
        return
    raise NativeSyntaxError(key.line, key.col, f"unknown keyword {k!r}")


def _split_colons(rest):
    parts = [[]]
    for t in rest:
        if t.text == ":":
            parts.append([])
        else:
            parts[-1].append(t)
    return parts


def _parse_row(sec, key, rest, first_sec):
    if len(rest) < 2 or rest[0].text not in ("<", "=", ">"):
        col = rest[0].col if rest else key.col
        raise NativeSyntaxError(key.line, col, "row must start with a sense (<, =, >) and a rhs")
    sense = rest[0].text
    rhs = _num(rest[1])
    parts = _split_colons(rest[2:])
    if parts[0]:
        raise NativeSyntaxError(key.line, parts[0][0].col, "expected ':' after the rhs")
    parts = parts[1:]
    if sec.kind == "first-stage":
        if len(parts) != 1:
            raise NativeSyntaxError(key.line, key.col, "first-stage row needs exactly one coefficient block")
        coefs = parts[0]
        if len(coefs) != sec.n:
            raise NativeDimensionError(key.line, key.col, f"row has {len(coefs)} coefficients, expected {sec.n}")
        return sense, rhs, [_num(t) for t in coefs], None
    if len(parts) != 2 or not parts[0] or not parts[1] or parts[0][0].text != "T" or parts[1][0].text != "W":
        raise NativeSyntaxError(key.line, key.col, "scenario row must read '<sense> <rhs> : T ... : W ...'")
    n_x = first_sec.n if first_sec is not None and first_sec.n is not None else 0
    tcoef = parts[0][1:]
    wcoef = parts[1][1:]
    if len(tcoef) != n_x:
        raise NativeDimensionError(key.line, parts[0][0].col, f"T block has {len(tcoef)} entries, expected n_x = {n_x}")
    if len(wcoef) != sec.n:
        raise NativeDimensionError(key.line, parts[1][0].col, f"W block has {len(wcoef)} entries, expected {sec.n}")
    return sense, rhs, [_num(t) for t in tcoef], [_num(t) for t in wcoef]


def _require(sec, keys):
    for k in keys:
        if k not in sec.vals:
            raise NativeSyntaxError(sec.line, 1, f"{sec.kind} section is missing {k!r}")


def _build_first(sec) -> FirstStageData:
    if sec.n is None:
        raise NativeSyntaxError(sec.line, 1, "first-stage section is missing 'n'")
    _require(sec, ("c", "lb", "ub", "kind"))
    n = sec.n
    A = np.array([r[2] for r in sec.rows], dtype=float).reshape(len(sec.rows), n)
    return FirstStageData(
        c=sec.vals["c"], A=A, senses=[r[0] for r in sec.rows], rhs=[r[1] for r in sec.rows],
        lb=sec.vals["lb"], ub=sec.vals["ub"], kinds=sec.vals["kind"])


def _build_scenario(sec, n_x) -> ScenarioData:
    if sec.n is None:
        raise NativeSyntaxError(sec.line, 1, "scenario section is missing 'n'")
    if sec.p is None:
        raise NativeProbabilityError(sec.line, 1, "scenario section is missing 'p'")
    _require(sec, ("q", "lb", "ub", "kind"))
    m = len(sec.rows)
    T = np.array([r[2] for r in sec.rows], dtype=float).reshape(m, n_x)
    W = np.array([r[3] for r in sec.rows], dtype=float).reshape(m, sec.n)
    return ScenarioData(
        p=sec.p, q=sec.vals["q"], W=W, T=T, h=[r[1] for r in sec.rows],
        y_lb=sec.vals["lb"], y_ub=sec.vals["ub"], y_kinds=sec.vals["kind"],
        senses=[r[0] for r in sec.rows])


def read_native(path) -> TwoStageProblem:
    with open(path, encoding="utf-8") as fh:
        return parse_native(fh.read())
