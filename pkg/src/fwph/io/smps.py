"""Two-stage SMPS subset: free-format core, TIME, STOCH.

Supported:

* core: NAME, ROWS (N/L/G/E), COLUMNS with INTORG/INTEND markers, RHS,
  RANGES, BOUNDS (UP LO FX FR MI PL BV LI UI), ENDATA. The first N row is the
  objective; later N rows are dropped.
* time: PERIODS in implicit form (one line per period naming its first
  column and first row) or explicit form (COLUMNS / ROWS sections), with
  exactly two periods.
* stoch: SCENARIOS DISCRETE (parent inheritance, REPLACE or ADD) and
  INDEP DISCRETE (cross product of independent entries). An entry
  ``col row value`` changes a matrix coefficient, an objective coefficient
  when ``row`` is the objective, or a right-hand side when ``col`` is not a
  column name (the RHS set name).

Everything else, such as BLOCKS or continuous distributions, raises
``SmpsUnsupportedError`` naming the construct.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import BINARY, CONTINUOUS, INTEGER, FirstStageData, ScenarioData, TwoStageProblem, validate

PROB_TOL = 1e-9
SENSE = {"L": "<", "G": ">", "E": "="}


class SmpsParseError(ValueError):
    kind = "syntax"

    def __init__(self, source: str, line: int, message: str):
        self.source = source
        self.line = line
        self.message = message
        super().__init__(f"{source} line {line}: {message}")


class SmpsSyntaxError(SmpsParseError):
    kind = "syntax"


class SmpsUnsupportedError(SmpsParseError):
    kind = "unsupported"


class SmpsStructureError(SmpsParseError):
    kind = "structure"


def _lines(text: str):
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.rstrip()
        if not s.strip() or s.lstrip().startswith("*"):
            continue
        yield i, raw[0] not in " \t", s.split()


def _float(src, ln, tok):
    try:
        v = float(tok)
    except ValueError:
        raise SmpsSyntaxError(src, ln, f"expected a number, got {tok!r}") from None
    if math.isnan(v):
        raise SmpsSyntaxError(src, ln, "NaN is not a valid value")
    return v


@dataclass
class CoreModel:
    name: str = ""
    obj: str = ""
    rows: list = field(default_factory=list)          # names in order, objective excluded
    row_type: dict = field(default_factory=dict)
    cols: list = field(default_factory=list)
    col_index: dict = field(default_factory=dict)
    row_index: dict = field(default_factory=dict)
    coef: dict = field(default_factory=dict)          # (row, col) -> value
    cost: dict = field(default_factory=dict)
    rhs: dict = field(default_factory=dict)
    ranges: dict = field(default_factory=dict)
    lb: dict = field(default_factory=dict)
    ub: dict = field(default_factory=dict)
    integer: set = field(default_factory=set)
    rhs_names: set = field(default_factory=set)


def parse_core(text: str, src: str = "core") -> CoreModel:
    m = CoreModel()
    section = None
    in_int = False
    extra_obj = set()
    seen_end = False
    for ln, header, tok in _lines(text):
        if header:
            key = tok[0].upper()
            if key == "NAME":
                m.name = tok[1] if len(tok) > 1 else ""
                section = None
                continue
            if key == "ENDATA":
                seen_end = True
                break
            if key in ("ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS"):
                section = key
                continue
            if key in ("OBJSENSE", "OBJSENSE:", "SOS", "QUADOBJ", "QMATRIX", "QSECTION", "CSECTION",
                       "INDICATORS"):
                raise SmpsUnsupportedError(src, ln, f"unsupported section {key}")
            raise SmpsSyntaxError(src, ln, f"unknown section {tok[0]!r}")
        if section is None:
            raise SmpsSyntaxError(src, ln, "data line outside a section")
        if section == "ROWS":
            if len(tok) != 2:
                raise SmpsSyntaxError(src, ln, "ROWS lines read: type name")
            t, name = tok[0].upper(), tok[1]
            if name in m.row_type or name == m.obj or name in extra_obj:
                raise SmpsSyntaxError(src, ln, f"duplicate row {name!r}")
            if t == "N":
                if m.obj:
                    extra_obj.add(name)
                else:
                    m.obj = name
            elif t in SENSE:
                m.row_index[name] = len(m.rows)
                m.rows.append(name)
                m.row_type[name] = t
            else:
                raise SmpsSyntaxError(src, ln, f"unknown row type {tok[0]!r}")
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                mk = tok[2].strip("'").upper()
                if mk == "INTORG":
                    in_int = True
                elif mk == "INTEND":
                    in_int = False
                else:
                    raise SmpsSyntaxError(src, ln, f"unknown marker {tok[2]!r}")
                continue
            if len(tok) not in (3, 5):
                raise SmpsSyntaxError(src, ln, "COLUMNS lines read: column row value [row value]")
            col = tok[0]
            if col not in m.col_index:
                m.col_index[col] = len(m.cols)
                m.cols.append(col)
                if in_int:
                    m.integer.add(col)
            for r, v in zip(tok[1::2], tok[2::2]):
                val = _float(src, ln, v)
                if r == m.obj:
                    m.cost[col] = val
                elif r in extra_obj:
                    continue
                elif r in m.row_type:
                    m.coef[(r, col)] = val
                else:
                    raise SmpsSyntaxError(src, ln, f"unknown row {r!r}")
        elif section in ("RHS", "RANGES"):
            if len(tok) % 2 == 1:
                setname, pairs = tok[0], tok[1:]
            else:
                setname, pairs = "", tok
            if section == "RHS":
                m.rhs_names.add(setname or "RHS")
            for r, v in zip(pairs[0::2], pairs[1::2]):
                val = _float(src, ln, v)
                if r == m.obj:
                    if val != 0.0:
                        raise SmpsUnsupportedError(src, ln, "unsupported objective constant in RHS")
                    continue
                if r not in m.row_type:
                    raise SmpsSyntaxError(src, ln, f"unknown row {r!r}")
                (m.rhs if section == "RHS" else m.ranges)[r] = val
        elif section == "BOUNDS":
            t = tok[0].upper()
            no_value = t in ("FR", "MI", "PL", "BV")
            if len(tok) == (3 if no_value else 4):
                col = tok[2]
                val = None if no_value else _float(src, ln, tok[3])
            elif len(tok) == (2 if no_value else 3):
                col = tok[1]
                val = None if no_value else _float(src, ln, tok[2])
            elif t == "BV" and len(tok) == 4:
                col, val = tok[2], None
            else:
                raise SmpsSyntaxError(src, ln, f"malformed {t} bound")
            if col not in m.col_index:
                raise SmpsSyntaxError(src, ln, f"unknown column {col!r}")
            if t == "UP":
                m.ub[col] = val
                if val < 0 and m.lb.get(col, 0.0) == 0.0:
                    m.lb[col] = -math.inf
            elif t == "LO":
                m.lb[col] = val
            elif t == "FX":
                m.lb[col] = m.ub[col] = val
            elif t == "FR":
                m.lb[col], m.ub[col] = -math.inf, math.inf
            elif t == "MI":
                m.lb[col] = -math.inf
            elif t == "PL":
                m.ub[col] = math.inf
            elif t == "BV":
                m.lb[col], m.ub[col] = 0.0, 1.0
                m.integer.add(col)
            elif t == "LI":
                m.lb[col] = val
                m.integer.add(col)
            elif t == "UI":
                m.ub[col] = val
                m.integer.add(col)
            else:
                raise SmpsUnsupportedError(src, ln, f"unsupported bound type {t}")
    if not seen_end:
        raise SmpsSyntaxError(src, 0, "missing ENDATA")
    if not m.obj:
        raise SmpsSyntaxError(src, 0, "no objective (N) row")
    if not m.cols:
        raise SmpsSyntaxError(src, 0, "no columns")
    return m


def _bounds(m: CoreModel, col):
    lb = m.lb.get(col, 0.0)
    default_ub = 1.0 if col in m.integer and col not in m.ub else math.inf
    ub = m.ub.get(col, default_ub)
    return lb, ub


def parse_time(text: str, core: CoreModel, src: str = "time"):
    """Returns ``(first-stage column set, first-stage row set)``."""
    section = None
    explicit = False
    periods = []
    col_period = {}
    row_period = {}
    seen_end = False
    for ln, header, tok in _lines(text):
        if header:
            key = tok[0].upper()
            if key == "TIME":
                continue
            if key == "PERIODS":
                section = "PERIODS"
                explicit = len(tok) > 1 and tok[1].upper() == "EXPLICIT"
                if len(tok) > 1 and tok[1].upper() not in ("IMPLICIT", "EXPLICIT"):
                    raise SmpsUnsupportedError(src, ln, f"unsupported PERIODS mode {tok[1]}")
                continue
            if key in ("COLUMNS", "ROWS"):
                section = key
                explicit = True
                continue
            if key == "ENDATA":
                seen_end = True
                break
            raise SmpsUnsupportedError(src, ln, f"unsupported section {tok[0]}")
        if section == "PERIODS":
            if explicit:
                if len(tok) != 1:
                    raise SmpsSyntaxError(src, ln, "explicit PERIODS lines name one period")
                periods.append((tok[0], None, None, ln))
            else:
                if len(tok) != 3:
                    raise SmpsSyntaxError(src, ln, "implicit PERIODS lines read: column row period")
                periods.append((tok[2], tok[0], tok[1], ln))
        elif section in ("COLUMNS", "ROWS"):
            if len(tok) != 2:
                raise SmpsSyntaxError(src, ln, f"{section} lines read: name period")
            (col_period if section == "COLUMNS" else row_period)[tok[0]] = (tok[1], ln)
        else:
            raise SmpsSyntaxError(src, ln, "data line outside a section")
    if not seen_end:
        raise SmpsSyntaxError(src, 0, "missing ENDATA")
    if len(periods) != 2:
        raise SmpsUnsupportedError(src, 0, f"unsupported number of periods ({len(periods)}); exactly two are handled")
    p1, p2 = periods[0][0], periods[1][0]
    if not explicit:
        c2, r2, ln = periods[1][1], periods[1][2], periods[1][3]
        if c2 not in core.col_index:
            raise SmpsSyntaxError(src, ln, f"unknown column {c2!r}")
        if r2 not in core.row_index:
            raise SmpsSyntaxError(src, ln, f"unknown row {r2!r}")
        if periods[0][1] != core.cols[0]:
            raise SmpsStructureError(src, periods[0][3], "first period must start at the first column")
        first_cols = set(core.cols[:core.col_index[c2]])
        first_rows = set(core.rows[:core.row_index[r2]])
        return first_cols, first_rows
    first_cols, first_rows = set(), set()
    for names, table, kind in ((core.cols, col_period, "column"), (core.rows, row_period, "row")):
        for name, (per, ln) in table.items():
            if name not in (core.col_index if kind == "column" else core.row_index):
                raise SmpsSyntaxError(src, ln, f"unknown {kind} {name!r}")
            if per not in (p1, p2):
                raise SmpsSyntaxError(src, ln, f"unknown period {per!r}")
        for name in names:
            if name not in table:
                raise SmpsStructureError(src, 0, f"{kind} {name!r} has no period")
            if table[name][0] == p1:
                (first_cols if kind == "column" else first_rows).add(name)
    return first_cols, first_rows


@dataclass
class _Change:
    col: str
    row: str
    value: float
    line: int


def parse_stoch(text: str, core: CoreModel, src: str = "stoch"):
    """Returns ``[(probability, [changes...], add_mode)]`` in scenario order."""
    section = None
    mode = "REPLACE"
    scen = {}
    order = []
    current = None
    indep = {}
    indep_order = []
    seen_end = False
    for ln, header, tok in _lines(text):
        if header:
            key = tok[0].upper()
            if key == "STOCH":
                continue
            if key == "ENDATA":
                seen_end = True
                break
            if key in ("SCENARIOS", "INDEP"):
                dist = tok[1].upper() if len(tok) > 1 else "DISCRETE"
                if dist != "DISCRETE":
                    raise SmpsUnsupportedError(src, ln, f"unsupported distribution {key} {dist}")
                if section is not None and section != key:
                    raise SmpsUnsupportedError(src, ln, "unsupported mix of SCENARIOS and INDEP sections")
                mode = tok[2].upper() if len(tok) > 2 else "REPLACE"
                if mode not in ("REPLACE", "ADD"):
                    raise SmpsUnsupportedError(src, ln, f"unsupported modifier {tok[2]}")
                section = key
                continue
            raise SmpsUnsupportedError(src, ln, f"unsupported section {tok[0]}")
        if section == "SCENARIOS":
            if tok[0].upper() == "SC":
                if len(tok) < 4:
                    raise SmpsSyntaxError(src, ln, "SC lines read: SC name parent probability [period]")
                name, parent = tok[1], tok[2]
                prob = _float(src, ln, tok[3])
                if name in scen:
                    raise SmpsSyntaxError(src, ln, f"duplicate scenario {name!r}")
                if parent.upper() != "ROOT" and parent not in scen:
                    raise SmpsSyntaxError(src, ln, f"unknown parent scenario {parent!r}")
                scen[name] = {"parent": None if parent.upper() == "ROOT" else parent, "p": prob,
                              "changes": [], "line": ln}
                order.append(name)
                current = name
                continue
            if current is None:
                raise SmpsSyntaxError(src, ln, "entry before the first SC line")
            if len(tok) not in (3, 5):
                raise SmpsSyntaxError(src, ln, "scenario entries read: column row value [row value]")
            for r, v in zip(tok[1::2], tok[2::2]):
                scen[current]["changes"].append(_Change(tok[0], r, _float(src, ln, v), ln))
        elif section == "INDEP":
            if len(tok) not in (4, 5):
                raise SmpsSyntaxError(src, ln, "INDEP entries read: column row value [period] probability")
            key = (tok[0], tok[1])
            if key not in indep:
                indep[key] = []
                indep_order.append(key)
            indep[key].append((_float(src, ln, tok[2]), _float(src, ln, tok[-1]), ln))
        else:
            raise SmpsSyntaxError(src, ln, "data line outside a section")
    if not seen_end:
        raise SmpsSyntaxError(src, 0, "missing ENDATA")
    out = []
    if section == "SCENARIOS":
        for name in order:
            chain = []
            s = name
            while s is not None:
                chain.append(s)
                s = scen[s]["parent"]
            changes = []
            for s in reversed(chain):
                changes += scen[s]["changes"]
            out.append((scen[name]["p"], changes, mode == "ADD", scen[name]["line"]))
    elif section == "INDEP":
        for key in indep_order:
            tot = math.fsum(p for _, p, _ in indep[key])
            if abs(tot - 1.0) > PROB_TOL:
                raise SmpsStructureError(src, indep[key][0][2],
                                         f"probabilities of {key[0]} {key[1]} sum to {tot} != 1")
        for combo in itertools.product(*(indep[k] for k in indep_order)):
            p = math.prod(c[1] for c in combo)
            changes = [_Change(k[0], k[1], c[0], c[2]) for k, c in zip(indep_order, combo)]
            out.append((p, changes, mode == "ADD", combo[0][2] if combo else 0))
    else:
        raise SmpsStructureError(src, 0, "no SCENARIOS or INDEP section")
    return out


def parse_smps(core_text: str, time_text: str, stoch_text: str, check_boundedness: bool = True) -> TwoStageProblem:
    core = parse_core(core_text)
    first_cols, first_rows = parse_time(time_text, core)
    scen_specs = parse_stoch(stoch_text, core)
    xs = [c for c in core.cols if c in first_cols]
    ys = [c for c in core.cols if c not in first_cols]
    xi = {c: i for i, c in enumerate(xs)}
    yi = {c: i for i, c in enumerate(ys)}
    r1 = [r for r in core.rows if r in first_rows]
    r2 = [r for r in core.rows if r not in first_rows]
    if not xs:
        raise SmpsStructureError("time", 0, "first period has no columns")
    for (r, c) in core.coef:
        if r in first_rows and c not in first_cols and core.coef[(r, c)] != 0.0:
            raise SmpsStructureError("core", 0, f"first-period row {r!r} uses second-period column {c!r}")

    def kind(c):
        if c not in core.integer:
            return CONTINUOUS
        lb, ub = _bounds(core, c)
        return BINARY if lb == 0.0 and ub == 1.0 else INTEGER

    def expand_rows(rows, rhs_of):
        """Ranged rows become two inequalities; returns (name, sense, rhs) triples."""
        out = []
        for r in rows:
            t = core.row_type[r]
            b = rhs_of(r)
            if r in core.ranges:
                R = core.ranges[r]
                if t == "E":
                    lo, hi = (b, b + abs(R)) if R >= 0 else (b - abs(R), b)
                elif t == "L":
                    lo, hi = b - abs(R), b
                else:
                    lo, hi = b, b + abs(R)
                out += [(r, ">", lo), (r, "<", hi)]
            else:
                out.append((r, SENSE[t], b))
        return out

    c = np.array([core.cost.get(col, 0.0) for col in xs])
    first_rows_exp = expand_rows(r1, lambda r: core.rhs.get(r, 0.0))
    A1 = np.array([[core.coef.get((r, col), 0.0) for col in xs] for r, _, _ in first_rows_exp]).reshape(-1, len(xs))
    bx = [_bounds(core, col) for col in xs]
    first = FirstStageData(c=c, A=A1, senses=[s for _, s, _ in first_rows_exp], rhs=[b for _, _, b in first_rows_exp],
                           lb=[b[0] for b in bx], ub=[b[1] for b in bx], kinds=[kind(col) for col in xs])
    by = [_bounds(core, col) for col in ys]
    scenarios = []
    for p, changes, add, ln in scen_specs:
        coef = dict(core.coef)
        cost = dict(core.cost)
        rhs = dict(core.rhs)
        for ch in changes:
            if ch.col in core.col_index:
                if ch.row == core.obj:
                    if ch.col in first_cols:
                        raise SmpsStructureError("stoch", ch.line, f"objective of first-period column {ch.col!r} is random")
                    cost[ch.col] = (cost.get(ch.col, 0.0) if add else 0.0) + ch.value
                elif ch.row in core.row_type:
                    if ch.row in first_rows:
                        raise SmpsStructureError("stoch", ch.line, f"row {ch.row!r} belongs to the first period")
                    key = (ch.row, ch.col)
                    coef[key] = (coef.get(key, 0.0) if add else 0.0) + ch.value
                else:
                    raise SmpsSyntaxError("stoch", ch.line, f"unknown row {ch.row!r}")
            else:
                if ch.row not in core.row_type:
                    raise SmpsSyntaxError("stoch", ch.line, f"unknown row {ch.row!r}")
                if ch.row in first_rows:
                    raise SmpsStructureError("stoch", ch.line, f"row {ch.row!r} belongs to the first period")
                rhs[ch.row] = (rhs.get(ch.row, 0.0) if add else 0.0) + ch.value
        rows = expand_rows(r2, lambda r: rhs.get(r, 0.0))
        T = np.array([[coef.get((r, col), 0.0) for col in xs] for r, _, _ in rows]).reshape(-1, len(xs))
        W = np.array([[coef.get((r, col), 0.0) for col in ys] for r, _, _ in rows]).reshape(-1, len(ys))
        scenarios.append(ScenarioData(p=p, q=[cost.get(col, 0.0) for col in ys], W=W, T=T,
                                      h=[b for _, _, b in rows], y_lb=[b[0] for b in by], y_ub=[b[1] for b in by],
                                      y_kinds=[kind(col) for col in ys], senses=[s for _, s, _ in rows]))
    tot = math.fsum(s.p for s in scenarios)
    if abs(tot - 1.0) > PROB_TOL:
        raise SmpsStructureError("stoch", 0, f"scenario probabilities sum to {tot} != 1")
    if tot != 1.0:
        # absorb rounding of the file's decimal probabilities
        for s in scenarios:
            s.p = s.p / tot
        scenarios[-1].p = 1.0 - math.fsum(s.p for s in scenarios[:-1])
    problem = TwoStageProblem(first, scenarios, name=core.name,
                              meta={"source": "smps", "columns": " ".join(xs + ys)})
    report = validate(problem, check_boundedness=check_boundedness)
    if not report.ok:
        raise SmpsStructureError("smps", 0, str(report))
    return problem


def find_triple(stem) -> tuple[Path, Path, Path]:
    """Locate ``stem.cor|.core|.mps``, ``stem.tim|.time``, ``stem.sto|.stoch``."""
    stem = Path(stem)
    if stem.suffix.lower() in (".cor", ".core", ".mps", ".tim", ".time", ".sto", ".stoch", ".smps"):
        stem = stem.with_suffix("")
    found = []
    for exts in ((".cor", ".core", ".mps"), (".tim", ".time"), (".sto", ".stoch")):
        for e in exts:
            for cand in (stem.with_suffix(e), stem.with_suffix(e.upper())):
                if cand.exists():
                    found.append(cand)
                    break
            else:
                continue
            break
        else:
            raise FileNotFoundError(f"no {'/'.join(exts)} file for {stem}")
    return found[0], found[1], found[2]


def read_smps(stem) -> TwoStageProblem:
    core, time_, stoch = find_triple(stem)
    return parse_smps(core.read_text(), time_.read_text(), stoch.read_text())
