import io
import math
import re
from pathlib import Path

import numpy as np
import pytest

from fwph import cli
from fwph.io.generate import generate_instance
from fwph.io.native import write_native
from fwph.io.trace import HEADER, read_trace
from fwph.model import CONTINUOUS, INTEGER, FirstStageData, ScenarioData, TwoStageProblem
from refs import oracle_values

G1 = 114
SMPS = Path(__file__).parent / "data" / "smps" / "tiny.cor"


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def g1(tmp_path):
    path = tmp_path / "g1.native"
    assert run("gen", "--seed", G1, "--out", path)[0] == 0
    return path


def summary(text):
    return dict(re.findall(r"(\w+)=(\S+)", text))


def test_gen_writes_generator_document(tmp_path):
    code, out, _ = run("gen", "--seed", G1)
    assert code == 0 and out == generate_instance(G1)[1]


def test_fwph_end_to_end(g1, tmp_path):
    ld, smip = oracle_values(G1)
    trace = tmp_path / "t.csv"
    code, out, err = run("fwph", "--instance", g1, "--rho", 10, "--alpha", 0, "--eps", 1e-3,
                         "--trace", trace, "--ref-value", smip)
    assert code == 0, err
    s = summary(out)
    assert s["term"] == "C" and s["method"] == "fwph"
    best = float(s["best_phi"])
    assert best <= ld + 1e-6 * (1 + abs(ld))
    assert float(s["gap"].rstrip("%")) == pytest.approx(abs((smip - best) / smip) * 100, abs=1e-4)
    rows = read_trace(trace)
    assert len(rows) == int(s["iters"]) and rows[0]["iter"] == "1"
    assert list(rows[0].keys()) == HEADER
    assert float(rows[-1]["residual"]) < 1e-3


def test_trace_independent_of_threads(g1, tmp_path):
    cols = []
    for threads in (1, 3):
        trace = tmp_path / f"t{threads}.csv"
        assert run("fwph", "--instance", g1, "--rho", 10, "--eps", 0, "--kmax", 20, "--threads", threads,
                   "--trace", trace)[0] == 0
        cols.append([{k: v for k, v in r.items() if k != "wall_s"} for r in read_trace(trace)])
    assert cols[0] == cols[1]


def test_ph_on_general_integer_first_stage(tmp_path):
    first = FirstStageData(c=[1.0], A=np.zeros((0, 1)), senses=[], rhs=[], lb=[0], ub=[3], kinds=[INTEGER])
    sc = ScenarioData(p=1.0, q=[1.0], W=[[1.0]], T=[[1.0]], h=[2.0], y_lb=[0.0], y_ub=[5.0],
                      y_kinds=[CONTINUOUS], senses=[">"])
    path = tmp_path / "int.native"
    path.write_text(write_native(TwoStageProblem(first, [sc])))
    code, _, err = run("ph", "--instance", path, "--rho", 1)
    assert code == cli.EXIT_PRECONDITION and "x[0]" in err
    # FW-PH handles it
    assert run("fwph", "--instance", path, "--rho", 1)[0] == 0


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.native"
    bad.write_text("not an instance\n")
    code, _, err = run("fwph", "--instance", bad, "--rho", 1)
    assert code == cli.EXIT_PARSE and "line 1" in err
    assert run("fwph", "--instance", tmp_path / "missing.native", "--rho", 1)[0] == cli.EXIT_PARSE


def test_usage_errors(g1):
    assert run()[0] == cli.EXIT_USAGE
    assert run("fwph", "--instance", g1)[0] == cli.EXIT_USAGE
    assert run("sweep", "--instance", g1, "--rho", "1,x")[0] == cli.EXIT_USAGE
    assert run("fwph", "--instance", g1, "--rho", -1)[0] == cli.EXIT_USAGE
    assert run("bogus")[0] == cli.EXIT_USAGE


def test_subproblem_failure(tmp_path):
    # scenario 1 has an empty feasible set
    first = FirstStageData(c=[1.0], A=np.zeros((0, 1)), senses=[], rhs=[], lb=[0], ub=[1], kinds=["B"])
    ok = ScenarioData(p=0.5, q=[1.0], W=[[1.0]], T=[[0.0]], h=[0.0], y_lb=[0.0], y_ub=[1.0],
                      y_kinds=[CONTINUOUS], senses=[">"])
    empty = ScenarioData(p=0.5, q=[1.0], W=[[1.0]], T=[[0.0]], h=[2.0], y_lb=[0.0], y_ub=[1.0],
                         y_kinds=[CONTINUOUS], senses=[">"])
    path = tmp_path / "empty.native"
    path.write_text(write_native(TwoStageProblem(first, [ok, empty])))
    code, _, err = run("fwph", "--instance", path, "--rho", 1)
    assert code == cli.EXIT_SUBPROBLEM and "scenario 1" in err


def test_limit_exit_code(g1, monkeypatch):
    def boom(*a, **k):
        raise cli.LimitError("scenario 0: no point")
    monkeypatch.setattr(cli, "solve_fwph", boom)
    assert run("fwph", "--instance", g1, "--rho", 1)[0] == cli.EXIT_LIMIT


def test_sweep_table_and_traces(g1, tmp_path):
    stem = tmp_path / "sw"
    code, out, _ = run("sweep", "--instance", g1, "--rho", "1,10", "--kmax", 30, "--trace", stem,
                       "--ref-value", oracle_values(G1)[1])
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].split()[:3] == ["rho", "method", "phi"] and len(lines) == 3
    assert [l.split()[0] for l in lines[1:]] == ["1", "10"]
    assert (tmp_path / "sw-rho1.csv").exists() and (tmp_path / "sw-rho10.csv").exists()


def test_ph_cli_and_bounds_stride(g1):
    code, out, _ = run("ph", "--instance", g1, "--rho", 10, "--kmax", 5, "--eps", 0, "--bounds-every", 2)
    assert code == 0 and summary(out)["method"] == "ph"


def test_oracle_and_ef_commands(g1):
    ld, smip = oracle_values(G1)
    code, out, _ = run("oracle", "--instance", g1)
    vals = summary(out.replace("enumeration zeta_ld", "enum").replace("kelley zeta_ld", "kel"))
    assert code == 0
    assert float(vals["enum"]) == pytest.approx(ld, abs=1e-12)
    assert float(vals["kel"]) == pytest.approx(ld, rel=1e-5)
    code, out, _ = run("solve-ef", "--instance", g1)
    assert code == 0 and float(summary(out)["zeta_smip"]) == pytest.approx(smip, abs=1e-12)


def test_smps_input():
    code, out, _ = run("solve-ef", "--instance", SMPS)
    assert code == 0 and math.isfinite(float(summary(out)["zeta_smip"]))
    code, _, _ = run("fwph", "--instance", str(SMPS.with_suffix("")), "--format", "smps", "--rho", 5)
    assert code == 0


def test_gap_percent():
    assert cli.gap_percent(-121.6, -121.6) == 0.0
    assert cli.gap_percent(200.0, 190.0) == 5.0
    assert math.isnan(cli.gap_percent(0.0, 1.0))
