import json
import subprocess
import sys

import pytest

from conftest import FIXTURES, GOLDEN
from langx import cli
from langx.parser import parse_spec


def fix(name):
    return str(FIXTURES / name)


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- check ---------------------------------------------------------------------

def test_check_valid_spec(capsys):
    code, out, err = run(capsys, "check", fix("stlc.lang"))
    assert code == 0
    assert out == "stlc: valid\n"
    assert err == ""


def test_check_missing_file(capsys):
    code, out, err = run(capsys, "check", fix("nope.lang"))
    assert code == 1
    assert "cannot read" in err


def test_check_reports_errors_on_stderr(capsys, tmp_path):
    bad = tmp_path / "bad.lang"
    bad.write_text("language broken\n\ngrammar\n  Expression e ::= x | (f e\n")
    code, out, err = run(capsys, "check", str(bad))
    assert code == 1
    assert out == ""
    assert err.strip() != ""


def test_structured_check(capsys):
    code, out, err = run(capsys, "--format", "structured", "check",
                         fix("stlc.lang"))
    assert code == 0
    record = json.loads(out.strip())
    assert record == {"kind": "ok", "message": "stlc: valid"}


def test_structured_diagnostics_carry_spans(capsys, tmp_path):
    bad = tmp_path / "bad.lang"
    bad.write_text("language broken\n\ngrammar\n  Expression e ::= x | (f e\n")
    code, out, err = run(capsys, "--format", "structured", "check", str(bad))
    assert code == 1
    records = [json.loads(line) for line in out.splitlines()]
    assert records and all(r["kind"] == "diagnostic" for r in records)
    assert all("span" in r for r in records)


# -- add-subtyping ----------------------------------------------------------------

@pytest.mark.parametrize("name", ["stlc", "references", "langfunny"])
def test_add_subtyping_matches_golden(capsys, name):
    code, out, err = run(capsys, "add-subtyping", fix(f"{name}.lang"))
    assert code == 0
    assert out == (GOLDEN / f"{name}.sub.lang").read_text()


def test_add_subtyping_writes_file(capsys, tmp_path):
    target = tmp_path / "out.lang"
    code, out, err = run(capsys, "add-subtyping", fix("stlc.lang"),
                         "-o", str(target))
    assert code == 0
    assert out == ""
    assert target.read_text() == (GOLDEN / "stlc.sub.lang").read_text()


def test_add_subtyping_rejects_double_contravariance(capsys):
    code, out, err = run(capsys, "add-subtyping", fix("app2.lang"))
    assert code == 2
    assert "t-app2" in err
    assert "'T'" in err
    assert "MultipleContravariant" in err


def test_add_subtyping_with_relations(capsys):
    code, out, err = run(capsys, "add-subtyping", fix("references.lang"),
                         "--with-relations")
    assert code == 0
    spec = parse_spec(out)
    names = [r.name for r in spec.rules]
    assert "sub-arrow" in names
    assert "join-refl" in names
    assert "sub-base-int-float" in names


# -- derive-ck ---------------------------------------------------------------------

@pytest.mark.parametrize("name", ["stlc", "langfunny"])
def test_derive_ck_matches_golden(capsys, name):
    code, out, err = run(capsys, "derive-ck", fix(f"{name}.lang"))
    assert code == 0
    assert out == (GOLDEN / f"{name}.ck.lang").read_text()


def test_derive_ck_needs_contexts(capsys):
    code, out, err = run(capsys, "derive-ck", fix("references.lang"))
    assert code == 1
    assert "no evaluation-context category" in err


# -- eval --------------------------------------------------------------------------

def test_eval_value(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(and t f)")
    assert code == 0
    assert out == "f\n"


def test_eval_term_file(capsys, tmp_path):
    term = tmp_path / "term.txt"
    term.write_text("(and t f)\n")
    code, out, err = run(capsys, "eval", fix("boollist.lang"),
                         "--term-file", str(term))
    assert code == 0
    assert out == "f\n"


def test_eval_without_term(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"))
    assert code == 1
    assert "term" in err


def test_eval_rejects_unparsable_term(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(nosuch t)")
    assert code == 1
    assert err.strip() != ""


def test_eval_stuck(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(hd nil)")
    assert code == 3
    assert "stuck: (hd nil)" in err


def test_eval_out_of_fuel(capsys):
    omega = "(app (lam x (app x x)) (lam x (app x x)))"
    code, out, err = run(capsys, "eval", fix("boollist.lang"), omega,
                         "--fuel", "5")
    assert code == 4
    assert "out of fuel after 5 steps" in err


def test_eval_machine_derived_on_the_fly(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(and t f)",
                         "--machine", "ck")
    assert code == 0
    assert out == "f\n"


def test_eval_machine_spec_used_directly(capsys):
    code, out, err = run(capsys, "eval", str(GOLDEN / "stlc.ck.lang"),
                         "(app (lam x B x) (lam x1 B x1))", "--machine", "ck")
    assert code == 0
    assert out == "(lam x1 B x1)\n"


def test_eval_trace_lines(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(and t f)",
                         "--trace")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "[contextual-reduction/and-true] (and t f)  ~~>  f"
    assert lines[-1] == "f"


def test_eval_machine_trace_lines(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(and t f)",
                         "--machine", "ck", "--trace")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == \
        "[machine-start/and-start] <(and t f) , mt>  ~~>  <t , (and_1 f mt)>"
    assert lines[-1] == "f"


def test_eval_trace_printed_on_failure(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"),
                         "(hd (app (lam x x) nil))", "--trace")
    assert code == 3
    assert "[contextual-reduction/beta]" in out
    assert "stuck: (hd nil)" in err


def test_structured_eval(capsys):
    code, out, err = run(capsys, "--format", "structured", "eval",
                         fix("boollist.lang"), "(and t f)", "--trace")
    assert code == 0
    records = [json.loads(line) for line in out.splitlines()]
    assert records[0]["kind"] == "contextual-reduction"
    assert records[0]["rule"] == "and-true"
    assert records[0]["before"] == "(and t f)"
    assert records[-1] == {"kind": "value", "message": "f"}


# -- compare -----------------------------------------------------------------------

def test_compare_agreement(capsys):
    code, out, err = run(capsys, "compare", fix("boollist.lang"),
                         "--count", "50", "--fuel", "200")
    assert code == 0
    assert out.strip().endswith("50/50 agree")


def test_structured_compare(capsys):
    code, out, err = run(capsys, "--format", "structured", "compare",
                         fix("langfunny.lang"), "--count", "10",
                         "--fuel", "200")
    assert code == 0
    records = [json.loads(line) for line in out.splitlines()]
    compares = [r for r in records if r["kind"] == "compare"]
    assert len(compares) == 10
    assert all(r["agree"] for r in compares)
    assert records[-1]["kind"] == "summary"
    assert records[-1]["agree"] == records[-1]["total"] == 10


def mutated_machine(tmp_path, capsys):
    out_path = tmp_path / "boollist.ck.lang"
    code, out, err = run(capsys, "derive-ck", fix("boollist.lang"),
                         "-o", str(out_path))
    assert code == 0
    text = out_path.read_text()
    needle = "<v , (and_2 t k)> --> <v , k>"
    assert needle in text
    bad = tmp_path / "boollist.ck.bad.lang"
    bad.write_text(text.replace(needle, "<v , (and_2 t k)> --> <t , k>"))
    return bad


def test_compare_flags_wrong_machine(capsys, tmp_path):
    bad = mutated_machine(tmp_path, capsys)
    code, out, err = run(capsys, "compare", fix("boollist.lang"),
                         "--ck", str(bad), "--count", "50", "--fuel", "200")
    assert code == 5
    assert "disagreement on term" in out
    assert "48/50 agree" in out
    assert "minimal counterexample (3 nodes): (and t f)" in out


def test_compare_structured_counterexample(capsys, tmp_path):
    bad = mutated_machine(tmp_path, capsys)
    code, out, err = run(capsys, "--format", "structured", "compare",
                         fix("boollist.lang"), "--ck", str(bad),
                         "--count", "50", "--fuel", "200")
    assert code == 5
    records = [json.loads(line) for line in out.splitlines()]
    assert records[-1]["kind"] == "counterexample"
    assert records[-1]["term"] == "(and t f)"
    assert records[-1]["size"] == 3


def test_compare_missing_machine_file(capsys):
    code, out, err = run(capsys, "compare", fix("boollist.lang"),
                         "--ck", fix("missing.lang"))
    assert code == 1
    assert "cannot read" in err


def test_compare_needs_contexts(capsys):
    code, out, err = run(capsys, "compare", fix("references.lang"),
                         "--count", "5")
    assert code == 1
    assert "no evaluation-context category" in err


# -- global options ------------------------------------------------------------------

def test_color_always(capsys, monkeypatch):
    monkeypatch.setenv("LANGX_COLOR", "always")
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(hd nil)")
    assert code == 3
    assert "\x1b[31m" in err
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(and t f)",
                         "--trace")
    assert "\x1b[36m" in out


def test_color_never_by_default_off_tty(capsys, monkeypatch):
    monkeypatch.delenv("LANGX_COLOR", raising=False)
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(hd nil)")
    assert "\x1b[" not in err


def test_fuel_must_be_positive(capsys):
    code, out, err = run(capsys, "eval", fix("boollist.lang"), "(and t f)",
                         "--fuel", "0")
    assert code == 1
    assert "fuel must be positive" in err


def test_count_must_be_positive(capsys):
    code, out, err = run(capsys, "compare", fix("boollist.lang"),
                         "--count", "0")
    assert code == 1
    assert "count must be positive" in err


def test_module_entry_point():
    result = subprocess.run(
        [sys.executable, "-m", "langx", "check", fix("stlc.lang")],
        capture_output=True, text=True)
    assert result.returncode == 0
    assert result.stdout == "stlc: valid\n"
