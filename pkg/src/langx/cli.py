"""Command line for checking, transforming, and executing language specs.

Subcommands:
  check          parse and validate a spec
  add-subtyping  rewrite typing rules with explicit subtype/join premises
  derive-ck      derive an abstract machine from the evaluation contexts
  eval           run one term under the small-step or machine semantics
  compare        run random well-typed terms under both semantics and diff

Exit codes: 0 success, 1 parse/validation error, 2 transformation error,
3 stuck term, 4 out of fuel, 5 semantics disagreement.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Iterable, Optional

from .ck import CKError, derive_ck
from .engine import (
    MT,
    OutOfFuel,
    Stuck,
    StuckMachine,
    TypecheckError,
    ck_eval,
    evaluate,
    free_vars,
    iter_swarm_terms,
    typecheck,
)
from .ir import (
    LangxError,
    LanguageSpec,
    MachineConfig,
    Term,
    subterms,
    term_size,
)
from .parser import (
    SpecParseError,
    parse_spec,
    parse_term,
    print_spec,
    render_term,
)
from .subtyping import (
    NoJoin,
    SubtypingError,
    add_subtyping,
    generate_join_relation,
    generate_subtype_relation,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_TRANSFORM = 2
EXIT_STUCK = 3
EXIT_FUEL = 4
EXIT_DISAGREE = 5


class Style:
    """ANSI color helper honoring LANGX_COLOR={auto,always,never}."""

    def __init__(self, mode: Optional[str] = None, stream=None):
        mode = mode or os.environ.get("LANGX_COLOR", "auto")
        stream = stream if stream is not None else sys.stdout
        if mode == "always":
            self.enabled = True
        elif mode == "never":
            self.enabled = False
        else:
            self.enabled = hasattr(stream, "isatty") and stream.isatty()

    def _wrap(self, code: str, text: str) -> str:
        return f"\x1b[{code}m{text}\x1b[0m" if self.enabled else text

    def good(self, text: str) -> str:
        return self._wrap("32", text)

    def bad(self, text: str) -> str:
        return self._wrap("31", text)

    def rule(self, text: str) -> str:
        return self._wrap("36", text)


class Reporter:
    """Uniform text / line-delimited JSON output."""

    def __init__(self, structured: bool, style: Style):
        self.structured = structured
        self.style = style

    def record(self, **fields) -> None:
        if self.structured:
            print(json.dumps(fields))

    def text(self, message: str, err: bool = False) -> None:
        if not self.structured:
            print(message, file=sys.stderr if err else sys.stdout)

    def diagnostic(self, message: str, span: Optional[str] = None) -> None:
        if self.structured:
            print(json.dumps({"kind": "diagnostic", "message": message,
                              "span": span}))
        else:
            print(message, file=sys.stderr)


def _load_spec(path: str, rep: Reporter) -> Optional[LanguageSpec]:
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        rep.diagnostic(f"cannot read {path}: {exc.strerror}")
        return None
    try:
        return parse_spec(text, filename=path)
    except SpecParseError as exc:
        for err in exc.errors:
            rep.diagnostic(str(err), span=str(err.span))
        return None


def _write_output(text: str, path: Optional[str], rep: Reporter) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
        rep.record(kind="written", message=path)
    elif rep.structured:
        rep.record(kind="spec", message=text)
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def cmd_check(args, rep: Reporter) -> int:
    spec = _load_spec(args.spec, rep)
    if spec is None:
        return EXIT_INVALID
    rep.record(kind="ok", message=f"{spec.name}: valid")
    rep.text(f"{spec.name}: valid")
    return EXIT_OK


def cmd_add_subtyping(args, rep: Reporter) -> int:
    spec = _load_spec(args.spec, rep)
    if spec is None:
        return EXIT_INVALID
    try:
        out = add_subtyping(spec)
    except SubtypingError as exc:
        rep.record(kind="error", rule=exc.rule_name, message=str(exc))
        rep.text(str(exc), err=True)
        return EXIT_TRANSFORM
    if args.with_relations:
        extra = generate_subtype_relation(spec) + generate_join_relation(spec)
        out = out.with_rules((*out.rules, *extra))
    _write_output(print_spec(out), args.output, rep)
    return EXIT_OK


def cmd_derive_ck(args, rep: Reporter) -> int:
    spec = _load_spec(args.spec, rep)
    if spec is None:
        return EXIT_INVALID
    if spec.context_category is None:
        rep.diagnostic(f"{args.spec}: no evaluation-context category to derive from")
        return EXIT_INVALID
    try:
        out = derive_ck(spec)
    except CKError as exc:
        rep.record(kind="error", message=str(exc))
        rep.text(str(exc), err=True)
        return EXIT_TRANSFORM
    _write_output(print_spec(out), args.output, rep)
    return EXIT_OK


def _render_state(state, spec: LanguageSpec) -> str:
    if isinstance(state, MachineConfig):
        return (f"<{render_term(state.focus, spec)} , "
                f"{render_term(state.continuation, spec)}>")
    return render_term(state, spec)


def _print_trace(trace, spec: LanguageSpec, rep: Reporter) -> None:
    for step in trace:
        before = _render_state(step.before, spec)
        after = _render_state(step.after, spec)
        rep.record(kind=step.kind, rule=step.rule_name,
                   before=before, after=after)
        if not rep.structured:
            label = rep.style.rule(f"[{step.kind}/{step.rule_name}]")
            print(f"{label} {before}  ~~>  {after}")


def cmd_eval(args, rep: Reporter) -> int:
    spec = _load_spec(args.spec, rep)
    if spec is None:
        return EXIT_INVALID
    if args.term_file:
        try:
            with open(args.term_file, encoding="utf-8") as handle:
                source = handle.read()
        except OSError as exc:
            rep.diagnostic(f"cannot read {args.term_file}: {exc.strerror}")
            return EXIT_INVALID
    else:
        source = args.term
    if source is None:
        rep.diagnostic("eval needs a term argument or --term-file")
        return EXIT_INVALID
    try:
        term = parse_term(source, spec, concrete=True)
    except SpecParseError as exc:
        for err in exc.errors:
            rep.diagnostic(str(err), span=str(err.span))
        return EXIT_INVALID

    if args.machine == "ck":
        machine_spec = spec
        if not spec.machine_rules():
            if spec.context_category is None:
                rep.diagnostic("spec has no machine rules and no contexts to derive them from")
                return EXIT_INVALID
            try:
                machine_spec = derive_ck(spec)
            except CKError as exc:
                rep.record(kind="error", message=str(exc))
                rep.text(str(exc), err=True)
                return EXIT_TRANSFORM
        runner = lambda: ck_eval(MachineConfig(term, MT), machine_spec, fuel=args.fuel)
        render_spec = machine_spec
    else:
        runner = lambda: evaluate(term, spec, fuel=args.fuel)
        render_spec = spec

    try:
        value, trace = runner()
    except Stuck as exc:
        if args.trace:
            _print_trace(exc.trace, render_spec, rep)
        stuck_at = render_term(exc.term, render_spec)
        rep.record(kind="stuck", message=stuck_at)
        rep.text(rep.style.bad(f"stuck: {stuck_at}"), err=True)
        return EXIT_STUCK
    except StuckMachine as exc:
        if args.trace:
            _print_trace(exc.trace, render_spec, rep)
        state = _render_state(exc.config, render_spec)
        rep.record(kind="stuck", message=state)
        rep.text(rep.style.bad(f"stuck: {state}"), err=True)
        return EXIT_STUCK
    except OutOfFuel as exc:
        if args.trace:
            _print_trace(exc.trace, render_spec, rep)
        state = _render_state(exc.state, render_spec)
        rep.record(kind="out-of-fuel", message=state)
        rep.text(rep.style.bad(f"out of fuel after {args.fuel} steps at {state}"),
                 err=True)
        return EXIT_FUEL

    if args.trace:
        _print_trace(trace, render_spec, rep)
    rep.record(kind="value", message=render_term(value, render_spec))
    rep.text(render_term(value, render_spec))
    return EXIT_OK


def _outcome_smallstep(term: Term, spec: LanguageSpec, fuel: int):
    try:
        value, _ = evaluate(term, spec, fuel=fuel)
        return ("value", value)
    except Stuck:
        return ("stuck", None)
    except OutOfFuel:
        return ("out-of-fuel", None)


def _outcome_machine(term: Term, spec: LanguageSpec, fuel: int):
    try:
        value, _ = ck_eval(MachineConfig(term, MT), spec, fuel=fuel)
        return ("value", value)
    except StuckMachine:
        return ("stuck", None)
    except OutOfFuel:
        return ("out-of-fuel", None)


def outcomes_agree(a, b) -> bool:
    """Identical values agree; failing for any reason on both sides agrees."""
    if a[0] == "value" or b[0] == "value":
        return a == b
    return True


def _outcome_text(outcome, spec: LanguageSpec) -> str:
    kind, value = outcome
    return f"value {render_term(value, spec)}" if kind == "value" else kind


def well_typed_terms(spec: LanguageSpec, count: int, seed: int,
                     max_size: int) -> Iterable[Term]:
    """First `count` generated terms that typecheck under `spec`.

    Specs without typing rules skip the filter. Attempts are capped so a
    grammar whose terms almost never typecheck terminates with fewer terms.
    """
    stream = iter_swarm_terms(spec, seed=seed, max_size=max_size)
    if not spec.typing_rules():
        for _ in range(count):
            yield next(stream)
        return
    produced = 0
    for _ in range(max(200 * count, 10000)):
        term = next(stream)
        try:
            typecheck(term, spec)
        except (TypecheckError, NoJoin):
            continue
        yield term
        produced += 1
        if produced >= count:
            return


def shrink_counterexample(term: Term, disagrees) -> Term:
    """Smallest closed subterm that still shows the disagreement."""
    current = term
    while True:
        candidates = [s for s in subterms(current)
                      if s is not current and term_size(s) < term_size(current)
                      and not free_vars(s)]
        candidates.sort(key=term_size)
        for candidate in candidates:
            if disagrees(candidate):
                current = candidate
                break
        else:
            return current


def cmd_compare(args, rep: Reporter) -> int:
    spec = _load_spec(args.spec, rep)
    if spec is None:
        return EXIT_INVALID
    if args.ck:
        machine_spec = _load_spec(args.ck, rep)
        if machine_spec is None:
            return EXIT_INVALID
    else:
        if spec.context_category is None:
            rep.diagnostic(f"{args.spec}: no evaluation-context category to derive from")
            return EXIT_INVALID
        try:
            machine_spec = derive_ck(spec)
        except CKError as exc:
            rep.record(kind="error", message=str(exc))
            rep.text(str(exc), err=True)
            return EXIT_TRANSFORM

    machine_fuel = 3 * args.fuel

    def disagrees(term: Term) -> bool:
        source = _outcome_smallstep(term, spec, args.fuel)
        machine = _outcome_machine(term, machine_spec, machine_fuel)
        return not outcomes_agree(source, machine)

    total = 0
    agreed = 0
    first_failure = None
    for index, term in enumerate(well_typed_terms(
            spec, args.count, args.seed, args.max_size)):
        source = _outcome_smallstep(term, spec, args.fuel)
        machine = _outcome_machine(term, machine_spec, machine_fuel)
        ok = outcomes_agree(source, machine)
        total += 1
        agreed += ok
        rep.record(kind="compare", index=index,
                   term=render_term(term, spec),
                   source=_outcome_text(source, spec),
                   machine=_outcome_text(machine, machine_spec),
                   agree=ok)
        if not ok:
            rep.text(rep.style.bad(
                f"disagreement on term {index}: {render_term(term, spec)}\n"
                f"  small-step: {_outcome_text(source, spec)}\n"
                f"  machine:    {_outcome_text(machine, machine_spec)}"))
            if first_failure is None:
                first_failure = term

    summary = f"{agreed}/{total} agree"
    rep.record(kind="summary", message=summary, agree=agreed, total=total)
    if agreed == total:
        rep.text(rep.style.good(summary))
        return EXIT_OK

    rep.text(rep.style.bad(summary))
    minimal = shrink_counterexample(first_failure, disagrees)
    rep.record(kind="counterexample", term=render_term(minimal, spec),
               size=term_size(minimal))
    rep.text(f"minimal counterexample ({term_size(minimal)} nodes): "
             f"{render_term(minimal, spec)}")
    return EXIT_DISAGREE


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="langx",
        description="Check, transform, and execute operational-semantics language specs.")
    top.add_argument("--format", choices=("text", "structured"), default="text",
                     help="structured prints one JSON record per line")
    sub = top.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="parse and validate a spec")
    p_check.add_argument("spec")
    p_check.set_defaults(func=cmd_check)

    p_sub = sub.add_parser("add-subtyping",
                           help="make typing rules subtype-aware")
    p_sub.add_argument("spec")
    p_sub.add_argument("-o", "--output", help="write result here instead of stdout")
    p_sub.add_argument("--with-relations", action="store_true",
                       help="also append generated subtype and join rules")
    p_sub.set_defaults(func=cmd_add_subtyping)

    p_ck = sub.add_parser("derive-ck",
                          help="derive an abstract machine from contexts")
    p_ck.add_argument("spec")
    p_ck.add_argument("-o", "--output", help="write result here instead of stdout")
    p_ck.set_defaults(func=cmd_derive_ck)

    p_eval = sub.add_parser("eval", help="evaluate a closed term")
    p_eval.add_argument("spec")
    p_eval.add_argument("term", nargs="?",
                        help="term text; omit when using --term-file")
    p_eval.add_argument("--term-file", help="read the term from a file")
    p_eval.add_argument("--machine", choices=("smallstep", "ck"),
                        default="smallstep")
    p_eval.add_argument("--trace", action="store_true",
                        help="print every step taken")
    p_eval.add_argument("--fuel", type=int, default=10000)
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser(
        "compare",
        help="diff small-step evaluation against the derived machine")
    p_cmp.add_argument("spec")
    p_cmp.add_argument("--ck", help="use this machine spec instead of deriving one")
    p_cmp.add_argument("--count", type=int, default=100)
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.add_argument("--max-size", type=int, default=7)
    p_cmp.add_argument("--fuel", type=int, default=10000)
    p_cmp.set_defaults(func=cmd_compare)

    return top


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "fuel", 1) <= 0:
        print("fuel must be positive", file=sys.stderr)
        return EXIT_INVALID
    if getattr(args, "count", 1) <= 0:
        print("count must be positive", file=sys.stderr)
        return EXIT_INVALID
    rep = Reporter(args.format == "structured", Style())
    try:
        return args.func(args, rep)
    except LangxError as exc:
        rep.diagnostic(str(exc))
        return EXIT_INVALID


def entry() -> None:
    sys.exit(main())
