"""Executing language specifications: small-step evaluation, the continuation
machine, and syntax-directed typechecking.

Everything here treats the spec as data.  Reduction uses evaluation-context
decomposition; the machine interpreter runs MachineStep rules; the checker
discharges premises left to right under one growing substitution.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from itertools import islice
from typing import Iterator, Optional, Union

from .ir import (
    HOLE,
    BinderApp,
    Constructor,
    GrammarCategory,
    Hole,
    InferenceRule,
    Join,
    LangxError,
    LanguageSpec,
    MachineConfig,
    MachineStep,
    Metavariable,
    Reduction,
    Subst,
    Subtype,
    Term,
    TypeEq,
    Typing,
    Var,
    term_size,
    subterms,
)
from .subtyping import NoJoin, join_all

Substitution = dict[str, Term]


class EngineError(LangxError):
    pass


class Stuck(EngineError):
    def __init__(self, term: Term, trace: list["TraceStep"]):
        self.term = term
        self.trace = trace
        super().__init__("no reduction rule applies and the term is not a value")


class StuckMachine(EngineError):
    def __init__(self, config: MachineConfig, trace: list["TraceStep"]):
        self.config = config
        self.trace = trace
        super().__init__("no machine rule applies and the configuration is not terminal")


class OutOfFuel(EngineError):
    def __init__(self, state: Union[Term, MachineConfig], trace: list["TraceStep"]):
        self.state = state
        self.trace = trace
        super().__init__("evaluation did not finish within the step budget")


class TypecheckError(EngineError):
    pass


class NoRuleApplies(TypecheckError):
    def __init__(self, term: Term):
        self.term = term
        super().__init__("no typing rule applies to a subterm")


class SubtypeFailure(TypecheckError):
    def __init__(self, t1: Term, t2: Term):
        self.t1 = t1
        self.t2 = t2
        super().__init__("subtype premise does not hold")


class UnboundVariable(TypecheckError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is not bound in the environment")


class NotSyntaxDirected(TypecheckError):
    def __init__(self, head: str):
        self.head = head
        super().__init__(f"more than one typing rule concludes a {head} subject")


@dataclass(frozen=True)
class TraceStep:
    kind: str   # contextual-reduction | machine-start | machine-order |
                # machine-computation | machine-plug
    rule_name: str
    before: Union[Term, MachineConfig]
    after: Union[Term, MachineConfig]


# ---------------------------------------------------------------------------
# grammar membership


def member(t: Term, category_name: str, spec: LanguageSpec) -> bool:
    """Is t derivable from the named grammar category?"""
    cat = spec.category(category_name)
    if cat is None:
        return False
    return any(_generates(p, t, spec) for p in cat.productions)


def _generates(production: Term, t: Term, spec: LanguageSpec) -> bool:
    match production:
        case Metavariable(_, _, cat_name):
            return member(t, cat_name, spec)
        case Var(_):
            return isinstance(t, Var)
        case Constructor(name, slots):
            return (isinstance(t, Constructor) and t.name == name
                    and len(t.args) == len(slots)
                    and all(_generates(s, a, spec) for s, a in zip(slots, t.args)))
        case BinderApp(binder, _, slots):
            return (isinstance(t, BinderApp) and t.binder == binder
                    and len(t.args) == len(slots)
                    and all(_generates(s, a, spec) for s, a in zip(slots, t.args)))
        case Hole():
            return isinstance(t, Hole)
    return False


def is_value(t: Term, spec: LanguageSpec) -> bool:
    value = spec.value_category
    return value is not None and member(t, value.name, spec)


# ---------------------------------------------------------------------------
# pattern matching and instantiation


def match_pattern(pattern: Term, subject: Term, spec: LanguageSpec,
                  bindings: Optional[Substitution] = None) -> Optional[Substitution]:
    """Match subject against pattern, extending bindings; None when no match.

    A metavariable of the Value category only matches grammar values; other
    metavariables match any term.
    """
    sigma = dict(bindings) if bindings is not None else {}
    if _match(pattern, subject, sigma, spec):
        return sigma
    return None


def _match(pattern: Term, subject: Term, sigma: Substitution,
           spec: LanguageSpec) -> bool:
    match pattern:
        case Metavariable(_, _, cat_name):
            value = spec.value_category
            if value is not None and cat_name == value.name and not is_value(subject, spec):
                return False
            if pattern.token in sigma:
                return sigma[pattern.token] == subject
            sigma[pattern.token] = subject
            return True
        case Var(name):
            if name in sigma:
                return sigma[name] == subject
            return subject == Var(name)
        case Constructor(name, args):
            return (isinstance(subject, Constructor) and subject.name == name
                    and len(subject.args) == len(args)
                    and all(_match(p, s, sigma, spec)
                            for p, s in zip(args, subject.args)))
        case BinderApp(binder, bound_var, args):
            if not (isinstance(subject, BinderApp) and subject.binder == binder
                    and len(subject.args) == len(args)):
                return False
            if bound_var in sigma:
                if sigma[bound_var] != Var(subject.bound_var):
                    return False
            else:
                sigma[bound_var] = Var(subject.bound_var)
            return all(_match(p, s, sigma, spec)
                       for p, s in zip(args, subject.args))
    return False


def free_vars(t: Term) -> frozenset[str]:
    match t:
        case Var(name):
            return frozenset((name,))
        case Constructor(_, args):
            return frozenset().union(*(free_vars(a) for a in args)) if args else frozenset()
        case BinderApp(_, bound_var, args):
            inner = frozenset().union(*(free_vars(a) for a in args)) if args else frozenset()
            return inner - {bound_var}
        case Subst(target, repl, var):
            return (free_vars(target) - {var}) | free_vars(repl)
    return frozenset()


def substitute(t: Term, var: str, replacement: Term) -> Term:
    """Replace free occurrences of var in t, renaming binders that would capture."""
    match t:
        case Var(name):
            return replacement if name == var else t
        case Constructor(name, args):
            return Constructor(name, tuple(substitute(a, var, replacement) for a in args))
        case BinderApp(binder, bound_var, args):
            if bound_var == var:
                return t
            if bound_var in free_vars(replacement):
                avoid = free_vars(replacement) | {var}
                for a in args:
                    avoid |= free_vars(a)
                renamed = bound_var
                n = 1
                while renamed in avoid:
                    renamed = f"{bound_var}{n}"
                    n += 1
                args = tuple(substitute(a, bound_var, Var(renamed)) for a in args)
                return BinderApp(binder, renamed,
                                 tuple(substitute(a, var, replacement) for a in args))
            return BinderApp(binder, bound_var,
                             tuple(substitute(a, var, replacement) for a in args))
    return t


def instantiate(pattern: Term, sigma: Substitution, spec: LanguageSpec) -> Term:
    """Build the term a rule right-hand side denotes under a match."""
    match pattern:
        case Metavariable():
            if pattern.token not in sigma:
                raise EngineError(f"unbound metavariable {pattern.token!r} in a right-hand side")
            return sigma[pattern.token]
        case Var(name):
            bound = sigma.get(name)
            return bound if isinstance(bound, Var) else pattern
        case Constructor(name, args):
            return Constructor(name, tuple(instantiate(a, sigma, spec) for a in args))
        case BinderApp(binder, bound_var, args):
            actual = sigma.get(bound_var)
            actual_name = actual.name if isinstance(actual, Var) else bound_var
            return BinderApp(binder, actual_name,
                             tuple(instantiate(a, sigma, spec) for a in args))
        case Subst(target, repl, var):
            bound = sigma.get(var)
            actual_name = bound.name if isinstance(bound, Var) else var
            return substitute(instantiate(target, sigma, spec), actual_name,
                              instantiate(repl, sigma, spec))
        case Hole():
            return pattern
    raise EngineError(f"cannot instantiate {pattern!r}")


# ---------------------------------------------------------------------------
# evaluation contexts


def decompose(t: Term, spec: LanguageSpec) -> tuple[Term, Term]:
    """Split t into a context (a term containing one hole) and the focused
    redex candidate, descending per the context grammar; (hole, t) when t
    itself is the focus."""
    ctx = spec.context_category
    if ctx is not None and isinstance(t, Constructor):
        for prod in ctx.productions:
            if isinstance(prod, Hole):
                continue
            if not (isinstance(prod, Constructor) and prod.name == t.name
                    and len(prod.args) == len(t.args)):
                continue
            hole_at = _context_slot(prod, spec)
            if hole_at is None:
                continue
            ok = True
            for i, (slot, arg) in enumerate(zip(prod.args, t.args)):
                if i == hole_at:
                    continue
                if not _generates(slot, arg, spec):
                    ok = False
                    break
            if ok and not is_value(t.args[hole_at], spec):
                inner_ctx, redex = decompose(t.args[hole_at], spec)
                wrapped = Constructor(t.name, tuple(
                    inner_ctx if i == hole_at else a for i, a in enumerate(t.args)))
                return wrapped, redex
    return HOLE, t


def _context_slot(production: Constructor, spec: LanguageSpec) -> Optional[int]:
    ctx = spec.context_category
    for i, slot in enumerate(production.args):
        if isinstance(slot, Metavariable) and ctx is not None and slot.category == ctx.name:
            return i
        if isinstance(slot, Hole):
            return i
    return None


def plug(context: Term, filler: Term) -> Term:
    match context:
        case Hole():
            return filler
        case Constructor(name, args):
            return Constructor(name, tuple(plug(a, filler) for a in args))
        case BinderApp(binder, bound_var, args):
            return BinderApp(binder, bound_var, tuple(plug(a, filler) for a in args))
    return context


# ---------------------------------------------------------------------------
# small-step evaluation


def step(t: Term, spec: LanguageSpec) -> Optional[TraceStep]:
    context, redex = decompose(t, spec)
    for rule in spec.reduction_rules():
        if not isinstance(rule.conclusion, Reduction):
            continue
        sigma = match_pattern(rule.conclusion.lhs, redex, spec)
        if sigma is None:
            continue
        result = plug(context, instantiate(rule.conclusion.rhs, sigma, spec))
        return TraceStep("contextual-reduction", rule.name, t, result)
    return None


def evaluate(t: Term, spec: LanguageSpec, fuel: int = 10000) -> tuple[Term, list[TraceStep]]:
    """Iterate step until a value; raises Stuck or OutOfFuel."""
    trace: list[TraceStep] = []
    current = t
    for _ in range(fuel):
        if is_value(current, spec):
            return current, trace
        ts = step(current, spec)
        if ts is None:
            raise Stuck(current, trace)
        trace.append(ts)
        current = ts.after
    if is_value(current, spec):
        return current, trace
    raise OutOfFuel(current, trace)


# ---------------------------------------------------------------------------
# machine evaluation


def is_value_pattern(pattern: Term, spec: LanguageSpec) -> bool:
    """Does every instance of this pattern lie in the Value category?"""
    value = spec.value_category
    if value is None:
        return False
    match pattern:
        case Metavariable(_, _, cat_name):
            return cat_name == value.name
        case Constructor(name, args):
            for prod in value.productions:
                if (isinstance(prod, Constructor) and prod.name == name
                        and len(prod.args) == len(args)):
                    return all(is_value_pattern(a, spec) or _ground_value(a, spec)
                               for a in args)
            return False
        case BinderApp(binder, _, args):
            return any(isinstance(p, BinderApp) and p.binder == binder
                       and len(p.args) == len(args)
                       for p in value.productions)
    return False


def _ground_value(pattern: Term, spec: LanguageSpec) -> bool:
    return not any(isinstance(s, Metavariable) for s in subterms(pattern)) \
        and is_value(pattern, spec)


_TRACE_KINDS = (("-order-", "machine-order"), ("-comp-", "machine-computation"))


def _machine_kind(rule_name: str) -> str:
    for marker, kind in _TRACE_KINDS:
        if marker in rule_name:
            return kind
    if rule_name.endswith("-start"):
        return "machine-start"
    if rule_name.endswith("-plug"):
        return "machine-plug"
    return "machine-computation"


MT = Constructor("mt")


def ck_eval(config: MachineConfig, spec: LanguageSpec,
            fuel: int = 10000) -> tuple[Term, list[TraceStep]]:
    """Run MachineStep rules until the terminal ⟨value, mt⟩ configuration.

    Rule choice is split on whether the focus is a value: a value focus only
    consults rules whose focus pattern is value-shaped (order, computation,
    plug), a non-value focus only the rest (start).  Plain first-match order
    would re-enter the rebuilding rules of value formers forever.
    """
    machine_rules = [r for r in spec.rules if isinstance(r.conclusion, MachineStep)]
    value_rules = [r for r in machine_rules
                   if is_value_pattern(r.conclusion.lhs.focus, spec)]
    other_rules = [r for r in machine_rules
                   if not is_value_pattern(r.conclusion.lhs.focus, spec)]

    trace: list[TraceStep] = []
    current = config
    for _ in range(fuel):
        focus_is_value = is_value(current.focus, spec)
        if focus_is_value and current.continuation == MT:
            return current.focus, trace
        stepped = None
        for rule in (value_rules if focus_is_value else other_rules):
            lhs = rule.conclusion.lhs
            sigma = match_pattern(lhs.focus, current.focus, spec)
            if sigma is None:
                continue
            sigma = match_pattern(lhs.continuation, current.continuation, spec, sigma)
            if sigma is None:
                continue
            rhs = rule.conclusion.rhs
            after = MachineConfig(
                instantiate(rhs.focus, sigma, spec),
                instantiate(rhs.continuation, sigma, spec),
            )
            stepped = TraceStep(_machine_kind(rule.name), rule.name, current, after)
            break
        if stepped is None:
            raise StuckMachine(current, trace)
        trace.append(stepped)
        current = stepped.after
    if is_value(current.focus, spec) and current.continuation == MT:
        return current.focus, trace
    raise OutOfFuel(current, trace)


# ---------------------------------------------------------------------------
# subtype checking


def check_subtype(t1: Term, t2: Term, spec: LanguageSpec) -> bool:
    """Reflexivity, transitively closed base axioms, and structural variance."""
    if t1 == t2:
        return True
    if (isinstance(t1, Constructor) and isinstance(t2, Constructor)
            and not t1.args and not t2.args):
        return (t1.name, t2.name) in spec.base_subtype_closure()
    if (isinstance(t1, Constructor) and isinstance(t2, Constructor)
            and t1.name == t2.name and len(t1.args) == len(t2.args)):
        marks = spec.variance.get(t1.name)
        if marks is None or len(marks) != len(t1.args):
            return False
        from .ir import COVARIANT, CONTRAVARIANT
        for mark, a, b in zip(marks, t1.args, t2.args):
            if mark == COVARIANT:
                if not check_subtype(a, b, spec):
                    return False
            elif mark == CONTRAVARIANT:
                if not check_subtype(b, a, spec):
                    return False
            elif a != b:
                return False
        return True
    return False


# ---------------------------------------------------------------------------
# typechecking


def _subject_head(t: Term) -> tuple:
    match t:
        case Constructor(name, args):
            return ("con", name, len(args))
        case BinderApp(binder, _, args):
            return ("bind", binder, len(args))
        case Var(_):
            return ("var",)
    return ("any",)


def _resolve(t: Term, sigma: Substitution) -> Term:
    """Substitute bound metavariables; unbound ones raise."""
    match t:
        case Metavariable():
            if t.token not in sigma:
                raise NoRuleApplies(t)
            return sigma[t.token]
        case Constructor(name, args):
            return Constructor(name, tuple(_resolve(a, sigma) for a in args))
    return t


def _unify_type(pattern: Term, actual: Term, sigma: Substitution) -> bool:
    match pattern:
        case Metavariable():
            if pattern.token in sigma:
                return sigma[pattern.token] == actual
            sigma[pattern.token] = actual
            return True
        case Constructor(name, args):
            return (isinstance(actual, Constructor) and actual.name == name
                    and len(actual.args) == len(args)
                    and all(_unify_type(p, a, sigma)
                            for p, a in zip(args, actual.args)))
    return pattern == actual


def _rules_by_head(spec: LanguageSpec) -> dict[tuple, InferenceRule]:
    table: dict[tuple, InferenceRule] = {}
    for rule in spec.typing_rules():
        head = _subject_head(rule.conclusion.subject)
        if head in table:
            raise NotSyntaxDirected(str(head[1] if len(head) > 1 else head[0]))
        table[head] = rule
    return table


def typecheck(t: Term, spec: LanguageSpec,
              env: Optional[dict[str, Term]] = None) -> Term:
    """Type of a term under syntax-directed rules; raises TypecheckError."""
    return _typecheck(t, spec, env or {}, _rules_by_head(spec))


def _typecheck(t: Term, spec: LanguageSpec, env: dict[str, Term],
               table: dict[tuple, InferenceRule]) -> Term:
    if isinstance(t, Var):
        if t.name in env:
            return env[t.name]
        raise UnboundVariable(t.name)
    rule = table.get(_subject_head(t))
    if rule is None:
        raise NoRuleApplies(t)
    assert isinstance(rule.conclusion, Typing)
    sigma = match_pattern(rule.conclusion.subject, t, spec)
    if sigma is None:
        raise NoRuleApplies(t)

    for premise in rule.premises:
        match premise:
            case Typing(penv, subject, ty):
                inner_env = dict(env)
                for var, vty in penv.extensions:
                    bound = sigma.get(var)
                    name = bound.name if isinstance(bound, Var) else var
                    inner_env[name] = _resolve(vty, sigma)
                actual = _typecheck(_resolve_subject(subject, sigma), spec,
                                    inner_env, table)
                if not _unify_type(ty, actual, sigma):
                    raise NoRuleApplies(t)
            case Subtype(sub, sup):
                a, b = _resolve(sub, sigma), _resolve(sup, sigma)
                if not check_subtype(a, b, spec):
                    raise SubtypeFailure(a, b)
            case TypeEq(left, right):
                if isinstance(left, Metavariable) and left.token not in sigma:
                    sigma[left.token] = _resolve(right, sigma)
                elif isinstance(right, Metavariable) and right.token not in sigma:
                    sigma[right.token] = _resolve(left, sigma)
                else:
                    a, b = _resolve(left, sigma), _resolve(right, sigma)
                    if a != b:
                        raise SubtypeFailure(a, b)
            case Join(result, operands):
                joined = join_all(tuple(_resolve(o, sigma) for o in operands), spec)
                if isinstance(result, Metavariable) and result.token not in sigma:
                    sigma[result.token] = joined
                elif _resolve(result, sigma) != joined:
                    raise SubtypeFailure(_resolve(result, sigma), joined)
            case _:
                raise TypecheckError(
                    f"rule {rule.name!r} has an unsupported premise for checking")
    return _resolve(rule.conclusion.ty, sigma)


def _resolve_subject(t: Term, sigma: Substitution) -> Term:
    match t:
        case Metavariable():
            if t.token not in sigma:
                raise NoRuleApplies(t)
            return sigma[t.token]
        case Var(name):
            bound = sigma.get(name)
            return bound if isinstance(bound, Var) else t
        case Constructor(name, args):
            return Constructor(name, tuple(_resolve_subject(a, sigma) for a in args))
        case BinderApp(binder, bound_var, args):
            actual = sigma.get(bound_var)
            name = actual.name if isinstance(actual, Var) else bound_var
            return BinderApp(binder, name,
                             tuple(_resolve_subject(a, sigma) for a in args))
    return t


# ---------------------------------------------------------------------------
# random closed terms


_BIG = 10 ** 9


def _min_sizes(spec: LanguageSpec) -> tuple[dict[str, int], dict[str, int]]:
    """Smallest term size per category, with and without variables in scope.

    Slots under a binder always see a variable in scope, so they use the
    open table even when the surrounding term is closed.
    """
    open_sizes = {cat.name: _BIG for cat in spec.categories}
    closed_sizes = {cat.name: _BIG for cat in spec.categories}

    def prod_size(p: Term, closed: bool) -> int:
        match p:
            case Metavariable(_, _, cat_name):
                table = closed_sizes if closed else open_sizes
                return table.get(cat_name, _BIG)
            case Var(_):
                return _BIG if closed else 1
            case Constructor(_, args):
                return 1 + sum(prod_size(a, closed) for a in args)
            case BinderApp(_, _, args):
                return 1 + sum(prod_size(a, False) for a in args)
            case _:
                return 1

    changed = True
    while changed:
        changed = False
        for cat in spec.categories:
            for table, closed in ((open_sizes, False), (closed_sizes, True)):
                best = min((prod_size(p, closed) for p in cat.productions
                            if not isinstance(p, Hole)), default=_BIG)
                if best < table[cat.name]:
                    table[cat.name] = best
                    changed = True
    return open_sizes, closed_sizes


def iter_random_terms(spec: LanguageSpec, seed: int = 0, max_size: int = 7,
                      min_budget: int = 0) -> Iterator[Term]:
    """Endless stream of random closed Expression terms of size <= max_size.

    The stream is deterministic in (seed, max_size) and prefix-stable, so a
    caller that filters it still sees reproducible terms.  min_budget lifts
    the low end of the per-term size draw, biasing toward larger terms.
    """
    import random

    rng = random.Random(seed)
    open_sizes, closed_sizes = _min_sizes(spec)
    expr = spec.expression_category
    if expr is None:
        raise EngineError("spec has no Expression category to generate terms for")
    if closed_sizes[expr.name] > max_size:
        raise EngineError(
            f"smallest closed term has {closed_sizes[expr.name]} nodes, above max size {max_size}")
    var_base = spec.variables[0] if spec.variables else "x"

    def prod_min(p: Term, scope: tuple[str, ...]) -> int:
        match p:
            case Metavariable(_, _, cat_name):
                table = open_sizes if scope else closed_sizes
                return table.get(cat_name, _BIG)
            case Var(_):
                return 1 if scope else _BIG
            case Constructor(_, args):
                return 1 + sum(prod_min(a, scope) for a in args)
            case BinderApp(_, _, args):
                return 1 + sum(prod_min(a, scope or ("_",)) for a in args)
            case _:
                return 1

    def gen_cat(cat_name: str, budget: int, scope: tuple[str, ...], depth: int) -> Term:
        cat = spec.category(cat_name)
        options = [p for p in cat.productions
                   if not isinstance(p, Hole) and prod_min(p, scope) <= budget]
        production = rng.choice(options)
        return gen_prod(production, budget, scope, depth)

    def gen_prod(p: Term, budget: int, scope: tuple[str, ...], depth: int) -> Term:
        match p:
            case Metavariable(_, _, cat_name):
                return gen_cat(cat_name, budget, scope, depth)
            case Var(_):
                return Var(rng.choice(scope))
            case Constructor(name, slots):
                return Constructor(name, gen_slots(slots, budget - 1, scope, depth))
            case BinderApp(binder, _, slots):
                bound = f"{var_base}{depth}" if depth else var_base
                inner = scope + (bound,)
                return BinderApp(binder, bound,
                                 gen_slots(slots, budget - 1, inner, depth + 1))
            case _:
                return p

    def gen_slots(slots: tuple[Term, ...], budget: int,
                  scope: tuple[str, ...], depth: int) -> tuple[Term, ...]:
        args = []
        remaining = budget
        mins = [prod_min(s, scope) for s in slots]
        for i, slot in enumerate(slots):
            reserve = sum(mins[i + 1:])
            give = rng.randint(mins[i], max(mins[i], remaining - reserve))
            args.append(gen_prod(slot, give, scope, depth))
            remaining -= term_size(args[-1])
        return tuple(args)

    floor = max(closed_sizes[expr.name], min(min_budget, max_size))
    while True:
        budget = rng.randint(floor, max_size)
        yield gen_cat(expr.name, budget, (), 0)


def random_terms(spec: LanguageSpec, count: int, seed: int = 0,
                 max_size: int = 7) -> list[Term]:
    """Random closed Expression-category terms, each of size at most max_size."""
    return list(islice(iter_random_terms(spec, seed, max_size), count))


def _restrict_expression(spec: LanguageSpec,
                         keep: tuple[Term, ...]) -> LanguageSpec:
    expr = spec.expression_category
    categories = tuple(
        GrammarCategory(c.name, c.metavariable, keep) if c.name == expr.name else c
        for c in spec.categories)
    return dataclasses.replace(spec, categories=categories)


def iter_swarm_terms(spec: LanguageSpec, seed: int = 0, max_size: int = 7,
                     chunk: int = 25) -> Iterator[Term]:
    """Random terms, alternating full-grammar and narrowed-grammar chunks.

    A uniform grammar walk almost never lines up several rare productions in
    one term.  Every other chunk therefore narrows the Expression grammar to
    one focus operator, the binder productions, one leaf constant, and little
    else, with the size draw lifted toward the ceiling so the focus operator
    and its arguments fit.  Deterministic in the seed, and grammar-directed:
    only the production subset and size distribution vary per chunk.
    """
    import random

    rng = random.Random(seed)
    expr = spec.expression_category
    if expr is None:
        raise EngineError("spec has no Expression category to generate terms for")
    productions = expr.productions
    leaf_idx = [i for i, p in enumerate(productions)
                if isinstance(p, Constructor) and not p.args]
    focus_idx = [i for i, p in enumerate(productions)
                 if (isinstance(p, Constructor) and p.args)
                 or isinstance(p, BinderApp)]
    while True:
        sub = spec
        floor = 0
        if focus_idx and len(productions) > 2 and rng.random() < 0.5:
            for _ in range(32):
                keep = {rng.choice(focus_idx)}
                if leaf_idx:
                    keep.add(rng.choice(leaf_idx))
                for i, p in enumerate(productions):
                    if isinstance(p, BinderApp):
                        if rng.random() < 0.75:
                            keep.add(i)
                    elif rng.random() < 0.15:
                        keep.add(i)
                candidate = _restrict_expression(
                    spec, tuple(productions[i] for i in sorted(keep)))
                try:
                    next(iter_random_terms(candidate, rng.randrange(2 ** 32),
                                           max_size))
                except EngineError:
                    continue
                sub = candidate
                floor = rng.choice((max_size // 2, max_size))
                break
        yield from islice(
            iter_random_terms(sub, rng.randrange(2 ** 32), max_size,
                              min_budget=floor), chunk)
