"""Core data types for language specifications: terms, formulas, grammars, rules.

Everything here is immutable. Terms double as patterns: a Metavariable node in
a rule matches terms of its category, while concrete programs contain only
Var/Constructor/BinderApp nodes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

COVARIANT = "co"
CONTRAVARIANT = "contra"
INVARIANT = "inv"
VARIANCE_MARKS = (COVARIANT, CONTRAVARIANT, INVARIANT)

# Variance for the usual type constructors, merged into a spec's table at
# parse time when the spec does not declare them itself.
DEFAULT_VARIANCE: dict[str, tuple[str, ...]] = {
    "arrow": (CONTRAVARIANT, COVARIANT),
    "Ref": (INVARIANT,),
    "List": (COVARIANT,),
    "prod": (COVARIANT, COVARIANT),
    "sum": (COVARIANT, COVARIANT),
}

_SUFFIX_RE = re.compile(r"[0-9']*")


class LangxError(Exception):
    """Base class for every error this package raises on purpose."""


class UnknownMetavariable(LangxError):
    pass


# ---------------------------------------------------------------------------
# terms


@dataclass(frozen=True)
class Metavariable:
    """A rule-level variable ranging over a grammar category, e.g. T12 or e'."""

    base: str
    suffix: Optional[str]
    category: str

    @property
    def token(self) -> str:
        return self.base + (self.suffix or "")


@dataclass(frozen=True)
class Var:
    """An object-level variable occurrence, e.g. the body of (lam x T x)."""

    name: str


@dataclass(frozen=True)
class Constructor:
    name: str
    args: tuple["Term", ...] = ()


@dataclass(frozen=True)
class BinderApp:
    """A binding construct: binder name, the bound variable, remaining args."""

    binder: str
    bound_var: str
    args: tuple["Term", ...]


@dataclass(frozen=True)
class Hole:
    """The hole of an evaluation context."""


@dataclass(frozen=True)
class Subst:
    """Deferred substitution target[replacement/var] on a rule right-hand side."""

    target: "Term"
    replacement: "Term"
    var: str


Term = Union[Metavariable, Var, Constructor, BinderApp, Hole, Subst]
HOLE = Hole()


def term_size(t: Term) -> int:
    """Number of nodes in a term, annotation subterms included."""
    match t:
        case Constructor(_, args):
            return 1 + sum(term_size(a) for a in args)
        case BinderApp(_, _, args):
            return 1 + sum(term_size(a) for a in args)
        case Subst(target, repl, _):
            return 1 + term_size(target) + term_size(repl)
        case _:
            return 1


def subterms(t: Term) -> Iterator[Term]:
    """All subterms of t, t itself first, pre-order."""
    yield t
    match t:
        case Constructor(_, args) | BinderApp(_, _, args):
            for a in args:
                yield from subterms(a)
        case Subst(target, repl, _):
            yield from subterms(target)
            yield from subterms(repl)
        case _:
            pass


def metavariable_tokens(t: Term) -> Iterator[str]:
    for s in subterms(t):
        if isinstance(s, Metavariable):
            yield s.token


# ---------------------------------------------------------------------------
# formulas


@dataclass(frozen=True)
class EnvExpr:
    """A typing environment: a root name plus ordered (var, type) extensions."""

    root: str
    extensions: tuple[tuple[str, Term], ...] = ()


@dataclass(frozen=True)
class Typing:
    env: EnvExpr
    subject: Term
    ty: Term


@dataclass(frozen=True)
class Reduction:
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class MachineConfig:
    focus: Term
    continuation: Term


@dataclass(frozen=True)
class MachineStep:
    lhs: MachineConfig
    rhs: MachineConfig


@dataclass(frozen=True)
class Subtype:
    sub: Term
    sup: Term


@dataclass(frozen=True)
class TypeEq:
    left: Term
    right: Term


@dataclass(frozen=True)
class Join:
    result: Term
    operands: tuple[Term, ...]


Formula = Union[Typing, Reduction, MachineStep, Subtype, TypeEq, Join]


def formula_terms(f: Formula) -> Iterator[Term]:
    """Every term embedded in a formula, env extension types included."""
    match f:
        case Typing(env, subject, ty):
            for _, ext_ty in env.extensions:
                yield ext_ty
            yield subject
            yield ty
        case Reduction(lhs, rhs):
            yield lhs
            yield rhs
        case MachineStep(lhs, rhs):
            yield lhs.focus
            yield lhs.continuation
            yield rhs.focus
            yield rhs.continuation
        case Subtype(sub, sup):
            yield sub
            yield sup
        case TypeEq(left, right):
            yield left
            yield right
        case Join(result, operands):
            yield result
            yield from operands


def formula_metavariable_tokens(f: Formula) -> set[str]:
    toks: set[str] = set()
    for t in formula_terms(f):
        toks.update(metavariable_tokens(t))
    return toks


# ---------------------------------------------------------------------------
# rules and specs


@dataclass(frozen=True)
class InferenceRule:
    name: str
    premises: tuple[Formula, ...]
    conclusion: Formula


@dataclass(frozen=True)
class GrammarCategory:
    name: str
    metavariable: str
    productions: tuple[Term, ...]


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    categories: tuple[GrammarCategory, ...]
    variance: dict[str, tuple[str, ...]]
    base_subtypes: tuple[tuple[str, str], ...]
    rules: tuple[InferenceRule, ...]
    variables: tuple[str, ...] = ()
    binders: dict[str, int] = field(default_factory=dict)
    context_name: Optional[str] = None

    # -- category lookups ---------------------------------------------------

    def category(self, name: str) -> Optional[GrammarCategory]:
        for cat in self.categories:
            if cat.name == name:
                return cat
        return None

    def category_for_metavariable(self, metavar: str) -> Optional[GrammarCategory]:
        for cat in self.categories:
            if cat.metavariable == metavar:
                return cat
        return None

    @property
    def type_category(self) -> Optional[GrammarCategory]:
        return self.category("Type")

    @property
    def expression_category(self) -> Optional[GrammarCategory]:
        return self.category("Expression")

    @property
    def value_category(self) -> Optional[GrammarCategory]:
        return self.category("Value")

    @property
    def context_category(self) -> Optional[GrammarCategory]:
        if self.context_name is not None:
            return self.category(self.context_name)
        return self.category("Context")

    # -- rule views ----------------------------------------------------------

    def typing_rules(self) -> tuple[InferenceRule, ...]:
        return tuple(r for r in self.rules if isinstance(r.conclusion, Typing))

    def reduction_rules(self) -> tuple[InferenceRule, ...]:
        return tuple(r for r in self.rules if isinstance(r.conclusion, Reduction))

    def machine_rules(self) -> tuple[InferenceRule, ...]:
        return tuple(r for r in self.rules if isinstance(r.conclusion, MachineStep))

    def with_rules(self, rules: tuple[InferenceRule, ...]) -> "LanguageSpec":
        return replace(self, rules=rules)

    # -- derived tables, computed once per instance ---------------------------

    def constructor_arities(self) -> dict[str, int]:
        cached = self.__dict__.get("_arities")
        if cached is None:
            arities: dict[str, int] = {}
            for t in self._all_terms():
                for s in subterms(t):
                    if isinstance(s, Constructor):
                        arities.setdefault(s.name, len(s.args))
            object.__setattr__(self, "_arities", arities)
            cached = arities
        return cached

    def is_variable_token(self, token: str) -> bool:
        for v in self.variables:
            if token.startswith(v) and _SUFFIX_RE.fullmatch(token[len(v):]):
                return True
        return False

    def base_types(self) -> tuple[str, ...]:
        """Nullary constructors of the Type category, in grammar order."""
        ty = self.type_category
        if ty is None:
            return ()
        return tuple(
            p.name for p in ty.productions
            if isinstance(p, Constructor) and not p.args
        )

    def base_subtype_closure(self) -> frozenset[tuple[str, str]]:
        """Declared base axioms closed under transitivity (reflexivity excluded)."""
        cached = self.__dict__.get("_closure")
        if cached is None:
            pairs = set(self.base_subtypes)
            changed = True
            while changed:
                changed = False
                for a, b in list(pairs):
                    for c, d in list(pairs):
                        if b == c and (a, d) not in pairs:
                            pairs.add((a, d))
                            changed = True
            cached = frozenset(pairs)
            object.__setattr__(self, "_closure", cached)
        return cached

    def _all_terms(self) -> Iterator[Term]:
        for cat in self.categories:
            yield from cat.productions
        for rule in self.rules:
            for f in (*rule.premises, rule.conclusion):
                yield from formula_terms(f)


# ---------------------------------------------------------------------------
# metavariable operations


def resolve_metavariable(token: str, spec: LanguageSpec) -> Metavariable:
    """Resolve a token like T12 or e' against the spec's declared categories.

    The longest declared category metavariable that prefixes the token wins;
    the remainder must consist of digits and primes only.
    """
    best: Optional[Metavariable] = None
    for cat in spec.categories:
        mv = cat.metavariable
        if not token.startswith(mv):
            continue
        rest = token[len(mv):]
        if not _SUFFIX_RE.fullmatch(rest):
            continue
        if best is None or len(mv) > len(best.base):
            best = Metavariable(mv, rest or None, cat.name)
    if best is None:
        raise UnknownMetavariable(
            f"token {token!r} does not resolve to any declared metavariable"
        )
    return best


def fresh(base: Metavariable, used: set[str]) -> Metavariable:
    """Smallest positive numeric suffix appended to base's token not in used."""
    n = 1
    while base.token + str(n) in used:
        n += 1
    return Metavariable(base.base, (base.suffix or "") + str(n), base.category)
