"""Variance of metavariable occurrences inside type terms.

A position's variance is the composition of the marks along the path from
the root of the type down to the occurrence.  Composition starts covariant;
invariance absorbs everything, and two contravariant steps cancel.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import (
    CONTRAVARIANT,
    COVARIANT,
    INVARIANT,
    Constructor,
    LangxError,
    LanguageSpec,
    Metavariable,
    Term,
    Typing,
    InferenceRule,
)


class MissingVariance(LangxError):
    def __init__(self, constructor: str):
        self.constructor = constructor
        super().__init__(f"no variance declaration for type constructor {constructor!r}")


def compose_variance(outer: str, inner: str) -> str:
    if outer == INVARIANT or inner == INVARIANT:
        return INVARIANT
    if outer == CONTRAVARIANT:
        return COVARIANT if inner == CONTRAVARIANT else CONTRAVARIANT
    return inner


@dataclass(frozen=True)
class Occurrence:
    """One occurrence of a type metavariable in a premise's output type."""

    premise_index: int
    path: tuple[int, ...]
    variance: str


def occurrence_variance(ty: Term, path: tuple[int, ...], spec: LanguageSpec) -> str:
    """Variance of the position reached by following path from the root of ty."""
    variance = COVARIANT
    node = ty
    for index in path:
        if not isinstance(node, Constructor) or index >= len(node.args):
            raise LangxError(f"path {path} does not exist in the given type")
        marks = spec.variance.get(node.name)
        if marks is None or len(marks) != len(node.args):
            raise MissingVariance(node.name)
        variance = compose_variance(variance, marks[index])
        node = node.args[index]
    return variance


def _scan(ty: Term, token: str, path: tuple[int, ...], variance: str,
          spec: LanguageSpec, out: list[tuple[tuple[int, ...], str]]) -> None:
    match ty:
        case Metavariable():
            if ty.token == token:
                out.append((path, variance))
        case Constructor(name, args) if args:
            marks = spec.variance.get(name)
            if marks is None or len(marks) != len(args):
                raise MissingVariance(name)
            for i, arg in enumerate(args):
                _scan(arg, token, path + (i,), compose_variance(variance, marks[i]), spec, out)
        case _:
            return


def collect_occurrences(rule: InferenceRule, token: str, spec: LanguageSpec) -> tuple[Occurrence, ...]:
    """All occurrences of a type metavariable in the rule's Typing premises.

    Only the output type of each premise is scanned, in premise order, and
    pre-order within one type.  The bound types of environment extensions and
    the conclusion are deliberately excluded.
    """
    occurrences: list[Occurrence] = []
    for i, premise in enumerate(rule.premises):
        if not isinstance(premise, Typing):
            continue
        found: list[tuple[tuple[int, ...], str]] = []
        _scan(premise.ty, token, (), COVARIANT, spec, found)
        occurrences.extend(Occurrence(i, path, variance) for path, variance in found)
    return tuple(occurrences)
