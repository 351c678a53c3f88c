"""Concrete syntax for .lang specification files: parsing, validation, printing.

The format is line oriented.  Keyword lines at column zero open blocks
(language, variables, grammar, binder, contexts, variance, subtype-base,
rule); indented lines belong to the current block.  parse_spec collects as
many independent errors as it can before raising; print_spec emits the one
canonical rendering, so parse and print are mutually inverse.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .ir import (
    HOLE,
    BinderApp,
    Constructor,
    EnvExpr,
    Formula,
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
    VARIANCE_MARKS,
    DEFAULT_VARIANCE,
    formula_terms,
    subterms,
)

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_'-]*")

RULE_SEPARATOR = "-" * 32

_KEYWORDS = (
    "language", "variables", "grammar", "binder",
    "contexts", "variance", "subtype-base", "rule",
)


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    message: str
    expected: tuple[str, ...] = ()

    def __str__(self) -> str:
        msg = f"{self.span}: error: {self.message}"
        if self.expected:
            msg += " (expected " + " or ".join(self.expected) + ")"
        return msg


class SpecParseError(LangxError):
    """Raised by parse_spec; carries every error found in the file."""

    def __init__(self, errors: list[ParseError]):
        self.errors = errors
        super().__init__("\n".join(str(e) for e in errors))


class _Fail(Exception):
    def __init__(self, error: ParseError):
        self.error = error


# ---------------------------------------------------------------------------
# tokens

_TOKEN_RE = re.compile(
    r"""(?P<WS>\s+)
      | (?P<HOLE>\[\.\])
      | (?P<COLONCOLONEQ>::=)
      | (?P<ARROW>-->)
      | (?P<SUBTYPE><:)
      | (?P<TURNSTILE>\|-)
      | (?P<JOIN>\\/)
      | (?P<IDENT>[A-Za-z_][A-Za-z0-9_']*)
      | (?P<LPAREN>\()
      | (?P<RPAREN>\))
      | (?P<LBRACK>\[)
      | (?P<RBRACK>\])
      | (?P<LANGLE><)
      | (?P<RANGLE>>)
      | (?P<COMMA>,)
      | (?P<SLASH>/)
      | (?P<PIPE>\|)
      | (?P<COLON>:)
      | (?P<EQ>=)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int      # 1-based
    end: int      # column just past the token


def _tokenize(text: str, filename: str, line_no: int) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise _Fail(ParseError(
                SourceSpan(filename, line_no, pos + 1),
                f"unexpected character {text[pos]!r}",
            ))
        if m.lastgroup != "WS":
            toks.append(_Tok(m.lastgroup, m.group(), line_no, m.start() + 1, m.end() + 1))
        pos = m.end()
    return toks


def _is_separator(line: str) -> bool:
    s = line.strip()
    return len(s) >= 3 and set(s) == {"-"}


# ---------------------------------------------------------------------------
# term parsing

_PRODUCTION, _RULE, _CONCRETE = "production", "rule", "concrete"


@dataclass
class _Resolver:
    """Token resolution context shared by the term parser."""

    filename: str
    categories: list[tuple[str, str]]            # (name, metavariable)
    variables: tuple[str, ...]
    binders: dict[str, int]
    constructors: dict[str, int]                 # name -> arity, grows in production mode
    mode: str = _RULE

    def metavar(self, token: str) -> Metavariable | None:
        best: Metavariable | None = None
        for name, mv in self.categories:
            if token.startswith(mv) and re.fullmatch(r"[0-9']*", token[len(mv):]):
                if best is None or len(mv) > len(best.base):
                    best = Metavariable(mv, token[len(mv):] or None, name)
        return best

    def is_variable(self, token: str) -> bool:
        return any(
            token.startswith(v) and re.fullmatch(r"[0-9']*", token[len(v):])
            for v in self.variables
        )

    def atom(self, tok: _Tok) -> Term:
        t = tok.text
        if self.mode == _PRODUCTION:
            mv = self.metavar(t)
            if mv is not None:
                return mv
            if self.is_variable(t):
                return Var(t)
            self.constructors.setdefault(t, 0)
            return Constructor(t)
        if self.mode == _CONCRETE:
            if self.is_variable(t):
                return Var(t)
            if t in self.constructors and self.constructors[t] == 0:
                return Constructor(t)
            if self.metavar(t) is not None:
                raise _Fail(ParseError(
                    SourceSpan(self.filename, tok.line, tok.col),
                    f"metavariable {t!r} not allowed in a concrete term",
                ))
        else:
            if t in self.constructors and self.constructors[t] == 0:
                return Constructor(t)
            if self.is_variable(t):
                return Var(t)
            mv = self.metavar(t)
            if mv is not None:
                return mv
        raise _Fail(ParseError(
            SourceSpan(self.filename, tok.line, tok.col),
            f"cannot resolve token {t!r}",
            ("a declared constructor", "a variable", "a metavariable"),
        ))


class _P:
    """Cursor over one line's tokens."""

    def __init__(self, toks: list[_Tok], filename: str, line: int, res: _Resolver):
        self.toks = toks
        self.i = 0
        self.filename = filename
        self.line = line
        self.res = res

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise self.fail("unexpected end of line")
        self.i += 1
        return tok

    def expect(self, kind: str) -> _Tok:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            raise self.fail(f"expected {kind}", (kind,))
        return self.next()

    def fail(self, message: str, expected: tuple[str, ...] = ()) -> _Fail:
        tok = self.peek()
        col = tok.col if tok else (self.toks[-1].end if self.toks else 1)
        return _Fail(ParseError(SourceSpan(self.filename, self.line, col), message, expected))

    def done(self) -> None:
        if self.peek() is not None:
            raise self.fail("trailing tokens after formula")

    # -- terms ---------------------------------------------------------------

    def term(self) -> Term:
        t = self.primary()
        while True:
            nxt = self.peek()
            if (
                nxt is not None
                and nxt.kind == "LBRACK"
                and self.i > 0
                and self.toks[self.i - 1].end == nxt.col
                and self.toks[self.i - 1].line == nxt.line
            ):
                self.next()
                repl = self.term()
                self.expect("SLASH")
                var = self.expect("IDENT")
                if not self.res.is_variable(var.text):
                    raise _Fail(ParseError(
                        SourceSpan(self.filename, var.line, var.col),
                        f"substitution variable {var.text!r} is not a declared variable token",
                    ))
                self.expect("RBRACK")
                t = Subst(t, repl, var.text)
            else:
                return t

    def primary(self) -> Term:
        tok = self.next()
        match tok.kind:
            case "LPAREN":
                head = self.expect("IDENT")
                args: list[Term] = []
                while self.peek() is not None and self.peek().kind != "RPAREN":
                    args.append(self.term())
                self.expect("RPAREN")
                return self._apply(head, args)
            case "HOLE":
                return HOLE
            case "LBRACK":
                items: list[Term] = []
                if self.peek() is not None and self.peek().kind != "RBRACK":
                    items.append(self.term())
                    while self.peek() is not None and self.peek().kind == "COMMA":
                        self.next()
                        items.append(self.term())
                self.expect("RBRACK")
                chain: Term = Constructor("nil")
                for item in reversed(items):
                    chain = Constructor("cons", (item, chain))
                return chain
            case "IDENT":
                return self.res.atom(tok)
            case _:
                self.i -= 1
                raise self.fail(f"unexpected token {tok.text!r}", ("a term",))

    def _apply(self, head: _Tok, args: list[Term]) -> Term:
        name = head.text
        if name in self.res.binders:
            pos = self.res.binders[name]
            if pos > len(args):
                raise _Fail(ParseError(
                    SourceSpan(self.filename, head.line, head.col),
                    f"binder {name!r} needs a bound variable at position {pos}",
                ))
            bound = args[pos - 1]
            if not isinstance(bound, Var):
                raise _Fail(ParseError(
                    SourceSpan(self.filename, head.line, head.col),
                    f"argument {pos} of binder {name!r} must be a variable",
                ))
            rest = tuple(a for i, a in enumerate(args) if i != pos - 1)
            return BinderApp(name, bound.name, rest)
        if self.res.mode == _PRODUCTION:
            self.res.constructors.setdefault(name, len(args))
        elif name not in self.res.constructors:
            raise _Fail(ParseError(
                SourceSpan(self.filename, head.line, head.col),
                f"constructor {name!r} is not declared in any grammar production",
            ))
        return Constructor(name, tuple(args))

    # -- formulas ------------------------------------------------------------

    def formula(self) -> Formula:
        kinds = self._toplevel_kinds()
        if self.toks and self.toks[0].kind == "LANGLE":
            lhs = self.config()
            self.expect("ARROW")
            rhs = self.config()
            self.done()
            return MachineStep(lhs, rhs)
        if "TURNSTILE" in kinds:
            env = self.env_expr()
            self.expect("TURNSTILE")
            subject = self.term()
            self.expect("COLON")
            ty = self.term()
            self.done()
            return Typing(env, subject, ty)
        if "ARROW" in kinds:
            lhs = self.term()
            self.expect("ARROW")
            rhs = self.term()
            self.done()
            return Reduction(lhs, rhs)
        if "SUBTYPE" in kinds:
            sub = self.term()
            self.expect("SUBTYPE")
            sup = self.term()
            self.done()
            return Subtype(sub, sup)
        if "EQ" in kinds:
            left = self.term()
            self.expect("EQ")
            operands = [self.term()]
            while self.peek() is not None and self.peek().kind == "JOIN":
                self.next()
                operands.append(self.term())
            self.done()
            if len(operands) == 1:
                return TypeEq(left, operands[0])
            return Join(left, tuple(operands))
        raise self.fail("expected a formula")

    def _toplevel_kinds(self) -> set[str]:
        depth = 0
        kinds: set[str] = set()
        for tok in self.toks:
            if tok.kind in ("LPAREN", "LBRACK"):
                depth += 1
            elif tok.kind in ("RPAREN", "RBRACK"):
                depth -= 1
            elif depth == 0:
                kinds.add(tok.kind)
        return kinds

    def config(self) -> MachineConfig:
        self.expect("LANGLE")
        focus = self.term()
        self.expect("COMMA")
        continuation = self.term()
        self.expect("RANGLE")
        return MachineConfig(focus, continuation)

    def env_expr(self) -> EnvExpr:
        root = self.expect("IDENT").text
        extensions: list[tuple[str, Term]] = []
        while self.peek() is not None and self.peek().kind == "COMMA":
            self.next()
            var = self.expect("IDENT")
            if not self.res.is_variable(var.text):
                raise _Fail(ParseError(
                    SourceSpan(self.filename, var.line, var.col),
                    f"environment extension variable {var.text!r} is not a declared variable token",
                ))
            self.expect("COLON")
            extensions.append((var.text, self.term()))
        return EnvExpr(root, tuple(extensions))


# ---------------------------------------------------------------------------
# file-level parsing


@dataclass
class _Block:
    keyword: str
    args: list[str]
    head_line: int
    body: list[tuple[int, str]] = field(default_factory=list)   # (line_no, text)


def _split_blocks(source: str, filename: str, errors: list[ParseError]) -> list[_Block]:
    blocks: list[_Block] = []
    for i, raw in enumerate(source.split("\n"), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line[0] in " \t":
            if not blocks:
                errors.append(ParseError(
                    SourceSpan(filename, i, 1), "indented line before any block"))
                continue
            blocks[-1].body.append((i, line))
            continue
        words = line.split()
        if words[0] not in _KEYWORDS:
            errors.append(ParseError(
                SourceSpan(filename, i, 1),
                f"expected one of {', '.join(_KEYWORDS)}",
            ))
            continue
        blocks.append(_Block(words[0], words[1:], i))
    return blocks


def parse_spec(source: str, filename: str = "<string>") -> LanguageSpec:
    """Parse and validate a .lang file.  Raises SpecParseError on any error."""
    errors: list[ParseError] = []
    blocks = _split_blocks(source, filename, errors)

    if not blocks or blocks[0].keyword != "language":
        errors.append(ParseError(SourceSpan(filename, 1, 1), "expected 'language' header"))
        raise SpecParseError(errors)
    if len(blocks[0].args) != 1 or not _NAME_RE.fullmatch(blocks[0].args[0]):
        errors.append(ParseError(
            SourceSpan(filename, blocks[0].head_line, 1),
            "language header takes exactly one name",
        ))
        raise SpecParseError(errors)
    name = blocks[0].args[0]

    variables: list[str] = []
    binders: dict[str, int] = {}
    context_name: str | None = None
    cat_headers: list[tuple[str, str, list[tuple[int, str]], int]] = []
    variance_lines: list[tuple[int, str]] = []
    subtype_lines: list[tuple[int, str]] = []
    rule_blocks: list[_Block] = []

    ident = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
    for b in blocks[1:]:
        match b.keyword:
            case "variables":
                for word in b.args:
                    if not ident.fullmatch(word):
                        errors.append(ParseError(
                            SourceSpan(filename, b.head_line, 1),
                            f"variable token {word!r} is not an identifier",
                        ))
                    else:
                        variables.append(word)
            case "binder":
                if (len(b.args) != 2 or not ident.fullmatch(b.args[0])
                        or not b.args[1].isdigit() or int(b.args[1]) < 1):
                    errors.append(ParseError(
                        SourceSpan(filename, b.head_line, 1),
                        "binder directive is 'binder <constructor> <position>'",
                    ))
                else:
                    binders[b.args[0]] = int(b.args[1])
            case "contexts":
                if len(b.args) != 1 or not ident.fullmatch(b.args[0]):
                    errors.append(ParseError(
                        SourceSpan(filename, b.head_line, 1),
                        "contexts directive takes one category name",
                    ))
                else:
                    context_name = b.args[0]
            case "grammar":
                for line_no, text in b.body:
                    try:
                        toks = _tokenize(text, filename, line_no)
                        if (len(toks) < 3 or toks[0].kind != "IDENT"
                                or toks[1].kind != "IDENT" or toks[2].kind != "COLONCOLONEQ"):
                            raise _Fail(ParseError(
                                SourceSpan(filename, line_no, 1),
                                "grammar line is '<Category> <metavar> ::= productions'",
                            ))
                        cat_headers.append((toks[0].text, toks[1].text, [(line_no, text)], line_no))
                    except _Fail as f:
                        errors.append(f.error)
            case "variance":
                variance_lines.extend(b.body)
            case "subtype-base":
                subtype_lines.extend(b.body)
            case "rule":
                rule_blocks.append(b)
            case "language":
                errors.append(ParseError(
                    SourceSpan(filename, b.head_line, 1), "duplicate language header"))

    res = _Resolver(
        filename=filename,
        categories=[(n, mv) for n, mv, _, _ in cat_headers],
        variables=tuple(variables),
        binders=binders,
        constructors={},
    )

    # grammar productions, now that every category's metavariable is known
    categories: list[GrammarCategory] = []
    cat_spans: dict[str, int] = {}
    res.mode = _PRODUCTION
    for cat_name, metavar, lines, head_line in cat_headers:
        line_no, text = lines[0]
        cat_spans[cat_name] = line_no
        prods: list[Term] = []
        try:
            toks = _tokenize(text, filename, line_no)[3:]
            segments: list[list[_Tok]] = [[]]
            depth = 0
            for tok in toks:
                if tok.kind in ("LPAREN", "LBRACK"):
                    depth += 1
                elif tok.kind in ("RPAREN", "RBRACK"):
                    depth -= 1
                if tok.kind == "PIPE" and depth == 0:
                    segments.append([])
                else:
                    segments[-1].append(tok)
            for seg in segments:
                p = _P(seg, filename, line_no, res)
                prods.append(p.term())
                p.done()
        except _Fail as f:
            errors.append(f.error)
        categories.append(GrammarCategory(cat_name, metavar, tuple(prods)))
    res.mode = _RULE

    # variance table
    variance: dict[str, tuple[str, ...]] = {}
    for line_no, text in variance_lines:
        try:
            toks = _tokenize(text, filename, line_no)
            if len(toks) < 2 or toks[0].kind != "IDENT" or toks[1].kind != "COLON":
                raise _Fail(ParseError(
                    SourceSpan(filename, line_no, 1),
                    "variance line is '<constructor> : <marks>'",
                ))
            marks = []
            for tok in toks[2:]:
                if tok.text not in VARIANCE_MARKS:
                    raise _Fail(ParseError(
                        SourceSpan(filename, line_no, tok.col),
                        f"variance mark must be one of {', '.join(VARIANCE_MARKS)}",
                    ))
                marks.append(tok.text)
            variance[toks[0].text] = tuple(marks)
        except _Fail as f:
            errors.append(f.error)

    # declared base subtype axioms
    base_subtypes: list[tuple[str, str]] = []
    for line_no, text in subtype_lines:
        try:
            toks = _tokenize(text, filename, line_no)
            if (len(toks) != 3 or toks[0].kind != "IDENT"
                    or toks[1].kind != "SUBTYPE" or toks[2].kind != "IDENT"):
                raise _Fail(ParseError(
                    SourceSpan(filename, line_no, 1),
                    "subtype-base line is '<base> <: <base>'",
                ))
            base_subtypes.append((toks[0].text, toks[2].text))
        except _Fail as f:
            errors.append(f.error)

    # rules
    rules: list[InferenceRule] = []
    rule_spans: dict[str, int] = {}
    for b in rule_blocks:
        try:
            if len(b.args) != 1 or not _NAME_RE.fullmatch(b.args[0]):
                raise _Fail(ParseError(
                    SourceSpan(filename, b.head_line, 1), "rule header takes exactly one name"))
            rule_name = b.args[0]
            formulas: list[tuple[int, str]] = []
            sep_at: int | None = None
            for line_no, text in b.body:
                if _is_separator(text):
                    if sep_at is not None:
                        raise _Fail(ParseError(
                            SourceSpan(filename, line_no, 1), "duplicate rule separator"))
                    sep_at = len(formulas)
                else:
                    formulas.append((line_no, text))
            parsed: list[Formula] = []
            for line_no, text in formulas:
                p = _P(_tokenize(text, filename, line_no), filename, line_no, res)
                parsed.append(p.formula())
            if sep_at is None:
                if len(parsed) != 1:
                    raise _Fail(ParseError(
                        SourceSpan(filename, b.head_line, 1),
                        f"rule {rule_name!r} has no separator line",
                    ))
                premises, conclusion = [], parsed[0]
            else:
                if len(parsed) != sep_at + 1:
                    raise _Fail(ParseError(
                        SourceSpan(filename, b.head_line, 1),
                        f"rule {rule_name!r} needs exactly one conclusion after the separator",
                    ))
                premises, conclusion = parsed[:sep_at], parsed[sep_at]
            rules.append(InferenceRule(rule_name, tuple(premises), conclusion))
            rule_spans.setdefault(rule_name, b.head_line)
        except _Fail as f:
            errors.append(f.error)

    spec = LanguageSpec(
        name=name,
        categories=tuple(categories),
        variance=variance,
        base_subtypes=tuple(base_subtypes),
        rules=tuple(rules),
        variables=tuple(variables),
        binders=binders,
        context_name=context_name,
    )
    _validate(spec, filename, cat_spans, rule_spans, errors)
    if errors:
        raise SpecParseError(errors)
    return spec


# ---------------------------------------------------------------------------
# validation


def _type_position_terms(f: Formula):
    match f:
        case Typing(env, _, ty):
            yield from (t for _, t in env.extensions)
            yield ty
        case Subtype(a, b) | TypeEq(a, b):
            yield a
            yield b
        case Join(result, operands):
            yield result
            yield from operands
        case _:
            return


def _validate(
    spec: LanguageSpec,
    filename: str,
    cat_spans: dict[str, int],
    rule_spans: dict[str, int],
    errors: list[ParseError],
) -> None:
    def err(line: int, message: str) -> None:
        errors.append(ParseError(SourceSpan(filename, line, 1), message))

    seen_names: set[str] = set()
    seen_mvs: set[str] = set()
    for cat in spec.categories:
        line = cat_spans.get(cat.name, 1)
        if cat.name in seen_names:
            err(line, f"duplicate grammar category {cat.name!r}")
        if cat.metavariable in seen_mvs:
            err(line, f"duplicate metavariable {cat.metavariable!r}")
        if cat.metavariable in spec.variables:
            err(line, f"metavariable {cat.metavariable!r} collides with a variable token")
        seen_names.add(cat.name)
        seen_mvs.add(cat.metavariable)

    if spec.context_name is not None and spec.category(spec.context_name) is None:
        err(1, f"contexts directive names unknown category {spec.context_name!r}")

    # arity consistency and binder/constructor separation
    arities: dict[str, int] = {}
    binder_arities: dict[str, int] = {}

    def walk(term: Term, line: int) -> None:
        for s in subterms(term):
            if isinstance(s, Constructor):
                if s.name in spec.binders:
                    err(line, f"{s.name!r} is declared as a binder but used without a bound variable")
                a = arities.setdefault(s.name, len(s.args))
                if a != len(s.args):
                    err(line, f"constructor {s.name!r} used with arities {a} and {len(s.args)}")
            elif isinstance(s, BinderApp):
                a = binder_arities.setdefault(s.binder, len(s.args))
                if a != len(s.args):
                    err(line, f"binder {s.binder!r} used with inconsistent arity")

    for cat in spec.categories:
        for p in cat.productions:
            walk(p, cat_spans.get(cat.name, 1))
    for rule in spec.rules:
        line = rule_spans.get(rule.name, 1)
        for f in (*rule.premises, rule.conclusion):
            for t in formula_terms(f):
                walk(t, line)

    declared = set(arities) | set(binder_arities)

    # holes live only in context-category productions
    ctx = spec.context_category
    for cat in spec.categories:
        if ctx is not None and cat.name == ctx.name:
            continue
        for p in cat.productions:
            if any(isinstance(s, Hole) for s in subterms(p)):
                err(cat_spans.get(cat.name, 1),
                    f"hole production outside the evaluation-context category {cat.name!r}")
    if ctx is not None:
        for p in ctx.productions:
            if isinstance(p, Hole):
                continue
            holes = sum(
                1 for s in subterms(p)
                if isinstance(s, Hole)
                or (isinstance(s, Metavariable) and s.category == ctx.name))
            if holes != 1:
                err(cat_spans.get(ctx.name, 1),
                    f"context production {render_term(p, spec)!r} "
                    f"must contain exactly one hole")

    rule_names: set[str] = set()
    for rule in spec.rules:
        line = rule_spans.get(rule.name, 1)
        if rule.name in rule_names:
            err(line, f"duplicate rule name {rule.name!r}")
        rule_names.add(rule.name)

        for f in (*rule.premises, rule.conclusion):
            for t in formula_terms(f):
                for s in subterms(t):
                    if isinstance(s, Hole):
                        err(line, f"rule {rule.name!r} mentions a context hole")

        if isinstance(rule.conclusion, (Reduction, MachineStep)):
            if any(not isinstance(p, (Reduction, MachineStep)) for p in rule.premises):
                err(line, f"rule {rule.name!r} concludes a step but has a non-step premise")
            lhs_terms = (
                [rule.conclusion.lhs] if isinstance(rule.conclusion, Reduction)
                else [rule.conclusion.lhs.focus, rule.conclusion.lhs.continuation]
            )
            rhs_terms = (
                [rule.conclusion.rhs] if isinstance(rule.conclusion, Reduction)
                else [rule.conclusion.rhs.focus, rule.conclusion.rhs.continuation]
            )
            lhs_mvs: list[str] = []
            lhs_bound: list[str] = []
            for t in lhs_terms:
                for s in subterms(t):
                    if isinstance(s, Metavariable):
                        lhs_mvs.append(s.token)
                    elif isinstance(s, BinderApp):
                        lhs_bound.append(s.bound_var)
                    elif isinstance(s, Subst):
                        err(line, f"rule {rule.name!r} has a substitution on its left-hand side")
            dupes = {v for v in lhs_mvs + lhs_bound
                     if (lhs_mvs + lhs_bound).count(v) > 1}
            if dupes:
                err(line, f"rule {rule.name!r} repeats {sorted(dupes)} in its pattern")
            for t in rhs_terms:
                for s in subterms(t):
                    if isinstance(s, Metavariable) and s.token not in lhs_mvs:
                        err(line, f"rule {rule.name!r} uses {s.token!r} on the right only")
                    if isinstance(s, Subst) and s.var not in lhs_bound:
                        err(line, f"rule {rule.name!r} substitutes unbound variable {s.var!r}")

        # type positions carry type-category metavariables only
        for f in (*rule.premises, rule.conclusion):
            for t in _type_position_terms(f):
                for s in subterms(t):
                    if isinstance(s, Metavariable) and s.category != "Type":
                        err(line, f"rule {rule.name!r} uses {s.token!r} in a type position")
                    if isinstance(s, Constructor) and s.name not in declared:
                        err(line, f"constructor {s.name!r} is not declared in any grammar production")
            if isinstance(f, Typing) and len({v for v, _ in f.env.extensions}) != len(f.env.extensions):
                err(line, f"rule {rule.name!r} repeats a variable in one environment")
            if isinstance(f, Join) and len(f.operands) < 2:
                err(line, f"rule {rule.name!r} joins fewer than two operands")

    # variance: marks match arity; table total over type constructors used in rules
    for ctor, marks in spec.variance.items():
        if ctor in arities and arities[ctor] != len(marks):
            err(1, f"variance entry for {ctor!r} has {len(marks)} marks, arity is {arities[ctor]}")
    used_type_ctors: dict[str, int] = {}
    for rule in spec.rules:
        for f in (*rule.premises, rule.conclusion):
            for t in _type_position_terms(f):
                for s in subterms(t):
                    if isinstance(s, Constructor) and s.args:
                        used_type_ctors[s.name] = rule_spans.get(rule.name, 1)
    for ctor, line in used_type_ctors.items():
        if ctor not in spec.variance:
            if ctor in DEFAULT_VARIANCE and (
                    ctor not in arities or arities[ctor] == len(DEFAULT_VARIANCE[ctor])):
                spec.variance[ctor] = DEFAULT_VARIANCE[ctor]
            else:
                err(line, f"missing variance entry for type constructor {ctor!r}")

    # base subtype lattice: declared on base types, acyclic, antisymmetric
    bases = set(spec.base_types())
    for a, b in spec.base_subtypes:
        if a not in bases or b not in bases:
            err(1, f"subtype-base pair {a} <: {b} names a non-base type")
        if a == b:
            err(1, f"subtype-base pair {a} <: {a} is reflexive")
    closure = spec.base_subtype_closure()
    for a, b in closure:
        if a == b or (b, a) in closure:
            err(1, f"ill-formed subtype lattice: {a} and {b} form a cycle")
            break

    # every value production has an expression-production skeleton
    value_cat, expr_cat = spec.value_category, spec.expression_category
    if value_cat is not None and expr_cat is not None:
        def skeleton(t: Term):
            match t:
                case Constructor(n, args):
                    return ("con", n, len(args))
                case BinderApp(b, _, args):
                    return ("bind", b, len(args))
                case Var(_):
                    return ("var",)
                case Metavariable(_, _, cat):
                    return ("mv",)
                case _:
                    return ("other",)
        expr_skels = {skeleton(p) for p in expr_cat.productions}
        expr_skels.add(("mv",))
        for p in value_cat.productions:
            if skeleton(p) not in expr_skels:
                err(cat_spans.get(value_cat.name, 1),
                    f"value production {render_term(p, spec)} has no expression counterpart")


# ---------------------------------------------------------------------------
# printing


def render_term(t: Term, spec: LanguageSpec) -> str:
    match t:
        case Metavariable():
            return t.token
        case Var(name):
            return name
        case Hole():
            return "[.]"
        case Subst(target, repl, var):
            return f"{render_term(target, spec)}[{render_term(repl, spec)}/{var}]"
        case Constructor("cons", (_, _)):
            items = []
            node = t
            while isinstance(node, Constructor) and node.name == "cons" and len(node.args) == 2:
                items.append(node.args[0])
                node = node.args[1]
            if isinstance(node, Constructor) and node.name == "nil" and not node.args:
                return "[" + ", ".join(render_term(i, spec) for i in items) + "]"
            return _render_app("cons", t.args, spec)
        case Constructor(name, args):
            return name if not args else _render_app(name, args, spec)
        case BinderApp(binder, bound_var, args):
            pos = spec.binders.get(binder, 1)
            rendered = [render_term(a, spec) for a in args]
            rendered.insert(pos - 1, bound_var)
            return f"({binder} " + " ".join(rendered) + ")"
    raise LangxError(f"cannot render {t!r}")


def _render_app(name: str, args: tuple[Term, ...], spec: LanguageSpec) -> str:
    return f"({name} " + " ".join(render_term(a, spec) for a in args) + ")"


def render_env(env: EnvExpr, spec: LanguageSpec) -> str:
    parts = [env.root]
    parts.extend(f"{v} : {render_term(t, spec)}" for v, t in env.extensions)
    return ", ".join(parts)


def render_formula(f: Formula, spec: LanguageSpec) -> str:
    match f:
        case Typing(env, subject, ty):
            return f"{render_env(env, spec)} |- {render_term(subject, spec)} : {render_term(ty, spec)}"
        case Reduction(lhs, rhs):
            return f"{render_term(lhs, spec)} --> {render_term(rhs, spec)}"
        case MachineStep(lhs, rhs):
            return (
                f"<{render_term(lhs.focus, spec)} , {render_term(lhs.continuation, spec)}>"
                f" --> "
                f"<{render_term(rhs.focus, spec)} , {render_term(rhs.continuation, spec)}>"
            )
        case Subtype(sub, sup):
            return f"{render_term(sub, spec)} <: {render_term(sup, spec)}"
        case TypeEq(left, right):
            return f"{render_term(left, spec)} = {render_term(right, spec)}"
        case Join(result, operands):
            return f"{render_term(result, spec)} = " + " \\/ ".join(
                render_term(o, spec) for o in operands)
    raise LangxError(f"cannot render {f!r}")


def print_spec(spec: LanguageSpec) -> str:
    out: list[str] = [f"language {spec.name}"]
    if spec.variables:
        out += ["", "variables " + " ".join(spec.variables)]
    if spec.categories:
        out += ["", "grammar"]
        for cat in spec.categories:
            prods = " | ".join(render_term(p, spec) for p in cat.productions)
            out.append(f"  {cat.name} {cat.metavariable} ::= {prods}")
    if spec.binders:
        out.append("")
        out += [f"binder {name} {pos}" for name, pos in spec.binders.items()]
    if spec.context_name is not None and spec.context_name != "Context":
        out += ["", f"contexts {spec.context_name}"]
    printable_variance = {c: m for c, m in spec.variance.items() if m}
    if printable_variance:
        out += ["", "variance"]
        out += [f"  {c} : {' '.join(m)}" for c, m in printable_variance.items()]
    if spec.base_subtypes:
        out += ["", "subtype-base"]
        out += [f"  {a} <: {b}" for a, b in spec.base_subtypes]
    for rule in spec.rules:
        out += ["", f"rule {rule.name}"]
        out += [f"  {render_formula(p, spec)}" for p in rule.premises]
        out.append(f"  {RULE_SEPARATOR}")
        out.append(f"  {render_formula(rule.conclusion, spec)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# standalone terms


def parse_term(text: str, spec: LanguageSpec, concrete: bool = False) -> Term:
    """Parse one term against a finished spec.

    With concrete=True metavariables are rejected, which is what the CLI
    wants for program text.
    """
    res = _Resolver(
        filename="<term>",
        categories=[(c.name, c.metavariable) for c in spec.categories],
        variables=spec.variables,
        binders=spec.binders,
        constructors=dict(spec.constructor_arities()),
        mode=_CONCRETE if concrete else _RULE,
    )
    try:
        p = _P(_tokenize(text, "<term>", 1), "<term>", 1, res)
        t = p.term()
        p.done()
    except _Fail as f:
        raise SpecParseError([f.error]) from None
    return t
