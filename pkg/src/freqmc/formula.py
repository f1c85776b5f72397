"""Frequency LTL formulas: syntax tree, parser, printer, rewriting and lasso evaluation.

Concrete grammar (lowest to highest precedence)::

    f ::= f -> f | f '|' f | f & f | f U f
        | ! f | X f | F f | G f | G{p} f | true | false | atom | ( f )

``p`` is a decimal (``0.95``) or a fraction (``19/20``) in [0, 1].  ``F``,
``G`` and ``->`` are sugar; the tree only holds the core constructors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Sequence


class Formula:
    """Base class of all formula nodes.  Nodes are immutable and hashable."""

    __slots__ = ()

    def children(self) -> tuple["Formula", ...]:
        return ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True, repr=False)
class TrueF(Formula):
    def __repr__(self) -> str:
        return "TRUE"


@dataclass(frozen=True, repr=False)
class FalseF(Formula):
    def __repr__(self) -> str:
        return "FALSE"


TRUE = TrueF()
FALSE = FalseF()


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Release(Formula):
    """Dual of Until.  Only produced by :func:`to_nnf`; not part of the surface syntax."""

    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class FreqGlobally(Formula):
    """``G{bound} arg``: the liminf frequency of suffixes satisfying ``arg`` is >= bound."""

    bound: Fraction
    arg: Formula

    def __post_init__(self):
        bound = Fraction(self.bound)
        if not 0 <= bound <= 1:
            raise ValueError(f"frequency bound {bound} outside [0, 1]")
        object.__setattr__(self, "bound", bound)

    def children(self):
        return (self.arg,)


# ---------------------------------------------------------------------------
# derived operators


def eventually(f: Formula) -> Formula:
    return Until(TRUE, f)


def globally(f: Formula) -> Formula:
    return Not(Until(TRUE, Not(f)))


def implies(a: Formula, b: Formula) -> Formula:
    return Or(Not(a), b)


def conj(*fs: Formula) -> Formula:
    if not fs:
        return TRUE
    out = fs[0]
    for f in fs[1:]:
        out = And(out, f)
    return out


def _globally_body(f: Formula) -> Formula | None:
    """Return ``g`` if ``f`` is the desugared form ``!(true U !g)`` of ``G g``."""
    if (
        isinstance(f, Not)
        and isinstance(f.arg, Until)
        and isinstance(f.arg.left, TrueF)
        and isinstance(f.arg.right, Not)
    ):
        return f.arg.right.arg
    return None


# ---------------------------------------------------------------------------
# traversal helpers


def subformulas(f: Formula) -> Iterator[Formula]:
    """Pre-order, left to right."""
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def atoms(f: Formula) -> frozenset[str]:
    return frozenset(n.name for n in subformulas(f) if isinstance(n, Atom))


def size(f: Formula) -> int:
    return sum(1 for _ in subformulas(f))


def is_ltl(f: Formula) -> bool:
    return not any(isinstance(n, FreqGlobally) for n in subformulas(f))


def _rebuild(f: Formula, kids: Sequence[Formula]) -> Formula:
    if isinstance(f, (Not, Next)):
        return type(f)(kids[0])
    if isinstance(f, FreqGlobally):
        return FreqGlobally(f.bound, kids[0])
    if isinstance(f, (And, Or, Until, Release)):
        return type(f)(kids[0], kids[1])
    return f


def transform(f: Formula, fn: Callable[[Formula], Formula | None]) -> Formula:
    """Top-down rewrite: ``fn`` returns a replacement or None to descend."""
    out = fn(f)
    if out is not None:
        return out
    kids = f.children()
    if not kids:
        return f
    return _rebuild(f, [transform(k, fn) for k in kids])


# ---------------------------------------------------------------------------
# fragments and formula surgery


def is_one_fltl(f: Formula) -> bool:
    """Negations only in front of atoms and every frequency bound equal to 1.

    The desugared ``G g`` pattern ``!(true U !g)`` counts as a positive
    operator, so ``G F m`` is accepted while ``!(a U b)`` is not.
    """
    body = _globally_body(f)
    if body is not None:
        return is_one_fltl(body)
    if isinstance(f, Not):
        return isinstance(f.arg, Atom)
    if isinstance(f, FreqGlobally) and f.bound != 1:
        return False
    return all(is_one_fltl(k) for k in f.children())


def collect_frequency_subformulas(f: Formula) -> list[Formula]:
    """Distinct bodies of ``G{p}`` nodes, outermost first, left to right."""
    out: list[Formula] = []
    for node in subformulas(f):
        if isinstance(node, FreqGlobally) and node.arg not in out:
            out.append(node.arg)
    return out


def innermost_frequency_node(f: Formula) -> FreqGlobally | None:
    """Leftmost ``G{p}`` node whose body is pure LTL."""
    for node in subformulas(f):
        if isinstance(node, FreqGlobally) and is_ltl(node.arg):
            return node
    return None


def substitute_commitment(
    xi: Formula, committed: Iterable[int], bodies: Sequence[Formula]
) -> Formula:
    """Replace each outermost ``G{1} bodies[i-1]`` by true if ``i`` is committed, else false.

    Indices are 1-based.  Nested frequency nodes disappear with their parent;
    the result is pure LTL.
    """
    committed = frozenset(committed)

    def fn(node: Formula) -> Formula | None:
        if isinstance(node, FreqGlobally):
            if node.bound != 1:
                raise ValueError(f"commitment substitution needs bound 1, got {node.bound}")
            try:
                i = bodies.index(node.arg) + 1
            except ValueError:
                raise ValueError(f"unknown frequency body {node.arg}") from None
            return TRUE if i in committed else FALSE
        return None

    return transform(xi, fn)


def replace_freq_with_reach(f: Formula, target: FreqGlobally, atom: str) -> Formula:
    """Replace every occurrence of ``target`` by ``F atom``."""
    if atom in atoms(f):
        raise ValueError(f"atom {atom!r} already occurs in the formula")
    if not any(n == target for n in subformulas(f)):
        raise ValueError(f"{target} does not occur in {f}")
    reach = eventually(Atom(atom))
    return transform(f, lambda n: reach if n == target else None)


def to_nnf(f: Formula) -> Formula:
    """Negation normal form of a pure LTL formula (negations only on atoms)."""
    return _nnf(f, False)


def _nnf(f: Formula, neg: bool) -> Formula:
    if isinstance(f, TrueF):
        return FALSE if neg else TRUE
    if isinstance(f, FalseF):
        return TRUE if neg else FALSE
    if isinstance(f, Atom):
        return Not(f) if neg else f
    if isinstance(f, Not):
        return _nnf(f.arg, not neg)
    if isinstance(f, And):
        cls = Or if neg else And
        return cls(_nnf(f.left, neg), _nnf(f.right, neg))
    if isinstance(f, Or):
        cls = And if neg else Or
        return cls(_nnf(f.left, neg), _nnf(f.right, neg))
    if isinstance(f, Next):
        return Next(_nnf(f.arg, neg))
    if isinstance(f, Until):
        cls = Release if neg else Until
        return cls(_nnf(f.left, neg), _nnf(f.right, neg))
    if isinstance(f, Release):
        cls = Until if neg else Release
        return cls(_nnf(f.left, neg), _nnf(f.right, neg))
    raise ValueError(f"no negation normal form for {f}")


# ---------------------------------------------------------------------------
# lasso words


@dataclass(frozen=True)
class LassoWord:
    """The infinite word ``stem . loop^omega`` over sets of atom names."""

    stem: tuple[frozenset[str], ...]
    loop: tuple[frozenset[str], ...] = field(default=(frozenset(),))

    def __post_init__(self):
        object.__setattr__(self, "stem", tuple(frozenset(x) for x in self.stem))
        object.__setattr__(self, "loop", tuple(frozenset(x) for x in self.loop))
        if not self.loop:
            raise ValueError("loop of a lasso word must be nonempty")

    def __len__(self) -> int:
        return len(self.stem) + len(self.loop)

    def letter(self, i: int) -> frozenset[str]:
        if i < len(self.stem):
            return self.stem[i]
        return self.loop[(i - len(self.stem)) % len(self.loop)]

    def successor(self, i: int) -> int:
        return len(self.stem) if i + 1 == len(self) else i + 1


def eval_lasso(f: Formula, word: LassoWord) -> bool:
    """Truth of ``f`` at position 0 of ``word``."""
    return _eval_positions(f, word, {})[0]


def eval_lasso_positions(f: Formula, word: LassoWord) -> list[bool]:
    """Truth of ``f`` at each distinct position of the lasso (stem, then one loop copy)."""
    return list(_eval_positions(f, word, {}))


def _eval_positions(f: Formula, w: LassoWord, memo: dict) -> tuple[bool, ...]:
    if f in memo:
        return memo[f]
    n = len(w)
    succ = [w.successor(i) for i in range(n)]
    if isinstance(f, TrueF):
        v = (True,) * n
    elif isinstance(f, FalseF):
        v = (False,) * n
    elif isinstance(f, Atom):
        v = tuple(f.name in w.letter(i) for i in range(n))
    elif isinstance(f, Not):
        v = tuple(not x for x in _eval_positions(f.arg, w, memo))
    elif isinstance(f, And):
        a, b = _eval_positions(f.left, w, memo), _eval_positions(f.right, w, memo)
        v = tuple(x and y for x, y in zip(a, b))
    elif isinstance(f, Or):
        a, b = _eval_positions(f.left, w, memo), _eval_positions(f.right, w, memo)
        v = tuple(x or y for x, y in zip(a, b))
    elif isinstance(f, Next):
        a = _eval_positions(f.arg, w, memo)
        v = tuple(a[succ[i]] for i in range(n))
    elif isinstance(f, (Until, Release)):
        a, b = _eval_positions(f.left, w, memo), _eval_positions(f.right, w, memo)
        until = isinstance(f, Until)
        # least fixpoint for U, greatest for R over the lasso graph
        cur = [not until] * n
        while True:
            if until:
                new = [b[i] or (a[i] and cur[succ[i]]) for i in range(n)]
            else:
                new = [b[i] and (a[i] or cur[succ[i]]) for i in range(n)]
            if new == cur:
                break
            cur = new
        v = tuple(cur)
    elif isinstance(f, FreqGlobally):
        a = _eval_positions(f.arg, w, memo)
        # suffix truth is periodic on the loop, so the liminf is the loop average
        loop = a[len(w.stem):]
        holds = Fraction(sum(loop), len(loop)) >= f.bound
        v = (holds,) * n
    else:
        raise TypeError(f"cannot evaluate {f!r}")
    memo[f] = v
    return v


# ---------------------------------------------------------------------------
# parsing


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.column = col


_TOKEN = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<num>\d+(?:\.\d+)?(?:/\d+)?|\.\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[!&|(){}]))"
)
_KEYWORDS = {"X", "U", "F", "G", "true", "false"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "ident" and value in _KEYWORDS:
            kind = value
        elif kind in ("sym", "arrow"):
            kind = value
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> str:
        return self.tokens[self.i][0]

    def take(self, kind: str | None = None) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            found = tok[1] or "end of input"
            raise FormulaSyntaxError(f"expected {kind!r}, found {found!r}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.implication()
        self.take("eof")
        return f

    def implication(self) -> Formula:
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return implies(left, self.implication())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.peek() == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self) -> Formula:
        kind = self.peek()
        if kind == "!":
            self.take()
            return Not(self.unary())
        if kind == "X":
            self.take()
            return Next(self.unary())
        if kind == "F":
            self.take()
            return eventually(self.unary())
        if kind == "G":
            self.take()
            if self.peek() == "{":
                self.take()
                _, value, pos = self.take("num")
                self.take("}")
                try:
                    bound = Fraction(value)
                except ZeroDivisionError:
                    raise FormulaSyntaxError(f"bound {value} has a zero denominator", self.text, pos) from None
                if not 0 <= bound <= 1:
                    raise FormulaSyntaxError(f"bound {value} outside [0, 1]", self.text, pos)
                return FreqGlobally(bound, self.unary())
            return globally(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        kind, value, pos = self.tokens[self.i]
        if kind == "true":
            self.take()
            return TRUE
        if kind == "false":
            self.take()
            return FALSE
        if kind == "ident":
            self.take()
            return Atom(value)
        if kind == "(":
            self.take()
            f = self.implication()
            self.take(")")
            return f
        found = value or "end of input"
        raise FormulaSyntaxError(f"unexpected {found!r}", self.text, pos)


def parse(text: str) -> Formula:
    """Parse a formula; raises :class:`FormulaSyntaxError` with line/column."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing

_IMPL, _OR, _AND, _UNTIL, _UNARY, _ATOM = range(1, 7)


def _fmt_bound(b: Fraction) -> str:
    return str(b.numerator) if b.denominator == 1 else f"{b.numerator}/{b.denominator}"


def _prec(f: Formula) -> int:
    if isinstance(f, Or) and isinstance(f.left, Not):
        return _IMPL
    if isinstance(f, Or):
        return _OR
    if isinstance(f, And):
        return _AND
    if isinstance(f, Until) and not isinstance(f.left, TrueF):
        return _UNTIL
    if isinstance(f, Release):
        return _UNTIL
    if isinstance(f, (Atom, TrueF, FalseF)):
        return _ATOM
    return _UNARY


def _wrap(f: Formula, parens: bool) -> str:
    s = to_string(f)
    return f"({s})" if parens else s


def to_string(f: Formula) -> str:
    """Print in the concrete grammar; ``parse(to_string(f)) == f``."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        return f.name
    body = _globally_body(f)
    if body is not None:
        return "G " + _wrap(body, _prec(body) < _UNARY)
    if isinstance(f, Not):
        return "!" + _wrap(f.arg, _prec(f.arg) < _UNARY)
    if isinstance(f, Next):
        return "X " + _wrap(f.arg, _prec(f.arg) < _UNARY)
    if isinstance(f, FreqGlobally):
        return f"G{{{_fmt_bound(f.bound)}}} " + _wrap(f.arg, _prec(f.arg) < _UNARY)
    if isinstance(f, Until) and isinstance(f.left, TrueF):
        return "F " + _wrap(f.right, _prec(f.right) < _UNARY)
    if isinstance(f, Or) and isinstance(f.left, Not):
        lhs = f.left.arg
        return f"{_wrap(lhs, _prec(lhs) <= _IMPL)} -> {_wrap(f.right, _prec(f.right) < _IMPL)}"
    if isinstance(f, (Or, And)):
        p = _prec(f)
        op = "|" if isinstance(f, Or) else "&"
        return f"{_wrap(f.left, _prec(f.left) < p)} {op} {_wrap(f.right, _prec(f.right) <= p)}"
    if isinstance(f, (Until, Release)):
        op = "U" if isinstance(f, Until) else "R"
        return f"{_wrap(f.left, _prec(f.left) <= _UNTIL)} {op} {_wrap(f.right, _prec(f.right) < _UNTIL)}"
    raise TypeError(f"cannot print {f!r}")
