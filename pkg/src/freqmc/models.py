"""Explicit-state Markov chains and MDPs.

File format, one declaration per line::

    state <name> [label ...]
    init <name>
    trans <state> <action> <target>:<prob> [<target>:<prob> ...]

Probabilities are decimals or ``num/den`` and are kept as exact fractions.
``#`` starts a comment.  Markov chains use the single action name ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

MC_ACTION = "-"

# transitions[s][k] is the distribution of the k-th action of state s
Transitions = Sequence[Sequence[Sequence[tuple[int, Fraction]]]]


class ModelFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Model:
    state_names: tuple[str, ...]
    labels: tuple[frozenset[str], ...]
    action_names: tuple[tuple[str, ...], ...]
    transitions: tuple[tuple[tuple[tuple[int, Fraction], ...], ...], ...]
    init: int = 0

    def __post_init__(self):
        n = len(self.state_names)
        if not (len(self.labels) == len(self.action_names) == len(self.transitions) == n):
            raise ModelFormatError("inconsistent model dimensions")
        if len(set(self.state_names)) != n:
            raise ModelFormatError("duplicate state names")
        if not 0 <= self.init < n:
            raise ModelFormatError("initial state out of range")
        for s in range(n):
            name = self.state_names[s]
            if not self.transitions[s]:
                raise ModelFormatError(f"state {name} has no actions")
            if len(self.action_names[s]) != len(self.transitions[s]):
                raise ModelFormatError(f"state {name}: action names do not match transitions")
            if len(set(self.action_names[s])) != len(self.action_names[s]):
                raise ModelFormatError(f"state {name}: duplicate action")
            for a, dist in zip(self.action_names[s], self.transitions[s]):
                total = Fraction(0)
                seen = set()
                for t, p in dist:
                    if not 0 <= t < n:
                        raise ModelFormatError(f"state {name}, action {a}: target out of range")
                    if t in seen:
                        raise ModelFormatError(f"state {name}, action {a}: duplicate target")
                    if p < 0:
                        raise ModelFormatError(f"state {name}, action {a}: negative probability")
                    seen.add(t)
                    total += p
                if total != 1:
                    raise ModelFormatError(
                        f"state {name}, action {a}: probabilities sum to {total}, not 1"
                    )

    @classmethod
    def build(
        cls,
        states: Sequence[tuple[str, Iterable[str]]],
        transitions: dict[str, dict[str, dict[str, Fraction | float | str | int]]],
        init: str | None = None,
    ) -> "Model":
        """Convenience constructor from names: ``transitions[s][a][t] = p``."""
        names = tuple(s for s, _ in states)
        index = {s: i for i, s in enumerate(names)}
        labels = tuple(frozenset(lab) for _, lab in states)
        acts, trans = [], []
        for s in names:
            by_action = transitions.get(s, {})
            acts.append(tuple(by_action))
            trans.append(
                tuple(
                    tuple((index[t], Fraction(p)) for t, p in dist.items())
                    for dist in by_action.values()
                )
            )
        return cls(names, labels, tuple(acts), tuple(trans), index[init] if init else 0)

    @property
    def num_states(self) -> int:
        return len(self.state_names)

    @property
    def atoms(self) -> frozenset[str]:
        return frozenset().union(*self.labels)

    @property
    def is_markov_chain(self) -> bool:
        return all(len(acts) == 1 for acts in self.transitions)

    def index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise KeyError(f"unknown state {name!r}") from None

    def successors(self, s: int) -> list[int]:
        return sorted({t for dist in self.transitions[s] for t, _ in dist})

    def successor_lists(self) -> list[list[int]]:
        return [self.successors(s) for s in range(self.num_states)]

    def probability(self, s: int, t: int, action: int = 0) -> Fraction:
        return dict(self.transitions[s][action]).get(t, Fraction(0))

    def with_labels(self, labels: Sequence[frozenset[str]]) -> "Model":
        return Model(self.state_names, tuple(labels), self.action_names, self.transitions, self.init)

    def with_init(self, init: int) -> "Model":
        return Model(self.state_names, self.labels, self.action_names, self.transitions, init)


# ---------------------------------------------------------------------------
# text format


def _parse_prob(text: str, line: int) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ModelFormatError(f"bad probability {text!r}", line) from None


def parse_model(text: str) -> Model:
    states: list[str] = []
    labels: dict[str, frozenset[str]] = {}
    init: str | None = None
    trans: dict[str, dict[str, list[tuple[str, Fraction]]]] = {}
    trans_lines: list[tuple[int, str, str, list[tuple[str, Fraction]]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "state":
            if not rest:
                raise ModelFormatError("state declaration without a name", lineno)
            name = rest[0]
            if name in labels:
                raise ModelFormatError(f"state {name} declared twice", lineno)
            states.append(name)
            labels[name] = frozenset(rest[1:])
        elif head == "init":
            if len(rest) != 1:
                raise ModelFormatError("init takes exactly one state", lineno)
            if init is not None:
                raise ModelFormatError("init declared twice", lineno)
            init = rest[0]
        elif head == "trans":
            if len(rest) < 3:
                raise ModelFormatError("trans needs a state, an action and targets", lineno)
            src, act = rest[0], rest[1]
            dist = []
            for item in rest[2:]:
                target, sep, prob = item.rpartition(":")
                if not sep or not target:
                    raise ModelFormatError(f"bad target {item!r}", lineno)
                dist.append((target, _parse_prob(prob, lineno)))
            trans_lines.append((lineno, src, act, dist))
        else:
            raise ModelFormatError(f"unknown declaration {head!r}", lineno)
    if not states:
        raise ModelFormatError("model has no states")
    if init is None:
        raise ModelFormatError("missing init declaration")
    if init not in labels:
        raise ModelFormatError(f"init refers to unknown state {init!r}")
    for lineno, src, act, dist in trans_lines:
        if src not in labels:
            raise ModelFormatError(f"unknown state {src!r}", lineno)
        if act in trans.setdefault(src, {}):
            raise ModelFormatError(f"duplicate transition for {src} {act}", lineno)
        targets = [t for t, _ in dist]
        for t in targets:
            if t not in labels:
                raise ModelFormatError(f"unknown target state {t!r}", lineno)
        if len(set(targets)) != len(targets):
            raise ModelFormatError(f"duplicate target in {src} {act}", lineno)
        total = sum((p for _, p in dist), Fraction(0))
        if total != 1:
            raise ModelFormatError(f"probabilities of {src} {act} sum to {total}, not 1", lineno)
        trans[src][act] = dist
    index = {s: i for i, s in enumerate(states)}
    for s in states:
        if not trans.get(s):
            raise ModelFormatError(f"state {s} has no outgoing transitions")
    return Model(
        tuple(states),
        tuple(labels[s] for s in states),
        tuple(tuple(trans[s]) for s in states),
        tuple(
            tuple(tuple((index[t], p) for t, p in dist) for dist in trans[s].values())
            for s in states
        ),
        index[init],
    )


def _fmt_prob(p: Fraction) -> str:
    return str(p.numerator) if p.denominator == 1 else f"{p.numerator}/{p.denominator}"


def serialize_model(m: Model) -> str:
    lines = []
    for name, lab in zip(m.state_names, m.labels):
        lines.append(" ".join(["state", name, *sorted(lab)]))
    lines.append(f"init {m.state_names[m.init]}")
    for s, name in enumerate(m.state_names):
        for a, dist in zip(m.action_names[s], m.transitions[s]):
            targets = " ".join(f"{m.state_names[t]}:{_fmt_prob(p)}" for t, p in dist)
            lines.append(f"trans {name} {a} {targets}")
    return "\n".join(lines) + "\n"


def load_model(path: str | Path) -> Model:
    return parse_model(Path(path).read_text())


# ---------------------------------------------------------------------------
# graph decompositions


def strongly_connected_components(succ: Sequence[Sequence[int]]) -> list[list[int]]:
    """Tarjan's algorithm, iterative.  Components come out in reverse topological order
    (every component is emitted after all components reachable from it)."""
    n = len(succ)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            if i < len(succ[v]):
                work[-1] = (v, i + 1)
                w = succ[v][i]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    low[u] = min(low[u], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        on_stack[w] = False
                        comp.append(w)
                        if w == v:
                            break
                    comps.append(sorted(comp))
    return comps


def bottom_components(succ: Sequence[Sequence[int]]) -> list[frozenset[int]]:
    """SCCs with no edge leaving them."""
    out = []
    for comp in strongly_connected_components(succ):
        members = set(comp)
        if all(t in members for s in comp for t in succ[s]):
            out.append(frozenset(comp))
    return out


def nontrivial(comp: Iterable[int], succ: Sequence[Sequence[int]]) -> bool:
    """True if the component carries a cycle."""
    comp = list(comp)
    return len(comp) > 1 or comp[0] in succ[comp[0]]


@dataclass(frozen=True)
class BsccPartition:
    bsccs: tuple[frozenset[int], ...]
    transient: frozenset[int]

    def component_of(self, s: int) -> frozenset[int] | None:
        for b in self.bsccs:
            if s in b:
                return b
        return None


def bsccs(m: Model) -> BsccPartition:
    if not m.is_markov_chain:
        raise ValueError("BSCC decomposition needs a Markov chain")
    comps = sorted(bottom_components(m.successor_lists()), key=min)
    inside = frozenset().union(*comps)
    return BsccPartition(tuple(comps), frozenset(range(m.num_states)) - inside)


def restrict_valuation(m: Model, atoms: Iterable[str]) -> Callable[[int], frozenset[str]]:
    """Map a state to its label projected onto ``atoms``."""
    keep = frozenset(atoms)
    projected = [lab & keep for lab in m.labels]
    return projected.__getitem__
