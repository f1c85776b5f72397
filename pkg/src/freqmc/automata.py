"""LTL to deterministic Rabin automata.

Pipeline: negation normal form, tableau expansion into a generalized Büchi
automaton (state-labelled), counter degeneralization, Safra trees, and an
acceptance-preserving cleanup plus bisimulation quotient.

Letters are bitmasks over the sorted atoms of the source formula; bit ``i``
is set when ``atoms[i]`` holds.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .formula import (
    FALSE,
    TRUE,
    And,
    Atom,
    FalseF,
    Formula,
    LassoWord,
    Next,
    Not,
    Or,
    Release,
    TrueF,
    Until,
    atoms as formula_atoms,
    is_ltl,
    to_nnf,
    to_string,
)
from .models import nontrivial, strongly_connected_components

DEFAULT_STATE_BUDGET = 50_000


class AutomatonBudgetExceeded(RuntimeError):
    """Raised when a construction needs more states than the configured cap."""


def letter_mask(atoms: Sequence[str], label: Iterable[str]) -> int:
    label = set(label)
    return sum(1 << i for i, a in enumerate(atoms) if a in label)


# ---------------------------------------------------------------------------
# generalized Büchi automata from a tableau


@dataclass(frozen=True)
class GeneralizedBuchiAutomaton:
    """Nondeterministic automaton with state-based generalized Büchi acceptance.

    ``trans[q][letter]`` is the set of successors.  A run is accepting when it
    visits every set in ``acceptance`` infinitely often.
    """

    atoms: tuple[str, ...]
    init: int
    trans: tuple[tuple[frozenset[int], ...], ...]
    acceptance: tuple[frozenset[int], ...]

    @property
    def num_states(self) -> int:
        return len(self.trans)


def _expand(todo: tuple[Formula, ...], now: frozenset, nxt: frozenset, out: set) -> None:
    while todo:
        f, todo = todo[0], todo[1:]
        if f in now:
            continue
        if isinstance(f, FalseF):
            return
        now = now | {f}
        if isinstance(f, TrueF):
            continue
        if isinstance(f, Atom):
            if Not(f) in now:
                return
        elif isinstance(f, Not):
            if f.arg in now:
                return
        elif isinstance(f, And):
            todo = (f.left, f.right) + todo
        elif isinstance(f, Or):
            _expand((f.left,) + todo, now, nxt, out)
            _expand((f.right,) + todo, now, nxt, out)
            return
        elif isinstance(f, Next):
            nxt = nxt | {f.arg}
        elif isinstance(f, Until):
            _expand((f.right,) + todo, now, nxt, out)
            _expand((f.left,) + todo, now, nxt | {f}, out)
            return
        elif isinstance(f, Release):
            _expand((f.left, f.right) + todo, now, nxt, out)
            _expand((f.right,) + todo, now, nxt | {f}, out)
            return
        else:
            raise TypeError(f"formula not in negation normal form: {f!r}")
    out.add((now, nxt))


def ltl_to_nba(f: Formula, atoms: Sequence[str] | None = None) -> GeneralizedBuchiAutomaton:
    """Tableau translation of a pure LTL formula.

    Each tableau node fixes the literals of the letter read *on entering it*,
    the obligations for the next position, and, for every until subformula
    ``a U b``, whether the node fulfils it (``a U b`` not promised or ``b``
    holds now).  State 0 is a fresh initial state.
    """
    if not is_ltl(f):
        raise ValueError("automata translation needs a pure LTL formula")
    f = to_nnf(f)
    atoms = tuple(sorted(formula_atoms(f))) if atoms is None else tuple(atoms)
    untils = sorted(
        {g for g in _nnf_subformulas(f) if isinstance(g, Until)}, key=to_string
    )
    bit = {a: 1 << i for i, a in enumerate(atoms)}
    nletters = 1 << len(atoms)

    def node_key(now, nxt):
        pos = neg = 0
        for g in now:
            if isinstance(g, Atom):
                pos |= bit[g.name]
            elif isinstance(g, Not):
                neg |= bit[g.arg.name]
        acc = tuple(u not in now or u.right in now for u in untils)
        return pos, neg, frozenset(nxt), acc

    expand_cache: dict[frozenset, list] = {}

    def successors(obligations: frozenset) -> list:
        if obligations not in expand_cache:
            out: set = set()
            _expand(tuple(sorted(obligations, key=to_string)), frozenset(), frozenset(), out)
            expand_cache[obligations] = sorted({node_key(*x) for x in out}, key=repr)
        return expand_cache[obligations]

    keys: list = [None]
    index: dict = {}
    succ_keys: list[list] = [successors(frozenset({f}))]
    i = 0
    while i < len(keys):
        for k in succ_keys[i]:
            if k not in index:
                index[k] = len(keys)
                keys.append(k)
                succ_keys.append(successors(k[2]))
        i += 1

    trans = []
    for i, ks in enumerate(succ_keys):
        row = []
        for letter in range(nletters):
            row.append(
                frozenset(
                    index[k] for k in ks if letter & k[0] == k[0] and not letter & k[1]
                )
            )
        trans.append(tuple(row))
    acceptance = tuple(
        frozenset(j for j in range(1, len(keys)) if keys[j][3][u]) for u in range(len(untils))
    )
    return GeneralizedBuchiAutomaton(atoms, 0, tuple(trans), acceptance)


def _nnf_subformulas(f: Formula):
    stack = [f]
    while stack:
        g = stack.pop()
        yield g
        stack.extend(g.children())


@dataclass(frozen=True)
class BuchiAutomaton:
    atoms: tuple[str, ...]
    init: int
    trans: tuple[tuple[frozenset[int], ...], ...]
    accepting: frozenset[int]

    @property
    def num_states(self) -> int:
        return len(self.trans)


def degeneralize(g: GeneralizedBuchiAutomaton) -> BuchiAutomaton:
    """Counter construction with jumping.

    Leaving a state ``q`` with counter ``c`` advances the counter past every
    consecutive set ``F_c, F_c+1, ...`` containing ``q``.  States where the
    counter wraps around are accepting.
    """
    k = len(g.acceptance)
    if k == 0:
        return BuchiAutomaton(g.atoms, g.init, g.trans, frozenset(range(g.num_states)))

    def advance(q, c):
        while c < k and q in g.acceptance[c]:
            c += 1
        return c

    index = {(g.init, 0): 0}
    order = [(g.init, 0)]
    trans = []
    accepting = set()
    i = 0
    while i < len(order):
        q, c = order[i]
        nc = advance(q, c)
        if nc == k:
            accepting.add(i)
            nc = 0
        row = []
        for targets in g.trans[q]:
            ids = []
            for t in targets:
                key = (t, nc)
                if key not in index:
                    index[key] = len(order)
                    order.append(key)
                ids.append(index[key])
            row.append(frozenset(ids))
        trans.append(tuple(row))
        i += 1
    return BuchiAutomaton(g.atoms, 0, tuple(trans), frozenset(accepting))


def _nba_succ(b: BuchiAutomaton) -> list[list[int]]:
    return [sorted(set().union(*row)) for row in b.trans]


def reduce_nba(b: BuchiAutomaton) -> BuchiAutomaton:
    """Drop states with empty language and merge bisimilar states.

    Bisimilarity here is the coarsest partition that respects the accepting
    flag and, letter by letter, the set of successor blocks.  Both steps keep
    the language of every remaining state.
    """
    succ = _nba_succ(b)
    live: set[int] = set()
    for comp in strongly_connected_components(succ):
        if nontrivial(comp, succ) and b.accepting & set(comp):
            live.update(comp)
    live = _backward_closure(succ, live)
    live.add(b.init)
    keep = sorted(live)
    trans = {q: [frozenset(t for t in row if t in live) for row in b.trans[q]] for q in keep}
    block = {q: int(q in b.accepting) for q in keep}
    nblocks = len(set(block.values()))
    while True:
        keys = {
            q: (block[q],) + tuple(frozenset(block[t] for t in row) for row in trans[q])
            for q in keep
        }
        ids: dict = {}
        new = {q: ids.setdefault(keys[q], len(ids)) for q in keep}
        if len(ids) == nblocks:
            break
        block, nblocks = new, len(ids)
    order = {block[b.init]: 0}
    rep = {block[b.init]: b.init}
    queue = [b.init]
    i = 0
    while i < len(queue):
        for row in trans[queue[i]]:
            for t in sorted(row):
                if block[t] not in order:
                    order[block[t]] = len(order)
                    rep[block[t]] = t
                    queue.append(t)
        i += 1
    reps = sorted(rep, key=order.__getitem__)
    new_trans = tuple(
        tuple(frozenset(order[block[t]] for t in row) for row in trans[rep[blk]]) for blk in reps
    )
    accepting = frozenset(order[blk] for blk in reps if rep[blk] in b.accepting)
    return BuchiAutomaton(b.atoms, 0, new_trans, accepting)


def _universal_states(b: BuchiAutomaton) -> frozenset[int]:
    """Accepting states with a self-loop on every letter (their language is everything)."""
    return frozenset(q for q in b.accepting if all(q in row for row in b.trans[q]))


# ---------------------------------------------------------------------------
# deterministic Rabin automata


@dataclass(frozen=True)
class DeterministicRabinAutomaton:
    """Total deterministic automaton with Rabin pairs ``(E, F)``.

    A run is accepting iff for some pair it visits ``E`` finitely often and
    ``F`` infinitely often.
    """

    atoms: tuple[str, ...]
    init: int
    delta: tuple[tuple[int, ...], ...]
    pairs: tuple[tuple[frozenset[int], frozenset[int]], ...]
    formula: Formula | None = field(default=None, compare=False)

    def __post_init__(self):
        n = len(self.delta)
        width = 1 << len(self.atoms)
        if not 0 <= self.init < n:
            raise ValueError("initial state out of range")
        for row in self.delta:
            if len(row) != width or any(not 0 <= t < n for t in row):
                raise ValueError("transition table is not total and deterministic")
        for e, f in self.pairs:
            if not (e <= frozenset(range(n)) and f <= frozenset(range(n))):
                raise ValueError("acceptance pair refers to unknown states")

    @property
    def num_states(self) -> int:
        return len(self.delta)

    def letter(self, label: Iterable[str]) -> int:
        return letter_mask(self.atoms, label)

    def step(self, q: int, label: Iterable[str] | int) -> int:
        letter = label if isinstance(label, int) else self.letter(label)
        return self.delta[q][letter]

    def accepting_set(self, states: Iterable[int]) -> bool:
        """Does a run visiting exactly ``states`` infinitely often accept?"""
        states = frozenset(states)
        return any(not (states & e) and states & f for e, f in self.pairs)

    def successor_lists(self) -> list[list[int]]:
        return [sorted(set(row)) for row in self.delta]

    def nonempty_states(self) -> frozenset[int]:
        """States from which some infinite word is accepted."""
        succ = self.successor_lists()
        good: set[int] = set()
        for e, f in self.pairs:
            keep = [q for q in range(self.num_states) if q not in e]
            sub = {q: [t for t in succ[q] if t not in e] for q in keep}
            local = {q: i for i, q in enumerate(keep)}
            comps = strongly_connected_components([[local[t] for t in sub[q]] for q in keep])
            for comp in comps:
                members = [keep[i] for i in comp]
                if nontrivial(comp, [[local[t] for t in sub[q]] for q in keep]) and f & set(members):
                    good.update(members)
        return frozenset(_backward_closure(succ, good))

    def to_dot(self) -> str:
        lines = ["digraph dra {", "  rankdir=LR;", '  init [shape=point];']
        for q in range(self.num_states):
            tags = []
            for j, (e, f) in enumerate(self.pairs):
                if q in e:
                    tags.append(f"E{j}")
                if q in f:
                    tags.append(f"F{j}")
            note = "\\n" + ",".join(tags) if tags else ""
            lines.append(f'  q{q} [label="q{q}{note}"];')
        lines.append(f"  init -> q{self.init};")
        for q in range(self.num_states):
            by_target: dict[int, list[int]] = {}
            for letter, t in enumerate(self.delta[q]):
                by_target.setdefault(t, []).append(letter)
            for t, letters in by_target.items():
                label = " | ".join(self._letter_text(x) for x in letters)
                if len(letters) == len(self.delta[q]):
                    label = "true"
                lines.append(f'  q{q} -> q{t} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def _letter_text(self, letter: int) -> str:
        if not self.atoms:
            return "true"
        return "{" + ",".join(a for i, a in enumerate(self.atoms) if letter >> i & 1) + "}"


def _backward_closure(succ: Sequence[Sequence[int]], targets: Iterable[int]) -> set[int]:
    pred: list[list[int]] = [[] for _ in succ]
    for q, ts in enumerate(succ):
        for t in ts:
            pred[t].append(q)
    seen = set(targets)
    stack = list(seen)
    while stack:
        q = stack.pop()
        for p in pred[q]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def dra_step(r: DeterministicRabinAutomaton, q: int, label: Iterable[str] | int) -> int:
    return r.step(q, label)


def dra_accepts_lasso(r: DeterministicRabinAutomaton, w: LassoWord) -> bool:
    q = r.init
    for letter in w.stem:
        q = r.step(q, letter)
    seen: dict[tuple[int, int], int] = {}
    trail: list[int] = []
    pos = 0
    while (q, pos) not in seen:
        seen[(q, pos)] = len(trail)
        trail.append(q)
        q = r.step(q, w.loop[pos])
        pos = (pos + 1) % len(w.loop)
    return r.accepting_set(trail[seen[(q, pos)]:])


# ---------------------------------------------------------------------------
# Safra determinization


class _Node:
    __slots__ = ("name", "label", "marked", "children")

    def __init__(self, name, label, marked, children):
        self.name = name
        self.label = label
        self.marked = marked
        self.children = children


def _thaw(t) -> _Node:
    name, label, marked, children = t
    return _Node(name, set(label), marked, [_thaw(c) for c in children])


def _freeze(n: _Node):
    return (n.name, frozenset(n.label), n.marked, tuple(_freeze(c) for c in n.children))


def _names(t, out: set) -> set:
    out.add(t[0])
    for c in t[3]:
        _names(c, out)
    return out


def _marked_names(t, out: set) -> set:
    if t[2]:
        out.add(t[0])
    for c in t[3]:
        _marked_names(c, out)
    return out


def _safra_step(tree, letter: int, nba: BuchiAutomaton, max_name: int):
    if tree is None:
        return None
    root = _thaw(tree)
    free = iter(sorted(set(range(1, max_name + 1)) - _names(tree, set())))
    accepting = nba.accepting
    trans = nba.trans

    def spawn(node):
        node.marked = False
        for c in node.children:
            spawn(c)
        acc = node.label & accepting
        if acc:
            node.children.append(_Node(next(free), set(acc), False, []))

    def update(node):
        out = set()
        for q in node.label:
            out |= trans[q][letter]
        node.label = out
        for c in node.children:
            update(c)

    def restrict(node, allowed):
        node.label &= allowed
        for c in node.children:
            restrict(c, node.label)

    def horizontal(node):
        seen: set = set()
        for c in node.children:
            restrict(c, c.label - seen)
            seen |= c.label
            horizontal(c)

    def prune(node):
        node.children = [c for c in node.children if c.label]
        for c in node.children:
            prune(c)

    def vertical(node):
        if not node.children:
            return
        union = set().union(*(c.label for c in node.children))
        if union == node.label:
            node.children = []
            node.marked = True
            return
        for c in node.children:
            vertical(c)

    spawn(root)
    update(root)
    horizontal(root)
    if not root.label:
        return None
    prune(root)
    vertical(root)
    return _freeze(root)


_TOP = "top"


def _deterministic_dra(nba: BuchiAutomaton, formula) -> DeterministicRabinAutomaton:
    sink = nba.num_states
    delta = [tuple(min(row) if row else sink for row in rows) for rows in nba.trans]
    delta.append(tuple(sink for _ in range(1 << len(nba.atoms))))
    pairs = ((frozenset(), nba.accepting),) if nba.accepting else ()
    return DeterministicRabinAutomaton(nba.atoms, nba.init, tuple(delta), pairs, formula)


def determinize(
    g: GeneralizedBuchiAutomaton | BuchiAutomaton,
    budget: int = DEFAULT_STATE_BUDGET,
    formula: Formula | None = None,
    simplify: bool = True,
) -> DeterministicRabinAutomaton:
    """Safra's construction; raises :class:`AutomatonBudgetExceeded` past ``budget`` trees.

    The Büchi automaton is reduced first.  A deterministic one is used as is,
    and a tree whose root holds a state accepting every word collapses into
    an accepting sink.
    """
    nba = degeneralize(g) if isinstance(g, GeneralizedBuchiAutomaton) else g
    nba = reduce_nba(nba)
    if all(len(row) <= 1 for rows in nba.trans for row in rows):
        dra = _deterministic_dra(nba, formula)
        return simplify_dra(dra) if simplify else dra
    universal = _universal_states(nba)
    max_name = 2 * max(nba.num_states, 1)
    nletters = 1 << len(nba.atoms)

    def canon(t):
        if t is not None and t != _TOP and universal & t[1]:
            return _TOP
        return t

    start = canon((1, frozenset({nba.init}), False, ()))
    index = {start: 0}
    trees = [start]
    delta = []
    i = 0
    while i < len(trees):
        row = []
        for letter in range(nletters):
            t = trees[i] if trees[i] == _TOP else canon(_safra_step(trees[i], letter, nba, max_name))
            if t not in index:
                if len(trees) >= budget:
                    raise AutomatonBudgetExceeded(
                        f"determinization exceeded the budget of {budget} states"
                    )
                index[t] = len(trees)
                trees.append(t)
            row.append(index[t])
        delta.append(tuple(row))
        i += 1
    plain = [t if t not in (None, _TOP) else None for t in trees]
    present = [_names(t, set()) if t is not None else set() for t in plain]
    marked = [_marked_names(t, set()) if t is not None else set() for t in plain]
    pairs = []
    for name in range(1, max_name + 1):
        e = frozenset(q for q in range(len(trees)) if name not in present[q] and trees[q] != _TOP)
        f = frozenset(q for q in range(len(trees)) if name in marked[q])
        if f:
            pairs.append((e, f))
    if _TOP in index:
        pairs.append((frozenset(), frozenset({index[_TOP]})))
    dra = DeterministicRabinAutomaton(nba.atoms, 0, tuple(delta), tuple(pairs), formula)
    return simplify_dra(dra) if simplify else dra


# ---------------------------------------------------------------------------
# acceptance-preserving cleanup


def normalize_pairs(r: DeterministicRabinAutomaton) -> DeterministicRabinAutomaton:
    """Rewrite every pair so that ``E`` is the complement of the good cycles.

    For a pair ``(E, F)`` the accepting runs are exactly those that settle in
    a nontrivial SCC of the automaton restricted to ``Q \\ E`` that meets
    ``F``.  Replacing ``E`` by the complement of the union of those SCCs and
    restricting ``F`` to them keeps the language; dominated and duplicate
    pairs are dropped.
    """
    succ = r.successor_lists()
    n = r.num_states
    new_pairs = []
    for e, f in r.pairs:
        keep = [q for q in range(n) if q not in e]
        local = {q: i for i, q in enumerate(keep)}
        sub = [[local[t] for t in succ[q] if t not in e] for q in keep]
        good: set[int] = set()
        for comp in strongly_connected_components(sub):
            members = {keep[i] for i in comp}
            if nontrivial(comp, sub) and members & f:
                good |= members
        if good:
            new_pairs.append((frozenset(range(n)) - good, frozenset(f & good)))
    new_pairs = sorted(set(new_pairs), key=lambda p: (sorted(p[0]), sorted(p[1])))
    kept = []
    for i, (e, f) in enumerate(new_pairs):
        dominated = any(
            j != i and e2 <= e and f <= f2 and (e2, f2) != (e, f)
            for j, (e2, f2) in enumerate(new_pairs)
        )
        if not dominated:
            kept.append((e, f))
    return DeterministicRabinAutomaton(r.atoms, r.init, r.delta, tuple(kept), r.formula)


def quotient(r: DeterministicRabinAutomaton) -> DeterministicRabinAutomaton:
    """Bisimulation quotient respecting membership in every ``E`` and ``F``."""
    n = r.num_states
    sig = [tuple((q in e, q in f) for e, f in r.pairs) for q in range(n)]
    block = _renumber(sig)
    while True:
        refined = _renumber(
            [(block[q],) + tuple(block[t] for t in r.delta[q]) for q in range(n)]
        )
        if max(refined) == max(block):
            break
        block = refined
    # renumber in BFS order from the initial block for stable output
    order = {block[r.init]: 0}
    queue = [r.init]
    rep = {block[r.init]: r.init}
    i = 0
    while i < len(queue):
        q = queue[i]
        for t in r.delta[q]:
            if block[t] not in order:
                order[block[t]] = len(order)
                rep[block[t]] = t
                queue.append(t)
        i += 1
    reps = sorted(rep.items(), key=lambda kv: order[kv[0]])
    delta = tuple(tuple(order[block[t]] for t in r.delta[q]) for _, q in reps)
    pairs = tuple(
        (
            frozenset(order[block[q]] for q in e if block[q] in order),
            frozenset(order[block[q]] for q in f if block[q] in order),
        )
        for e, f in r.pairs
    )
    return DeterministicRabinAutomaton(r.atoms, 0, delta, pairs, r.formula)


def _renumber(keys: list) -> list[int]:
    ids: dict = {}
    return [ids.setdefault(k, len(ids)) for k in keys]


def simplify_dra(r: DeterministicRabinAutomaton) -> DeterministicRabinAutomaton:
    r = quotient(normalize_pairs(r))
    return normalize_pairs(r)


# ---------------------------------------------------------------------------
# entry point


@functools.lru_cache(maxsize=4096)
def _cached_dra(f: Formula, atoms: tuple[str, ...] | None, budget: int) -> DeterministicRabinAutomaton:
    gba = ltl_to_nba(f, atoms)
    return determinize(gba, budget=budget, formula=f)


def ltl_to_dra(
    f: Formula, atoms: Sequence[str] | None = None, budget: int = DEFAULT_STATE_BUDGET
) -> DeterministicRabinAutomaton:
    """Deterministic Rabin automaton equivalent to the pure LTL formula ``f``.

    The alphabet is the powerset of ``atoms`` (default: the atoms of ``f``).
    Results are cached per (formula, alphabet, budget).
    """
    return _cached_dra(f, None if atoms is None else tuple(atoms), budget)


def constant_dra(value: bool) -> DeterministicRabinAutomaton:
    pairs = ((frozenset(), frozenset({0})),) if value else ()
    return DeterministicRabinAutomaton((), 0, ((0,),), pairs, TRUE if value else FALSE)


def make_dra(
    atoms: Sequence[str],
    states: Sequence[str],
    init: str,
    edges: dict[str, Sequence[tuple[object, str]]],
    pairs: Sequence[tuple[Iterable[str], Iterable[str]]],
) -> DeterministicRabinAutomaton:
    """Build a DRA from named states.

    ``edges[q]`` lists ``(guard, target)``; a guard is a callable on the set
    of true atoms, or ``True``.  The first matching guard wins.
    """
    atoms = tuple(atoms)
    idx = {s: i for i, s in enumerate(states)}
    delta = []
    for s in states:
        row = []
        for letter in range(1 << len(atoms)):
            label = frozenset(a for i, a in enumerate(atoms) if letter >> i & 1)
            for guard, target in edges[s]:
                if guard is True or guard(label):
                    row.append(idx[target])
                    break
            else:
                raise ValueError(f"no edge from {s} on {set(label)}")
        delta.append(tuple(row))
    return DeterministicRabinAutomaton(
        atoms,
        idx[init],
        tuple(delta),
        tuple((frozenset(idx[q] for q in e), frozenset(idx[q] for q in f)) for e, f in pairs),
    )
