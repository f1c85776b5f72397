"""Strategy synthesis for 1-fLTL on MDPs.

For ``psi`` with frequency bodies ``phi_1 .. phi_n`` and every commitment
set ``I``, the pure LTL formulas ``xi^I`` (each ``G{1} phi_i`` replaced by
true for ``i`` in ``I`` and false otherwise) are translated to Rabin
automata.  A collection product tracks arbitrarily many automaton
instances as a set of annotated states; its largest accumulating region
``(M, N)`` yields the winning pairs ``Upsilon``, and the final value is the
maximal probability of reaching ``Upsilon`` in the naive product of the
model with all main automata.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .automata import DEFAULT_STATE_BUDGET, DeterministicRabinAutomaton, ltl_to_dra
from .formula import (
    Formula,
    FreqGlobally,
    collect_frequency_subformulas,
    is_one_fltl,
    substitute_commitment,
    to_string,
)
from .models import Model
from .numerics import almost_sure_fulfilled_then_M, max_reach_probability_mdp
from .strategy import Alternator, SynthesizedStrategy

DEFAULT_PRODUCT_BUDGET = 2_000_000

STAR, OPEN, DONE = 0, 1, 2
KIND_TEXT = {STAR: "*", OPEN: "o", DONE: "•"}

# an element is (automaton id, automaton state, kind, pair index); STAR uses pair -1
Element = tuple[int, int, int, int]
Collection = frozenset  # of Element


class ProductBudgetExceeded(RuntimeError):
    pass


class SynthesisInputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Rabin family


def _subsets(n: int) -> list[frozenset[int]]:
    items = range(1, n + 1)
    return [frozenset(c) for r in range(n + 1) for c in itertools.combinations(items, r)]


@dataclass(frozen=True)
class RabinFamily:
    psi: Formula
    bodies: tuple[Formula, ...]
    subsets: tuple[frozenset[int], ...]
    formulas: tuple[Formula, ...]  # per automaton id
    automata: tuple[DeterministicRabinAutomaton, ...]
    main: dict  # I -> automaton id of psi^I
    element: dict  # (i, I) -> automaton id of phi_i^I

    @property
    def n(self) -> int:
        return len(self.bodies)


def build_rabin_family(
    psi: Formula, bodies: Sequence[Formula] | None = None, budget: int = DEFAULT_STATE_BUDGET
) -> RabinFamily:
    """Automata for ``xi^I``, ``xi`` in ``psi, phi_1 .. phi_n``, deduplicated by formula."""
    bodies = tuple(collect_frequency_subformulas(psi) if bodies is None else bodies)
    subsets = tuple(_subsets(len(bodies)))
    formulas: list[Formula] = []
    ids: dict[Formula, int] = {}

    def aid(f: Formula) -> int:
        if f not in ids:
            ids[f] = len(formulas)
            formulas.append(f)
        return ids[f]

    main, element = {}, {}
    for I in subsets:
        main[I] = aid(substitute_commitment(psi, I, bodies))
        for i in sorted(I):
            element[(i, I)] = aid(substitute_commitment(bodies[i - 1], I, bodies))
    automata = tuple(ltl_to_dra(f, budget=budget) for f in formulas)
    return RabinFamily(psi, bodies, subsets, tuple(formulas), automata, main, element)


# ---------------------------------------------------------------------------
# collection product


@dataclass(frozen=True)
class CommitmentContext:
    committed: frozenset[int]
    main: int
    components: tuple[int, ...]
    seeds: frozenset


def contexts(family: RabinFamily) -> list[CommitmentContext]:
    out = []
    for I in family.subsets:
        comps = tuple(sorted({family.element[(i, I)] for i in I}))
        seeds = frozenset((a, family.automata[a].init, STAR, -1) for a in comps)
        out.append(CommitmentContext(I, family.main[I], comps, seeds))
    return out


def is_fulfilled(c: Collection | None) -> bool:
    return bool(c) and all(e[2] == DONE for e in c)


class ProductSpace:
    """Model, labels and automata, with per-state letters precomputed."""

    def __init__(self, model: Model, family: RabinFamily, labels: Sequence[frozenset[str]] | None = None):
        self.model = model
        self.family = family
        labels = model.labels if labels is None else labels
        self.labels = tuple(labels)
        self.masks = [[dra.letter(lab) for lab in self.labels] for dra in family.automata]
        self.nonempty = [dra.nonempty_states() for dra in family.automata]

    def step(self, a: int, q: int, s: int) -> int:
        return self.family.automata[a].delta[q][self.masks[a][s]]


def legal_actions(
    space: ProductSpace,
    s: int,
    c: Collection,
    ctx: CommitmentContext,
    all_additions: bool = False,
) -> list[tuple[int, Collection]]:
    """Legal product actions ``(model action, C_a)`` at ``(s, c)``.

    Each new instance either keeps waiting or commits to a pair whose ``E``
    it does not enter on reading ``s`` (committing otherwise leads straight
    to a violation).  Seeds are added all-or-nothing unless
    ``all_additions`` asks for every subset.
    """
    fixed = [e for e in c if e[2] != STAR]
    options = []
    for a, q, _, _ in sorted(e for e in c if e[2] == STAR):
        q2 = space.step(a, q, s)
        opts = [(a, q, STAR, -1)]
        for j, (e_set, _f) in enumerate(space.family.automata[a].pairs):
            if q2 not in e_set:
                opts.append((a, q, OPEN, j))
        options.append(opts)
    seeds = sorted(ctx.seeds)
    if all_additions:
        additions = [frozenset(x) for r in range(len(seeds) + 1) for x in itertools.combinations(seeds, r)]
    else:
        additions = [frozenset()] + ([frozenset(seeds)] if seeds else [])
    bases = {frozenset(fixed).union(combo) for combo in itertools.product(*options)}
    collections = sorted({b | add for b in bases for add in additions}, key=_collection_key)
    return [(k, ca) for k in range(len(space.model.transitions[s])) for ca in collections]


def _collection_key(c: Collection):
    return (len(c), sorted(c))


def evolve(
    space: ProductSpace, ca: Collection, s: int, reset: bool
) -> Collection | None:
    """Deterministic successor collection of ``ca`` after reading the label of ``s``.

    ``reset`` says whether the current product state is fulfilled; committed
    elements that see neither ``E`` nor ``F`` then fall back to ``o``.
    ``E`` wins over ``F``.  Returns ``None`` (the trap) when some element
    is violated or some new instance has an empty language.
    """
    out = set()
    for a, q, kind, j in ca:
        q2 = space.step(a, q, s)
        if kind == STAR:
            if q2 not in space.nonempty[a]:
                return None
            out.add((a, q2, STAR, -1))
            continue
        e_set, f_set = space.family.automata[a].pairs[j]
        if q2 in e_set:
            return None
        if q2 in f_set:
            out.add((a, q2, DONE, j))
        elif reset:
            out.add((a, q2, OPEN, j))
        else:
            out.add((a, q2, kind, j))
    return frozenset(out)


@dataclass(frozen=True)
class ProductFragment:
    """Action-closed part of the collection product.  State 0 is the trap."""

    states: tuple  # (s, collection); the trap is (-1, None)
    actions: tuple  # [x] -> tuple of (model action, C_a)
    choices: tuple  # [x][j] -> tuple of (x', p)
    fulfilled: frozenset[int]
    accumulating: tuple  # [x][j] -> bool
    index: dict = field(compare=False, repr=False)

    @property
    def size(self) -> int:
        return len(self.states)


def reachable_product(
    space: ProductSpace,
    ctx: CommitmentContext,
    seeds: Iterable[tuple[int, Collection]],
    budget: int = DEFAULT_PRODUCT_BUDGET,
    all_additions: bool = False,
) -> tuple[ProductFragment, list[list[dict[int, int]]]]:
    """Breadth-first closure of ``seeds`` under all legal actions.

    Returns the fragment and, per state and action, the map from model
    successor to product successor.
    """
    trap = (-1, None)
    index = {trap: 0}
    states = [trap]
    actions: list = [((-1, None),)]
    choices: list = [(((0, Fraction(1)),),)]
    accumulating: list = [(False,)]
    next_maps: list = [[{}]]

    def intern(key):
        if key[1] is None:
            return 0
        if key not in index:
            if len(states) >= budget:
                raise ProductBudgetExceeded(f"product exceeded the budget of {budget} states")
            index[key] = len(states)
            states.append(key)
        return index[key]

    for s, c in seeds:
        intern((s, c))
    model = space.model
    i = 1
    while i < len(states):
        s, c = states[i]
        reset = is_fulfilled(c)
        acts = legal_actions(space, s, c, ctx, all_additions)
        rows, nexts = [], []
        for k, ca in acts:
            c_next = evolve(space, ca, s, reset)
            row: dict[int, Fraction] = {}
            nmap = {}
            for t, p in model.transitions[s][k]:
                y = intern((t, c_next))
                row[y] = row.get(y, Fraction(0)) + p
                nmap[t] = y
            rows.append(tuple(row.items()))
            nexts.append(nmap)
        actions.append(tuple(acts))
        choices.append(tuple(rows))
        accumulating.append(tuple(ctx.seeds <= ca for _, ca in acts))
        next_maps.append(nexts)
        i += 1
    fulfilled = frozenset(x for x, (_, c) in enumerate(states) if is_fulfilled(c))
    frag = ProductFragment(
        tuple(states), tuple(actions), tuple(choices), fulfilled, tuple(accumulating), index
    )
    return frag, next_maps


# ---------------------------------------------------------------------------
# largest accumulating region


@dataclass(frozen=True)
class RegionResult:
    M: frozenset[int]
    N: dict  # x -> tuple of action indices
    pi: dict  # x -> action index
    zeta: dict  # (x, bit) -> action index
    winning: frozenset[int]  # states whose (x, 0) wins the two-phase game for the final M
    iterations: int


def largest_MN(frag: ProductFragment) -> RegionResult:
    """Greatest ``(M, N)``: ``N`` accumulating actions staying in ``M``, and from
    every ``M`` state a fulfilled state and then ``M`` are reached almost surely."""
    n = frag.size
    M = set(range(1, n))
    N = {x: [j for j, acc in enumerate(frag.accumulating[x]) if acc] for x in M}
    iterations = 0
    while True:
        iterations += 1
        changed = True
        while changed:
            changed = False
            for x in list(M):
                keep = [j for j in N[x] if all(y in M for y, _ in frag.choices[x][j])]
                if len(keep) != len(N[x]):
                    N[x] = keep
                    changed = True
                if not keep:
                    M.discard(x)
                    changed = True
        win, zeta = almost_sure_fulfilled_then_M(frag.choices, frag.fulfilled, M)
        if M <= win:
            break
        M &= win
    N = {x: tuple(N[x]) for x in sorted(M)}
    pi = {x: N[x][0] for x in N}
    return RegionResult(frozenset(M), N, pi, zeta, frozenset(win), iterations)


# ---------------------------------------------------------------------------
# naive product


@dataclass(frozen=True)
class NaiveProduct:
    components: tuple[int, ...]  # automaton ids of the distinct main automata
    states: tuple  # (s, tuple of automaton states before reading s)
    choices: tuple  # [id][k] -> tuple of (id', p)
    next_maps: tuple  # [id][k] -> {t: id'}
    parent: tuple  # BFS parent id (or -1) for witness prefixes
    index: dict = field(compare=False, repr=False)


def naive_product(space: ProductSpace, budget: int = DEFAULT_PRODUCT_BUDGET) -> NaiveProduct:
    fam = space.family
    comps = tuple(sorted(set(fam.main.values())))
    model = space.model
    start = (model.init, tuple(fam.automata[a].init for a in comps))
    index = {start: 0}
    states = [start]
    parent = [-1]
    choices, next_maps = [], []
    i = 0
    while i < len(states):
        s, qs = states[i]
        nq = tuple(space.step(a, q, s) for a, q in zip(comps, qs))
        rows, nexts = [], []
        for dist in model.transitions[s]:
            row, nmap = [], {}
            for t, p in dist:
                key = (t, nq)
                if key not in index:
                    if len(states) >= budget:
                        raise ProductBudgetExceeded(
                            f"naive product exceeded the budget of {budget} states"
                        )
                    index[key] = len(states)
                    states.append(key)
                    parent.append(i)
                row.append((index[key], p))
                nmap[t] = index[key]
            rows.append(tuple(row))
            nexts.append(nmap)
        choices.append(tuple(rows))
        next_maps.append(tuple(nexts))
        i += 1
    return NaiveProduct(comps, tuple(states), tuple(choices), tuple(next_maps), tuple(parent), index)


# ---------------------------------------------------------------------------
# winning pairs


@dataclass
class ContextResult:
    context: CommitmentContext
    candidates: list  # (s, q) pairs met in the naive product
    fragment: ProductFragment
    next_maps: list
    region: RegionResult
    upsilon: dict  # (s, q) -> seed product state


def compute_upsilon(
    space: ProductSpace,
    ctx: CommitmentContext,
    candidates: Iterable[tuple[int, int]],
    budget: int = DEFAULT_PRODUCT_BUDGET,
    all_additions: bool = False,
) -> ContextResult:
    """Pairs ``(s, q)`` from which ``(s, {(q, *)})`` almost surely reaches a
    fulfilled state and then ``M`` of this context."""
    candidates = sorted(set(candidates))
    seeds = [(s, frozenset({(ctx.main, q, STAR, -1)})) for s, q in candidates]
    frag, next_maps = reachable_product(space, ctx, seeds, budget, all_additions)
    region = largest_MN(frag)
    ups = {}
    for (s, q), seed in zip(candidates, seeds):
        x = frag.index.get(seed, 0)
        if x != 0 and x in region.winning:
            ups[(s, q)] = x
    return ContextResult(ctx, candidates, frag, next_maps, region, ups)


# ---------------------------------------------------------------------------
# top level


@dataclass(frozen=True)
class SynthesisConfig:
    tol: float = 1e-10
    exact: bool = False
    automaton_budget: int = DEFAULT_STATE_BUDGET
    product_budget: int = DEFAULT_PRODUCT_BUDGET
    all_additions: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.automaton_budget <= 0 or self.product_budget <= 0:
            raise ValueError("budgets must be positive")


@dataclass
class SynthesisResult:
    probability: object
    strategy: SynthesizedStrategy
    family: RabinFamily
    naive: NaiveProduct
    contexts: list  # ContextResult per commitment set
    targets: dict  # naive id -> (context index, (s, q))
    timing: dict

    def upsilon(self, committed: Iterable[int] | None = None) -> set:
        """Winning pairs ``(s, q)``, for one commitment set or all of them."""
        out = set()
        for cr in self.contexts:
            if committed is None or cr.context.committed == frozenset(committed):
                out |= set(cr.upsilon)
        return out

    def report(self) -> dict:
        model = self.strategy.model
        prob = self.probability
        if isinstance(prob, Fraction):
            p = {"fraction": f"{prob.numerator}/{prob.denominator}", "decimal": float(prob)}
        else:
            p = {"decimal": float(prob)}
        per_context = []
        for cr in self.contexts:
            ups = []
            for (s, q), _x in sorted(cr.upsilon.items()):
                ups.append({"state": model.state_names[s], "automaton_state": q,
                            "prefix": self._prefix(cr.context.main, s, q)})
            per_context.append(
                {
                    "committed": sorted(cr.context.committed),
                    "psi_I": to_string(self.family.formulas[cr.context.main]),
                    "fragment_states": cr.fragment.size,
                    "M_size": len(cr.region.M),
                    "N_size": sum(len(v) for v in cr.region.N.values()),
                    "fixpoint_iterations": cr.region.iterations,
                    "upsilon": ups,
                }
            )
        return {
            "probability": p,
            "bodies": [to_string(b) for b in self.family.bodies],
            "automata": [
                {"formula": to_string(f), "states": a.num_states, "pairs": len(a.pairs)}
                for f, a in zip(self.family.formulas, self.family.automata)
            ],
            "naive_product_states": len(self.naive.states),
            "contexts": per_context,
            "timing": self.timing,
        }

    def _prefix(self, aid: int, s: int, q: int) -> list[str] | None:
        """Shortest model path from the initial state reaching ``s`` with ``q`` for automaton ``aid``."""
        naive = self.naive
        c = naive.components.index(aid)
        names = self.strategy.model.state_names
        for i, (t, qs) in enumerate(naive.states):
            if t == s and qs[c] == q:
                path = []
                while i >= 0:
                    path.append(names[naive.states[i][0]])
                    i = naive.parent[i]
                return path[::-1]
        return None


def check_synthesis_input(psi: Formula) -> None:
    if not is_one_fltl(psi):
        raise SynthesisInputError(
            "synthesis supports 1-fLTL only: negations on atoms and frequency bound 1"
        )
    if isinstance(psi, FreqGlobally):
        raise SynthesisInputError(
            "outermost operator is G{1}; conjoin with true (write 'true & ...')"
        )


def synthesize(
    model: Model,
    psi: Formula,
    config: SynthesisConfig | None = None,
    labels: Sequence[frozenset[str]] | None = None,
) -> SynthesisResult:
    """Maximal probability of satisfying the 1-fLTL formula ``psi`` and a strategy attaining it."""
    config = config or SynthesisConfig()
    check_synthesis_input(psi)
    t0 = time.perf_counter()
    family = build_rabin_family(psi, budget=config.automaton_budget)
    space = ProductSpace(model, family, labels)
    t1 = time.perf_counter()
    naive = naive_product(space, config.product_budget)
    cand: dict[int, set] = {}
    for s, qs in naive.states:
        for a, q in zip(naive.components, qs):
            cand.setdefault(a, set()).add((s, q))
    results = []
    for ctx in contexts(family):
        results.append(
            compute_upsilon(space, ctx, cand[ctx.main], config.product_budget, config.all_additions)
        )
    t2 = time.perf_counter()
    targets: dict[int, tuple[int, tuple[int, int]]] = {}
    for i, (s, qs) in enumerate(naive.states):
        for ci, cr in enumerate(results):
            q = qs[naive.components.index(cr.context.main)]
            if (s, q) in cr.upsilon:
                targets[i] = (ci, (s, q))
                break
    reach = max_reach_probability_mdp(naive.choices, targets, tol=config.tol, exact=config.exact)
    t3 = time.perf_counter()
    prob = reach.values[0]

    alternators = []
    alt_index = {}
    for ci, cr in enumerate(results):
        if not cr.upsilon:
            continue
        alt_index[ci] = len(alternators)
        frag = cr.fragment
        alternators.append(
            Alternator(
                committed=cr.context.committed,
                model_state=tuple(s for s, _ in frag.states),
                model_action=tuple(tuple(k for k, _ in acts) for acts in frag.actions),
                next_state=tuple(tuple(m) for m in cr.next_maps),
                fulfilled=frag.fulfilled,
                M=cr.region.M,
                pi=dict(cr.region.pi),
                zeta=dict(cr.region.zeta),
            )
        )
    switch = {i: (alt_index[ci], results[ci].upsilon[sq]) for i, (ci, sq) in targets.items()}
    strategy = SynthesizedStrategy(
        model=model,
        reach_states=naive.states,
        reach_action=reach.strategy,
        reach_next=naive.next_maps,
        reach_init=0,
        switch=switch,
        alternators=tuple(alternators),
        probability=prob,
    )
    timing = {
        "automata_s": t1 - t0,
        "products_s": t2 - t1,
        "reachability_s": t3 - t2,
        "total_s": t3 - t0,
    }
    return SynthesisResult(prob, strategy, family, naive, results, targets, timing)
