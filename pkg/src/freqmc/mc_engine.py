"""Quantitative model checking of fLTL on Markov chains.

Frequency operators are eliminated innermost first.  For ``G{p} phi`` with
``phi`` pure LTL, every BSCC ``B`` gets the value ``sum_t x_t * P_t[phi]``
(steady state times satisfaction probability); states of BSCCs meeting the
bound are labelled with a fresh atom ``a`` and the node is replaced by
``F a``.  The residual LTL formula is checked through a product with a
deterministic Rabin automaton.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .automata import DEFAULT_STATE_BUDGET, DeterministicRabinAutomaton, ltl_to_dra
from .formula import (
    Formula,
    atoms as formula_atoms,
    innermost_frequency_node,
    is_ltl,
    replace_freq_with_reach,
    to_string,
)
from .models import Model, bottom_components, bsccs
from .numerics import reach_probability_mc, stationary_distribution

FRESH_PREFIX = "__freq_"

Labels = Sequence[frozenset[str]]


@dataclass(frozen=True)
class ProductChain:
    """Markov chain ``mc x dra``; ``states[i] = (s, q)`` with ``q`` the automaton
    state after reading the label of ``s``."""

    states: tuple[tuple[int, int], ...]
    succ: tuple[tuple[tuple[int, Fraction], ...], ...]
    accepting_bsccs: tuple[frozenset[int], ...]
    index: dict = field(compare=False, repr=False)

    @property
    def size(self) -> int:
        return len(self.states)


def build_product_chain(
    mc: Model, labels: Labels, dra: DeterministicRabinAutomaton, sources: Iterable[int]
) -> ProductChain:
    masks = [dra.letter(lab) for lab in labels]
    index: dict[tuple[int, int], int] = {}
    states: list[tuple[int, int]] = []

    def intern(key):
        if key not in index:
            index[key] = len(states)
            states.append(key)
        return index[key]

    for s in sources:
        intern((s, dra.delta[dra.init][masks[s]]))
    succ = []
    i = 0
    while i < len(states):
        s, q = states[i]
        row = tuple((intern((t, dra.delta[q][masks[t]])), p) for t, p in mc.transitions[s][0])
        succ.append(row)
        i += 1
    graph = [[t for t, _ in row] for row in succ]
    accepting = tuple(
        b for b in bottom_components(graph) if dra.accepting_set(states[x][1] for x in b)
    )
    return ProductChain(tuple(states), tuple(succ), accepting, index)


def ltl_probabilities_mc(
    mc: Model,
    phi: Formula,
    sources: Iterable[int],
    labels: Labels | None = None,
    budget: int = DEFAULT_STATE_BUDGET,
    sizes: list | None = None,
) -> dict[int, Fraction]:
    """Exact ``P_s[phi]`` for every ``s`` in ``sources``."""
    if not is_ltl(phi):
        raise ValueError("ltl_probability_mc needs a pure LTL formula")
    if not mc.is_markov_chain:
        raise ValueError("model is not a Markov chain")
    labels = mc.labels if labels is None else labels
    sources = sorted(set(sources))
    dra = ltl_to_dra(phi, budget=budget)
    prod = build_product_chain(mc, labels, dra, sources)
    if sizes is not None:
        sizes.append(prod.size)
    target = set().union(*prod.accepting_bsccs) if prod.accepting_bsccs else set()
    values = reach_probability_mc(prod.succ, target)
    return {s: values[prod.index[(s, dra.delta[dra.init][dra.letter(labels[s])])]] for s in sources}


def ltl_probability_mc(
    mc: Model,
    phi: Formula,
    s: int | None = None,
    labels: Labels | None = None,
    budget: int = DEFAULT_STATE_BUDGET,
) -> Fraction:
    s = mc.init if s is None else s
    return ltl_probabilities_mc(mc, phi, [s], labels, budget)[s]


@dataclass(frozen=True)
class FrequencyCertificate:
    atom: str
    body: Formula
    bound: Fraction
    bscc: frozenset[int]
    value: Fraction
    holds: bool

    def __post_init__(self):
        assert 0 <= self.value <= 1
        assert self.holds == (self.value >= self.bound)


def _fresh_atom(taken: set[str], counter: list[int]) -> str:
    while True:
        name = f"{FRESH_PREFIX}{counter[0]}"
        counter[0] += 1
        if name not in taken:
            return name


def eliminate_innermost_frequency(
    psi: Formula,
    mc: Model,
    labels: Labels | None = None,
    atom: str | None = None,
    budget: int = DEFAULT_STATE_BUDGET,
    sizes: list | None = None,
) -> tuple[Formula, tuple[frozenset[str], ...], list[FrequencyCertificate]]:
    """Remove the leftmost innermost ``G{p}`` node of ``psi``.

    Returns the rewritten formula, the extended labelling and one
    certificate per BSCC.
    """
    labels = tuple(mc.labels if labels is None else labels)
    node = innermost_frequency_node(psi)
    if node is None:
        raise ValueError("formula has no frequency operator")
    if atom is None:
        taken = set(formula_atoms(psi)).union(*labels)
        atom = _fresh_atom(taken, [0])
    part = bsccs(mc)
    inside = sorted(set().union(*part.bsccs))
    probs = ltl_probabilities_mc(mc, node.arg, inside, labels, budget, sizes)
    certs = []
    new_labels = list(labels)
    for b in part.bsccs:
        x = stationary_distribution(mc, b)
        value = sum((x[t] * probs[t] for t in b), Fraction(0))
        holds = value >= node.bound
        certs.append(FrequencyCertificate(atom, node.arg, node.bound, b, value, holds))
        if holds:
            for t in b:
                new_labels[t] = new_labels[t] | {atom}
    return replace_freq_with_reach(psi, node, atom), tuple(new_labels), certs


@dataclass(frozen=True)
class McCheckResult:
    probability: Fraction
    residual: Formula
    certificates: tuple[FrequencyCertificate, ...]
    product_sizes: tuple[int, ...]
    timing: dict = field(compare=False, default_factory=dict)

    def report(self, mc: Model | None = None) -> dict:
        def state(t):
            return mc.state_names[t] if mc is not None else t

        return {
            "probability": {
                "fraction": f"{self.probability.numerator}/{self.probability.denominator}",
                "decimal": float(self.probability),
            },
            "residual": to_string(self.residual),
            "certificates": [
                {
                    "atom": c.atom,
                    "body": to_string(c.body),
                    "bound": str(c.bound),
                    "bscc": [state(t) for t in sorted(c.bscc)],
                    "value": str(c.value),
                    "holds": c.holds,
                }
                for c in self.certificates
            ],
            "product_sizes": list(self.product_sizes),
            "timing": self.timing,
        }


def check_mc(
    mc: Model,
    psi: Formula,
    s_in: int | None = None,
    labels: Labels | None = None,
    budget: int = DEFAULT_STATE_BUDGET,
) -> McCheckResult:
    """Probability that a run from ``s_in`` satisfies the fLTL formula ``psi``."""
    if not mc.is_markov_chain:
        raise ValueError("check_mc needs a Markov chain")
    t0 = time.perf_counter()
    s_in = mc.init if s_in is None else s_in
    labels = tuple(mc.labels if labels is None else labels)
    taken = set(formula_atoms(psi)).union(*labels)
    counter = [0]
    certs: list[FrequencyCertificate] = []
    sizes: list[int] = []
    while innermost_frequency_node(psi) is not None:
        atom = _fresh_atom(taken, counter)
        taken.add(atom)
        psi, labels, c = eliminate_innermost_frequency(psi, mc, labels, atom, budget, sizes)
        certs.extend(c)
    t1 = time.perf_counter()
    prob = ltl_probabilities_mc(mc, psi, [s_in], labels, budget, sizes)[s_in]
    t2 = time.perf_counter()
    return McCheckResult(
        prob,
        psi,
        tuple(certs),
        tuple(sizes),
        {"elimination_s": t1 - t0, "final_s": t2 - t1, "total_s": t2 - t0},
    )
