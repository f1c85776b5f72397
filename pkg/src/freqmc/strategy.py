"""Synthesized controllers: representation, execution, simulation and monitoring.

A controller first plays a memoryless strategy on the naive product (model
times all main automata) until it hits a pair from the winning set.  From
there an alternator takes over on the collection product for the chosen
commitment set: accumulating phase ``i`` plays ``pi`` for ``i`` steps, then
``zeta`` plays until a fulfilled state has been seen and ``M`` is reached
again, then phase ``i + 1`` starts.
"""

from __future__ import annotations

import bisect
import hashlib
import itertools
import pickle
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .automata import DeterministicRabinAutomaton
from .models import Model, bottom_components, strongly_connected_components, nontrivial
from .numerics import backward_reachable


@dataclass(frozen=True)
class Alternator:
    """Accumulate/reach alternation on the collection product of one commitment set."""

    committed: frozenset[int]
    model_state: tuple[int, ...]  # [x] -> model state
    model_action: tuple[tuple[int, ...], ...]  # [x][j] -> model action index
    next_state: tuple[tuple[dict, ...], ...]  # [x][j] -> {model successor: x'}
    fulfilled: frozenset[int]
    M: frozenset[int]
    pi: dict
    zeta: dict  # (x, bit) -> j
    trap: int = 0


@dataclass(frozen=True)
class SynthesizedStrategy:
    model: Model
    reach_states: tuple  # naive product states (s, automaton states)
    reach_action: tuple[int, ...]  # model action per naive state, -1 = any
    reach_next: tuple[tuple[dict, ...], ...]  # [id][k] -> {t: id'}
    reach_init: int
    switch: dict  # naive id -> (alternator index, seed product state)
    alternators: tuple[Alternator, ...]
    probability: object = None

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def load(path: str | Path) -> "SynthesizedStrategy":
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        if not isinstance(obj, SynthesizedStrategy):
            raise ValueError(f"{path} does not contain a strategy")
        return obj

    def executor(self) -> "StrategyExecutor":
        return StrategyExecutor(self)


class StrategyExecutor:
    """Stateful runner: call :meth:`act` in the current state, then :meth:`advance`."""

    def __init__(self, strategy: SynthesizedStrategy):
        self.strategy = strategy
        self.mode = "reach"
        self.node = strategy.reach_init
        self.alt: Alternator | None = None
        self.x = -1
        self.bit = 0
        self.phase = 0  # number of the current/last accumulating phase
        self.steps_left = 0
        self.phase_lengths: list[int] = []
        self._choice = None
        self._enter_if_switch()

    @property
    def state(self) -> int:
        st = self.strategy
        if self.mode == "reach":
            return st.reach_states[self.node][0]
        return self.alt.model_state[self.x]

    def _enter_if_switch(self):
        st = self.strategy
        if self.mode == "reach" and self.node in st.switch:
            a, x0 = st.switch[self.node]
            self.alt = st.alternators[a]
            self.mode = "zeta"
            self.x = x0
            self.bit = 0
            self._maybe_start_phase()

    def _maybe_start_phase(self):
        alt = self.alt
        if self.mode == "zeta":
            seen = self.bit or self.x in alt.fulfilled
            if seen and self.x in alt.M:
                self.phase += 1
                self.phase_lengths.append(self.phase)
                self.mode = "acc"
                self.steps_left = self.phase

    @property
    def phase_label(self) -> str:
        if self.mode == "acc":
            return f"acc:{self.phase}"
        return self.mode

    def act(self) -> int:
        """Model action index to play now."""
        st = self.strategy
        if self.mode == "reach":
            k = st.reach_action[self.node]
            self._choice = max(k, 0)
            return self._choice
        alt = self.alt
        if self.x == alt.trap:
            self._choice = None
            return 0
        if self.mode == "acc":
            j = alt.pi[self.x]
        else:
            j = alt.zeta.get((self.x, self.bit))
            if j is None:
                j = 0
        self._choice = j
        return alt.model_action[self.x][j]

    def advance(self, t: int) -> None:
        """Observe the successor model state ``t`` of the last action."""
        st = self.strategy
        if self.mode == "reach":
            self.node = st.reach_next[self.node][self._choice][t]
            self._enter_if_switch()
            return
        alt = self.alt
        if self.x == alt.trap:
            return
        x, j = self.x, self._choice
        if self.mode == "acc":
            self.x = alt.next_state[x][j][t]
            self.steps_left -= 1
            if self.steps_left == 0:
                self.mode = "zeta"
                self.bit = 0
                self._maybe_start_phase()
        else:
            self.bit = 1 if (self.bit or x in alt.fulfilled) else 0
            self.x = alt.next_state[x][j][t]
            self._maybe_start_phase()


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class Trace:
    states: tuple[int, ...]  # s_0 .. s_h
    actions: tuple[int, ...]  # a_0 .. a_{h-1}
    phases: tuple[str, ...]  # phase in force when a_i was chosen

    def __len__(self) -> int:
        return len(self.actions)

    def lines(self, model: Model) -> list[str]:
        out = []
        for i, (s, a, ph) in enumerate(zip(self.states, self.actions, self.phases)):
            out.append(f"{i} {model.state_names[s]} {model.action_names[s][a]} {ph}")
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.states, self.actions, self.phases)).encode())
        return h.hexdigest()


def simulate(
    model: Model, strategy: SynthesizedStrategy | None, horizon: int, seed: int = 0
) -> Trace:
    """Run ``horizon`` steps from the initial state; ``strategy=None`` plays action 0."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    dists = [
        [([t for t, _ in d], list(itertools.accumulate(float(p) for _, p in d))) for d in acts]
        for acts in model.transitions
    ]
    ex = strategy.executor() if strategy is not None else None
    s = model.init if ex is None else ex.state
    states, actions, phases = [s], [], []
    draws = rng.random(horizon).tolist()
    for i in range(horizon):
        if ex is None:
            k, ph = 0, "fixed"
        else:
            ph = ex.phase_label
            k = ex.act()
        if not 0 <= k < len(dists[s]):
            raise AssertionError(f"strategy chose an unavailable action at {model.state_names[s]}")
        targets, cum = dists[s][k]
        j = bisect.bisect_right(cum, draws[i] * cum[-1])
        t = targets[min(j, len(targets) - 1)]
        if ex is not None:
            ex.advance(t)
        actions.append(k)
        phases.append(ph)
        states.append(t)
        s = t
    return Trace(tuple(states), tuple(actions), tuple(phases))


# ---------------------------------------------------------------------------
# frequency monitors


class InconclusiveEstimate(RuntimeError):
    pass


@dataclass(frozen=True)
class FrequencyEstimate:
    estimate: float
    resolved: int
    satisfied: int
    unresolved: int
    positions: int

    @property
    def conclusive(self) -> bool:
        return self.resolved >= 0.5 * self.positions


def _accepting_reach(dra: DeterministicRabinAutomaton, graph_succ, labels_mask, nstates):
    """Product states of (model graph x dra) from which an accepting cycle is reachable."""
    index: dict = {}
    order = []
    succ: list[list[int]] = []
    for s in range(nstates):
        for q in range(dra.num_states):
            index[(s, q)] = len(order)
            order.append((s, q))
    for s, q in order:
        q2 = dra.delta[q][labels_mask[s]]
        succ.append([index[(t, q2)] for t in graph_succ[s]])
    good = set()
    for e, f in dra.pairs:
        keep = [i for i, (s, q) in enumerate(order) if q not in e]
        loc = {v: i for i, v in enumerate(keep)}
        sub = [[loc[w] for w in succ[v] if w in loc] for v in keep]
        for comp in strongly_connected_components(sub):
            if nontrivial(comp, sub) and any(order[keep[c]][1] in f for c in comp):
                good.update(keep[c] for c in comp)
    ok = backward_reachable(succ, good)
    return index, ok


def empirical_frequency(
    trace: Trace,
    model: Model,
    dra: DeterministicRabinAutomaton,
    negated: DeterministicRabinAutomaton | None = None,
    strict: bool = False,
) -> FrequencyEstimate:
    """Fraction of trace positions whose suffix satisfies the formula of ``dra``.

    One monitor starts at every position; monitors in the same automaton
    state are merged.  On a Markov chain (single action everywhere) a
    monitor resolves when the product run enters a bottom component, scoring
    its acceptance.  Otherwise a monitor resolves negatively once no
    accepting cycle of ``dra`` is reachable in the product with the model
    graph, and positively once none is reachable for ``negated`` (an
    automaton for the negation run in lockstep).  Unresolved monitors are
    excluded and counted.
    """
    masks = [dra.letter(lab) for lab in model.labels]
    graph = model.successor_lists()
    n = model.num_states
    if model.is_markov_chain:
        index = {}
        order = []
        for s in range(n):
            for q in range(dra.num_states):
                index[(s, q)] = len(order)
                order.append((s, q))
        succ = [[index[(t, dra.delta[q][masks[s]])] for t in graph[s]] for s, q in order]
        verdict = {}
        for b in bottom_components(succ):
            acc = dra.accepting_set(order[v][1] for v in b)
            for v in b:
                verdict[v] = acc

        def resolve(s, q, _):
            return verdict.get(index[(s, q)])

    else:
        idx_pos, ok_pos = _accepting_reach(dra, graph, masks, n)
        neg = negated
        if neg is not None:
            nmasks = [neg.letter(lab) for lab in model.labels]
            idx_neg, ok_neg = _accepting_reach(neg, graph, nmasks, n)

        def resolve(s, q, qn):
            if idx_pos[(s, q)] not in ok_pos:
                return False
            if neg is not None and idx_neg[(s, qn)] not in ok_neg:
                return True
            return None

    states = trace.states
    horizon = len(trace.actions)
    # active monitors: (q, q_neg) -> count; state is the automaton state *before* reading states[i]
    active: dict[tuple[int, int], int] = {}
    satisfied = resolved = 0
    neg_init = negated.init if negated is not None else 0
    for i in range(horizon):
        s = states[i]
        key = (dra.init, neg_init)
        active[key] = active.get(key, 0) + 1
        nxt: dict[tuple[int, int], int] = {}
        for (q, qn), c in active.items():
            q2 = dra.delta[q][masks[s]]
            qn2 = negated.delta[qn][negated.letter(model.labels[s])] if negated is not None else 0
            v = resolve(s, q, qn)
            if v is None:
                nxt[(q2, qn2)] = nxt.get((q2, qn2), 0) + c
            else:
                resolved += c
                satisfied += c if v else 0
        active = nxt
    unresolved = sum(active.values())
    est = FrequencyEstimate(
        satisfied / resolved if resolved else float("nan"), resolved, satisfied, unresolved, horizon
    )
    if strict and not est.conclusive:
        raise InconclusiveEstimate(
            f"only {resolved} of {horizon} monitors resolved before the horizon"
        )
    return est
