"""Linear algebra and reachability on explicit Markov chains and MDPs.

An MDP here is a plain nested sequence ``choices[s][k] = [(t, p), ...]``:
state ``s`` has actions ``0..len(choices[s])-1``.  Probabilities may be
``Fraction`` or ``float``; the exact routines require fractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .models import Model, strongly_connected_components

Choices = Sequence[Sequence[Sequence[tuple[int, object]]]]


class SingularSystemError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# exact linear systems


def solve_exact(rows: Sequence[dict[int, Fraction]], rhs: Sequence[Fraction]) -> list[Fraction]:
    """Solve ``A x = b`` exactly; ``rows[i]`` maps column to coefficient.

    Sparse Gauss-Jordan elimination with a smallest-row pivot heuristic.
    """
    n = len(rows)
    a = [dict(r) for r in rows]
    b = [Fraction(v) for v in rhs]
    col_rows: dict[int, set[int]] = {}
    for i, r in enumerate(a):
        for j in list(r):
            if r[j] == 0:
                del r[j]
            else:
                col_rows.setdefault(j, set()).add(i)
    pivot_of: dict[int, int] = {}
    done_rows: set[int] = set()
    for _ in range(n):
        # pick the shortest unused row that still has entries
        best = None
        for i in range(n):
            if i in done_rows:
                continue
            if not a[i]:
                if b[i] != 0:
                    raise SingularSystemError("inconsistent linear system")
                continue
            if best is None or len(a[i]) < len(a[best]):
                best = i
                if len(a[i]) == 1:
                    break
        if best is None:
            break
        i = best
        j = min(a[i], key=lambda c: len(col_rows.get(c, ())))
        piv = a[i][j]
        if piv != 1:
            inv = 1 / piv
            for c in a[i]:
                a[i][c] *= inv
            b[i] *= inv
        for k in list(col_rows.get(j, ())):
            if k == i:
                continue
            factor = a[k].get(j)
            if not factor:
                continue
            for c, v in a[i].items():
                nv = a[k].get(c, 0) - factor * v
                if nv:
                    if c not in a[k]:
                        col_rows.setdefault(c, set()).add(k)
                    a[k][c] = nv
                elif c in a[k]:
                    del a[k][c]
                    col_rows[c].discard(k)
            b[k] -= factor * b[i]
        col_rows[j] = {i}
        pivot_of[j] = i
        done_rows.add(i)
    if len(pivot_of) < n:
        raise SingularSystemError("singular linear system")
    return [b[pivot_of[j]] for j in range(n)]


def stationary_distribution(m: Model, component: Iterable[int]) -> dict[int, Fraction]:
    """Unique stationary distribution of the chain restricted to a closed class."""
    comp = sorted(component)
    idx = {s: i for i, s in enumerate(comp)}
    n = len(comp)
    # x P = x  ->  for each column j: sum_i x_i P_ij - x_j = 0 ; replace one row by sum x = 1
    cols: list[dict[int, Fraction]] = [dict() for _ in range(n)]
    for s in comp:
        for t, p in m.transitions[s][0]:
            if t not in idx:
                raise ValueError("component is not closed")
            cols[idx[t]][idx[s]] = cols[idx[t]].get(idx[s], Fraction(0)) + p
    for j in range(n):
        cols[j][j] = cols[j].get(j, Fraction(0)) - 1
    rhs = [Fraction(0)] * n
    cols[0] = {i: Fraction(1) for i in range(n)}
    rhs[0] = Fraction(1)
    x = solve_exact(cols, rhs)
    return {s: x[idx[s]] for s in comp}


# ---------------------------------------------------------------------------
# graph helpers


def _predecessors(succ: Sequence[Iterable[int]]) -> list[list[int]]:
    pred: list[list[int]] = [[] for _ in succ]
    for s, ts in enumerate(succ):
        for t in set(ts):
            pred[t].append(s)
    return pred


def backward_reachable(succ: Sequence[Iterable[int]], targets: Iterable[int]) -> set[int]:
    pred = _predecessors(succ)
    seen = set(targets)
    stack = list(seen)
    while stack:
        s = stack.pop()
        for p in pred[s]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def choices_successors(choices: Choices) -> list[list[int]]:
    return [sorted({t for act in acts for t, p in act if p}) for acts in choices]


def chain_choices(m: Model) -> list[list[list[tuple[int, Fraction]]]]:
    return [[list(d) for d in m.transitions[s]] for s in range(m.num_states)]


# ---------------------------------------------------------------------------
# Markov chains


def reach_probability_mc(
    succ_probs: Sequence[Sequence[tuple[int, Fraction]]], target: Iterable[int]
) -> list[Fraction]:
    """Exact probability of eventually reaching ``target`` in a Markov chain."""
    n = len(succ_probs)
    target = set(target)
    succ = [[t for t, p in row if p] for row in succ_probs]
    can = backward_reachable(succ, target)
    zero = set(range(n)) - can
    # states that cannot reach a zero state without passing target reach target surely
    succ_avoid = [[] if s in target else succ[s] for s in range(n)]
    may_fail = backward_reachable(succ_avoid, zero) - target
    one = set(range(n)) - may_fail
    unknown = sorted(may_fail - zero)
    values = [Fraction(1) if s in one else Fraction(0) for s in range(n)]
    if unknown:
        idx = {s: i for i, s in enumerate(unknown)}
        rows, rhs = [], []
        for s in unknown:
            row = {idx[s]: Fraction(1)}
            b = Fraction(0)
            for t, p in succ_probs[s]:
                if t in idx:
                    row[idx[t]] = row.get(idx[t], Fraction(0)) - p
                elif t in one:
                    b += p
            rows.append(row)
            rhs.append(b)
        for s, v in zip(unknown, solve_exact(rows, rhs)):
            values[s] = v
    return values


# ---------------------------------------------------------------------------
# MDPs: qualitative analysis


def positive_reach(choices: Choices, target: Iterable[int], allowed: set[int] | None = None) -> set[int]:
    """States from which ``target`` is reached with positive probability under some strategy,
    moving only through ``allowed`` (default: all states)."""
    n = len(choices)
    succ = choices_successors(choices)
    if allowed is not None:
        succ = [[t for t in ts if t in allowed] if s in allowed else [] for s, ts in enumerate(succ)]
    res = backward_reachable(succ, target)
    return res if allowed is None else {s for s in res if s in allowed or s in set(target)}


def _support(act) -> list[int]:
    return [t for t, p in act if p]


def almost_sure_reach(
    choices: Choices, target: Iterable[int], allowed: Iterable[int] | None = None
) -> tuple[set[int], dict[int, int]]:
    """States with a strategy reaching ``target`` with probability one while staying in ``allowed``.

    Returns the winning set and a witness: for every winning non-target
    state an action that keeps the play in the winning set and moves closer
    to ``target`` with positive probability.
    """
    n = len(choices)
    target = set(target)
    win = set(range(n)) if allowed is None else set(allowed) | target
    while True:
        rank, witness = _attractor(choices, target, win)
        new = set(rank)
        if new == win:
            return win, witness
        win = new


def _attractor(choices: Choices, target: set[int], within: set[int]) -> tuple[dict[int, int], dict[int, int]]:
    """Positive-probability attractor of ``target`` using actions whose support stays in ``within``."""
    rank = {s: 0 for s in target if s in within}
    witness: dict[int, int] = {}
    pred: dict[int, list[tuple[int, int]]] = {}
    for s in within:
        if s in target:
            continue
        for k, act in enumerate(choices[s]):
            supp = _support(act)
            if all(t in within for t in supp):
                for t in supp:
                    pred.setdefault(t, []).append((s, k))
    frontier = sorted(rank)
    level = 0
    while frontier:
        level += 1
        nxt = []
        for t in frontier:
            for s, k in pred.get(t, ()):
                if s not in rank:
                    rank[s] = level
                    witness[s] = k
                    nxt.append(s)
                elif rank[s] == level and k < witness[s]:
                    witness[s] = k
        frontier = sorted(set(nxt))
    return rank, witness


# ---------------------------------------------------------------------------
# MDPs: maximal reachability


@dataclass(frozen=True)
class ReachResult:
    values: tuple
    strategy: tuple[int, ...]  # -1 where any action will do
    zero: frozenset[int]
    one: frozenset[int]


def _q_value(act, values) -> object:
    return sum((p * values[t] for t, p in act), 0)


def _choose_by_rank(
    choices: Choices,
    maybe: set[int],
    exits: set[int],
    preferred: dict[int, list[int]],
) -> list[int] | None:
    """Pick, for each maybe state, a preferred action leading towards ``exits``.

    Ranks are computed backwards from ``exits`` using preferred actions
    only; states left unranked fall back to any action.  Ties go to the
    lowest action index.  Returns ``None`` if some state cannot be ranked.
    """
    strategy: dict[int, int] = {}
    ranked = set(exits)
    while True:
        layer = {}
        for pool in ("preferred", "any"):
            for s in sorted(maybe - ranked):
                acts = preferred[s] if pool == "preferred" else range(len(choices[s]))
                for k in acts:
                    if any(t in ranked for t in _support(choices[s][k])):
                        layer[s] = k
                        break
            if layer:
                break
        if not layer:
            break
        strategy.update(layer)
        ranked |= set(layer)
    if maybe - ranked:
        return None
    return [strategy.get(s, -1) for s in range(len(choices))]


def max_reach_probability_mdp(
    choices: Choices,
    target: Iterable[int],
    tol: float = 1e-10,
    exact: bool = False,
    max_sweeps: int = 1_000_000,
) -> ReachResult:
    """Maximal probability of reaching ``target`` and an optimal memoryless strategy.

    Qualitative preprocessing fixes value-0 and value-1 states.  The rest is
    solved by Gauss-Seidel value iteration over SCCs in reverse topological
    order, then polished by policy iteration (floating point, or exact
    fractions when ``exact`` is set).
    """
    n = len(choices)
    target = set(target)
    succ = choices_successors(choices)
    can = backward_reachable(succ, target)
    zero = set(range(n)) - can
    one, witness = almost_sure_reach(choices, target)
    maybe = set(range(n)) - zero - one
    strategy = [-1] * n
    for s, k in witness.items():
        strategy[s] = k
    if not maybe:
        vals = [(Fraction(1) if exact else 1.0) if s in one else (Fraction(0) if exact else 0.0) for s in range(n)]
        return ReachResult(tuple(vals), tuple(strategy), frozenset(zero), frozenset(one))

    # value iteration
    v = np.zeros(n)
    for s in one:
        v[s] = 1.0
    fchoices = {
        s: [[(t, float(p)) for t, p in act] for act in choices[s]] for s in maybe
    }
    sub_succ = [[t for t in succ[s] if t in maybe] if s in maybe else [] for s in range(n)]
    for comp in strongly_connected_components(sub_succ):
        if comp[0] not in maybe:
            continue
        sweeps = 0
        while True:
            delta = 0.0
            for s in comp:
                best = max(sum(p * v[t] for t, p in act) for act in fchoices[s])
                delta = max(delta, abs(best - v[s]))
                v[s] = best
            sweeps += 1
            if delta < tol * 1e-2 or sweeps >= max_sweeps:
                break

    exits = one | zero

    def greedy(values, slack) -> dict[int, list[int]]:
        pref = {}
        for s in maybe:
            qs = [_q_value(act, values) for act in (fchoices[s] if not exact else choices[s])]
            best = max(qs)
            pref[s] = [k for k, q in enumerate(qs) if q >= best - slack]
        return pref

    # reaching a zero state is an exit as well: it ends the maybe region
    pol = _choose_by_rank(choices, maybe, exits, greedy(v, 1e-9))
    assert pol is not None

    if exact:
        values = _policy_iteration_exact(choices, maybe, one, exits, pol)
    else:
        values = _policy_iteration_float(fchoices, choices, maybe, one, exits, pol, n)
    pref = greedy(values, 0 if exact else 1e-12)
    final = _choose_by_rank(choices, maybe, exits, pref)
    for s in maybe:
        strategy[s] = final[s]
    return ReachResult(tuple(values), tuple(strategy), frozenset(zero), frozenset(one))


def _evaluate_float(fchoices, maybe_list, one, pol, n) -> np.ndarray:
    idx = {s: i for i, s in enumerate(maybe_list)}
    rows, cols, data = [], [], []
    b = np.zeros(len(maybe_list))
    for s in maybe_list:
        i = idx[s]
        rows.append(i)
        cols.append(i)
        data.append(1.0)
        for t, p in fchoices[s][pol[s]]:
            if t in idx:
                rows.append(i)
                cols.append(idx[t])
                data.append(-p)
            elif t in one:
                b[i] += p
    a = sp.csr_matrix((data, (rows, cols)), shape=(len(maybe_list), len(maybe_list)))
    x = spla.spsolve(a.tocsc(), b) if len(maybe_list) > 1 else b / a.toarray()[0, 0]
    out = np.zeros(n)
    for s in one:
        out[s] = 1.0
    for s in maybe_list:
        out[s] = float(np.clip(x[idx[s]], 0.0, 1.0))
    return out


def _policy_iteration_float(fchoices, choices, maybe, one, exits, pol, n, max_iter=200):
    maybe_list = sorted(maybe)
    values = _evaluate_float(fchoices, maybe_list, one, pol, n)
    for _ in range(max_iter):
        improved = False
        new_pol = list(pol)
        pref = {}
        for s in maybe_list:
            qs = [_q_value(act, values) for act in fchoices[s]]
            best = max(qs)
            if best > values[s] + 1e-13:
                improved = True
            pref[s] = [k for k, q in enumerate(qs) if q >= best - 1e-13]
        if not improved:
            break
        cand = _choose_by_rank(choices, maybe, exits, pref)
        if cand is None:
            break
        for s in maybe_list:
            new_pol[s] = cand[s]
        pol = new_pol
        values = _evaluate_float(fchoices, maybe_list, one, pol, n)
    return [float(x) for x in values]


def _evaluate_exact(choices, maybe_list, one, pol, n) -> list[Fraction]:
    idx = {s: i for i, s in enumerate(maybe_list)}
    rows, rhs = [], []
    for s in maybe_list:
        row = {idx[s]: Fraction(1)}
        b = Fraction(0)
        for t, p in choices[s][pol[s]]:
            p = Fraction(p)
            if t in idx:
                row[idx[t]] = row.get(idx[t], Fraction(0)) - p
            elif t in one:
                b += p
        rows.append(row)
        rhs.append(b)
    x = solve_exact(rows, rhs)
    out = [Fraction(0)] * n
    for s in one:
        out[s] = Fraction(1)
    for s, val in zip(maybe_list, x):
        out[s] = val
    return out


def _policy_iteration_exact(choices, maybe, one, exits, pol, max_iter=10_000):
    n = len(choices)
    maybe_list = sorted(maybe)
    values = _evaluate_exact(choices, maybe_list, one, pol, n)
    for _ in range(max_iter):
        pref = {}
        improved = False
        for s in maybe_list:
            qs = [sum((Fraction(p) * values[t] for t, p in act), Fraction(0)) for act in choices[s]]
            best = max(qs)
            if best > values[s]:
                improved = True
            pref[s] = [k for k, q in enumerate(qs) if q == best]
        if not improved:
            return values
        pol = _choose_by_rank(choices, maybe, exits, pref)
        values = _evaluate_exact(choices, maybe_list, one, pol, n)
    raise RuntimeError("exact policy iteration did not converge")


def almost_sure_fulfilled_then_M(
    choices: Choices, fulfilled: Iterable[int], M: Iterable[int]
) -> tuple[set[int], dict[tuple[int, int], int]]:
    """States from which some strategy almost surely visits ``fulfilled`` and afterwards ``M``.

    Works on the product with one bit recording whether a fulfilled state
    has been seen (the current state included).  Returns the states ``x``
    whose copy ``(x, 0)`` wins, and the witness ``zeta[(x, b)] = action``,
    a two-mode strategy.  Nodes already done (``x`` in ``M`` with the bit
    set after ``x``) need no action.
    """
    fulfilled = set(fulfilled)
    M = set(M)
    n = len(choices)
    bit_choices: list[list[list[tuple[int, object]]]] = []
    target = set()
    for node in range(2 * n):
        x, b = divmod(node, 2)
        nb = 1 if (b or x in fulfilled) else 0
        if nb and x in M:
            target.add(node)
        bit_choices.append([[(2 * y + nb, p) for y, p in act] for act in choices[x]])
    win, witness = almost_sure_reach(bit_choices, target)
    states = {x for x in range(n) if 2 * x in win}
    zeta = {divmod(node, 2): k for node, k in witness.items()}
    return states, zeta
