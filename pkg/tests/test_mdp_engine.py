import random
from fractions import Fraction

import pytest

from conftest import SERVICE
from freqmc.formula import (
    TRUE,
    And,
    FreqGlobally,
    Or,
    globally,
    parse,
    transform,
)
from freqmc.mdp_engine import (
    DONE,
    OPEN,
    STAR,
    CommitmentContext,
    ProductBudgetExceeded,
    ProductSpace,
    RabinFamily,
    SynthesisConfig,
    SynthesisInputError,
    build_rabin_family,
    contexts,
    evolve,
    is_fulfilled,
    legal_actions,
    reachable_product,
    synthesize,
)
from freqmc.automata import dra_accepts_lasso, make_dra
from freqmc.models import Model, load_model
from freqmc.numerics import almost_sure_fulfilled_then_M
from oracles import ltl_mdp_oracle, random_lasso, random_ltl, random_model
from test_automata import hand_main_dra, hand_response_dra

ONE = Fraction(1)
NEXT_QUERY = "X q & G F m & G{1}(q -> X r)"
RESPONSIVE = "G F m & G{1}(q -> X r)"

# state indices of the hand-built automata
Q = {"q0": 0, "q1": 1, "q2": 2, "q3": 3, "q4": 4, "q5": 0, "q6": 1, "q7": 2, "q8": 3}
MAIN, ELEM = 0, 1


@pytest.fixture(scope="module")
def service():
    return load_model(SERVICE)


@pytest.fixture(scope="module")
def hand_space(service):
    one = frozenset({1})
    fam = RabinFamily(
        psi=parse(NEXT_QUERY),
        bodies=(parse("q -> X r"),),
        subsets=(frozenset(), one),
        formulas=(parse("X q & G F m"), parse("q -> X r")),
        automata=(hand_main_dra(), hand_response_dra()),
        main={one: MAIN},
        element={(1, one): ELEM},
    )
    ctx = CommitmentContext(one, MAIN, (ELEM,), frozenset({(ELEM, Q["q5"], STAR, -1)}))
    return ProductSpace(service, fam), ctx


def el(aid, q, kind, pair=0):
    return (aid, Q[q], kind, -1 if kind == STAR else pair)


# --- family ------------------------------------------------------------------


def test_family_dedup_running_example():
    fam = build_rabin_family(parse("i -> (G(q->a) & G{1}(p1 U r | G{1} a))"))
    assert fam.n == 2
    assert fam.main[frozenset({1})] == fam.main[frozenset({1, 2})]
    assert len(fam.automata) < 3 * 4


def test_family_ltl_case():
    fam = build_rabin_family(parse("a U b"))
    assert fam.n == 0 and len(fam.automata) == 1
    (ctx,) = contexts(fam)
    assert ctx.committed == frozenset() and not ctx.seeds


def test_family_next_query_languages():
    fam = build_rabin_family(parse(NEXT_QUERY))
    one = frozenset({1})
    main = fam.automata[fam.main[one]]
    elem = fam.automata[fam.element[(1, one)]]
    rng = random.Random(2)
    for _ in range(300):
        word = random_lasso(rng, atoms=("q", "m", "r", "w"))
        assert dra_accepts_lasso(main, word) == dra_accepts_lasso(hand_main_dra(), word)
        assert dra_accepts_lasso(elem, word) == dra_accepts_lasso(hand_response_dra(), word)


# --- legal actions and evolution ---------------------------------------------


def test_legal_actions_empty_collection(hand_space, service):
    space, ctx = hand_space
    acts = legal_actions(space, 0, frozenset(), ctx)
    assert sorted(acts, key=lambda a: (a[0], len(a[1]))) == [
        (0, frozenset()), (0, ctx.seeds), (1, frozenset()), (1, ctx.seeds)
    ]


def test_legal_actions_count_single_star(hand_space):
    space, ctx = hand_space
    c = frozenset({el(MAIN, "q2", STAR)})
    # 2 commitment choices x 2 addition modes x 2 model actions at s0
    assert len(legal_actions(space, 0, c, ctx)) == 8
    assert len(legal_actions(space, 0, c, ctx, all_additions=True)) == 8


def test_collection_path_action_is_legal(hand_space):
    space, ctx = hand_space
    v2 = frozenset({el(MAIN, "q2", OPEN), el(ELEM, "q7", STAR)})
    ca = frozenset({el(MAIN, "q2", OPEN), el(ELEM, "q7", OPEN), el(ELEM, "q5", STAR)})
    assert (0, ca) in legal_actions(space, 0, v2, ctx)


def test_collection_path_path(hand_space):
    space, ctx = hand_space
    s0, s1, s2, s4 = 0, 1, 2, 4
    v1 = frozenset({el(MAIN, "q2", STAR)})
    steps = [
        (s2, v1, {el(MAIN, "q2", OPEN), el(ELEM, "q5", STAR)}),
        (s0, None, {el(MAIN, "q2", OPEN), el(ELEM, "q7", OPEN), el(ELEM, "q5", STAR)}),
        (s1, None, {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE), el(ELEM, "q7", OPEN), el(ELEM, "q5", STAR)}),
        (s2, None, {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE), el(ELEM, "q6", OPEN), el(ELEM, "q5", STAR)}),
        (s0, None, {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE), el(ELEM, "q7", OPEN)}),
        (s4, None, {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE)}),
    ]
    expected = [
        {el(MAIN, "q2", OPEN), el(ELEM, "q7", STAR)},
        {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE), el(ELEM, "q7", STAR)},
        {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE), el(ELEM, "q6", STAR)},
        # the node drawn after this step lists the last element as already
        # committed; the rules keep it a new instance until the next action
        {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE), el(ELEM, "q7", STAR)},
        {el(MAIN, "q2", OPEN), el(ELEM, "q7", DONE)},
        # q2 reads {q, m} and moves to q3, completing the main instance
        {el(MAIN, "q3", DONE), el(ELEM, "q7", DONE)},
    ]
    c = v1
    for (s, _, ca), exp in zip(steps, expected):
        ca = frozenset(ca)
        assert any(ca == a for _, a in legal_actions(space, s, c, ctx)), (s, ca)
        c = evolve(space, ca, s, is_fulfilled(c))
        assert c == frozenset(exp)
    assert is_fulfilled(c)


def test_collection_path_path_in_fragment(hand_space):
    space, ctx = hand_space
    frag, _ = reachable_product(space, ctx, [(2, frozenset({el(MAIN, "q2", STAR)}))])
    end = (0, frozenset({el(MAIN, "q3", DONE), el(ELEM, "q7", DONE)}))
    assert end in frag.index
    assert frag.index[end] in frag.fulfilled


def test_evolve_basic_rules(hand_space):
    space, _ = hand_space
    assert evolve(space, frozenset(), 0, False) == frozenset()
    # q7 in F of the element automaton: o becomes done
    assert evolve(space, frozenset({el(ELEM, "q7", OPEN)}), 1, False) == {el(ELEM, "q7", DONE)}
    # q2 reading {w} stays in q2, outside E and F: kept when not fulfilled, reset when fulfilled
    done = frozenset({el(MAIN, "q2", DONE)})
    assert evolve(space, done, 0, False) == {el(MAIN, "q2", DONE)}
    assert evolve(space, done, 0, True) == {el(MAIN, "q2", OPEN)}
    # a new instance heading into the empty-language sink q8 is a trap
    assert evolve(space, frozenset({el(ELEM, "q6", STAR)}), 0, False) is None


def test_evolve_e_wins_over_f():
    dra = make_dra(
        ["a"], ["p", "x"], "p", {"p": [(True, "x")], "x": [(True, "x")]}, [(("x",), ("x",))]
    )
    m = Model.build([("s", ())], {"s": {"-": {"s": 1}}})
    fam = RabinFamily(TRUE, (), (frozenset(),), (TRUE,), (dra,), {frozenset(): 0}, {})
    space = ProductSpace(m, fam)
    assert evolve(space, frozenset({(0, 0, OPEN, 0)}), 0, False) is None


def test_fulfilled_definition():
    assert not is_fulfilled(frozenset())
    assert not is_fulfilled(None)
    assert is_fulfilled(frozenset({(0, 1, DONE, 0)}))
    assert not is_fulfilled(frozenset({(0, 1, DONE, 0), (0, 1, STAR, -1)}))


def test_violation_only_through_e():
    rng = random.Random(5)
    for _ in range(40):
        m = random_model(rng, 4, 2, ("q", "r", "m"))
        psi = And(random_ltl(rng, 3, ("q", "m"), True), FreqGlobally(ONE, random_ltl(rng, 3, ("q", "r"), True)))
        fam = build_rabin_family(psi)
        space = ProductSpace(m, fam)
        for ctx in contexts(fam):
            seeds = [(s, frozenset({(ctx.main, fam.automata[ctx.main].init, STAR, -1)})) for s in range(m.num_states)]
            frag, _ = reachable_product(space, ctx, seeds)
            for x in range(1, frag.size):
                s, c = frag.states[x]
                for _, ca in frag.actions[x]:
                    out = evolve(space, ca, s, is_fulfilled(c))
                    assert out == evolve(space, ca, s, is_fulfilled(c))
                    if out is None:
                        assert any(
                            (k != STAR and space.step(a, q, s) in fam.automata[a].pairs[j][0])
                            or (k == STAR and space.step(a, q, s) not in space.nonempty[a])
                            for a, q, k, j in ca
                        )


# --- fragments and regions ---------------------------------------------------


def test_fragment_without_commitments_is_base_mdp(service):
    fam = build_rabin_family(parse("true"))
    (ctx,) = contexts(fam)
    space = ProductSpace(service, fam)
    frag, _ = reachable_product(space, ctx, [(0, frozenset())])
    assert frag.size == 1 + service.num_states
    for x in range(1, frag.size):
        s, c = frag.states[x]
        assert c == frozenset()
        for (k, _), row in zip(frag.actions[x], frag.choices[x]):
            assert {frag.states[y][0]: p for y, p in row} == dict(service.transitions[s][k])


def test_budget(service):
    with pytest.raises(ProductBudgetExceeded):
        synthesize(service, parse(RESPONSIVE), SynthesisConfig(product_budget=3))


def _positive_reach(choices, target, within):
    reach = set(target)
    changed = True
    while changed:
        changed = False
        for x in within - reach:
            for act in choices[x]:
                sup = {y for y, p in act if p}
                if sup <= within and sup & reach:
                    reach.add(x)
                    changed = True
                    break
    return reach


def _as_reach(choices, target):
    z = set(range(len(choices)))
    while True:
        nz = _positive_reach(choices, target, z)
        if nz == z:
            return z
        z = nz


def brute_largest_M(frag):
    """Greatest fixpoint from scratch, with an explicit bit product."""
    n = frag.size
    M = set(range(1, n))
    N = {x: {j for j, acc in enumerate(frag.accumulating[x]) if acc} for x in M}
    while True:
        stable = False
        while not stable:
            stable = True
            for x in list(M):
                N[x] = {j for j in N[x] if all(y in M for y, _ in frag.choices[x][j])}
                if not N[x]:
                    M.discard(x)
                    stable = False
        bit_choices, target = [], set()
        for node in range(2 * n):
            x, b = divmod(node, 2)
            nb = int(b or x in frag.fulfilled)
            if nb and x in M:
                target.add(node)
            bit_choices.append([[(2 * y + nb, p) for y, p in act] for act in frag.choices[x]])
        win = _as_reach(bit_choices, target)
        keep = {x for x in M if 2 * x in win}
        if keep == M:
            return M, {x for x in range(n) if 2 * x in win}
        M = keep


def random_one_fltl(rng, atoms=("q", "r", "m")):
    f = random_ltl(rng, 3, atoms, True)
    body = random_ltl(rng, 3, atoms, True)
    g = FreqGlobally(ONE, body)
    return And(f, g) if rng.random() < 0.6 else Or(f, g)


def test_region_against_brute_force():
    rng = random.Random(9)
    checked = 0
    for _ in range(40):
        m = random_model(rng, 3, 2, ("q", "r", "m"))
        res = synthesize(m, random_one_fltl(rng))
        for cr in res.contexts:
            frag, region = cr.fragment, cr.region
            if frag.size > 400:
                continue
            checked += 1
            M, win = brute_largest_M(frag)
            assert region.M == M
            assert region.winning == win
    assert checked > 40


def test_region_postconditions():
    rng = random.Random(10)
    for _ in range(30):
        m = random_model(rng, 4, 2, ("q", "r", "m"))
        res = synthesize(m, random_one_fltl(rng))
        for cr in res.contexts:
            frag, reg = cr.fragment, cr.region
            for x in reg.M:
                assert reg.N[x]
                assert reg.pi[x] in reg.N[x]
                for j in reg.N[x]:
                    assert frag.accumulating[x][j]
                    assert cr.context.seeds <= frag.actions[x][j][1]
                    assert all(y in reg.M for y, _ in frag.choices[x][j])
            win, _ = almost_sure_fulfilled_then_M(frag.choices, frag.fulfilled, reg.M)
            assert reg.M <= win
            # upsilon recheck through the independent solver
            _, brute_win = brute_largest_M(frag) if frag.size <= 400 else (None, win)
            for (s, q), x in cr.upsilon.items():
                assert frag.states[x] == (s, frozenset({(cr.context.main, q, STAR, -1)}))
                assert x in win and x in brute_win


def test_unsatisfiable_body_gives_empty_region(service):
    res = synthesize(service, parse("true & G{1} false"))
    ctx1 = [cr for cr in res.contexts if cr.context.committed]
    assert ctx1 and not ctx1[0].region.M
    assert res.probability == 0


def test_trivial_body_everything_in_region(service):
    res = synthesize(service, parse("true & G{1} true"))
    (cr,) = [cr for cr in res.contexts if cr.context.committed]
    live = {x for x in range(1, cr.fragment.size)}
    M, _ = brute_largest_M(cr.fragment)
    assert cr.region.M == M == live
    assert abs(res.probability - 1) < 1e-12


def test_next_query_region_contains_accumulating_loop(service):
    res = synthesize(service, parse(NEXT_QUERY))
    (cr,) = [cr for cr in res.contexts if cr.context.committed == frozenset({1})]
    frag, reg = cr.fragment, cr.region
    assert reg.M
    w_loop = [
        x for x in reg.M
        if frag.states[x][0] == 0
        and any(frag.actions[x][j][0] == 0 for j in reg.N[x])
    ]
    assert w_loop


def test_all_additions_regression():
    rng = random.Random(12)
    for _ in range(15):
        m = random_model(rng, 3, 2, ("q", "r", "m"))
        psi = random_one_fltl(rng)
        a = synthesize(m, psi)
        b = synthesize(m, psi, SynthesisConfig(all_additions=True))
        assert abs(a.probability - b.probability) < 1e-12
        assert a.upsilon() == b.upsilon()


# --- synthesis ---------------------------------------------------------------


def test_next_query_value(service):
    res = synthesize(service, parse(NEXT_QUERY))
    assert abs(res.probability - 0.5) < 1e-9
    exact = synthesize(service, parse(NEXT_QUERY), SynthesisConfig(exact=True))
    assert exact.probability == Fraction(1, 2)
    main = res.family.automata[res.family.main[frozenset({1})]]
    q = main.step(main.init, service.labels[0])
    assert (1, q) in res.upsilon({1})


def test_responsive_value(service):
    res = synthesize(service, parse(RESPONSIVE))
    assert abs(res.probability - 1) < 1e-9


def test_empty_upsilon_gives_zero(service):
    res = synthesize(service, parse("m & !m"))
    assert res.upsilon() == set()
    assert res.probability == 0


def test_globally_on_chain_upsilon():
    m = Model.build(
        [("s", ("a",)), ("t", ("a",))], {"s": {"-": {"t": 1}}, "t": {"-": {"s": "1/2", "t": "1/2"}}}, "s"
    )
    res = synthesize(m, parse("G a"))
    dra = res.family.automata[0]
    good = dra.step(dra.init, {"a"})
    assert {(0, dra.init), (1, good)} <= res.upsilon()
    assert res.probability == pytest.approx(1, abs=1e-12)


def test_input_checks(service):
    with pytest.raises(SynthesisInputError, match="outermost"):
        synthesize(service, parse("G{1} q"))
    with pytest.raises(SynthesisInputError):
        synthesize(service, parse("true & G{0.9} q"))
    with pytest.raises(SynthesisInputError):
        synthesize(service, parse("!(q U r)"))


def test_report(service):
    rep = synthesize(service, parse(NEXT_QUERY)).report()
    assert rep["probability"]["decimal"] == pytest.approx(0.5)
    ctx = [c for c in rep["contexts"] if c["committed"] == [1]][0]
    assert any(u["state"] == "s1" and u["prefix"] == ["s0", "s1"] for u in ctx["upsilon"])
    assert ctx["M_size"] > 0 and ctx["fixpoint_iterations"] >= 1


def test_ltl_case_against_oracle():
    rng = random.Random(14)
    for _ in range(40):
        m = random_model(rng, 5, 3)
        phi = random_ltl(rng, 5, ("a", "b"), True)
        assert abs(synthesize(m, phi).probability - ltl_mdp_oracle(m, phi)) < 1e-8


def _replace(f, fn):
    return transform(f, lambda n: fn(n) if isinstance(n, FreqGlobally) else None)


def test_bounds_against_ltl_oracle():
    rng = random.Random(15)
    for _ in range(40):
        m = random_model(rng, 4, 2, ("q", "r", "m"))
        psi = random_one_fltl(rng)
        v = synthesize(m, psi).probability
        lo = ltl_mdp_oracle(m, _replace(psi, lambda n: globally(_replace(n.arg, lambda k: globally(k.arg)))))
        hi = ltl_mdp_oracle(m, _replace(psi, lambda n: TRUE))
        assert lo - 1e-9 <= v <= hi + 1e-9

