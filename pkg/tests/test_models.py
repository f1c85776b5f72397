import random
from fractions import Fraction

import pytest

from conftest import SERVICE
from freqmc.models import (
    Model,
    ModelFormatError,
    bsccs,
    load_model,
    parse_model,
    restrict_valuation,
    serialize_model,
    strongly_connected_components,
)
from oracles import random_model


def test_service_model_loads():
    m = load_model(SERVICE)
    assert m.state_names == ("s0", "s1", "s2", "s3", "s4")
    assert m.action_names[0] == ("w", "m")
    assert m.labels[4] == {"q", "m"}
    assert m.labels[0] == {"w"}
    assert not m.is_markov_chain
    assert m.probability(0, 0, 0) == Fraction(1, 2)
    assert m.probability(0, 4, 1) == Fraction(1, 2)


def test_absorbing_state_is_mc():
    m = parse_model("state x\ninit x\ntrans x - x:1\n")
    assert m.is_markov_chain
    assert bsccs(m).bsccs == (frozenset({0}),)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("state x\ninit x\ntrans x - x:0.5 x:0.4\n", "duplicate target"),
        ("state x\nstate y\ninit x\ntrans x - x:0.5 y:0.4\ntrans y - y:1\n", "sum"),
        ("state x\ninit x\ntrans x - z:1\n", "unknown target"),
        ("state x\ninit x\ntrans z - x:1\ntrans x - x:1\n", "unknown state"),
        ("state x\ninit x\ntrans x - x:1\ntrans x - x:1\n", "duplicate transition"),
        ("state x\ninit x\n", "no outgoing"),
        ("state x\ntrans x - x:1\n", "missing init"),
        ("state x\ninit x\ntrans x - x:1/0\n", "bad probability"),
        ("blah\n", "unknown declaration"),
    ],
)
def test_format_errors(text, needle):
    with pytest.raises(ModelFormatError, match=needle):
        parse_model(text)


def test_error_carries_line():
    with pytest.raises(ModelFormatError) as err:
        parse_model("state x\ninit x\ntrans x - y:1\n")
    assert err.value.line == 3


def test_comments_and_fractions():
    m = parse_model("# hi\nstate x a  # label a\nstate y\ninit y\ntrans x - y:1/3 x:2/3\ntrans y - x:1\n")
    assert m.init == 1
    assert m.labels[0] == {"a"}
    assert m.probability(0, 1) == Fraction(1, 3)


def test_roundtrip():
    rng = random.Random(1)
    for _ in range(100):
        m = random_model(rng, 6, 3)
        assert parse_model(serialize_model(m)) == m
    svc = load_model(SERVICE)
    assert parse_model(serialize_model(svc)) == svc


def branch():
    return Model.build(
        [("s", ()), ("u", ("a",)), ("v", ())],
        {"s": {"-": {"u": "0.3", "v": "0.7"}}, "u": {"-": {"u": 1}}, "v": {"-": {"v": 1}}},
        "s",
    )


def test_bsccs_examples():
    part = bsccs(branch())
    assert set(part.bsccs) == {frozenset({1}), frozenset({2})}
    assert part.transient == {0}
    cyc = Model.build([("s", ()), ("t", ())], {"s": {"-": {"t": 1}}, "t": {"-": {"s": 1}}}, "s")
    assert bsccs(cyc).bsccs == (frozenset({0, 1}),)


def test_bsccs_rejects_mdp():
    with pytest.raises(ValueError):
        bsccs(load_model(SERVICE))


def _reach(succ, s):
    seen, stack = {s}, [s]
    while stack:
        for t in succ[stack.pop()]:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def test_bscc_partition_properties():
    rng = random.Random(5)
    for _ in range(200):
        m = random_model(rng, 8)
        part = bsccs(m)
        succ = m.successor_lists()
        union = frozenset().union(*part.bsccs)
        assert union | part.transient == set(range(m.num_states))
        assert not union & part.transient
        for b in part.bsccs:
            for s in b:
                assert _reach(succ, s) == b
        for s in range(m.num_states):
            assert any(b <= _reach(succ, s) for b in part.bsccs)


def test_scc_order_is_reverse_topological():
    rng = random.Random(9)
    for _ in range(100):
        m = random_model(rng, 8)
        succ = m.successor_lists()
        comps = strongly_connected_components(succ)
        pos = {s: i for i, c in enumerate(comps) for s in c}
        for s in range(m.num_states):
            for t in succ[s]:
                assert pos[t] <= pos[s]


def test_restrict_valuation():
    m = load_model(SERVICE)
    assert restrict_valuation(m, {"q", "r"})(4) == {"q"}
    assert restrict_valuation(m, ())(4) == frozenset()
    full = restrict_valuation(m, m.atoms)
    assert [full(s) for s in range(m.num_states)] == list(m.labels)


def test_model_validation_in_constructor():
    with pytest.raises(ModelFormatError):
        Model(("x",), (frozenset(),), (("-",),), ((((0, Fraction(1, 2)),),),))
