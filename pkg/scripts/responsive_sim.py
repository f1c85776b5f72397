"""Simulate the controller for G F m & G{1}(q -> X r) and report response frequency and maintenance gaps."""

import argparse
from pathlib import Path

from freqmc import load_model, parse, synthesize
from freqmc.automata import ltl_to_dra
from freqmc.formula import Not
from freqmc.strategy import empirical_frequency, simulate

MODEL = Path(__file__).resolve().parent.parent / "models" / "service.mdl"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=100_000)
    args = ap.parse_args()
    m = load_model(MODEL)
    res = synthesize(m, parse("G F m & G{1}(q -> X r)"))
    print(f"value {res.probability:.12g}")
    body = parse("q -> X r")
    dra, neg = ltl_to_dra(body), ltl_to_dra(Not(body))
    for seed in range(args.seeds):
        tr = simulate(m, res.strategy, args.horizon, seed=seed)
        est = empirical_frequency(tr, m, dra, neg)
        hits = [i for i, s in enumerate(tr.states) if "m" in m.labels[s]]
        gap = max(b - a for a, b in zip([0, *hits], [*hits, len(tr.states)]))
        m_choices = sum(1 for s, a in zip(tr.states, tr.actions) if m.action_names[s][a] == "m")
        print(
            f"seed {seed:2d}: freq {est.estimate:.5f} unresolved {est.unresolved} "
            f"m-choices {m_choices} max gap {gap} last phase {tr.phases[-1]}"
        )


if __name__ == "__main__":
    main()
