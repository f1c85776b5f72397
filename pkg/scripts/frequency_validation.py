"""Compare per-BSCC frequency values with monitor estimates on random Markov chains."""

import argparse
import random
import sys
from fractions import Fraction
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from oracles import random_ltl, random_model  # noqa: E402

from freqmc.automata import ltl_to_dra  # noqa: E402
from freqmc.formula import FreqGlobally, to_string  # noqa: E402
from freqmc.mc_engine import eliminate_innermost_frequency  # noqa: E402
from freqmc.strategy import empirical_frequency, simulate  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    for trial in range(args.trials):
        m = random_model(rng, 6, 1, ("a", "b", "c"))
        phi = random_ltl(rng, 4)
        _, _, certs = eliminate_innermost_frequency(FreqGlobally(Fraction(0), phi), m)
        tr = simulate(m, None, args.horizon, seed=trial)
        cert = next(c for c in certs if tr.states[-1] in c.bscc)
        est = empirical_frequency(tr, m, ltl_to_dra(phi))
        print(
            f"{trial:3d} {to_string(phi):24s} exact {float(cert.value):.4f} "
            f"estimate {est.estimate:.4f} diff {abs(est.estimate - float(cert.value)):.4f}"
        )


if __name__ == "__main__":
    main()
