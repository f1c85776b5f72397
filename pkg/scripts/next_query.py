"""Synthesize for X q & G F m & G{1}(q -> X r) on the network-service MDP and print the winning pairs."""

import argparse
import json
from pathlib import Path

from freqmc import SynthesisConfig, load_model, parse, synthesize

MODEL = Path(__file__).resolve().parent.parent / "models" / "service.mdl"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default=str(MODEL))
    ap.add_argument("--formula", default="X q & G F m & G{1}(q -> X r)")
    ap.add_argument("--exact", action="store_true")
    args = ap.parse_args()
    res = synthesize(load_model(args.model), parse(args.formula), SynthesisConfig(exact=args.exact))
    rep = res.report()
    print(json.dumps({"probability": rep["probability"], "contexts": rep["contexts"]}, indent=2))


if __name__ == "__main__":
    main()
