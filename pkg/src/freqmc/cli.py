"""Command line front end: ``freqmc check | synth | sim | aut``.

Exit codes: 0 success, 2 input error, 3 budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .automata import DEFAULT_STATE_BUDGET, AutomatonBudgetExceeded, ltl_to_dra
from .formula import Formula, FormulaSyntaxError, Not, is_ltl, parse, to_string
from .mc_engine import check_mc
from .mdp_engine import (
    DEFAULT_PRODUCT_BUDGET,
    ProductBudgetExceeded,
    SynthesisConfig,
    SynthesisInputError,
    synthesize,
)
from .models import Model, ModelFormatError, load_model
from .strategy import SynthesizedStrategy, empirical_frequency, simulate

EXIT_OK, EXIT_INPUT, EXIT_BUDGET = 0, 2, 3


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: str | None = None
    formula: str | None = None
    state: str | None = None
    tol: float = 1e-10
    automaton_budget: int = DEFAULT_STATE_BUDGET
    product_budget: int = DEFAULT_PRODUCT_BUDGET
    seed: int = 0
    horizon: int = 1000
    strategy: str | None = None
    out: str | None = None
    trace: str | None = None
    dot: str | None = None
    exact: bool = False
    json: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise InputError("--tol must be positive")
        if self.automaton_budget <= 0 or self.product_budget <= 0:
            raise InputError("budgets must be positive")
        if self.horizon < 1:
            raise InputError("--horizon must be at least 1")


def _load_model(path: str | None) -> Model:
    if path is None:
        raise InputError("--model is required")
    try:
        return load_model(path)
    except OSError as exc:
        raise InputError(f"cannot read model: {exc}") from None


def _formula(text: str | None) -> Formula:
    if text is None:
        raise InputError("--formula is required")
    if text.startswith("@"):
        try:
            text = Path(text[1:]).read_text()
        except OSError as exc:
            raise InputError(f"cannot read formula: {exc}") from None
    return parse(text)


def _fraction_dict(p) -> dict:
    if isinstance(p, Fraction):
        return {"fraction": f"{p.numerator}/{p.denominator}", "decimal": float(p)}
    return {"decimal": float(p)}


def _emit(cfg: RunConfig, report: dict, text: str) -> None:
    if cfg.json:
        print(json.dumps(report, sort_keys=True, indent=2))
    else:
        print(text)


def cmd_check_mc(cfg: RunConfig) -> int:
    model = _load_model(cfg.model)
    if not model.is_markov_chain:
        raise InputError("check needs a Markov chain (one action per state); use synth for MDPs")
    psi = _formula(cfg.formula)
    s_in = model.init
    if cfg.state is not None:
        try:
            s_in = model.index(cfg.state)
        except KeyError as exc:
            raise InputError(str(exc)) from None
    res = check_mc(model, psi, s_in, budget=cfg.automaton_budget)
    report = {"formula": to_string(psi), "state": model.state_names[s_in]}
    report.update(res.report(model))
    p = res.probability
    _emit(cfg, report, f"probability {p.numerator}/{p.denominator} ({float(p):.12g})")
    return EXIT_OK


def cmd_synthesize(cfg: RunConfig) -> int:
    model = _load_model(cfg.model)
    psi = _formula(cfg.formula)
    config = SynthesisConfig(
        tol=cfg.tol,
        exact=cfg.exact,
        automaton_budget=cfg.automaton_budget,
        product_budget=cfg.product_budget,
    )
    try:
        res = synthesize(model, psi, config)
    except SynthesisInputError as exc:
        raise InputError(str(exc)) from None
    report = {"formula": to_string(psi)}
    report.update(res.report())
    if cfg.out:
        res.strategy.save(cfg.out)
        report["strategy_file"] = cfg.out
    p = res.probability
    lines = [
        "probability "
        + (f"{p.numerator}/{p.denominator} ({float(p):.12g})" if isinstance(p, Fraction) else f"{p:.12g}")
    ]
    for ctx in report["contexts"]:
        pairs = ", ".join(f"({u['state']},q{u['automaton_state']})" for u in ctx["upsilon"])
        lines.append(f"I={ctx['committed']}: |M|={ctx['M_size']} upsilon={{{pairs}}}")
    _emit(cfg, report, "\n".join(lines))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    model = _load_model(cfg.model)
    if cfg.strategy is None:
        raise InputError("--strategy is required")
    try:
        strat = SynthesizedStrategy.load(cfg.strategy)
    except (OSError, ValueError, EOFError, ImportError, AttributeError) as exc:
        raise InputError(f"cannot load strategy: {exc}") from None
    if strat.model != model:
        raise InputError("strategy was synthesized for a different model")
    trace = simulate(model, strat, cfg.horizon, cfg.seed)
    report: dict = {
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "digest": trace.digest(),
        "final_phase": trace.phases[-1],
        "state_visits": {
            name: sum(1 for s in trace.states if s == i) for i, name in enumerate(model.state_names)
        },
    }
    if cfg.formula is not None:
        phi = _formula(cfg.formula)
        if not is_ltl(phi):
            raise InputError("frequency monitors need a pure LTL formula")
        dra = ltl_to_dra(phi, budget=cfg.automaton_budget)
        neg = ltl_to_dra(Not(phi), budget=cfg.automaton_budget)
        est = empirical_frequency(trace, model, dra, neg)
        report["frequency"] = {
            "formula": to_string(phi),
            "estimate": est.estimate,
            "resolved": est.resolved,
            "unresolved": est.unresolved,
            "conclusive": est.conclusive,
        }
    if cfg.trace:
        Path(cfg.trace).write_text("\n".join(trace.lines(model)) + "\n")
        report["trace_file"] = cfg.trace
    text = f"simulated {cfg.horizon} steps, final phase {trace.phases[-1]}"
    if "frequency" in report:
        fr = report["frequency"]
        text += f"\nfrequency of {fr['formula']}: {fr['estimate']:.6f} ({fr['unresolved']} unresolved)"
    _emit(cfg, report, text)
    return EXIT_OK


def cmd_automaton(cfg: RunConfig) -> int:
    phi = _formula(cfg.formula)
    if not is_ltl(phi):
        raise InputError("automata are built for pure LTL formulas only")
    dra = ltl_to_dra(phi, budget=cfg.automaton_budget)
    if cfg.dot:
        Path(cfg.dot).write_text(dra.to_dot())
    report = {
        "formula": to_string(phi),
        "atoms": list(dra.atoms),
        "states": dra.num_states,
        "pairs": [[sorted(e), sorted(f)] for e, f in dra.pairs],
    }
    _emit(cfg, report, f"{dra.num_states} states, {len(dra.pairs)} pairs")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check_mc,
    "synth": cmd_synthesize,
    "sim": cmd_simulate,
    "aut": cmd_automaton,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqmc", description="frequency LTL model checking and synthesis")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="model file")
        sp.add_argument("--json", action="store_true", help="print a JSON report")
        sp.add_argument("--automaton-budget", type=int, default=DEFAULT_STATE_BUDGET)

    c = sub.add_parser("check", help="probability of an fLTL formula on a Markov chain")
    common(c)
    c.add_argument("--formula", required=True, help="formula text, or @file")
    c.add_argument("--state", help="start state (default: the model's init)")

    s = sub.add_parser("synth", help="synthesize a strategy for a 1-fLTL formula on an MDP")
    common(s)
    s.add_argument("--formula", required=True)
    s.add_argument("--out", help="write the strategy here")
    s.add_argument("--exact", action="store_true", help="exact rational reachability")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--product-budget", type=int, default=DEFAULT_PRODUCT_BUDGET)

    m = sub.add_parser("sim", help="simulate a synthesized strategy")
    common(m)
    m.add_argument("--strategy", required=True)
    m.add_argument("--horizon", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--formula", help="pure LTL formula whose frequency is monitored")
    m.add_argument("--trace", help="write the trace here, one step per line")

    a = sub.add_parser("aut", help="build the Rabin automaton of an LTL formula")
    common(a, model=False)
    a.add_argument("--formula", required=True)
    a.add_argument("--dot", help="write a dot rendering here")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
        cfg = RunConfig(**fields)
        return COMMANDS[cfg.command](cfg)
    except (InputError, FormulaSyntaxError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AutomatonBudgetExceeded, ProductBudgetExceeded) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
