"""Frequency LTL model checking for Markov chains and strategy synthesis for MDPs."""

from .formula import parse, to_string
from .mc_engine import check_mc
from .mdp_engine import SynthesisConfig, synthesize
from .models import Model, load_model, parse_model

__all__ = [
    "Model",
    "SynthesisConfig",
    "check_mc",
    "load_model",
    "parse",
    "parse_model",
    "synthesize",
    "to_string",
]
