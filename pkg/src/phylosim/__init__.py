"""Simulation and verification toolkit for trait-structured, clan-collapsed phylogeny dynamics."""

from .dynamics import simulate, coupled_domination_run
from .generators import omega_discrete, omega_limit, convergence_gap
from .polynomials import TestFunction, evaluate
from .rates import PRESETS, RateModel, validate
from .state import FinitePhylogeny, TraitSpace, states_from
from .streams import stream

__version__ = "0.1.0"

__all__ = [
    "FinitePhylogeny", "TraitSpace", "states_from", "RateModel", "PRESETS", "validate", "simulate",
    "coupled_domination_run", "TestFunction", "evaluate", "omega_discrete", "omega_limit",
    "convergence_gap", "stream",
]
