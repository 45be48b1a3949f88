"""Numerical laboratory for soliton chains of the hydrodynamic Gross-Pitaevskii system."""

from .grid import Grid, Perturbation, State
from .soliton_forms import (
    ChainParams,
    SolitonParams,
    chain_profile,
    soliton_energy_closed,
    soliton_gradients,
    soliton_momentum_closed,
    soliton_profile,
)

__version__ = "0.1.0"
