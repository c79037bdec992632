"""Simulation and verification of continuous-time quantum measurement.

Instruments built from stochastic representations, discrete measurement
chains, a linear jump-diffusion Schrödinger equation with its master-equation
oracle, and a repeated-interaction model of nondemolition measurement.
"""

from .chain import ChainModel, check_chain, history_dependent_demo, kraus_chain, projective_chain
from .grid import TimeGrid
from .instrument import NullEventError, QSRep, measure, validate_qsr, von_neumann_qsr
from .lindblad import LindbladGenerator, derive_generator, evolve
from .nondemolition import ProbeChain, audit, cnot_chain, extract_qsr, partial_swap_chain, recoupling_chain
from .sde import SdeModel, build_model, counting_model, ensemble_state, run_ensemble, simulate

__all__ = [
    "ChainModel",
    "LindbladGenerator",
    "NullEventError",
    "ProbeChain",
    "QSRep",
    "SdeModel",
    "TimeGrid",
    "audit",
    "build_model",
    "check_chain",
    "cnot_chain",
    "counting_model",
    "derive_generator",
    "ensemble_state",
    "evolve",
    "extract_qsr",
    "history_dependent_demo",
    "kraus_chain",
    "measure",
    "partial_swap_chain",
    "projective_chain",
    "recoupling_chain",
    "run_ensemble",
    "simulate",
    "validate_qsr",
    "von_neumann_qsr",
]

__version__ = "0.1.0"
