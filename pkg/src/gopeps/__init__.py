"""Finite PEPS ground states of the J1-J2 Heisenberg model.

Simple-update initialization followed by Monte Carlo sign-gradient
optimization, with boundary-MPS contraction of single-layer networks.
"""
__version__ = "0.1.0"

from .lattice import LatticeSpec, Bond, build_bonds, neel_config, classical_energy
from .peps import PepsState, random_init, grow_bond_dimension, rescale, save_checkpoint, load_checkpoint
from .contraction import amplitude, amplitude_bruteforce, single_layer_environments, WalkerBatch
from .monte_carlo import McParams, Estimator, sample_energy, sample_gradient, enumerate_energy, enumerate_gradient
from .simple_update import SuSchedule, run_simple_update, ramp_simple_update, trotter_gate
from .optimize import GoSchedule, GoPhase, go_step, run_go
from .observables import spin_correlation, staggered_magnetization, quadratic_extrapolation
from .ed import exact_ground_energy, expand_peps, rayleigh_quotient
