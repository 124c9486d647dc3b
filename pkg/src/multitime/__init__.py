"""Lattice laboratory for multi-time wave functions with pair creation x + xbar <-> y."""

__version__ = "0.1.0"

from .lattice import (
    SPECIES, LatticeSpec, SpeciesStatistics, SpinAlgebra, free_dirac_apply, free_dirac_matrix,
    lattice_dispersion, make_spin_algebra,
)
from .fock import (
    FockSpace, FockState, Sector, annihilate, create, inner_product, load_state, save_state,
    sectors_within, symmetrize,
)
from .single import (
    ModelParams, apply_H, apply_H_ladder, default_coupling, evolve_single, hamiltonian_matrix,
    make_params,
)
from .green import GreenFunction, GreenTable, compute_green, spacelike_residual
from .multi import (
    Greens, MultiTimeConfig, MultiTimeState, PathError, apply_generator, evolve_multitime,
    vacuum_expectation_amplitude,
)
