"""Randomly twisted quantum waveguides: spectra, counting functions and sandwich checks."""

from .cross_section import CrossSection, TransverseSpectrum, coupling_constant, solve_transverse
from .curves import IdsCurve
from .disorder import make_coupling_law, make_profile, sample_twist, thinness_constants
from .operators_1d import assemble_1d, count_below, critical_epsilon, ids_1d, single_cell_ground_energy
from .operators_3d import BudgetExceeded, assemble_3d, count_below_3d, ids_3d

__version__ = "0.1.0"

__all__ = [
    "CrossSection", "TransverseSpectrum", "solve_transverse", "coupling_constant", "IdsCurve",
    "make_profile", "make_coupling_law", "sample_twist", "thinness_constants", "assemble_1d", "count_below",
    "critical_epsilon", "ids_1d", "single_cell_ground_energy", "BudgetExceeded", "assemble_3d",
    "count_below_3d", "ids_3d", "__version__",
]
