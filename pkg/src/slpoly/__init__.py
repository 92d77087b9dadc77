"""Forward and inverse Sturm-Liouville problems with polynomial boundary conditions."""

from .core import BoundaryProblem, Grid, PolynomialPair, SampledFunction, SpectralData, make_polynomial_pair
from .forward import characteristic, find_eigenvalues, spectral_data, weight_numbers, weyl_function
from .inverse import inverse_solve
from .verify import Perturbation, residue_alpha_oracle, roundtrip, stability_sweep

__all__ = [
    "BoundaryProblem", "Grid", "PolynomialPair", "SampledFunction", "SpectralData",
    "make_polynomial_pair", "characteristic", "find_eigenvalues", "spectral_data",
    "weight_numbers", "weyl_function", "inverse_solve", "Perturbation",
    "residue_alpha_oracle", "roundtrip", "stability_sweep",
]
