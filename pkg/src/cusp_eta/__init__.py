"""Cusp contributions to equivariant eta invariants on manifolds with phi-cusp ends."""

__version__ = "0.1.0"

from .errors import CuspEtaError, DomainError, InvalidInputError, NonConvergenceError  # noqa: E402
from .shape import CuspShape, diagnose, xi, xi_inv, q_lambda  # noqa: E402
from .spectrum import EquivariantSpectrum, circle_dirac, delocalised_eta, shift_spectrum  # noqa: E402
from .sturm_liouville import Potential, SpectralMeasure, build_measure, weyl_m  # noqa: E402
from .eta import EtaRequest, EtaResult, CutoffProfile, cusp_contribution, regularised_eta  # noqa: E402

__all__ = [
    "CuspEtaError", "DomainError", "InvalidInputError", "NonConvergenceError",
    "CuspShape", "diagnose", "xi", "xi_inv", "q_lambda",
    "EquivariantSpectrum", "circle_dirac", "delocalised_eta", "shift_spectrum",
    "Potential", "SpectralMeasure", "build_measure", "weyl_m",
    "EtaRequest", "EtaResult", "CutoffProfile", "cusp_contribution", "regularised_eta",
]
