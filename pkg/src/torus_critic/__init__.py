"""Existence maps for invariant tori of near-integrable Hamiltonians.

Two independent classifiers (a renormalization operator on Fourier-Taylor
Hamiltonians and a Newton conjugation in configuration space), a rotation
number cross-check built on weighted Birkhoff averages, and a parameter-space
scanner with bisection for critical thresholds.
"""

__version__ = "0.1.0"

from .ft_algebra import (  # noqa: F401
    FTHamiltonian,
    FrequencyData,
    GeneratingFunction,
    TermSet,
    evaluate,
    norm,
    poisson_bracket,
    reindex_modes,
)
from .presets import SCENARIOS, Scenario, get_scenario  # noqa: F401
from .renormalization import RenormOutcome, iterate_renorm, renorm_step  # noqa: F401
