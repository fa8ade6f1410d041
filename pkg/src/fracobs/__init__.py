"""Observability and gradient reconstruction for time-fractional diffusion.

Subpackage map:

- fraccalc: Mittag-Leffler evaluation, Caputo and right-sided
  Riemann-Liouville operators on sampled time grids, fractional
  integration-by-parts residual.
- spectral: Dirichlet-Laplacian eigenpairs on the unit interval/square,
  region inner products, gradient coupling coefficients.
- system: the diffusion model, sensors, mild solutions, synthetic
  measurement records, and the adjoint moment map.
- observability: gradient-strategic sensor tests, the observability Gram
  diagnostic on a subregion, and a vanishing-output counterexample check.
- hum: Gram/right-hand-side assembly, regularized solves, and the
  iterative gradient reconstruction driver.
- cli: command line front end (simulate / reconstruct / check-strategic /
  sweep-sensor).
"""

from .errors import (
    AccuracyError,
    ConvergenceError,
    DomainError,
    FracobsError,
    InputError,
    SolvabilityError,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyError",
    "ConvergenceError",
    "DomainError",
    "FracobsError",
    "InputError",
    "SolvabilityError",
    "__version__",
]
