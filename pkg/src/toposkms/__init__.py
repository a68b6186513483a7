"""Finite-dimensional topos quantum theory verification toolkit.

Contexts (abelian sub-algebras of M_n), the spectral presheaf over their
inclusion poset, state-induced measures on clopen sub-objects, truth
objects, external and internal KMS checks, and Tomita-Takesaki modular
data — with a scenario-driven CLI (`toposkms`).
"""

__version__ = "0.1.0"

from .tolerances import DEFAULT_TOL, TolerancePolicy  # noqa: F401
