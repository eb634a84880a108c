"""Numerical tolerances shared by every module.

The active profile is picked from the ``OQRW_TOLERANCE_PROFILE`` environment
variable (``default`` or ``strict``).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

PROFILE_ENV = "OQRW_TOLERANCE_PROFILE"


@dataclass(frozen=True)
class Tolerances:
    # lattice
    integrality: float = 1e-9
    basis_rank: float = 1e-12
    # channel
    kraus_completeness: float = 1e-10
    stochastic_rows: float = 1e-10
    positive_entry: float = 1e-12
    unitarity: float = 1e-10
    eigen_one: float = 1e-8
    invariant_residual: float = 1e-10
    cesaro_tol: float = 1e-12
    cesaro_max_doublings: int = 48
    # asymptotics
    rhs_hermitian: float = 1e-10
    rhs_orthogonality: float = 1e-8
    operator_residual: float = 1e-9
    imag_discard: float = 1e-12
    # walk
    prune: float = 1e-15
    min_jump_probability: float = 1e-15
    trace_tol: float = 1e-10
    # fourier
    imag_residue: float = 1e-10


PROFILES: dict[str, Tolerances] = {
    "default": Tolerances(),
    "strict": replace(
        Tolerances(),
        kraus_completeness=1e-12,
        invariant_residual=1e-12,
        operator_residual=1e-11,
        prune=0.0,
    ),
}


def get_tolerances(profile: str | None = None) -> Tolerances:
    name = profile or os.environ.get(PROFILE_ENV, "default")
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown tolerance profile {name!r}; choose from {sorted(PROFILES)}") from None
