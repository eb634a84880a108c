"""Central limit theorem parameters of a walk: mean drift, operator-equation
solutions L_l and the covariance matrix, plus the quadratic-form cross-check
and the closed-form hexagonal limit.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    BlockOperator,
    InvariantStateReport,
    KrausFamily,
    cp_adjoint_apply,
    invariant_state,
)
from .lattice import CrystalLattice


class HypothesisViolation(RuntimeError):
    """The internal CP map has more than one invariant state."""

    def __init__(self, multiplicity: int):
        super().__init__(
            f"hypothesis (H) violated: the invariant state is not unique "
            f"(eigenvalue-1 multiplicity {multiplicity})")
        self.multiplicity = multiplicity


class InconsistentEquation(ValueError):
    pass


@dataclass
class CltParameters:
    rho_inf: BlockOperator
    mean: np.ndarray
    covariance: np.ndarray
    L_basis: list[BlockOperator]
    L_canonical: list[BlockOperator]
    residuals: list[float]
    asymmetry: float


def _theta(K: KrausFamily) -> np.ndarray:
    return K.lattice.theta_matrix


def jump_weights(K: KrausFamily, rho: BlockOperator) -> np.ndarray:
    """Tr(B(e) rho B(e)^*) for every arc, in arc order."""
    out = np.empty(len(K.arcs))
    for i, a in enumerate(K.arcs):
        w = np.trace(K.gram[a.id] @ rho.blocks[a.origin])
        if abs(w.imag) > K.tol.imag_discard:
            raise ValueError(f"jump weight of arc {a.id!r} has imaginary part {w.imag:.2e}")
        out[i] = w.real
    return out


def mean_vector(K: KrausFamily, rho_inf: BlockOperator) -> np.ndarray:
    return jump_weights(K, rho_inf) @ _theta(K)


def operator_rhs(K: KrausFamily, l, m) -> BlockOperator:
    """sum_e B(e)^*B(e) (theta(e).l) - (m.l) I."""
    l = np.asarray(l, dtype=float)
    proj = _theta(K) @ l
    ml = float(np.dot(m, l))
    out = BlockOperator({u: -ml * np.eye(n, dtype=complex) for u, n in K.dims.items()})
    for i, a in enumerate(K.arcs):
        out.blocks[a.origin] += proj[i] * K.gram[a.id]
    return out


def _resolvent_svd(K: KrausFamily):
    key = "_oqrw_resolvent_svd"
    cached = K.__dict__.get(key)
    if cached is None:
        A = np.eye(K.vec_dim) - K.adjoint_superoperator
        cached = np.linalg.svd(A)
        K.__dict__[key] = cached
    return cached


def solve_operator_equation(K: KrausFamily, rho_inf: BlockOperator, l, m=None) -> BlockOperator:
    """Minimal-norm Hermitian solution of L - L^*(L) = rhs(l).

    Solutions are unique up to adding c*I; the minimal Frobenius norm
    representative is returned.
    """
    tol = K.tol
    m = mean_vector(K, rho_inf) if m is None else np.asarray(m, dtype=float)
    rhs = operator_rhs(K, l, m)
    defect = rhs.hermitian_defect()
    if defect > tol.rhs_hermitian:
        raise InconsistentEquation(f"right-hand side is not Hermitian (defect {defect:.2e})")
    rhs = rhs.hermitian_part()
    overlap = abs((rho_inf @ rhs).trace())
    if overlap > tol.rhs_orthogonality:
        raise InconsistentEquation(
            f"right-hand side is not orthogonal to the invariant state ({overlap:.2e}); "
            "the state is wrong or not unique")

    U, s, Vh = _resolvent_svd(K)
    keep = s > tol.eigen_one
    if np.count_nonzero(~keep) > 1:
        raise HypothesisViolation(int(np.count_nonzero(~keep)))
    b = rhs.to_vector()
    coeffs = (U.conj().T @ b)[keep] / s[keep]
    x = Vh[keep].conj().T @ coeffs
    L = BlockOperator.from_vector(x, K.dims).hermitian_part()

    residual = operator_residual(K, L, rhs)
    if residual > tol.operator_residual:
        raise InconsistentEquation(f"operator equation residual {residual:.2e} exceeds {tol.operator_residual:g}")
    return L


def operator_residual(K: KrausFamily, L: BlockOperator, rhs: BlockOperator) -> float:
    return ((L - cp_adjoint_apply(K, L)) - rhs).norm()


def canonical_L(lattice: CrystalLattice, L_basis: list[BlockOperator]) -> list[BlockOperator]:
    """L_{e_i} = sum_j Theta_ij L_j."""
    Theta = lattice.Theta
    out = []
    for i in range(lattice.d):
        acc = L_basis[0] * Theta[i, 0]
        for j in range(1, lattice.d):
            acc = acc + L_basis[j] * Theta[i, j]
        out.append(acc)
    return out


def covariance_matrix(K: KrausFamily, rho_inf: BlockOperator, m, L_canonical: list[BlockOperator],
                      return_defect: bool = False):
    """Covariance from the one-sided sum formula, symmetrised.

    The unsymmetrised sum is only determined through its quadratic form, so
    its asymmetry is reported rather than treated as a failure; inconsistent
    inputs are caught by checking every L_{e_i} against its own equation.
    """
    m = np.asarray(m, dtype=float)
    theta = _theta(K)
    w = jump_weights(K, rho_inf)
    d = len(m)
    for i, L in enumerate(L_canonical):
        res = operator_residual(K, L, operator_rhs(K, np.eye(d)[i], m))
        if res > K.tol.operator_residual:
            raise InconsistentEquation(f"L for canonical direction {i + 1} does not solve its equation (residual {res:.2e})")
    C = -np.outer(m, m) + (theta * w[:, None]).T @ theta
    # cross[e, i] = Tr(B rho B^* L_{e_i})
    cross = np.empty((len(K.arcs), d))
    for k, a in enumerate(K.arcs):
        B = K.ops[a.id]
        jumped = B @ rho_inf.blocks[a.origin] @ B.conj().T
        for i in range(d):
            cross[k, i] = np.trace(jumped @ L_canonical[i].blocks[a.terminal]).real
    C += 2 * cross.T @ theta
    tr_rho_L = np.array([(rho_inf @ L).trace().real for L in L_canonical])
    C -= 2 * np.outer(m, tr_rho_L)
    defect = float(np.max(np.abs(C - C.T), initial=0.0))
    C = (C + C.T) / 2
    return (C, defect) if return_defect else C


def gamma_operator(K: KrausFamily, m, L_l: BlockOperator, l) -> BlockOperator:
    """sum_e [B^*B (theta(e).l - m.l)^2 + 2 B^* L_l B (theta(e).l - m.l)]."""
    c = _theta(K) @ np.asarray(l, dtype=float) - float(np.dot(m, l))
    out = BlockOperator.zeros(K.dims)
    for k, a in enumerate(K.arcs):
        B = K.ops[a.id]
        out.blocks[a.origin] += c[k] ** 2 * K.gram[a.id] + 2 * c[k] * (B.conj().T @ L_l.blocks[a.terminal] @ B)
    return out


def sigma_squared_gamma(K: KrausFamily, rho_inf: BlockOperator, m, L_l: BlockOperator, l) -> float:
    return float((rho_inf @ gamma_operator(K, m, L_l, l)).trace().real)


def verify_poisson(K: KrausFamily, rho: BlockOperator, arc_id: str, l, L_l: BlockOperator, m) -> float:
    """|(I - P)f(rho, e) - (theta(e).l - m.l)| for f(rho, e) = Tr(rho L_l) + theta(e).l.

    P is applied through the explicit jump kernel; jumps with probability
    below the tolerance are skipped.
    """
    l = np.asarray(l, dtype=float)
    proj = _theta(K) @ l
    idx = {a.id: i for i, a in enumerate(K.arcs)}

    def f(state: BlockOperator, k: int) -> float:
        return float((state @ L_l).trace().real) + proj[k]

    Pf = 0.0
    for k, a in enumerate(K.arcs):
        B = K.ops[a.id]
        jumped = B @ rho.blocks[a.origin] @ B.conj().T
        p = float(np.trace(jumped).real)
        if p < K.tol.min_jump_probability:
            continue
        post = BlockOperator.zeros(K.dims)
        post.blocks[a.terminal] = jumped / p
        Pf += p * f(post, k)
    k = idx[arc_id]
    lhs = f(rho, k) - Pf
    return abs(lhs - (proj[k] - float(np.dot(m, l))))


def clt_parameters(K: KrausFamily, report: InvariantStateReport | None = None) -> CltParameters:
    report = invariant_state(K) if report is None else report
    if not report.unique:
        raise HypothesisViolation(report.eigenvalue_one_multiplicity)
    rho = report.state
    m = mean_vector(K, rho)
    L_basis, residuals = [], []
    for basis_vec in K.lattice.basis:
        L = solve_operator_equation(K, rho, basis_vec, m)
        L_basis.append(L)
        residuals.append(operator_residual(K, L, operator_rhs(K, basis_vec, m).hermitian_part()))
    L_can = canonical_L(K.lattice, L_basis)
    C, defect = covariance_matrix(K, rho, m, L_can, return_defect=True)
    return CltParameters(rho, m, C, L_basis, L_can, residuals, defect)


# --- hexagonal closed forms -------------------------------------------------------

@dataclass(frozen=True)
class HexagonalLimit:
    """Limiting characteristic function exp(-(2/9) eps^2(t)) of the Grover hexagonal walk."""

    theta1: np.ndarray
    theta2: np.ndarray

    def epsilon_sq(self, t) -> float:
        a = float(np.dot(t, self.theta1))
        b = float(np.dot(t, self.theta2))
        return a * a + b * b - a * b

    def cf(self, t) -> float:
        return math.exp(-2.0 / 9.0 * self.epsilon_sq(t))


def _hex_basis() -> tuple[np.ndarray, np.ndarray]:
    r = math.sqrt(0.5)
    return np.array([r, r]), np.array([-r, r])


def hexagonal_limit_cf(t, theta1=None, theta2=None) -> float:
    if theta1 is None or theta2 is None:
        theta1, theta2 = _hex_basis()
    return HexagonalLimit(np.asarray(theta1, float), np.asarray(theta2, float)).cf(t)


def hexagonal_dual_eigensystem(theta1_phase: float, theta2_phase: float) -> tuple[float, complex, complex]:
    """mu = |1 + e^{i th1} + e^{i th2}|/3 and the eigenvalues of the reduced 2x2 dual matrix."""
    mu = abs(1 + cmath.exp(1j * theta1_phase) + cmath.exp(1j * theta2_phase)) / 3
    root = cmath.sqrt(4 * mu * mu - 3)
    base = 8 / 9 * mu * mu - 1 / 3
    return mu, base + 4 / 9 * mu * root, base - 4 / 9 * mu * root
