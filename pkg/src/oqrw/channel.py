"""Kraus families on a crystal lattice and the internal CP map.

Operators on the internal space are block diagonal over the base vertices, so
they are held as :class:`BlockOperator` (one square block per vertex).  The
vectorised form used for superoperators concatenates the row-major flattening
of each block in vertex order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .config import Tolerances, get_tolerances
from .lattice import CrystalLattice, Violation

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class StructureError(ValueError):
    pass


@dataclass(eq=False)
class BlockOperator:
    """Block-diagonal operator: ``blocks[u]`` acts on the internal space at vertex u."""

    blocks: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, dims: Mapping[str, int]) -> "BlockOperator":
        return cls({u: np.zeros((n, n), dtype=complex) for u, n in dims.items()})

    @classmethod
    def identity(cls, dims: Mapping[str, int]) -> "BlockOperator":
        return cls({u: np.eye(n, dtype=complex) for u, n in dims.items()})

    @classmethod
    def maximally_mixed(cls, dims: Mapping[str, int]) -> "BlockOperator":
        total = sum(dims.values())
        return cls({u: np.eye(n, dtype=complex) / total for u, n in dims.items()})

    @classmethod
    def from_vector(cls, vec: np.ndarray, dims: Mapping[str, int]) -> "BlockOperator":
        blocks, pos = {}, 0
        for u, n in dims.items():
            blocks[u] = np.asarray(vec[pos:pos + n * n], dtype=complex).reshape(n, n)
            pos += n * n
        return cls(blocks)

    @property
    def dims(self) -> dict[str, int]:
        return {u: b.shape[0] for u, b in self.blocks.items()}

    def to_vector(self) -> np.ndarray:
        return np.concatenate([b.reshape(-1) for b in self.blocks.values()]).astype(complex)

    def to_dense(self) -> np.ndarray:
        from scipy.linalg import block_diag

        return block_diag(*self.blocks.values())

    def copy(self) -> "BlockOperator":
        return BlockOperator({u: b.copy() for u, b in self.blocks.items()})

    def _zip(self, other: "BlockOperator", op) -> "BlockOperator":
        if self.blocks.keys() != other.blocks.keys():
            raise ValueError("block operators live on different vertex sets")
        return BlockOperator({u: op(b, other.blocks[u]) for u, b in self.blocks.items()})

    def __add__(self, other: "BlockOperator") -> "BlockOperator":
        return self._zip(other, np.add)

    def __sub__(self, other: "BlockOperator") -> "BlockOperator":
        return self._zip(other, np.subtract)

    def __matmul__(self, other: "BlockOperator") -> "BlockOperator":
        return self._zip(other, np.matmul)

    def __mul__(self, c) -> "BlockOperator":
        return BlockOperator({u: c * b for u, b in self.blocks.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "BlockOperator":
        return self * -1

    def __truediv__(self, c) -> "BlockOperator":
        return BlockOperator({u: b / c for u, b in self.blocks.items()})

    def trace(self) -> complex:
        return complex(sum(np.trace(b) for b in self.blocks.values()))

    def dagger(self) -> "BlockOperator":
        return BlockOperator({u: b.conj().T for u, b in self.blocks.items()})

    def hermitian_part(self) -> "BlockOperator":
        return BlockOperator({u: (b + b.conj().T) / 2 for u, b in self.blocks.items()})

    def norm(self) -> float:
        """Frobenius norm over all blocks."""
        return float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in self.blocks.values())))

    def hermitian_defect(self) -> float:
        return (self - self.dagger()).norm()

    def min_eigenvalue(self) -> float:
        vals = [np.linalg.eigvalsh((b + b.conj().T) / 2).min() for b in self.blocks.values() if b.size]
        return float(min(vals)) if vals else 0.0

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return self.hermitian_defect() <= tol

    def is_psd(self, tol: float = 1e-12) -> bool:
        return self.is_hermitian(max(tol, 1e-10)) and self.min_eigenvalue() >= -tol

    def has_unit_trace(self, tol: float = 1e-10) -> bool:
        return abs(self.trace() - 1) <= tol

    def traceless(self) -> "BlockOperator":
        """Remove the global identity component (the gauge of the operator equation)."""
        n = sum(self.dims.values())
        shift = self.trace() / n
        return BlockOperator({u: b - shift * np.eye(b.shape[0]) for u, b in self.blocks.items()})

    def allclose(self, other: "BlockOperator", atol: float) -> bool:
        return (self - other).norm() <= atol

    def __repr__(self) -> str:
        inner = ", ".join(f"{u}: {np.array2string(b, precision=4)}" for u, b in self.blocks.items())
        return f"BlockOperator({{{inner}}})"


@dataclass(frozen=True, eq=False)
class KrausFamily:
    """Per-arc operators ``ops[e]`` mapping H_{o(e)} to H_{t(e)}."""

    lattice: CrystalLattice
    dims: Mapping[str, int]
    ops: Mapping[str, np.ndarray]
    tol: Tolerances = field(default_factory=get_tolerances, repr=False)

    def __post_init__(self):
        # vertex order follows the lattice, not the caller's dict
        ordered = {u: int(self.dims[u]) for u in self.lattice.vertices if u in self.dims}
        object.__setattr__(self, "dims", ordered)
        object.__setattr__(self, "ops", {k: np.asarray(v, dtype=complex) for k, v in self.ops.items()})

    @property
    def arcs(self):
        return self.lattice.base.arcs

    @cached_property
    def offsets(self) -> dict[str, int]:
        out, pos = {}, 0
        for u, n in self.dims.items():
            out[u] = pos
            pos += n * n
        return out

    @property
    def vec_dim(self) -> int:
        return sum(n * n for n in self.dims.values())

    @property
    def total_dim(self) -> int:
        return sum(self.dims.values())

    def _superop(self, adjoint: bool) -> np.ndarray:
        S = np.zeros((self.vec_dim, self.vec_dim), dtype=complex)
        for a in self.arcs:
            B = self.ops[a.id]
            o, t = self.offsets[a.origin], self.offsets[a.terminal]
            no, nt = self.dims[a.origin], self.dims[a.terminal]
            if adjoint:
                # X_t -> B^* X_t B lands in block o;  vec_r(A X C) = (A kron C^T) vec_r(X)
                S[o:o + no * no, t:t + nt * nt] += np.kron(B.conj().T, B.T)
            else:
                S[t:t + nt * nt, o:o + no * no] += np.kron(B, B.conj())
        return S

    @cached_property
    def superoperator(self) -> np.ndarray:
        """Matrix of rho -> sum_e B(e) rho B(e)^* on vectorised block operators."""
        return self._superop(adjoint=False)

    @cached_property
    def adjoint_superoperator(self) -> np.ndarray:
        """Matrix of X -> sum_e B(e)^* X B(e)."""
        return self._superop(adjoint=True)

    @cached_property
    def gram(self) -> dict[str, np.ndarray]:
        """B(e)^* B(e) for every arc (an operator on H_{o(e)})."""
        return {a.id: self.ops[a.id].conj().T @ self.ops[a.id] for a in self.arcs}


def validate_kraus(K: KrausFamily) -> list[Violation]:
    out: list[Violation] = []
    for u in K.lattice.vertices:
        if u not in K.dims:
            out.append(Violation("missing_dim", u, "no internal dimension for vertex"))
        elif K.dims[u] < 1:
            out.append(Violation("dimension", u, "internal dimension must be positive"))
    if out:
        return out
    shape_ok = True
    for a in K.arcs:
        B = K.ops.get(a.id)
        if B is None:
            out.append(Violation("missing_operator", a.id, "no Kraus operator for arc"))
            shape_ok = False
            continue
        want = (K.dims[a.terminal], K.dims[a.origin])
        if B.shape != want:
            out.append(Violation("operator_shape", a.id, f"operator has shape {B.shape}, expected {want}"))
            shape_ok = False
    if not shape_ok:
        return out
    for u in K.lattice.vertices:
        total = np.zeros((K.dims[u], K.dims[u]), dtype=complex)
        for a in K.lattice.base.out_arcs(u):
            total += K.gram[a.id]
        defect = float(np.linalg.norm(total - np.eye(K.dims[u])))
        if defect > K.tol.kraus_completeness:
            out.append(Violation("completeness", u, "sum of B(e)^*B(e) over arcs leaving the vertex is not the identity",
                                 defect))
    return out


def _check_shape(K: KrausFamily, X: BlockOperator) -> None:
    for u, n in K.dims.items():
        b = X.blocks.get(u)
        if b is None or b.shape != (n, n):
            got = None if b is None else b.shape
            raise ValueError(f"block at vertex {u!r} has shape {got}, expected {(n, n)}")


def cp_apply(K: KrausFamily, rho: BlockOperator) -> BlockOperator:
    """The internal CP map: block u of the result is sum_{t(e)=u} B(e) rho_{o(e)} B(e)^*."""
    _check_shape(K, rho)
    out = BlockOperator.zeros(K.dims)
    for a in K.arcs:
        B = K.ops[a.id]
        out.blocks[a.terminal] += B @ rho.blocks[a.origin] @ B.conj().T
    return out


def cp_adjoint_apply(K: KrausFamily, X: BlockOperator) -> BlockOperator:
    """Heisenberg-picture map: block u of the result is sum_{o(e)=u} B(e)^* X_{t(e)} B(e)."""
    _check_shape(K, X)
    out = BlockOperator.zeros(K.dims)
    for a in K.arcs:
        B = K.ops[a.id]
        out.blocks[a.origin] += B.conj().T @ X.blocks[a.terminal] @ B
    return out


@dataclass
class InvariantStateReport:
    state: BlockOperator
    unique: bool
    eigenvalue_one_multiplicity: int
    residual: float
    method: str = "eigen"


def fixed_space_dimension(K: KrausFamily, tol: float | None = None) -> int:
    """Dimension of the eigenvalue-1 eigenspace of the vectorised CP map."""
    tol = K.tol.eigen_one if tol is None else tol
    M = K.superoperator - np.eye(K.vec_dim)
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s <= tol))


def _normalise_state(K: KrausFamily, X: BlockOperator) -> BlockOperator:
    X = (X / X.trace()).hermitian_part()
    blocks = {}
    for u, b in X.blocks.items():
        w, v = np.linalg.eigh(b)
        blocks[u] = (v * np.clip(w, 0.0, None)) @ v.conj().T
    X = BlockOperator(blocks)
    return X / X.trace().real


def cesaro_mean(K: KrausFamily, rho0: BlockOperator, doublings: int) -> BlockOperator:
    """Exact Cesaro mean (1/n) sum_{k<n} L^k(rho0) with n = 2**doublings.

    Uses A_{2n} = (A_n + L^n A_n)/2 with L^{2n} = (L^n)^2; each power is
    re-projected onto trace-preserving maps so rounding cannot inflate the
    fixed-point eigenvalue.
    """
    a, _ = _cesaro_run(K, rho0, doublings, tol=None)
    return a


def _cesaro_run(K: KrausFamily, rho0: BlockOperator, doublings: int, tol: float | None):
    S = K.superoperator.copy()
    t = BlockOperator.identity(K.dims).to_vector().real
    tt = t @ t
    a = rho0.to_vector()
    residual = np.inf
    for _ in range(doublings):
        a = (a + S @ a) / 2
        S = S @ S
        S += np.outer(t, t - t @ S) / tt
        if tol is not None:
            residual = float(np.linalg.norm(K.superoperator @ a - a))
            if residual <= tol:
                break
    if tol is None:
        residual = float(np.linalg.norm(K.superoperator @ a - a))
    return BlockOperator.from_vector(a, K.dims), residual


def cesaro_limit(K: KrausFamily, rho0: BlockOperator | None = None) -> tuple[BlockOperator, float]:
    """Ergodic time average of L^k(rho0); raises ConvergenceError when the budget runs out."""
    tol = K.tol
    rho0 = BlockOperator.maximally_mixed(K.dims) if rho0 is None else rho0
    _check_shape(K, rho0)
    state, residual = _cesaro_run(K, rho0, tol.cesaro_max_doublings, tol=tol.cesaro_tol)
    if residual > tol.cesaro_tol:
        raise ConvergenceError(f"Cesaro average did not converge in 2**{tol.cesaro_max_doublings} terms", residual)
    return state, residual


def invariant_state(K: KrausFamily) -> InvariantStateReport:
    tol = K.tol
    S = K.superoperator
    _, s, vh = np.linalg.svd(S - np.eye(K.vec_dim))
    multiplicity = int(np.sum(s <= tol.eigen_one))
    if multiplicity == 1:
        candidate = _normalise_state(K, BlockOperator.from_vector(vh[-1].conj(), K.dims))
        residual = (cp_apply(K, candidate) - candidate).norm()
        if residual <= tol.invariant_residual:
            return InvariantStateReport(candidate, True, 1, residual, "eigen")
        logger.warning("eigenvector residual %.2e too large; falling back to Cesaro average", residual)
    state, _ = cesaro_limit(K)
    state = state.hermitian_part()
    residual = (cp_apply(K, state) - state).norm()
    return InvariantStateReport(state, multiplicity == 1, max(multiplicity, 1), residual, "cesaro")


def _column_slices(K: KrausFamily, src: str, dst: str) -> np.ndarray:
    """Reassemble the unitary whose columns are the single-column operators src -> dst."""
    tol = K.tol
    arcs = K.lattice.base.out_arcs(src)
    if any(a.terminal != dst for a in arcs):
        raise StructureError(f"arcs leaving {src!r} do not all end at {dst!r}")
    n = K.dims[src]
    if K.dims[dst] != n or len(arcs) != n:
        raise StructureError(f"vertex {src!r} needs {n} arcs to {dst!r} with equal internal dimensions")
    U = np.zeros((n, n), dtype=complex)
    seen = set()
    for a in arcs:
        B = K.ops[a.id]
        cols = np.flatnonzero(np.linalg.norm(B, axis=0) > tol.positive_entry)
        if len(cols) != 1:
            raise StructureError(f"operator of arc {a.id!r} is not a single-column slice")
        if cols[0] in seen:
            raise StructureError(f"column {cols[0]} is used by two arcs leaving {src!r}")
        seen.add(cols[0])
        U[:, cols[0]] = B[:, cols[0]]
    if np.linalg.norm(U.conj().T @ U - np.eye(n)) > tol.unitarity:
        raise StructureError(f"columns of the arcs leaving {src!r} do not form a unitary")
    return U


def stochastic_matrices(K: KrausFamily, u: str, v: str) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic matrices P_u[i, j] = |U_ji|^2 and P_v[i, j] = |V_ji|^2.

    U (V) is the unitary whose i-th column is carried by the i-th arc from u
    to v (from v to u).
    """
    U = _column_slices(K, u, v)
    V = _column_slices(K, v, u)
    return (np.abs(U) ** 2).T, (np.abs(V) ** 2).T


def is_irreducible(P, tol: Tolerances | None = None) -> bool:
    tol = tol or get_tolerances()
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {P.shape}")
    if np.any(P < -tol.positive_entry) or np.max(np.abs(P.sum(axis=1) - 1)) > tol.stochastic_rows:
        raise ValueError("matrix is not row-stochastic")
    graph = csr_matrix(P > tol.positive_entry)
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    return n_comp == 1
