"""Fourier calculus on a crystal lattice: the dual process Y_n(k), characteristic
functions p^(n)(k) = Tr(rho0^(k) Y_n(k)) and exact inversion on a momentum grid.

Sign conventions: forward transforms use e^{-i<k,x>}, inversion e^{+i<k,x>}.
Momenta are parametrised as k = Theta q so that <k, embed(x)> = q . x for
integer coordinates x and every integrand is 2*pi-periodic in q.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .channel import BlockOperator, KrausFamily
from .lattice import CrystalLattice
from .walk import LatticeState


class AliasingError(ValueError):
    def __init__(self, N: int, required: int):
        super().__init__(f"grid size N={N} aliases the support; need N >= {required}")
        self.N = N
        self.required = required


class InversionError(ValueError):
    pass


def _as_k(k, d: int) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != d:
        raise ValueError(f"momentum must have last dimension {d}, got shape {k.shape}")
    return k


@dataclass(frozen=True)
class DualSymbol:
    """One-step dual multiplier D(k): X -> sum_e e^{-i<k,theta(e)>} B(e)^* X_{t(e)} B(e) into block o(e)."""

    kraus: KrausFamily

    @property
    def lattice(self) -> CrystalLattice:
        return self.kraus.lattice

    def phases(self, k) -> np.ndarray:
        """e^{-i<k,theta(e)>} in arc order; k of shape (d,) or (M, d)."""
        k = _as_k(k, self.lattice.d)
        return np.exp(-1j * (k @ self.lattice.theta_matrix.T))

    def apply_batch(self, phases: np.ndarray, X: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Apply D at M momenta at once; ``X[u]`` has shape (M, n_u, n_u), ``phases`` (M, n_arcs)."""
        M = phases.shape[0]
        out = {u: np.zeros((M, n, n), dtype=complex) for u, n in self.kraus.dims.items()}
        for i, a in enumerate(self.kraus.arcs):
            B = self.kraus.ops[a.id]
            term = B.conj().T @ X[a.terminal] @ B
            out[a.origin] += phases[:, i, None, None] * term
        return out

    def evaluate(self, k) -> Callable[[BlockOperator], BlockOperator]:
        ph = self.phases(k).reshape(1, -1)

        def D(X: BlockOperator) -> BlockOperator:
            res = self.apply_batch(ph, {u: b[None] for u, b in X.blocks.items()})
            return BlockOperator({u: b[0] for u, b in res.items()})

        return D


def _identity_batch(K: KrausFamily, M: int) -> dict[str, np.ndarray]:
    return {u: np.broadcast_to(np.eye(n, dtype=complex), (M, n, n)).copy() for u, n in K.dims.items()}


def dual_iterate_batch(K: KrausFamily, ks, n: int) -> dict[str, np.ndarray]:
    """Y_n at each row of ``ks`` (shape (M, d)); returns blocks of shape (M, n_u, n_u)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    sym = DualSymbol(K)
    ks = np.atleast_2d(_as_k(ks, K.lattice.d))
    ph = sym.phases(ks)
    Y = _identity_batch(K, len(ks))
    for _ in range(n):
        Y = sym.apply_batch(ph, Y)
    return Y


def dual_iterate(K: KrausFamily, k, n: int) -> BlockOperator:
    Y = dual_iterate_batch(K, np.reshape(k, (1, -1)), n)
    return BlockOperator({u: b[0] for u, b in Y.items()})


def state_fourier_transform_batch(state: LatticeState, lattice: CrystalLattice, ks) -> dict[str, np.ndarray]:
    """rho0^(k) = sum_x e^{-i<k,x>} rho_x for each row of ks."""
    ks = np.atleast_2d(_as_k(ks, lattice.d))
    pos = state.coords @ lattice.basis
    w = np.exp(-1j * (ks @ pos.T))
    return {u: np.einsum("ms,sij->mij", w, b) for u, b in state.blocks.items()}


def state_fourier_transform(state: LatticeState, lattice: CrystalLattice, k) -> BlockOperator:
    out = state_fourier_transform_batch(state, lattice, np.reshape(k, (1, -1)))
    return BlockOperator({u: b[0] for u, b in out.items()})


def characteristic_function_batch(K: KrausFamily, initial: LatticeState, ks, n: int) -> np.ndarray:
    ks = np.atleast_2d(_as_k(ks, K.lattice.d))
    rho_hat = state_fourier_transform_batch(initial, K.lattice, ks)
    Y = dual_iterate_batch(K, ks, n)
    total = np.zeros(len(ks), dtype=complex)
    for u in K.dims:
        total += np.einsum("mij,mji->m", rho_hat[u], Y[u])
    return total


def characteristic_function(K: KrausFamily, initial: LatticeState, k, n: int) -> complex:
    """p^(n)(k) = Tr(rho0^(k) Y_n(k))."""
    return complex(characteristic_function_batch(K, initial, np.reshape(k, (1, -1)), n)[0])


def direct_characteristic_function(dist: dict[tuple[int, ...], float], lattice: CrystalLattice, k) -> complex:
    """sum_x e^{-i<k,x>} p_x for a position distribution in integer coordinates."""
    coords = np.array(list(dist), dtype=float).reshape(len(dist), -1)
    p = np.array(list(dist.values()))
    return complex(np.sum(p * np.exp(-1j * (coords @ lattice.basis) @ np.asarray(k, float))))


# --- inversion -----------------------------------------------------------------------

@dataclass(frozen=True)
class MomentumGrid:
    """Uniform grid q in (2 pi / N) Z_N^d mapped to momenta k = Theta q."""

    lattice: CrystalLattice
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("grid size must be at least 1")

    @cached_property
    def q(self) -> np.ndarray:
        axis = 2 * np.pi * np.arange(self.N) / self.N
        return np.array(list(itertools.product(axis, repeat=self.lattice.d))).reshape(-1, self.lattice.d)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.q @ self.lattice.Theta.T

    @property
    def prefactor(self) -> float:
        """|det Theta|^{-1} (2 pi)^{-d}, the normalisation in front of the k-integral."""
        d = self.lattice.d
        return 1.0 / (abs(np.linalg.det(self.lattice.Theta)) * (2 * np.pi) ** d)

    @property
    def node_weight(self) -> float:
        """Prefactor times the k-volume per node, which reduces to N^{-d}."""
        d = self.lattice.d
        return self.prefactor * abs(np.linalg.det(self.lattice.Theta)) * (2 * np.pi / self.N) ** d


def support_box(K: KrausFamily, initial: LatticeState, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive integer bounds containing the support of p^(n)."""
    steps = K.lattice.step_matrix
    lo = initial.coords.min(axis=0) + n * np.minimum(steps.min(axis=0), 0)
    hi = initial.coords.max(axis=0) + n * np.maximum(steps.max(axis=0), 0)
    return lo, hi


def required_grid(K: KrausFamily, initial: LatticeState, n: int) -> int:
    lo, hi = support_box(K, initial, n)
    return int((hi - lo).max()) + 1


@dataclass
class Inversion:
    probabilities: dict[tuple[int, ...], float]
    imag_residue: float
    grid: int


def _evaluate_on_grid(K, initial, nodes, n, threads):
    chunks = np.array_split(np.arange(len(nodes)), max(1, min(threads, len(nodes))))
    work = [c for c in chunks if len(c)]
    if threads <= 1 or len(work) == 1:
        parts = [characteristic_function_batch(K, initial, nodes[c], n) for c in work]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: characteristic_function_batch(K, initial, nodes[c], n), work))
    return np.concatenate(parts)


def invert(K: KrausFamily, initial: LatticeState, n: int, grid: MomentumGrid | int,
           threads: int = 1) -> Inversion:
    """Position distribution at time n from p^(n) on the grid.

    The integrand is a trigonometric polynomial in q, so the uniform rule is
    exact once N exceeds the support width; smaller grids are refused.
    """
    if isinstance(grid, int):
        grid = MomentumGrid(K.lattice, grid)
    N, d = grid.N, K.lattice.d
    need = required_grid(K, initial, n)
    if N < need:
        raise AliasingError(N, need)
    values = _evaluate_on_grid(K, initial, grid.nodes, n, threads).reshape((N,) * d)
    # p_x = N^{-d} sum_q e^{i q.x} p^(Theta q)
    p = np.fft.ifftn(values)
    lo, hi = support_box(K, initial, n)
    out: dict[tuple[int, ...], float] = {}
    residue = 0.0
    for x in itertools.product(*(range(int(a), int(b) + 1) for a, b in zip(lo, hi))):
        val = p[tuple(int(c) % N for c in x)]
        residue = max(residue, abs(val.imag))
        if abs(val.real) > K.tol.prune:
            out[x] = float(val.real)
    if residue > K.tol.imag_residue:
        raise InversionError(f"imaginary residue {residue:.2e} exceeds {K.tol.imag_residue:g}")
    return Inversion(out, residue, N)


def scaled_cf_limit_probe(K: KrausFamily, initial: LatticeState, t, n: int) -> complex:
    """p^(n)(-t / sqrt(n)), i.e. E exp(i <t, X_n / sqrt(n)>)."""
    if n < 1:
        raise ValueError("n must be positive")
    return characteristic_function(K, initial, -np.asarray(t, float) / np.sqrt(n), n)


def scaled_cf_limit_probe_batch(K: KrausFamily, initial: LatticeState, ts, n: int) -> np.ndarray:
    ts = np.atleast_2d(np.asarray(ts, float))
    return characteristic_function_batch(K, initial, -ts / np.sqrt(n), n)


# --- two-vertex unitary-pair models ----------------------------------------------------

def phase_matrix(basis: np.ndarray, k) -> np.ndarray:
    """D(k) = diag(e^{-i<k,theta_1>}, e^{-i<k,theta_2>}, 1)."""
    k = np.asarray(k, float)
    return np.diag(np.concatenate([np.exp(-1j * (basis @ k)), [1.0]]))


def pair_recurrence(P_u: np.ndarray, P_v: np.ndarray, D: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals (a_n, b_n) of Y_n's u- and v-blocks: a_n = D P_u b_{n-1}, b_n = D^* P_v a_{n-1}."""
    a = np.ones(P_u.shape[0], dtype=complex)
    b = a.copy()
    Dc = D.conj()
    for _ in range(n):
        a, b = D @ P_u @ b, Dc @ P_v @ a
    return a, b


def grover_power(m: int) -> np.ndarray:
    """P^m for P = (1/9)[[1,4,4],[4,1,4],[4,4,1]]: diagonal (1+2r)/3, off-diagonal (1-r)/3, r=(-1/3)^m."""
    r = (-1.0 / 3.0) ** m
    return np.full((3, 3), (1 - r) / 3) + np.eye(3) * r


def grover_identity_matrices(D: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(A~_n, B~_n) for the pair (U_G, I); Y_n's diagonals are A~_n 1 and B~_n 1."""
    Dc = D.conj()
    if n == 0:
        return np.eye(3, dtype=complex), np.eye(3, dtype=complex)
    if n % 2 == 0:
        Pm = grover_power(n // 2)
        return D @ Pm @ Dc, Pm.astype(complex)
    m = (n + 1) // 2
    return D @ grover_power(m), grover_power(m - 1) @ Dc


def grover_identity_cf(k, n: int, basis: np.ndarray) -> complex:
    """Closed-form p^(n)(k) for (U_G, I) from (I/6 + I/6) at the origin, n even."""
    if n % 2:
        raise ValueError("closed form is stated for even n")
    r = (-1.0 / 3.0) ** (n // 2)
    a, b = basis @ np.asarray(k, float)
    phases = 2 * (np.cos(a) + np.cos(b) + np.cos(b - a))
    return complex(2 / 3 + r / 3 + (1 - r) / 18 * phases)


def _sqrt_diag(D: np.ndarray) -> np.ndarray:
    # principal branch on the phases e^{-i<k,theta_j>/2}
    return np.diag(np.sqrt(np.diag(D)))


def grover_grover_matrices(D: np.ndarray, n: int, half: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(A~_n, B~_n) for (U_G, U_G), built from D^{1/2}; valid as actions on the all-ones vector.

    ``half`` is D^{1/2}; pass it explicitly to fix the branch (defaults to the
    principal square root of each phase).
    """
    P = grover_power(1)
    Dh = _sqrt_diag(D) if half is None else half
    Dhc = Dh.conj()
    Dc = D.conj()
    if n == 0:
        return np.eye(3, dtype=complex), np.eye(3, dtype=complex)
    inner_a = Dh @ P @ Dc @ P @ Dh
    inner_b = Dhc @ P @ D @ P @ Dhc
    if n % 2:
        m = (n - 1) // 2
        A = Dh @ np.linalg.matrix_power(inner_a, m) @ Dh
        B = Dhc @ np.linalg.matrix_power(inner_b, m) @ Dhc
    else:
        m = n // 2
        A = Dh @ np.linalg.matrix_power(inner_a, m - 1) @ Dh @ P @ Dc
        B = Dhc @ np.linalg.matrix_power(inner_b, m - 1) @ Dhc @ P @ D
    return A, B
