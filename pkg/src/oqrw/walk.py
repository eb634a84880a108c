"""Exact evolution of block states on the lattice and quantum-trajectory sampling."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .channel import BlockOperator, KrausFamily
from .lattice import CrystalLattice, embed


DEFAULT_CHUNK = 4096


class TrajectoryCollapse(RuntimeError):
    pass


@dataclass(eq=False)
class LatticeState:
    """Finitely supported state: ``coords[s]`` is a site, ``blocks[u][s]`` its block at vertex u.

    Sites are unique and kept in lexicographic order.
    """

    coords: np.ndarray
    blocks: dict[str, np.ndarray]
    pruned_mass: float = 0.0

    @classmethod
    def point(cls, block: BlockOperator, site: Sequence[int]) -> "LatticeState":
        coords = np.asarray(site, dtype=np.int64).reshape(1, -1)
        return cls(coords, {u: np.asarray(b, dtype=complex)[None] for u, b in block.blocks.items()})

    @classmethod
    def from_support(cls, support: Mapping[tuple, BlockOperator], dims: Mapping[str, int] | None = None,
                     d: int | None = None) -> "LatticeState":
        if not support:
            if dims is None or d is None:
                raise ValueError("empty support needs explicit dims and d")
            return cls(np.zeros((0, d), dtype=np.int64),
                       {u: np.zeros((0, n, n), dtype=complex) for u, n in dims.items()})
        keys = sorted(support)
        first = support[keys[0]]
        coords = np.array(keys, dtype=np.int64).reshape(len(keys), -1)
        blocks = {u: np.stack([support[k].blocks[u] for k in keys]).astype(complex) for u in first.blocks}
        return cls(coords, blocks)

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    @property
    def dims(self) -> dict[str, int]:
        return {u: b.shape[1] for u, b in self.blocks.items()}

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def support(self) -> dict[tuple[int, ...], BlockOperator]:
        return {
            tuple(int(c) for c in x): BlockOperator({u: b[s] for u, b in self.blocks.items()})
            for s, x in enumerate(self.coords)
        }

    def site_traces(self) -> np.ndarray:
        total = np.zeros(len(self))
        for b in self.blocks.values():
            total += np.real(np.trace(b, axis1=1, axis2=2))
        return total

    def total_trace(self) -> float:
        return float(self.site_traces().sum())

    def min_eigenvalue(self) -> float:
        vals = [np.linalg.eigvalsh(b).min() for b in self.blocks.values() if b.size]
        return float(min(vals)) if vals else 0.0


def oqrw_step(K: KrausFamily, s: LatticeState, prune: float | None = None) -> LatticeState:
    """One application of the walk map: rho'_{(x,u)} = sum_{t(e)=u} B(e) rho_{(x - theta(e), o(e))} B(e)^*."""
    prune = K.tol.prune if prune is None else prune
    lat = K.lattice
    if len(s) == 0:
        return LatticeState(s.coords.copy(), {u: b.copy() for u, b in s.blocks.items()}, s.pruned_mass)

    shifted, contribs = [], []
    for a in K.arcs:
        B = K.ops[a.id]
        shifted.append(s.coords + lat.step(a.id))
        contribs.append((a.terminal, B @ s.blocks[a.origin] @ B.conj().T))
    all_coords = np.concatenate(shifted)
    new_coords, inverse = np.unique(all_coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    new_blocks = {u: np.zeros((len(new_coords), n, n), dtype=complex) for u, n in K.dims.items()}
    n_old = len(s)
    for i, (terminal, c) in enumerate(contribs):
        np.add.at(new_blocks[terminal], inverse[i * n_old:(i + 1) * n_old], c)

    out = LatticeState(new_coords, new_blocks, s.pruned_mass)
    if prune > 0:
        out = _prune(out, prune)
    return out


def _prune(s: LatticeState, threshold: float) -> LatticeState:
    traces = s.site_traces()
    keep = traces >= threshold
    if keep.all():
        return s
    before = traces.sum()
    dropped = float(traces[~keep].sum())
    after = before - dropped
    scale = before / after if after > 0 else 1.0
    blocks = {u: b[keep] * scale for u, b in s.blocks.items()}
    return LatticeState(s.coords[keep], blocks, s.pruned_mass + dropped)


def evolve(K: KrausFamily, s: LatticeState, n_steps: int, prune: float | None = None) -> LatticeState:
    for _ in range(n_steps):
        s = oqrw_step(K, s, prune)
    return s


def distribution(s: LatticeState) -> dict[tuple[int, ...], float]:
    traces = s.site_traces()
    return {tuple(int(c) for c in x): float(p) for x, p in zip(s.coords, traces)}


# --- trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    positions: np.ndarray
    final_internal: BlockOperator
    rng_seed: int


@dataclass
class TrajectorySample:
    seed: int
    n_steps: int
    vertices: tuple[str, ...]
    dims: dict[str, int]
    final_positions: np.ndarray
    final_vertex: np.ndarray
    final_states: np.ndarray
    paths: np.ndarray | None = None
    excluded_mass: float = 0.0

    def __len__(self) -> int:
        return self.final_positions.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        if self.paths is None:
            raise ValueError("paths were not recorded; sample with keep_paths=True")
        blocks = {u: np.zeros((n, n), dtype=complex) for u, n in self.dims.items()}
        u = self.vertices[self.final_vertex[i]]
        n = self.dims[u]
        blocks[u] = self.final_states[i, :n, :n].copy()
        return Trajectory(self.paths[i].copy(), BlockOperator(blocks), self.seed)


def trajectory_uniforms(seed: int, index: int, n: int) -> np.ndarray:
    """Uniform stream of trajectory ``index``: Philox keyed by (seed, index)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random(n)


class _Tables:
    def __init__(self, K: KrausFamily):
        lat = K.lattice
        self.vertices = tuple(K.dims)
        vindex = {u: i for i, u in enumerate(self.vertices)}
        m = max(K.dims.values())
        E = len(K.arcs)
        self.ops = np.zeros((E, m, m), dtype=complex)
        for i, a in enumerate(K.arcs):
            B = K.ops[a.id]
            self.ops[i, :B.shape[0], :B.shape[1]] = B
        self.ops_h = np.conj(np.transpose(self.ops, (0, 2, 1)))
        self.gram = self.ops_h @ self.ops
        # Tr(G rho) = <vec(G^T), vec(rho)>; one GEMM for all arcs at once
        self.gram_rows = np.ascontiguousarray(np.transpose(self.gram, (0, 2, 1)).reshape(E, m * m).T)
        self.origin = np.array([vindex[a.origin] for a in K.arcs])
        self.terminal = np.array([vindex[a.terminal] for a in K.arcs])
        self.steps = lat.step_matrix
        self.m = m


def _first_jump(K: KrausFamily, tables: _Tables, rho0: BlockOperator):
    m = tables.m
    probs = np.zeros(len(K.arcs))
    post = np.zeros((len(K.arcs), m, m), dtype=complex)
    for i, a in enumerate(K.arcs):
        B = K.ops[a.id]
        out = B @ rho0.blocks[a.origin] @ B.conj().T
        probs[i] = np.real(np.trace(out))
        post[i, :out.shape[0], :out.shape[1]] = out
    return probs, post


def _choose(p: np.ndarray, u: np.ndarray, step: int, offset: int) -> np.ndarray:
    cum = np.cumsum(p, axis=1)
    total = cum[:, -1]
    dead = total < 1e-15
    if dead.any():
        raise TrajectoryCollapse(
            f"all jump probabilities vanish at step {step} for trajectory {offset + int(np.flatnonzero(dead)[0])}")
    return np.sum(cum <= (u * total)[:, None], axis=1)


def _run_chunk(K, tables, rho0, x0, n_steps, seed, start, stop, keep_paths, min_p):
    T = stop - start
    d = tables.steps.shape[1]
    uniforms = np.stack([trajectory_uniforms(seed, i, n_steps) for i in range(start, stop)])
    pos = np.tile(np.asarray(x0, dtype=np.int64), (T, 1))
    paths = np.zeros((T, n_steps + 1, d), dtype=np.int64) if keep_paths else None
    if keep_paths:
        paths[:, 0] = pos
    excluded = np.zeros(T)

    probs0, post0 = _first_jump(K, tables, rho0)
    excluded += probs0[(probs0 > 0) & (probs0 < min_p)].sum()
    p0 = np.where(probs0 >= min_p, probs0, 0.0)
    idx = _choose(np.broadcast_to(p0, (T, len(p0))), uniforms[:, 0], 0, start)
    rho = post0[idx] / p0[idx][:, None, None]
    vertex = tables.terminal[idx]
    pos += tables.steps[idx]
    if keep_paths:
        paths[:, 1] = pos

    rows = np.arange(T)
    for k in range(1, n_steps):
        p = (rho.reshape(T, -1) @ tables.gram_rows).real
        allowed = tables.origin[None, :] == vertex[:, None]
        small = allowed & (p < min_p)
        excluded += np.where(small & (p > 0), p, 0.0).sum(axis=1)
        p = np.where(allowed & ~small, p, 0.0)
        idx = _choose(p, uniforms[:, k], k, start)
        B = tables.ops[idx]
        rho = B @ rho @ tables.ops_h[idx] / p[rows, idx][:, None, None]
        vertex = tables.terminal[idx]
        pos += tables.steps[idx]
        if keep_paths:
            paths[:, k + 1] = pos
    return pos, vertex, rho, paths, excluded


def sample_trajectories(
    K: KrausFamily,
    initial: tuple[BlockOperator, Sequence[int]],
    n_steps: int,
    n_traj: int,
    seed: int,
    threads: int = 1,
    keep_paths: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
) -> TrajectorySample:
    """Sample ``n_traj`` independent quantum trajectories of ``n_steps`` jumps.

    Trajectory i draws its uniforms from a stream keyed by (seed, i) and chunks
    have fixed boundaries, so the output does not depend on ``threads``.
    """
    rho0, x0 = initial
    tables = _Tables(K)
    m, d = tables.m, K.lattice.d
    if abs(rho0.trace() - 1) > K.tol.trace_tol or not rho0.is_psd():
        raise ValueError("initial internal state must be positive with unit trace")
    if n_steps == 0:
        pos = np.tile(np.asarray(x0, dtype=np.int64), (n_traj, 1))
        paths = pos[:, None, :].copy() if keep_paths else None
        dense = np.zeros((n_traj, m, m), dtype=complex)
        return TrajectorySample(seed, 0, tables.vertices, dict(K.dims), pos, np.zeros(n_traj, dtype=int), dense, paths)

    bounds = [(s, min(s + chunk_size, n_traj)) for s in range(0, n_traj, chunk_size)]
    min_p = K.tol.min_jump_probability

    def work(b):
        return _run_chunk(K, tables, rho0, x0, n_steps, seed, b[0], b[1], keep_paths, min_p)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]

    pos = np.concatenate([r[0] for r in results]) if results else np.zeros((0, d), dtype=np.int64)
    vertex = np.concatenate([r[1] for r in results]) if results else np.zeros(0, dtype=int)
    rho = np.concatenate([r[2] for r in results]) if results else np.zeros((0, m, m), dtype=complex)
    paths = np.concatenate([r[3] for r in results]) if keep_paths and results else None
    excluded = float(np.concatenate([r[4] for r in results]).mean()) if results else 0.0
    return TrajectorySample(seed, n_steps, tables.vertices, dict(K.dims), pos, vertex, rho, paths, excluded)


@dataclass
class CltStatistic:
    samples: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    mean_se: np.ndarray
    covariance_se: np.ndarray


def clt_statistic(sample: TrajectorySample, lattice: CrystalLattice, m, n_steps: int | None = None) -> CltStatistic:
    """Samples of (X_n - n m)/sqrt(n) with X_n embedded in R^d, and their moments.

    ``covariance_se`` is the Gaussian-theory standard error of each covariance
    entry, sqrt((S_ii S_jj + S_ij^2) / N).
    """
    n = sample.n_steps if n_steps is None else n_steps
    X = embed(lattice, sample.final_positions)
    N, d = X.shape
    if n == 0:
        Z = np.zeros_like(X)
    else:
        Z = (X - n * np.asarray(m, dtype=float)) / np.sqrt(n)
    mean = Z.mean(axis=0)
    cov = np.atleast_2d(np.cov(Z, rowvar=False, ddof=1)) if N > 1 else np.zeros((d, d))
    diag = np.diag(cov)
    mean_se = np.sqrt(diag / N) if N else np.zeros(d)
    cov_se = np.sqrt((np.outer(diag, diag) + cov ** 2) / N) if N else np.zeros((d, d))
    return CltStatistic(Z, mean, cov, mean_se, cov_se)
