"""Crystal lattices: a finite base graph whose arcs carry translation vectors.

Lattice points are stored as integer coordinates in the basis
``theta_1, ..., theta_d``; embedding into R^d only happens on output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import Tolerances, get_tolerances


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Arc:
    id: str
    origin: str
    terminal: str
    reverse: str


@dataclass(frozen=True)
class Violation:
    """One failed check. Violations are data; validators never raise."""

    kind: str
    subject: str
    message: str
    value: float | None = None
    severity: str = "error"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "subject": self.subject, "message": self.message, "severity": self.severity}
        if self.value is not None:
            out["value"] = self.value
        return out


@dataclass(frozen=True)
class BaseGraph:
    vertices: tuple[str, ...]
    arcs: tuple[Arc, ...]

    @cached_property
    def _index(self) -> dict[str, Arc]:
        return {a.id: a for a in self.arcs}

    def arc(self, arc_id: str) -> Arc:
        try:
            return self._index[arc_id]
        except KeyError:
            raise LatticeError(f"unknown arc {arc_id!r}") from None

    @property
    def arc_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.arcs)

    def out_arcs(self, u: str) -> list[Arc]:
        return [a for a in self.arcs if a.origin == u]

    def in_arcs(self, u: str) -> list[Arc]:
        return [a for a in self.arcs if a.terminal == u]


@dataclass(frozen=True, eq=False)
class CrystalLattice:
    """Base graph plus per-arc translations ``theta`` and the lattice basis.

    ``basis[i]`` is the i-th generating vector theta_i in R^d.  ``Theta`` is
    derived (inverse transpose of the column matrix of the basis) and never
    supplied.
    """

    base: BaseGraph
    theta: Mapping[str, np.ndarray]
    basis: np.ndarray
    tol: Tolerances = field(default_factory=get_tolerances, repr=False)

    @classmethod
    def build(
        cls,
        vertices: Sequence[str],
        arcs: Iterable[tuple[str, str, str, str]],
        theta: Mapping[str, Sequence[float]],
        basis: Sequence[Sequence[float]],
    ) -> "CrystalLattice":
        """Construct from plain data; ``arcs`` holds (id, origin, terminal, reverse) tuples."""
        base = BaseGraph(tuple(vertices), tuple(Arc(*a) for a in arcs))
        th = {k: np.asarray(v, dtype=float) for k, v in theta.items()}
        return cls(base, th, np.atleast_2d(np.asarray(basis, dtype=float)))

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def vertices(self) -> tuple[str, ...]:
        return self.base.vertices

    @cached_property
    def Theta(self) -> np.ndarray:
        # columns of basis.T are theta_i, so ([theta_1..theta_d]^{-1})^T == inv(basis)
        return np.linalg.inv(self.basis)

    @cached_property
    def _steps(self) -> dict[str, np.ndarray]:
        out = {}
        for arc_id, vec in self.theta.items():
            coords = self.Theta.T @ vec
            out[arc_id] = np.rint(coords).astype(np.int64)
        return out

    def step(self, arc_id: str) -> np.ndarray:
        """Integer basis coordinates of theta(e)."""
        return self._steps[arc_id].copy()

    def theta_vec(self, arc_id: str) -> np.ndarray:
        """theta(e) in R^d, rebuilt from its snapped integer coordinates."""
        return self.basis.T @ self._steps[arc_id]

    @cached_property
    def step_matrix(self) -> np.ndarray:
        """(n_arcs, d) integer steps in ``base.arcs`` order."""
        return np.array([self._steps[a.id] for a in self.base.arcs], dtype=np.int64).reshape(-1, self.d)

    @cached_property
    def theta_matrix(self) -> np.ndarray:
        """(n_arcs, d) embedded translation vectors in ``base.arcs`` order."""
        return self.step_matrix @ self.basis

    @property
    def max_step(self) -> int:
        return int(np.abs(self.step_matrix).max(initial=0))


def validate_lattice(lat: CrystalLattice, include_warnings: bool = False) -> list[Violation]:
    tol = lat.tol
    out: list[Violation] = []
    base = lat.base
    vset = set(base.vertices)
    if len(vset) != len(base.vertices):
        out.append(Violation("duplicate_vertex", ",".join(base.vertices), "vertex ids must be unique"))
    ids = [a.id for a in base.arcs]
    if len(set(ids)) != len(ids):
        dups = sorted({i for i in ids if ids.count(i) > 1})
        out.append(Violation("duplicate_arc", ",".join(dups), "arc ids must be unique"))
    index = {a.id: a for a in base.arcs}

    for a in base.arcs:
        for end in (a.origin, a.terminal):
            if end not in vset:
                out.append(Violation("unknown_vertex", a.id, f"arc endpoint {end!r} is not a vertex"))
        rev = index.get(a.reverse)
        if rev is None:
            out.append(Violation("missing_reverse", a.id, f"reverse arc {a.reverse!r} does not exist"))
            continue
        if rev.reverse != a.id:
            out.append(Violation("involution", a.id, f"reverse of {a.reverse!r} is {rev.reverse!r}, not {a.id!r}"))
        if rev.origin != a.terminal or rev.terminal != a.origin:
            out.append(Violation("involution", a.id, f"reverse arc {rev.id!r} does not run {a.terminal}->{a.origin}"))

    for u in base.vertices:
        if not base.out_arcs(u):
            out.append(Violation("out_degree", u, "vertex has no outgoing arc"))

    d = lat.basis.shape[0]
    if lat.basis.shape != (d, d):
        out.append(Violation("basis_shape", "basis", f"basis must be square, got {lat.basis.shape}"))
        return out
    sv = np.linalg.svd(lat.basis, compute_uv=False)
    if sv[-1] <= tol.basis_rank * max(sv[0], 1.0):
        out.append(Violation("basis_rank", "basis", "basis vectors are linearly dependent", float(sv[-1])))
        return out

    position = {a.id: i for i, a in enumerate(base.arcs)}
    for a in base.arcs:
        vec = lat.theta.get(a.id)
        if vec is None:
            out.append(Violation("missing_theta", a.id, "no translation vector"))
            continue
        if vec.shape != (d,):
            out.append(Violation("theta_shape", a.id, f"translation has shape {vec.shape}, expected ({d},)"))
            continue
        coords = lat.Theta.T @ vec
        defect = float(np.max(np.abs(coords - np.rint(coords)), initial=0.0))
        if defect > tol.integrality:
            out.append(Violation("integrality", a.id, "translation is not an integer combination of the basis", defect))
        rev_vec = lat.theta.get(a.reverse)
        if a.reverse == a.id and np.any(vec != 0):
            out.append(Violation("antisymmetry", a.id, "self-reverse arc must have zero translation",
                                 float(np.max(np.abs(vec)))))
        # one report per pair, naming the later-declared arc
        later = position.get(a.reverse, -1) > position[a.id]
        if later and rev_vec is not None and rev_vec.shape == vec.shape and not np.array_equal(rev_vec, -vec):
            out.append(Violation("antisymmetry", a.reverse, f"theta({a.reverse}) != -theta({a.id})",
                                 float(np.max(np.abs(rev_vec + vec)))))
    for i, basis_vec in enumerate(lat.basis):
        coords = lat.Theta.T @ basis_vec
        if not np.allclose(coords, np.eye(d)[i], atol=tol.integrality):
            out.append(Violation("basis_identity", f"theta_{i + 1}", "Theta does not invert the basis"))

    if include_warnings and not any(v.kind in {"theta_shape", "missing_theta"} for v in out):
        out.extend(_independence_warnings(lat))
    return out


def _independence_warnings(lat: CrystalLattice) -> list[Violation]:
    """Pairs of non-reverse arcs with parallel nonzero translations."""
    arcs = [a for a in lat.base.arcs if np.any(lat.theta[a.id] != 0)]
    warnings = []
    for i, a in enumerate(arcs):
        for b in arcs[i + 1:]:
            if b.id == a.reverse:
                continue
            pair = np.vstack([lat.theta[a.id], lat.theta[b.id]])
            if np.linalg.matrix_rank(pair, tol=1e-12) < 2:
                warnings.append(Violation("independence", f"{a.id},{b.id}",
                                          "translations of distinct non-reverse arcs are parallel", severity="warning"))
    return warnings


def embed(lat: CrystalLattice, x) -> np.ndarray:
    """Map integer coordinates to R^d: sum_i x_i theta_i. Accepts (d,) or (n, d)."""
    return np.asarray(x, dtype=float) @ lat.basis


def arc_step(lat: CrystalLattice, x, arc_id: str) -> np.ndarray:
    return np.asarray(x, dtype=np.int64) + lat.step(arc_id)
