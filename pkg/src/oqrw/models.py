"""Model constructors for the hexagonal and integer-lattice walks, plus JSON I/O.

Model file schema (version 1)::

    {
      "version": 1,
      "name": "grover-hexagonal",
      "metadata": {...},                       # optional, free-form strings
      "lattice": {"vertices": ["u", "v"],
                  "arcs": [{"id": "e1", "from": "u", "to": "v", "reverse": "e1bar",
                            "theta": [0.707, 0.707]}, ...],
                  "basis": [[...], [...]]},
      "kraus": {"mode": "explicit", "dims": {"u": 3, ...},
                "operators": {"e1": [[[re, im], ...], ...], ...}}
             | {"mode": "unitary_pair", "U": <3x3 complex>, "V": <3x3 complex>},
      "initial": {"site": [0, 0], "blocks": {"u": <complex matrix>, ...}}
    }

Complex numbers are always ``[re, im]`` pairs.  In ``unitary_pair`` mode the
lattice must have two vertices; the i-th arc listed from the first vertex to
the second carries column i of U and the i-th reverse arc carries column i of V.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .channel import BlockOperator, KrausFamily, validate_kraus
from .lattice import CrystalLattice, validate_lattice
from .walk import LatticeState

SCHEMA_VERSION = 1

SQRT1_2 = np.sqrt(0.5)
HEXAGONAL_BASIS = np.array([[SQRT1_2, SQRT1_2], [-SQRT1_2, SQRT1_2]])


class ModelError(ValueError):
    """Schema or semantic error in a model definition; ``pointer`` is a JSON pointer."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


@dataclass(eq=False)
class ModelSpec:
    name: str
    lattice: CrystalLattice
    kraus: KrausFamily
    initial: LatticeState
    unitary_pair: tuple[np.ndarray, np.ndarray] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return to_json_dict(self) == to_json_dict(other)


def grover_unitary() -> np.ndarray:
    return np.array([[-1, 2, 2], [2, -1, 2], [2, 2, -1]], dtype=float) / 3


def hadamard3_unitary() -> np.ndarray:
    return np.array([[SQRT1_2, -SQRT1_2, 0], [SQRT1_2, SQRT1_2, 0], [0, 0, 1]], dtype=float)


def hexagonal_lattice() -> CrystalLattice:
    t1, t2 = HEXAGONAL_BASIS
    zero = np.zeros(2)
    arcs, theta = [], {}
    for i, vec in enumerate((t1, t2, zero), start=1):
        arcs.append((f"e{i}", "u", "v", f"e{i}bar"))
        theta[f"e{i}"] = vec
    for i, vec in enumerate((t1, t2, zero), start=1):
        arcs.append((f"e{i}bar", "v", "u", f"e{i}"))
        theta[f"e{i}bar"] = -vec
    return CrystalLattice.build(["u", "v"], arcs, theta, HEXAGONAL_BASIS)


def _unitary_pair_ops(lat: CrystalLattice, U: np.ndarray, V: np.ndarray) -> dict[str, np.ndarray]:
    u, v = lat.vertices
    forward = [a for a in lat.base.arcs if a.origin == u and a.terminal == v]
    backward = [a for a in lat.base.arcs if a.origin == v and a.terminal == u]
    n = U.shape[0]
    if len(forward) != n or len(backward) != n:
        raise ModelError(f"unitary_pair needs {n} arcs in each direction", "/lattice/arcs")
    ops = {}
    for i, a in enumerate(forward):
        B = np.zeros((n, n), dtype=complex)
        B[:, i] = U[:, i]
        ops[a.id] = B
    for i, a in enumerate(backward):
        B = np.zeros((n, n), dtype=complex)
        B[:, i] = V[:, i]
        ops[a.id] = B
    return ops


def _check_unitary(M: np.ndarray, label: str, tol: float = 1e-10) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ModelError(f"{label} must be a square matrix", f"/kraus/{label}")
    defect = np.linalg.norm(M.conj().T @ M - np.eye(M.shape[0]))
    if defect > tol:
        raise ModelError(f"{label} is not unitary (defect {defect:.2e})", f"/kraus/{label}")
    return M


def hexagonal_model(U, V, name: str = "hexagonal", initial: LatticeState | None = None) -> ModelSpec:
    """Two-vertex hexagonal walk: B(e_i) carries column i of U (u -> v), B(ebar_i) column i of V."""
    U = _check_unitary(U, "U")
    V = _check_unitary(V, "V")
    lat = hexagonal_lattice()
    K = KrausFamily(lat, {"u": 3, "v": 3}, _unitary_pair_ops(lat, U, V))
    if initial is None:
        initial = LatticeState.point(BlockOperator({"u": np.eye(3) / 6, "v": np.eye(3) / 6}), (0, 0))
    return ModelSpec(name, lat, K, initial, unitary_pair=(U, V), metadata={"family": "hexagonal unitary pair"})


def integer_lattice_model(
    d: int,
    step_laws: Mapping[tuple[int, int], np.ndarray],
    name: str | None = None,
    initial: BlockOperator | None = None,
) -> ModelSpec:
    """Walk on Z^d with one base vertex and arcs +e_i / -e_i.

    ``step_laws`` maps ``(axis, sign)`` (axis 0-based, sign +1/-1) to the Kraus
    operator of that move; missing moves get a zero operator.
    """
    if not step_laws:
        raise ModelError("no step operators given", "/kraus/operators")
    dim = np.asarray(next(iter(step_laws.values()))).shape[0]
    arcs, theta, ops = [], {}, {}
    for axis in range(d):
        plus, minus = f"+x{axis + 1}", f"-x{axis + 1}"
        arcs += [(plus, "o", "o", minus), (minus, "o", "o", plus)]
        unit = np.eye(d)[axis]
        theta[plus], theta[minus] = unit, -unit
        ops[plus] = np.asarray(step_laws.get((axis, 1), np.zeros((dim, dim))), dtype=complex)
        ops[minus] = np.asarray(step_laws.get((axis, -1), np.zeros((dim, dim))), dtype=complex)
    unknown = set(step_laws) - {(a, s) for a in range(d) for s in (1, -1)}
    if unknown:
        raise ModelError(f"unknown moves {sorted(unknown)}", "/kraus/operators")
    lat = CrystalLattice.build(["o"], arcs, theta, np.eye(d))
    K = KrausFamily(lat, {"o": dim}, ops)
    bad = validate_kraus(K)
    if bad:
        raise ModelError(bad[0].message + f" (defect {bad[0].value})", "/kraus/operators")
    if initial is None:
        initial = BlockOperator({"o": np.eye(dim) / dim})
    state = LatticeState.point(initial, (0,) * d)
    return ModelSpec(name or f"z{d}", lat, K, state, metadata={"family": "integer lattice"})


def biased_walk_model(p: float, dim: int = 1) -> ModelSpec:
    """Classical +-1 walk on Z: right with probability p."""
    I = np.eye(dim)
    return integer_lattice_model(1, {(0, 1): np.sqrt(p) * I, (0, -1): np.sqrt(1 - p) * I}, name=f"biased-{p:g}")


def hadamard_family_state(lam: float) -> BlockOperator:
    """Invariant state of the (U_H, U_H) walk: both blocks (1/2) diag(lam/2, lam/2, 1 - lam), lam in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    block = 0.5 * np.diag([lam / 2, lam / 2, 1 - lam]).astype(complex)
    return BlockOperator({"u": block, "v": block.copy()})


BUNDLED = {
    "grover-hexagonal": lambda: hexagonal_model(grover_unitary(), grover_unitary(), "grover-hexagonal"),
    "ug-uh": lambda: hexagonal_model(grover_unitary(), hadamard3_unitary(), "ug-uh"),
    "uh-uh": lambda: hexagonal_model(hadamard3_unitary(), hadamard3_unitary(), "uh-uh"),
    "ug-identity": lambda: hexagonal_model(grover_unitary(), np.eye(3), "ug-identity"),
}


def bundled_model(name: str) -> ModelSpec:
    try:
        return BUNDLED[name]()
    except KeyError:
        raise ModelError(f"unknown bundled model {name!r}; choose from {sorted(BUNDLED)}") from None


# --- JSON ---------------------------------------------------------------------

_COMPLEX = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_CMATRIX = {"type": "array", "items": {"type": "array", "items": _COMPLEX}}
_REAL_VEC = {"type": "array", "items": {"type": "number"}}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "name", "lattice", "kraus", "initial"],
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "metadata": {"type": "object", "additionalProperties": {"type": "string"}},
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["vertices", "arcs", "basis"],
            "properties": {
                "vertices": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "arcs": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["id", "from", "to", "reverse", "theta"],
                        "properties": {
                            "id": {"type": "string"},
                            "from": {"type": "string"},
                            "to": {"type": "string"},
                            "reverse": {"type": "string"},
                            "theta": _REAL_VEC,
                        },
                    },
                },
                "basis": {"type": "array", "items": _REAL_VEC, "minItems": 1},
            },
        },
        "kraus": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "dims", "operators"],
                    "properties": {
                        "mode": {"const": "explicit"},
                        "dims": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
                        "operators": {"type": "object", "additionalProperties": _CMATRIX},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "U", "V"],
                    "properties": {"mode": {"const": "unitary_pair"}, "U": _CMATRIX, "V": _CMATRIX},
                },
            ]
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["site", "blocks"],
            "properties": {
                "site": {"type": "array", "items": {"type": "integer"}},
                "blocks": {"type": "object", "additionalProperties": _CMATRIX},
            },
        },
    },
}


def _cm_to_json(M: np.ndarray) -> list:
    M = np.asarray(M, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def _cm_from_json(rows: Sequence, pointer: str) -> np.ndarray:
    try:
        arr = np.array(rows, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError
    except ValueError:
        raise ModelError("expected a rectangular matrix of [re, im] pairs", pointer) from None
    return arr[..., 0] + 1j * arr[..., 1]


def to_json_dict(spec: ModelSpec) -> dict:
    lat = spec.lattice
    arcs = [
        {"id": a.id, "from": a.origin, "to": a.terminal, "reverse": a.reverse,
         "theta": [float(x) for x in lat.theta[a.id]]}
        for a in lat.base.arcs
    ]
    if spec.unitary_pair is not None:
        U, V = spec.unitary_pair
        kraus = {"mode": "unitary_pair", "U": _cm_to_json(U), "V": _cm_to_json(V)}
    else:
        kraus = {"mode": "explicit", "dims": dict(spec.kraus.dims),
                 "operators": {k: _cm_to_json(v) for k, v in spec.kraus.ops.items()}}
    support = spec.initial.support
    if len(support) != 1:
        raise ModelError("model files hold single-site initial states", "/initial")
    (site, block), = support.items()
    out = {
        "version": SCHEMA_VERSION,
        "name": spec.name,
        "lattice": {"vertices": list(lat.vertices), "arcs": arcs, "basis": lat.basis.tolist()},
        "kraus": kraus,
        "initial": {"site": [int(x) for x in site], "blocks": {u: _cm_to_json(b) for u, b in block.blocks.items()}},
    }
    if spec.metadata:
        out["metadata"] = dict(spec.metadata)
    return out


def from_json_dict(data: dict) -> ModelSpec:
    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ModelError(err.message, pointer)

    ldef = data["lattice"]
    arc_ids = {a["id"] for a in ldef["arcs"]}
    for i, a in enumerate(ldef["arcs"]):
        if a["reverse"] not in arc_ids:
            raise ModelError(f"arc {a['id']!r} names reverse {a['reverse']!r}, which is not defined",
                             f"/lattice/arcs/{i}/reverse")
    lat = CrystalLattice.build(
        ldef["vertices"],
        [(a["id"], a["from"], a["to"], a["reverse"]) for a in ldef["arcs"]],
        {a["id"]: a["theta"] for a in ldef["arcs"]},
        ldef["basis"],
    )
    errs = validate_lattice(lat)
    if errs:
        raise ModelError(f"{errs[0].subject}: {errs[0].message}", "/lattice")

    kdef = data["kraus"]
    unitary_pair = None
    if kdef["mode"] == "unitary_pair":
        if len(lat.vertices) != 2:
            raise ModelError("unitary_pair mode needs exactly two vertices", "/lattice/vertices")
        U = _check_unitary(_cm_from_json(kdef["U"], "/kraus/U"), "U")
        V = _check_unitary(_cm_from_json(kdef["V"], "/kraus/V"), "V")
        unitary_pair = (U, V)
        ops = _unitary_pair_ops(lat, U, V)
        dims = {u: U.shape[0] for u in lat.vertices}
    else:
        dims = dict(kdef["dims"])
        ops = {}
        for arc_id, rows in kdef["operators"].items():
            if arc_id not in arc_ids:
                raise ModelError(f"operator for unknown arc {arc_id!r}", f"/kraus/operators/{arc_id}")
            ops[arc_id] = _cm_from_json(rows, f"/kraus/operators/{arc_id}")
        for arc_id in sorted(arc_ids - set(ops)):
            raise ModelError(f"missing operator for arc {arc_id!r}", f"/kraus/operators/{arc_id}")
    K = KrausFamily(lat, dims, ops)
    errs = validate_kraus(K)
    if errs and errs[0].kind != "completeness":
        raise ModelError(f"{errs[0].subject}: {errs[0].message}", "/kraus")

    idef = data["initial"]
    if len(idef["site"]) != lat.d:
        raise ModelError(f"site must have {lat.d} coordinates", "/initial/site")
    blocks = {}
    for u in lat.vertices:
        if u not in idef["blocks"]:
            raise ModelError(f"missing initial block for vertex {u!r}", f"/initial/blocks/{u}")
        b = _cm_from_json(idef["blocks"][u], f"/initial/blocks/{u}")
        if b.shape != (dims[u], dims[u]):
            raise ModelError(f"block shape {b.shape} does not match dimension {dims[u]}", f"/initial/blocks/{u}")
        blocks[u] = b
    extra = set(idef["blocks"]) - set(lat.vertices)
    if extra:
        raise ModelError(f"initial blocks for unknown vertices {sorted(extra)}", "/initial/blocks")
    initial = LatticeState.point(BlockOperator(blocks), tuple(idef["site"]))
    return ModelSpec(data["name"], lat, K, initial, unitary_pair, dict(data.get("metadata", {})))


def save_model(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(spec), indent=2) + "\n")


def load_model(path) -> ModelSpec:
    """Load a model file. Completeness failures are left for ``validate_kraus`` to report."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    return from_json_dict(data)
