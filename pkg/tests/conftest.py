import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oqrw.channel import BlockOperator
from oqrw.models import bundled_model, hexagonal_model, integer_lattice_model

settings.register_profile("oqrw", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("oqrw")

SQ2 = np.sqrt(2.0)


def haar_unitary(rng, n):
    Z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / SQ2
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def normalised_family(raw):
    """Rescale operators A_e so that sum A_e^* A_e = I: B_e = A_e S^{-1/2}."""
    S = sum(A.conj().T @ A for A in raw)
    w, v = np.linalg.eigh(S)
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    return [A @ inv_sqrt for A in raw]


def random_z2_model(rng, dim=2):
    raw = [rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)) for _ in range(4)]
    B = normalised_family(raw)
    laws = {(0, 1): B[0], (0, -1): B[1], (1, 1): B[2], (1, -1): B[3]}
    return integer_lattice_model(2, laws, name="random-z2")


def random_hexagonal_model(rng):
    return hexagonal_model(haar_unitary(rng, 3), haar_unitary(rng, 3), "random-hexagonal")


def random_state(rng, dims, support=None):
    """Random density matrix on the direct sum, optionally restricted to some vertices."""
    blocks = {}
    for u, n in dims.items():
        if support is not None and u not in support:
            blocks[u] = np.zeros((n, n), dtype=complex)
            continue
        G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        blocks[u] = G @ G.conj().T
    X = BlockOperator(blocks)
    return X / X.trace().real


def random_hermitian(rng, dims):
    blocks = {}
    for u, n in dims.items():
        G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        blocks[u] = (G + G.conj().T) / 2
    return BlockOperator(blocks)


def sixth():
    return BlockOperator({"u": np.eye(3) / 6, "v": np.eye(3) / 6})


@pytest.fixture(scope="session")
def gg():
    return bundled_model("grover-hexagonal")


@pytest.fixture(scope="session")
def gi():
    return bundled_model("ug-identity")


@pytest.fixture(scope="session")
def gh():
    return bundled_model("ug-uh")


@pytest.fixture(scope="session")
def hh():
    return bundled_model("uh-uh")


def dist_max_diff(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return max(abs(a.get(x, 0.0) - b.get(x, 0.0)) for x in keys)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
