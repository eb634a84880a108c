from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_hexagonal_model, random_state, random_z2_model, sixth
from oqrw.channel import (
    BlockOperator,
    ConvergenceError,
    KrausFamily,
    StructureError,
    cesaro_limit,
    cesaro_mean,
    cp_adjoint_apply,
    cp_apply,
    fixed_space_dimension,
    invariant_state,
    is_irreducible,
    stochastic_matrices,
    validate_kraus,
)
from oqrw.config import get_tolerances
from oqrw.models import biased_walk_model, hadamard_family_state

GG_PRODUCT = [[F(33, 81), F(24, 81), F(24, 81)], [F(24, 81), F(33, 81), F(24, 81)], [F(24, 81), F(24, 81), F(33, 81)]]
GH_PRODUCT = [[F(5, 18), F(5, 18), F(8, 18)], [F(5, 18), F(5, 18), F(8, 18)], [F(8, 18), F(8, 18), F(2, 18)]]
HH_PRODUCT = [[F(1, 2), F(1, 2), F(0)], [F(1, 2), F(1, 2), F(0)], [F(0), F(0), F(1)]]

# squared moduli |U_ij|^2 as exact rationals
UG_SQ = [[F(1, 9), F(4, 9), F(4, 9)], [F(4, 9), F(1, 9), F(4, 9)], [F(4, 9), F(4, 9), F(1, 9)]]
UH_SQ = [[F(1, 2), F(1, 2), F(0)], [F(1, 2), F(1, 2), F(0)], [F(0), F(0), F(1)]]


def exact_product(Usq, Vsq):
    Pu = [[Usq[j][i] for j in range(3)] for i in range(3)]
    Pv = [[Vsq[j][i] for j in range(3)] for i in range(3)]
    return [[sum(Pu[i][k] * Pv[k][j] for k in range(3)) for j in range(3)] for i in range(3)]


def halved(model, arc="e1"):
    ops = dict(model.kraus.ops)
    ops[arc] = ops[arc] / 2
    return KrausFamily(model.lattice, model.kraus.dims, ops)


def test_validate_kraus_examples(gg, gi):
    assert validate_kraus(gg.kraus) == []
    assert validate_kraus(gi.kraus) == []


def test_halved_operator_reports_vertex_and_defect(gg):
    K = halved(gg)
    bad = validate_kraus(K)
    assert len(bad) == 1 and bad[0].kind == "completeness" and bad[0].subject == "u"
    # independent defect: B(e1)^*B(e1) = |u_1><u_1|-ish rank one with norm 1; halving removes 3/4 of it
    B = gg.kraus.ops["e1"]
    expected = np.linalg.norm(0.75 * B.conj().T @ B)
    assert bad[0].value == pytest.approx(expected, abs=1e-14)


def test_cp_apply_examples(gg, hh):
    rho = sixth()
    assert cp_apply(gg.kraus, rho).allclose(rho, 1e-14)
    zero = BlockOperator.zeros(gg.kraus.dims)
    assert cp_apply(gg.kraus, zero).norm() == 0.0
    r = hadamard_family_state(0.4)
    assert cp_apply(hh.kraus, r).allclose(r, 1e-14)


def test_cp_apply_shape_error_names_vertex(gg):
    bad = BlockOperator({"u": np.eye(3) / 6, "v": np.eye(2) / 4})
    with pytest.raises(ValueError, match="'v'"):
        cp_apply(gg.kraus, bad)
    with pytest.raises(ValueError, match="'v'"):
        cp_adjoint_apply(gg.kraus, bad)


@pytest.mark.parametrize("name", ["gg", "gh"])
def test_unique_invariant_state(name, request):
    model = request.getfixturevalue(name)
    rep = invariant_state(model.kraus)
    assert rep.unique and rep.eigenvalue_one_multiplicity == 1
    assert rep.state.allclose(sixth(), 1e-10)
    assert rep.residual <= 1e-10


def test_non_unique_invariant_state(hh):
    rep = invariant_state(hh.kraus)
    assert not rep.unique and rep.eigenvalue_one_multiplicity >= 2
    assert rep.method == "cesaro"
    s = rep.state
    assert s.is_psd() and s.has_unit_trace() and s.is_hermitian()
    assert (cp_apply(hh.kraus, s) - s).norm() <= 1e-10
    assert fixed_space_dimension(hh.kraus) == rep.eigenvalue_one_multiplicity


@pytest.mark.parametrize("lam", [0.0, 1 / 3, 2 / 3, 1.0])
def test_hadamard_family_invariant(hh, lam):
    r = hadamard_family_state(lam)
    assert (cp_apply(hh.kraus, r) - r).norm() <= 1e-12
    assert r.trace() == pytest.approx(1.0)


@pytest.mark.parametrize("name, Usq, Vsq, expected", [
    ("gg", UG_SQ, UG_SQ, GG_PRODUCT),
    ("gh", UG_SQ, UH_SQ, GH_PRODUCT),
    ("hh", UH_SQ, UH_SQ, HH_PRODUCT),
])
def test_stochastic_products(name, Usq, Vsq, expected, request):
    assert exact_product(Usq, Vsq) == expected
    Pu, Pv = stochastic_matrices(request.getfixturevalue(name).kraus, "u", "v")
    assert np.max(np.abs(Pu @ Pv - np.array(expected, dtype=float))) <= 1e-14


def test_stochastic_entries_are_squared_moduli(gh):
    U, V = gh.unitary_pair
    Pu, Pv = stochastic_matrices(gh.kraus, "u", "v")
    for i in range(3):
        for j in range(3):
            assert Pu[i, j] == pytest.approx(abs(U[j, i]) ** 2, abs=1e-15)
            assert Pv[i, j] == pytest.approx(abs(V[j, i]) ** 2, abs=1e-15)


def test_stochastic_matrices_structure_error():
    with pytest.raises(StructureError):
        stochastic_matrices(biased_walk_model(0.3).kraus, "o", "o")


def test_is_irreducible_examples():
    assert is_irreducible(np.array(GG_PRODUCT, dtype=float))
    assert not is_irreducible(np.array(HH_PRODUCT, dtype=float))
    assert not is_irreducible(np.eye(3))
    with pytest.raises(ValueError):
        is_irreducible(np.array([[0.5, 0.4], [0.5, 0.5]]))


def test_uniqueness_dichotomy(gg, gh, hh):
    for model in (gg, gh, hh):
        Pu, Pv = stochastic_matrices(model.kraus, "u", "v")
        irreducible = is_irreducible(Pu @ Pv) and is_irreducible(Pv @ Pu)
        assert invariant_state(model.kraus).unique == irreducible


def test_cesaro_mean_is_exact_average(gg):
    rho0 = BlockOperator({"u": np.diag([1.0, 0, 0]).astype(complex), "v": np.zeros((3, 3), complex)})
    brute, cur = BlockOperator.zeros(gg.kraus.dims), rho0
    for _ in range(16):
        brute = brute + cur
        cur = cp_apply(gg.kraus, cur)
    assert cesaro_mean(gg.kraus, rho0, 4).allclose(brute / 16, 1e-13)


def test_cesaro_budget_failure_raises(gg):
    tight = get_tolerances().__class__(cesaro_max_doublings=1, cesaro_tol=1e-30)
    K = KrausFamily(gg.lattice, gg.kraus.dims, gg.kraus.ops, tight)
    rho0 = BlockOperator({"u": np.diag([1.0, 0, 0]).astype(complex), "v": np.zeros((3, 3), complex)})
    with pytest.raises(ConvergenceError) as exc:
        cesaro_limit(K, rho0)
    assert exc.value.residual > 0


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=40)
@given(seeds, st.sampled_from(["z2", "hex"]))
def test_trace_and_positivity_preserved(seed, kind):
    rng = np.random.default_rng(seed)
    model = random_z2_model(rng, dim=int(rng.integers(1, 4))) if kind == "z2" else random_hexagonal_model(rng)
    K = model.kraus
    rho = random_state(rng, K.dims)
    out = cp_apply(K, rho)
    assert abs(out.trace() - rho.trace()) <= 1e-12
    assert out.min_eigenvalue() >= -1e-12


@settings(max_examples=40)
@given(seeds)
def test_adjoint_duality(seed):
    rng = np.random.default_rng(seed)
    K = random_hexagonal_model(rng).kraus
    rho = random_state(rng, K.dims)
    X = BlockOperator({u: rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) for u, n in K.dims.items()})
    lhs = (X @ cp_apply(K, rho)).trace()
    rhs = (cp_adjoint_apply(K, X) @ rho).trace()
    assert abs(lhs - rhs) <= 1e-12
    assert cp_adjoint_apply(K, BlockOperator.identity(K.dims)).allclose(BlockOperator.identity(K.dims), 1e-12)


@settings(max_examples=25)
@given(seeds, st.sampled_from(["z2", "hex"]))
def test_invariant_state_matches_cesaro_oracle(seed, kind):
    rng = np.random.default_rng(seed)
    model = random_z2_model(rng, dim=2) if kind == "z2" else random_hexagonal_model(rng)
    K = model.kraus
    rep = invariant_state(K)
    assert rep.state.is_psd() and rep.state.has_unit_trace()
    assert (cp_apply(K, rep.state) - rep.state).norm() <= 1e-10
    if rep.unique:
        oracle, _ = cesaro_limit(K)
        assert rep.state.allclose(oracle, 1e-8)
