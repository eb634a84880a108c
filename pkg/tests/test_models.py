import json

import numpy as np
import pytest

from oqrw.asymptotics import mean_vector
from oqrw.channel import invariant_state, stochastic_matrices, validate_kraus
from oqrw.lattice import validate_lattice
from oqrw.models import (
    BUNDLED,
    ModelError,
    bundled_model,
    from_json_dict,
    grover_unitary,
    hadamard3_unitary,
    hexagonal_model,
    integer_lattice_model,
    load_model,
    save_model,
    to_json_dict,
)


def test_grover_unitary_entries():
    UG = grover_unitary()
    assert np.array_equal(UG * 3, np.array([[-1, 2, 2], [2, -1, 2], [2, 2, -1]], dtype=float))
    assert np.allclose(UG @ UG.T, np.eye(3), atol=1e-15)


def test_hadamard_unitary_entries():
    UH = hadamard3_unitary()
    r = 1 / np.sqrt(2)
    assert np.array_equal(UH[2], [0.0, 0.0, 1.0])
    assert np.allclose(UH[:2, :2], [[r, -r], [r, r]], atol=1e-16)
    assert np.allclose(UH @ UH.T, np.eye(3), atol=1e-15)


@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_bundled_models_validate(name):
    model = bundled_model(name)
    assert validate_lattice(model.lattice) == []
    assert validate_kraus(model.kraus) == []


def test_unknown_bundled_model():
    with pytest.raises(ModelError, match="unknown bundled model"):
        bundled_model("nope")


def test_hexagonal_model_rejects_non_unitary():
    with pytest.raises(ModelError, match="not unitary"):
        hexagonal_model(grover_unitary() * 1.01, grover_unitary())


def test_hexagonal_model_examples(gg, gh, hh):
    assert invariant_state(gg.kraus).state.allclose(
        invariant_state(gh.kraus).state, 1e-10)
    assert invariant_state(gh.kraus).unique
    assert not invariant_state(hh.kraus).unique


def test_hexagonal_default_initial_state(gg):
    (site, block), = gg.initial.support.items()
    assert site == (0, 0)
    assert np.allclose(block.blocks["u"], np.eye(3) / 6) and np.allclose(block.blocks["v"], np.eye(3) / 6)


def test_unitary_pair_column_slices(gh):
    U, V = gh.unitary_pair
    for i in range(3):
        B = gh.kraus.ops[f"e{i + 1}"]
        assert np.allclose(B[:, i], U[:, i]) and np.count_nonzero(np.delete(B, i, axis=1)) == 0
        C = gh.kraus.ops[f"e{i + 1}bar"]
        assert np.allclose(C[:, i], V[:, i])


def test_stochastic_matrices_match_unitaries(gh):
    U, V = gh.unitary_pair
    Pu, Pv = stochastic_matrices(gh.kraus, "u", "v")
    assert np.allclose(Pu, np.abs(U.T) ** 2, atol=1e-15)
    assert np.allclose(Pv, np.abs(V.T) ** 2, atol=1e-15)


@pytest.mark.parametrize("p", [0.2, 0.5, 0.7])
def test_integer_model_biased_mean(p):
    model = integer_lattice_model(1, {(0, 1): np.sqrt(p) * np.eye(1), (0, -1): np.sqrt(1 - p) * np.eye(1)})
    assert np.allclose(model.lattice.Theta, np.eye(1))
    rho = invariant_state(model.kraus).state
    assert mean_vector(model.kraus, rho)[0] == pytest.approx(2 * p - 1, abs=1e-14)


def test_integer_model_isotropic_mean_zero():
    laws = {(a, s): 0.5 * np.eye(2) for a in range(2) for s in (1, -1)}
    model = integer_lattice_model(2, laws)
    rho = invariant_state(model.kraus).state
    assert np.allclose(mean_vector(model.kraus, rho), 0, atol=1e-14)


def test_integer_model_diagonal_family_is_valid():
    p, q = 0.3, 0.8
    model = integer_lattice_model(1, {(0, 1): np.diag([np.sqrt(p), np.sqrt(q)]),
                                      (0, -1): np.diag([np.sqrt(1 - p), np.sqrt(1 - q)])})
    assert validate_kraus(model.kraus) == []


def test_integer_model_completeness_failure():
    with pytest.raises(ModelError, match="defect"):
        integer_lattice_model(1, {(0, 1): 0.5 * np.eye(1), (0, -1): 0.5 * np.eye(1)})


@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_save_load_round_trip(name, tmp_path):
    model = bundled_model(name)
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    assert again == model
    for arc, B in model.kraus.ops.items():
        assert np.array_equal(again.kraus.ops[arc], B)


def test_explicit_round_trip(tmp_path):
    model = integer_lattice_model(2, {(0, 1): 0.5 * np.eye(2), (0, -1): 0.5 * np.eye(2),
                                      (1, 1): 0.5 * np.eye(2), (1, -1): 0.5j * np.eye(2)})
    save_model(model, tmp_path / "z2.json")
    assert load_model(tmp_path / "z2.json") == model


def z1_document():
    s, t = np.sqrt(0.7), np.sqrt(0.3)
    return {
        "version": 1,
        "name": "z1",
        "lattice": {
            "vertices": ["o"],
            "arcs": [
                {"id": "+x1", "from": "o", "to": "o", "reverse": "-x1", "theta": [1.0]},
                {"id": "-x1", "from": "o", "to": "o", "reverse": "+x1", "theta": [-1.0]},
            ],
            "basis": [[1.0]],
        },
        "kraus": {"mode": "explicit", "dims": {"o": 1},
                  "operators": {"+x1": [[[s, 0.0]]], "-x1": [[[t, 0.0]]]}},
        "initial": {"site": [0], "blocks": {"o": [[[1.0, 0.0]]]}},
    }


def test_hand_written_file_matches_constructor(tmp_path):
    path = tmp_path / "z1.json"
    path.write_text(json.dumps(z1_document()))
    loaded = load_model(path)
    built = integer_lattice_model(1, {(0, 1): np.sqrt(0.7) * np.eye(1), (0, -1): np.sqrt(0.3) * np.eye(1)}, name="z1")
    assert to_json_dict(loaded)["kraus"] == to_json_dict(built)["kraus"]
    assert to_json_dict(loaded)["lattice"] == to_json_dict(built)["lattice"]
    assert to_json_dict(loaded)["initial"] == to_json_dict(built)["initial"]


def test_missing_reverse_arc_named():
    doc = z1_document()
    doc["lattice"]["arcs"] = doc["lattice"]["arcs"][:1]
    del doc["kraus"]["operators"]["-x1"]
    with pytest.raises(ModelError) as exc:
        from_json_dict(doc)
    assert "+x1" in str(exc.value) and exc.value.pointer == "/lattice/arcs/0/reverse"


def test_unknown_field_rejected_with_pointer():
    doc = z1_document()
    doc["lattice"]["arcs"][1]["colour"] = "red"
    with pytest.raises(ModelError) as exc:
        from_json_dict(doc)
    assert exc.value.pointer == "/lattice/arcs/1"


def test_version_required():
    doc = z1_document()
    del doc["version"]
    with pytest.raises(ModelError, match="version"):
        from_json_dict(doc)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelError, match="invalid JSON"):
        load_model(path)


def test_incomplete_family_loads_for_validation():
    doc = z1_document()
    doc["kraus"]["operators"]["+x1"] = [[[0.1, 0.0]]]
    model = from_json_dict(doc)
    assert [v.kind for v in validate_kraus(model.kraus)] == ["completeness"]
