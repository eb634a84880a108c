import pytest

from oqrw.config import PROFILE_ENV, get_tolerances


def test_default_profile_values():
    tol = get_tolerances("default")
    assert tol.kraus_completeness == 1e-10
    assert tol.integrality == 1e-9
    assert tol.prune == 1e-15
    assert tol.operator_residual == 1e-9


def test_profile_from_environment(monkeypatch):
    monkeypatch.setenv(PROFILE_ENV, "strict")
    strict = get_tolerances()
    assert strict.kraus_completeness < get_tolerances("default").kraus_completeness
    monkeypatch.setenv(PROFILE_ENV, "bogus")
    with pytest.raises(ValueError, match="bogus"):
        get_tolerances()
