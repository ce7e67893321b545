import math

import numpy as np
import pytest

from spinsqueeze.core import (
    CovarianceState,
    ModeDescriptor,
    ModeSystem,
    QuadratureSpec,
    homogeneous_system,
    hp_validity,
    is_physical,
    ladder_moments,
    mean_excitation,
    quadrature_variance,
    symplectic_eigenvalues,
    two_mode_quadrature,
    vacuum_state,
)


@pytest.fixture
def system():
    return homogeneous_system(4.5, 5.0, 1.0, 0.0)


def test_vacuum_three_modes(system):
    s = vacuum_state(system)
    np.testing.assert_array_equal(s.sigma, 0.5 * np.eye(6))
    assert s.time == 0.0


def test_vacuum_single_mode():
    one = ModeSystem((ModeDescriptor("c"),), 0, 1.0)
    np.testing.assert_array_equal(vacuum_state(one).sigma, 0.5 * np.eye(2))


def test_state_is_immutable(system):
    s = vacuum_state(system)
    with pytest.raises(ValueError):
        s.sigma[0, 0] = 3.0


def test_rejects_asymmetric_sigma():
    m = 0.5 * np.eye(2)
    m[0, 1] = 1e-6
    with pytest.raises(ValueError, match="symmetric"):
        CovarianceState(m)


def test_mode_system_validation():
    with pytest.raises(ValueError, match="unique"):
        ModeSystem((ModeDescriptor("a"), ModeDescriptor("a")), 0, 1.0)
    with pytest.raises(ValueError, match="kappa"):
        homogeneous_system(1, 1, -1.0, 0)
    with pytest.raises(ValueError, match="coupling"):
        ModeDescriptor("a", "inverted", -1.0)
    with pytest.raises(ValueError, match="kind"):
        ModeDescriptor("a", "sideways")
    with pytest.raises(ValueError, match="finite"):
        ModeDescriptor("a", detuning=math.inf)


def test_ordering_sets_layout(system):
    assert system.labels == ("a", "b", "c")
    assert system.index("c") == 2
    with pytest.raises(KeyError):
        system.index("z")


@pytest.mark.parametrize(
    "theta, x, p",
    [(0.0, 0.5, 0.0), (math.pi / 2, 0.0, -0.5), (math.pi, -0.5, 0.0)],
)
def test_two_mode_quadrature_coefficients(system, theta, x, p):
    v = two_mode_quadrature(system, "a", "b", theta).coefficients
    np.testing.assert_allclose(v, [x, p, x, p, 0, 0], atol=1e-16)


def test_two_mode_quadrature_errors(system):
    with pytest.raises(KeyError):
        two_mode_quadrature(system, "a", "q", 0.0)
    with pytest.raises(ValueError):
        two_mode_quadrature(system, "a", "a", 0.0)


def test_quadrature_spec_needs_nonzero():
    with pytest.raises(ValueError):
        QuadratureSpec(np.zeros(4))


@pytest.mark.parametrize("theta", np.linspace(0, 2 * math.pi, 7))
def test_vacuum_quadrature_variance(system, theta):
    q = two_mode_quadrature(system, "a", "b", theta)
    assert quadrature_variance(vacuum_state(system), q) == pytest.approx(0.25, abs=1e-15)


def test_dimension_mismatch(system):
    q = QuadratureSpec(np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="dimension"):
        quadrature_variance(vacuum_state(system), q)


def test_mean_excitation():
    assert mean_excitation(CovarianceState(np.eye(2)), 0) == pytest.approx(0.5)
    sys3 = homogeneous_system(1, 2, 1, 0)
    assert mean_excitation(vacuum_state(sys3), "a", sys3) == 0.0
    with pytest.raises(KeyError):
        mean_excitation(vacuum_state(sys3), "zz", sys3)


def test_symplectic_eigenvalues():
    np.testing.assert_allclose(symplectic_eigenvalues(vacuum_state(3)), [0.5] * 3)
    np.testing.assert_allclose(symplectic_eigenvalues(CovarianceState(np.eye(2))), [1.0])
    with pytest.raises(ValueError):
        symplectic_eigenvalues(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_two_mode_squeezed_state_is_pure_and_squeezed():
    # exact two-mode squeezed vacuum with r = 0.7
    r = 0.7
    ch, sh = math.cosh(2 * r) / 2, math.sinh(2 * r) / 2
    s = np.array(
        [[ch, 0, sh, 0], [0, ch, 0, -sh], [sh, 0, ch, 0], [0, -sh, 0, ch]]
    )
    st = CovarianceState(s)
    np.testing.assert_allclose(symplectic_eigenvalues(st), [0.5, 0.5], atol=1e-12)
    assert is_physical(st)
    sysab = ModeSystem((ModeDescriptor("a", "inverted"), ModeDescriptor("b")), 1, 1.0)
    var = quadrature_variance(st, two_mode_quadrature(sysab, "a", "b", 0.0))
    assert var == pytest.approx(0.25 * math.exp(2 * r))
    var_p = quadrature_variance(st, two_mode_quadrature(sysab, "a", "b", math.pi / 2))
    assert var_p == pytest.approx(0.25 * math.exp(-2 * r))


def test_unphysical_state_detected():
    assert not is_physical(CovarianceState(0.2 * np.eye(2)))


def test_ladder_moments_of_thermal_mode():
    mm, mdm = ladder_moments(np.eye(2))
    assert mm[0, 0] == pytest.approx(0.0)
    assert mdm[0, 0] == pytest.approx(0.5)


def test_hp_validity_examples():
    vac = vacuum_state(1)
    rep = hp_validity(vac, {0: 10**6})
    assert rep.ratios[0] == 0 and not rep.flagged
    hot = CovarianceState(10.5 * np.eye(2))
    assert mean_excitation(hot, 0) == pytest.approx(10.0)
    rep = hp_validity(hot, {0: 100})
    assert rep.ratios[0] == pytest.approx(0.1) and rep.flagged
    rep = hp_validity(hot, {0: 10**6})
    assert rep.ratios[0] == pytest.approx(1e-5) and not rep.flagged
    with pytest.raises(ValueError):
        hp_validity(hot, {0: 0})
