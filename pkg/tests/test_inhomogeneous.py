import math

import numpy as np
import pytest

from spinsqueeze.core import homogeneous_system, quadrature_variance, two_mode_quadrature, vacuum_state
from spinsqueeze.dynamics import build_drift_diffusion, variance_trajectory
from spinsqueeze.inhomogeneous import (
    EQUAL_WIDTH,
    FWHM_PER_SIGMA,
    BinnedEnsemble,
    FrequencyDistribution,
    build_system,
    collective_quadrature,
    collective_weights,
    discretize,
)


def _binned_variance(width, delta_c, t_end, dt, bins=51, scheme="mass", g_a=4.5, g_b=5.0):
    dist = FrequencyDistribution(width, bins=bins)
    ba, bb = discretize(dist, g_a, scheme), discretize(dist, g_b, scheme)
    system = build_system(ba, bb, 1.0, delta_c)
    q = collective_quadrature(ba, bb, system, 0.0)
    return variance_trajectory(build_drift_diffusion(system), vacuum_state(system), q, t_end, dt)


def _homogeneous_variance(delta_c, t_end, dt, g_a=4.5, g_b=5.0):
    s = homogeneous_system(g_a, g_b, 1.0, delta_c)
    return variance_trajectory(build_drift_diffusion(s), vacuum_state(s), two_mode_quadrature(s, "a", "b", 0.0), t_end, dt)


def test_distribution_validation():
    with pytest.raises(ValueError):
        FrequencyDistribution(-1.0)
    with pytest.raises(ValueError, match="odd"):
        FrequencyDistribution(1.0, bins=50)
    with pytest.raises(ValueError):
        FrequencyDistribution(1.0, cutoff=0.0)
    assert FrequencyDistribution(FWHM_PER_SIGMA, fwhm=True).sigma == pytest.approx(1.0)
    assert FWHM_PER_SIGMA == pytest.approx(2.35482, abs=1e-5)


@pytest.mark.parametrize("dist", [FrequencyDistribution(0.0), FrequencyDistribution(2.0, bins=1)])
def test_single_bin_cases(dist):
    b = discretize(dist, 3.0)
    assert len(b) == 1
    assert b.centers[0] == 0 and b.couplings[0] == 3.0


@pytest.mark.parametrize("scheme", ["mass", EQUAL_WIDTH])
@pytest.mark.parametrize("bins", [3, 51, 101])
def test_bins_preserve_collective_coupling_and_symmetry(scheme, bins):
    b = discretize(FrequencyDistribution(0.7, bins=bins), 5.0, scheme)
    assert np.sum(b.couplings**2) == pytest.approx(25.0, rel=1e-12)
    np.testing.assert_array_equal(b.centers, -b.centers[::-1])
    np.testing.assert_array_equal(b.weights, b.weights[::-1])
    assert np.all(np.diff(b.centers) > 0)
    assert np.all(np.abs(b.centers) <= 4 * 0.7)
    # zero mean, second moment close to the truncated Gaussian
    assert np.sum(b.weights * b.centers) == pytest.approx(0.0, abs=1e-14)


def test_equal_mass_bins_have_equal_weights():
    b = discretize(FrequencyDistribution(1.0, bins=51), 1.0)
    np.testing.assert_allclose(b.weights, 1 / 51, rtol=1e-12)
    second = np.sum(b.weights * b.centers**2)
    assert 0.9 < second < 1.0


def test_unknown_scheme_and_negative_coupling():
    with pytest.raises(ValueError):
        discretize(FrequencyDistribution(1.0), 1.0, "random")
    with pytest.raises(ValueError):
        discretize(FrequencyDistribution(1.0), -1.0)


def test_ensemble_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        BinnedEnsemble(np.zeros(2), np.array([0.5, 0.6]), np.ones(2), 1.0)


def test_system_layout():
    ba = discretize(FrequencyDistribution(1.0, bins=3), 1.0)
    bb = discretize(FrequencyDistribution(1.0, bins=5), 2.0)
    s = build_system(ba, bb, 1.0, 0.5)
    assert s.labels == ("a0", "a1", "a2", "b0", "b1", "b2", "b3", "b4", "c")
    assert s.cavity_index == 8
    assert [m.detuning for m in s.modes[3:8]] == list(bb.centers)


def test_quadrature_mismatch_rejected():
    ba = discretize(FrequencyDistribution(1.0, bins=3), 1.0)
    bb = discretize(FrequencyDistribution(1.0, bins=5), 2.0)
    s = build_system(ba, bb, 1.0, 0.5)
    with pytest.raises(ValueError):
        collective_quadrature(bb, ba, s, 0.0)
    other = discretize(FrequencyDistribution(1.0, bins=3), 7.0)
    with pytest.raises(ValueError, match="match"):
        collective_quadrature(other, bb, s, 0.0)


def test_collective_weights():
    b = discretize(FrequencyDistribution(1.0, bins=5), 2.0)
    assert np.linalg.norm(collective_weights(b)) == pytest.approx(1.0)
    np.testing.assert_allclose(collective_weights(b, "uniform"), 1 / math.sqrt(5))
    with pytest.raises(ValueError):
        collective_weights(b, "other")


@pytest.mark.parametrize("theta", [0.0, 0.9, math.pi / 2])
def test_vacuum_collective_variance(theta):
    ba = discretize(FrequencyDistribution(1.0, bins=7), 1.0)
    bb = discretize(FrequencyDistribution(1.0, bins=7), 2.0)
    s = build_system(ba, bb, 1.0, 0.5)
    for w in ("coupling", "uniform"):
        q = collective_quadrature(ba, bb, s, theta, w)
        assert quadrature_variance(vacuum_state(s), q) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("delta_c", [0.5, 75.0])
def test_width_zero_reduces_to_homogeneous(delta_c):
    t, v_h = _homogeneous_variance(delta_c, 5.0, 0.01)
    _, v_0 = _binned_variance(0.0, delta_c, 5.0, 0.01)
    np.testing.assert_allclose(v_0, v_h, atol=1e-8)
    # many degenerate bins carry the same collective dynamics
    _, v_tiny = _binned_variance(1e-12, delta_c, 5.0, 0.01, bins=11)
    np.testing.assert_allclose(v_tiny, v_h, atol=1e-8)


def test_narrow_width_close_to_homogeneous():
    _, v_h = _homogeneous_variance(0.5, 10.0, 0.01)
    _, v = _binned_variance(0.05, 0.5, 10.0, 0.01)
    assert abs(v.min() - v_h.min()) / v_h.min() < 0.1


@pytest.mark.slow
@pytest.mark.parametrize("delta_c, t_end, dt", [(0.5, 10.0, 0.01), (75.0, 100.0, 0.05)])
def test_minimum_ordering_and_refinement(delta_c, t_end, dt):
    mins = []
    for w in (0.0, 0.05, 0.5, 5.0):
        _, v = _binned_variance(w, delta_c, t_end, dt)
        mins.append(v.min())
        if w > 0:
            _, v101 = _binned_variance(w, delta_c, t_end, dt, bins=101)
            assert abs(v101.min() - v.min()) < 1e-3
    assert all(b >= a - 1e-12 for a, b in zip(mins, mins[1:]))
    if delta_c == 75.0:
        assert mins[-1] > 0.2


def test_equal_width_bins_revive():
    # commensurate detunings rephase at 2 pi / spacing
    dist = FrequencyDistribution(5.0, bins=11)
    b = discretize(dist, 5.0, EQUAL_WIDTH)
    spacing = b.centers[1] - b.centers[0]
    assert np.allclose(np.diff(b.centers), spacing)
    b_mass = discretize(dist, 5.0)
    assert not np.allclose(np.diff(b_mass.centers), np.diff(b_mass.centers)[0])
