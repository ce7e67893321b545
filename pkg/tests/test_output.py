import math

import numpy as np
import pytest

from spinsqueeze.core import (
    INVERTED,
    CovarianceState,
    homogeneous_system,
    mean_excitation,
    two_mode_quadrature,
    vacuum_state,
)
from spinsqueeze.dynamics import build_drift_diffusion, classify_eigenvalues
from spinsqueeze.output import (
    ModeFunction,
    OutputKernels,
    OutputStagePlan,
    alpha_beta,
    augmented_variance,
    candidate_mode,
    emission_factors,
    mode_moments,
    mode_variance,
    omega_rate,
    optimize_mode,
    output_kernels,
    pi_pulse_transform,
    stage1_state,
    stage2_trajectory,
    trapezoid_weights,
)

FIG9 = (1.125, 1.25, 1.0, 0.001)


@pytest.fixture(scope="module")
def fig9():
    plan = OutputStagePlan.from_system(homogeneous_system(*FIG9))
    sig = stage1_state(plan)
    kern = output_kernels(plan, sig)
    traj = stage2_trajectory(plan, sig)
    modes = {
        "exp_decay": candidate_mode("exp_decay", plan),
        "sqrt_photon": candidate_mode("sqrt_photon", plan, traj),
    }
    return plan, sig, kern, traj, modes


def test_pi_pulse_reinverts_only_inverted_modes():
    s = homogeneous_system(*FIG9)
    s2 = pi_pulse_transform(s)
    assert not s2.spin_indices(INVERTED)
    assert [m.coupling for m in s2.modes] == [m.coupling for m in s.modes]
    with pytest.raises(ValueError):
        pi_pulse_transform(s2)


def test_stage2_is_hurwitz():
    for g_a, g_b, k, d in [FIG9, (3, 5, 1, 75), (6, 5, 1, 10)]:
        dd = build_drift_diffusion(pi_pulse_transform(homogeneous_system(g_a, g_b, k, d)))
        assert classify_eigenvalues(np.linalg.eigvals(dd.drift)) in ("damped", "marginal")


def test_plan_validation():
    s = homogeneous_system(*FIG9)
    with pytest.raises(ValueError, match="horizon"):
        OutputStagePlan.from_system(s, t_pulse=1.0, horizon=4.0)
    with pytest.raises(ValueError, match="grid"):
        OutputStagePlan.from_system(s, t_pulse=1.0, n_grid=500)
    with pytest.raises(ValueError, match="kappa"):
        OutputStagePlan.from_system(homogeneous_system(1, 2, 0.0, 0.0), t_pulse=1.0)
    with pytest.raises(ValueError, match="passive"):
        OutputStagePlan(s, 1.0, s, 10.0)


def test_kernels_at_zero():
    a, b = alpha_beta(*FIG9, 0.0)
    assert a == 0
    assert -b == 2.0  # exactly 2 kappa
    a, b = alpha_beta(2.0, 3.0, 0.5, 4.0, 0.0)
    assert a == 0 and -b == 1.0


def test_kernels_decay():
    for p in [FIG9, (3.0, 4.0, 1.0, 0.1), (1.0, 2.0, 2.0, 0.5)]:
        a, b = alpha_beta(*p, 50.0 / p[2])
        assert abs(a) < 1e-8 and abs(b) < 1e-8


def test_omega_rate_branch_free():
    om = omega_rate(*FIG9)
    assert om**2 == pytest.approx((1 + 0.001j) ** 2 - 4 * (1.125**2 + 1.25**2))
    # degenerate point sinh(x)/x -> 1
    g = math.sqrt(1 / 8)
    a, _ = alpha_beta(g, g, 1.0, 0.0, np.array([0.5, 1.0]))
    assert np.all(np.isfinite(a))


def test_closed_form_matches_propagator(fig9):
    plan = fig9[0]
    np.testing.assert_allclose(
        emission_factors(plan, "closed"), emission_factors(plan, "propagator"), atol=1e-10
    )


def test_kernels_are_consistent(fig9):
    plan, _, kern, _, _ = fig9
    dense = OutputKernels.from_dense(kern.times, kern.K_anom, kern.K_norm)
    assert np.linalg.eigvalsh(dense.K_norm)[0] > -1e-10
    np.testing.assert_allclose(kern.K_anom, kern.K_anom.T, atol=1e-14)


def test_from_dense_rejects_bad_kernels():
    t = np.linspace(0, 10, 1000)
    z = np.zeros((1000, 1000))
    bad = z.copy()
    bad[0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        OutputKernels.from_dense(t, bad, z)
    with pytest.raises(ValueError, match="semidefinite"):
        OutputKernels.from_dense(t, z, -np.eye(1000))


def test_emitted_photons_balance_total_excitation(fig9):
    # quanta leave only through the mirror; the dark mode keeps the rest
    plan, sig, kern, traj, _ = fig9
    n0 = sum(mean_excitation(sig, i) for i in range(3))
    n_end = sum(mean_excitation(traj.final, i) for i in range(3))
    assert kern.emitted_photons() == pytest.approx(n0 - n_end, rel=1e-4)
    flux = kern.photon_flux()
    np.testing.assert_allclose(flux, 2 * plan.stage2.kappa * traj.excitation(2), rtol=1e-8, atol=1e-12)


def test_zero_kernels_give_vacuum():
    t = np.linspace(0, 10, 1000)
    z = np.zeros((1000, 1000))
    kern = OutputKernels.from_dense(t, z, z)
    u = ModeFunction.normalized(t, np.exp(-t / 2))
    assert mode_variance(kern, u, 0.3) == pytest.approx(0.25)
    opt = optimize_mode(kern)
    assert opt.variance == 0.25 and opt.degenerate


def test_decoupled_exp_mode_is_vacuum():
    s = homogeneous_system(0.0, 0.0, 1.0, 0.0)
    plan = OutputStagePlan.from_system(s, t_pulse=3.0)
    kern = output_kernels(plan, stage1_state(plan))
    u = candidate_mode("exp_decay", plan)
    for theta in (0.0, 1.0, math.pi / 2):
        assert mode_variance(kern, u, theta) == pytest.approx(0.25, abs=1e-14)
    assert optimize_mode(kern).degenerate


def test_exp_decay_normalization():
    plan = OutputStagePlan.from_system(homogeneous_system(*FIG9), t_pulse=1.0, horizon=30.0, n_grid=6001)
    u = candidate_mode("exp_decay", plan)
    assert u.samples[0].real == pytest.approx(math.sqrt(plan.stage2.kappa), rel=1e-5)
    assert np.sum(trapezoid_weights(u.times) * np.abs(u.samples) ** 2) == pytest.approx(1, abs=1e-10)


def test_sqrt_photon_of_bare_cavity():
    s = homogeneous_system(0.0, 0.0, 1.0, 0.0)
    plan = OutputStagePlan.from_system(s, t_pulse=0.0, horizon=30.0, n_grid=6001)
    sig = np.eye(6) * 0.5
    sig[4, 4] = sig[5, 5] = 2.5
    traj = stage2_trajectory(plan, CovarianceState(sig))
    u = candidate_mode("sqrt_photon", plan, traj)
    t = plan.times
    np.testing.assert_allclose(u.samples.real, math.sqrt(2) * np.exp(-t), rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError, match="zero"):
        candidate_mode("sqrt_photon", plan, np.zeros_like(t))
    with pytest.raises(ValueError):
        candidate_mode("gaussian", plan)


def test_mode_function_contract(tmp_path):
    t = np.linspace(0, 5, 1001)
    with pytest.raises(ValueError, match="unit norm"):
        ModeFunction(t, np.ones_like(t))
    with pytest.raises(ValueError, match="zero"):
        ModeFunction.normalized(t, np.zeros_like(t))
    with pytest.raises(ValueError, match="uniform"):
        ModeFunction.normalized(t**2, np.ones_like(t))
    u = ModeFunction.normalized(t, np.exp(-(t - 2) ** 2) * np.exp(1j * t))
    k = np.argmax(np.abs(u.samples))
    assert u.samples[k].imag == 0 and u.samples[k].real > 0
    path = tmp_path / "u.csv"
    u.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,u"
    back = ModeFunction.from_csv(path)
    np.testing.assert_array_equal(back.times, u.times)
    np.testing.assert_allclose(back.samples, u.samples, rtol=0, atol=1e-15)


def test_phase_and_theta_are_redundant(fig9):
    _, _, kern, _, modes = fig9
    u = modes["exp_decay"]
    rotated = ModeFunction(u.times, u.samples)  # same function
    a, n = mode_moments(kern, u)
    for chi in (0.3, 1.1):
        # u -> e^{i chi} u is the same as theta -> theta + chi
        y = kern.weights * u.samples * np.exp(1j * chi)
        z = kern.factors.T @ y
        a2 = z @ kern.anomalous_moments @ z
        assert a2 == pytest.approx(a * np.exp(2j * chi))
    assert mode_variance(kern, rotated, 0.2) == mode_variance(kern, u, 0.2)


def test_optimizer_routes_agree(fig9):
    _, _, kern, _, _ = fig9
    low = optimize_mode(kern, "lowrank")
    dense_k = OutputKernels.from_dense(kern.times, kern.K_anom, kern.K_norm)
    dense = optimize_mode(dense_k, "dense")
    assert low.variance == pytest.approx(dense.variance, abs=1e-9)
    overlap = abs(np.sum(kern.weights * low.mode.samples.conj() * dense.mode.samples))
    assert overlap == pytest.approx(1.0, abs=1e-6)
    assert mode_variance(kern, low.mode, low.theta) == pytest.approx(low.variance, abs=1e-12)


def test_optimized_mode_beats_candidates(fig9):
    _, _, kern, _, modes = fig9
    opt = optimize_mode(kern)
    v_sqrt = mode_variance(kern, modes["sqrt_photon"], math.pi / 2)
    v_exp = mode_variance(kern, modes["exp_decay"], math.pi / 2)
    assert opt.variance <= v_sqrt <= v_exp
    assert opt.variance < 0.25
    # best quadrature of each candidate is still above the optimum
    for u in modes.values():
        a, n = mode_moments(kern, u)
        assert 0.25 + 0.5 * n - 0.5 * abs(a) >= opt.variance - 1e-12


def test_uncertainty_of_optimized_mode(fig9):
    _, _, kern, _, _ = fig9
    opt = optimize_mode(kern)
    v1 = mode_variance(kern, opt.mode, opt.theta)
    v2 = mode_variance(kern, opt.mode, opt.theta + math.pi / 2)
    assert v1 * v2 >= 1 / 16 - 1e-10


def test_grid_refinement_is_converged():
    s = homogeneous_system(*FIG9)
    v = []
    for n in (2000, 4000):
        plan = OutputStagePlan.from_system(s, t_pulse=14.5, n_grid=n)
        v.append(optimize_mode(output_kernels(plan, stage1_state(plan))).variance)
    assert abs(v[0] - v[1]) < 1e-4


def test_augmented_route_agrees(fig9):
    plan, sig, kern, _, modes = fig9
    u = modes["exp_decay"]
    half = math.pi / 2
    assert augmented_variance(plan, sig, u, half) == pytest.approx(mode_variance(kern, u, half), abs=1e-4)
    # the anti-squeezed quadrature is large, compare it relatively
    assert augmented_variance(plan, sig, u, 0.0) == pytest.approx(mode_variance(kern, u, 0.0), rel=1e-4)


def test_augmented_vacuum_level():
    s = homogeneous_system(0.0, 0.0, 1.0, 0.0)
    plan = OutputStagePlan.from_system(s, t_pulse=0.0, n_grid=1000)
    u = candidate_mode("exp_decay", plan)
    assert augmented_variance(plan, vacuum_state(s), u, 0.7) == pytest.approx(0.25, abs=1e-5)


def test_augmented_step_bound(fig9):
    plan, sig, _, _, modes = fig9
    with pytest.raises(ValueError, match="step bound"):
        augmented_variance(plan, sig, modes["exp_decay"], 0.0, dt=1.0)


def test_pulse_default_is_spin_minimum(fig9):
    plan, sig, *_ = fig9
    assert plan.t_pulse == pytest.approx(14.512, abs=0.02)
    q = two_mode_quadrature(plan.stage1, "a", "b", 0.0)
    from spinsqueeze.core import quadrature_variance

    assert quadrature_variance(sig, q) < 0.25
