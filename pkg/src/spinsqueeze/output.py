"""Emission of the stored two-mode squeezing into the cavity output field.

After the squeezing stage a pi-pulse re-inverts ensemble ``a``, so both
ensembles couple to the cavity as beam splitters and their correlations leak
out through the mirror.  The output field is

    c_out(t) = sum_k phi_k(t) m_k(0) + (vacuum input noise),

with ``phi_k(t) = sqrt(2 kappa) [exp(P t)]_{c,k}`` for the annihilation-only
drift ``P`` of the passive stage.  For vacuum input the noise carries no
normally ordered correlations, so the kernels below are bilinear forms of the
stage-1 ladder moments; the input commutator contributes the constant ``1/4``
of the vacuum quadrature variance.

A temporal mode ``c_u = int u(t) c_out(t) dt`` is sampled on a uniform grid and
integrated with trapezoidal weights throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from .core import (
    INVERTED,
    REGULAR,
    CovarianceState,
    ModeSystem,
    ladder_moments,
    two_mode_quadrature,
    vacuum_state,
)
from .dynamics import (
    STEP_FACTOR,
    Trajectory,
    build_drift_diffusion,
    evolve,
    ladder_coefficients,
    ladder_noise_to_quadrature,
    ladder_to_quadrature,
    step_bound,
    variance_trajectory,
)

MIN_HORIZON_KAPPA = 5.0
MIN_GRID = 1000
DEFAULT_GRID = 2000
DEFAULT_HORIZON_KAPPA = 10.0
DEFAULT_SCAN_KAPPA = 20.0


def pi_pulse_transform(system: ModeSystem) -> ModeSystem:
    """Re-mark every inverted mode as regular; couplings and detunings are kept."""
    if not system.spin_indices(INVERTED):
        raise ValueError("pi-pulse needs at least one inverted mode")
    modes = [
        type(m)(m.label, REGULAR, m.coupling, m.detuning) if m.kind == INVERTED else m
        for m in system.modes
    ]
    return system.with_modes(modes)


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        raise ValueError("a quadrature grid needs at least two points")
    w = np.empty_like(t)
    d = np.diff(t)
    w[0], w[-1] = d[0] / 2, d[-1] / 2
    w[1:-1] = (d[:-1] + d[1:]) / 2
    return w


def _check_uniform(times: np.ndarray):
    d = np.diff(times)
    if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(times[-1])):
        raise ValueError("mode grid must be uniform and increasing")


# ---------------------------------------------------------------------------
# stage plan


def _scan_quadrature(system: ModeSystem):
    inv = system.spin_indices(INVERTED)
    reg = system.spin_indices(REGULAR)
    if len(inv) != 1 or len(reg) != 1:
        raise ValueError("automatic pulse timing needs one inverted and one regular mode; pass t_pulse")
    return two_mode_quadrature(system, system.modes[inv[0]].label, system.modes[reg[0]].label, 0.0)


def default_pulse_time(system: ModeSystem, scan_horizon: float | None = None, dt: float | None = None) -> float:
    """Grid argmin of ``var X_ab(0)`` along the squeezing stage, from vacuum."""
    dd = build_drift_diffusion(system)
    horizon = scan_horizon if scan_horizon is not None else DEFAULT_SCAN_KAPPA / system.kappa
    step = dt if dt is not None else step_bound(dd)
    t, v = variance_trajectory(dd, vacuum_state(system), _scan_quadrature(system), horizon, step)
    return float(t[int(np.argmin(v))])


@dataclass(frozen=True)
class OutputStagePlan:
    """Squeezing stage of length ``t_pulse`` followed by the emission stage on ``[0, horizon]``."""

    stage1: ModeSystem
    t_pulse: float
    stage2: ModeSystem
    horizon: float
    n_grid: int = DEFAULT_GRID

    def __post_init__(self):
        if self.stage1.kappa <= 0:
            raise ValueError("emission needs kappa > 0")
        if self.t_pulse < 0:
            raise ValueError("t_pulse must be >= 0")
        if self.horizon < MIN_HORIZON_KAPPA / self.stage1.kappa * (1 - 1e-12):
            raise ValueError(f"horizon must be at least {MIN_HORIZON_KAPPA:g}/kappa")
        if self.n_grid < MIN_GRID:
            raise ValueError(f"grid must have at least {MIN_GRID} points, got {self.n_grid}")
        if self.stage2.spin_indices(INVERTED):
            raise ValueError("stage 2 must be passive (no inverted modes)")
        s1, s2 = self.stage1, self.stage2
        if (
            s1.labels != s2.labels
            or s1.kappa != s2.kappa
            or s1.delta_c != s2.delta_c
            or s1.cavity_index != s2.cavity_index
            or any(m1.coupling != m2.coupling or m1.detuning != m2.detuning for m1, m2 in zip(s1.modes, s2.modes))
        ):
            raise ValueError("stage 2 must keep the stage-1 modes, couplings and detunings")

    @classmethod
    def from_system(
        cls,
        system: ModeSystem,
        t_pulse: float | None = None,
        horizon: float | None = None,
        n_grid: int = DEFAULT_GRID,
    ) -> "OutputStagePlan":
        if system.kappa <= 0:
            raise ValueError("emission needs kappa > 0")
        if t_pulse is None:
            t_pulse = default_pulse_time(system)
        if horizon is None:
            horizon = DEFAULT_HORIZON_KAPPA / system.kappa
        return cls(system, float(t_pulse), pi_pulse_transform(system), float(horizon), int(n_grid))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_grid)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.times)


def stage1_state(plan: OutputStagePlan) -> CovarianceState:
    """Covariance at the pulse, evolved exactly from vacuum."""
    dd = build_drift_diffusion(plan.stage1)
    if plan.t_pulse == 0:
        return vacuum_state(plan.stage1)
    tr = evolve(dd, vacuum_state(plan.stage1), plan.t_pulse, plan.t_pulse, method="exact")
    return CovarianceState(tr.final.sigma, 0.0)


def stage2_trajectory(plan: OutputStagePlan, sigma_at_pulse: CovarianceState) -> Trajectory:
    """Emission-stage moments on the plan grid (time measured from the pulse)."""
    dd = build_drift_diffusion(plan.stage2)
    start = CovarianceState(sigma_at_pulse.sigma, 0.0)
    return evolve(dd, start, plan.horizon, plan.horizon / (plan.n_grid - 1), method="exact")


# ---------------------------------------------------------------------------
# closed-form kernels


def omega_rate(g_a: float, g_b: float, kappa: float, delta: float) -> complex:
    """``sqrt((kappa + i Delta)^2 - 4 g_a^2 - 4 g_b^2)``, principal branch."""
    return complex(np.sqrt(complex((kappa + 1j * delta) ** 2 - 4 * g_a**2 - 4 * g_b**2)))


def _sinhc(x):
    """``sinh(x)/x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-6
    safe = np.where(small, 1.0, x)
    return np.where(small, 1 + x**2 / 6, np.sinh(safe) / safe)


def alpha_beta(g_a: float, g_b: float, kappa: float, delta: float, t):
    """Output kernels of the homogeneous emission stage.

    ``alpha(t) = (4 i kappa/Omega) e^{-(kappa+i Delta)t/2} sinh(Omega t/2)`` and
    ``beta(t) = 2 kappa [((kappa+i Delta)/Omega) sinh(Omega t/2) - cosh(Omega t/2)] e^{-(kappa+i Delta)t/2}``.
    Both are even in ``Omega``, so the branch does not matter.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    om = omega_rate(g_a, g_b, kappa, delta)
    z = kappa + 1j * delta
    env = np.exp(-z * t / 2)
    half = om * t / 2
    sh_over = (t / 2) * _sinhc(half)  # sinh(Omega t/2)/Omega
    alpha = 4j * kappa * env * sh_over
    beta = 2 * kappa * (z * sh_over - np.cosh(half)) * env
    if alpha.ndim == 0:
        return complex(alpha), complex(beta)
    return alpha, beta


def _is_homogeneous(system: ModeSystem) -> bool:
    spins = system.spin_indices()
    return len(spins) == 2 and all(system.modes[i].detuning == 0 for i in spins)


def emission_factors(plan: OutputStagePlan, method: str = "auto") -> np.ndarray:
    """``phi[k, j]``: contribution of mode ``j`` at the pulse to ``c_out(t_k)``."""
    sys2 = plan.stage2
    t = plan.times
    if method == "auto":
        method = "closed" if _is_homogeneous(sys2) else "propagator"
    k = sys2.kappa
    if method == "closed":
        if not _is_homogeneous(sys2):
            raise ValueError("closed-form kernels need the homogeneous two-ensemble model")
        spins = sys2.spin_indices()
        g = [sys2.modes[i].coupling for i in spins]
        alpha, beta = alpha_beta(g[0], g[1], k, sys2.delta_c, t)
        phi = np.zeros((t.size, sys2.n_modes), dtype=complex)
        for i, gi in zip(spins, g):
            phi[:, i] = -alpha * gi
        phi[:, sys2.cavity_index] = -beta
        return phi / math.sqrt(2 * k)
    if method == "propagator":
        P, Q, _ = ladder_coefficients(sys2)
        if np.any(Q != 0):
            raise ValueError("emission stage must be passive")
        step = sla.expm(P * (t[1] - t[0]))
        row = np.zeros(sys2.n_modes, dtype=complex)
        row[sys2.cavity_index] = math.sqrt(2 * k)
        phi = np.empty((t.size, sys2.n_modes), dtype=complex)
        for i in range(t.size):
            phi[i] = row
            row = row @ step
        return phi
    raise ValueError(f"unknown kernel method {method!r}")


@dataclass(frozen=True)
class OutputKernels:
    """Two-time correlations of ``c_out`` on a uniform grid.

    Stored in factored form ``K_anom = phi M_a phi^T`` and
    ``K_norm = conj(phi) M_n phi^T`` when built from a model; the dense
    matrices are formed on first access.
    """

    times: np.ndarray
    factors: np.ndarray | None = None
    anomalous_moments: np.ndarray | None = None
    normal_moments: np.ndarray | None = None
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        _check_uniform(t)
        object.__setattr__(self, "times", t)

    @classmethod
    def from_dense(cls, times, K_anom, K_norm, tol: float = 1e-10) -> "OutputKernels":
        ka = np.asarray(K_anom, dtype=complex)
        kn = np.asarray(K_norm, dtype=complex)
        n = len(times)
        if ka.shape != (n, n) or kn.shape != (n, n):
            raise ValueError("kernel shapes must match the grid")
        scale = max(1.0, np.max(np.abs(ka)), np.max(np.abs(kn)))
        if np.max(np.abs(ka - ka.T)) > tol * scale:
            raise ValueError("K_anom must be symmetric")
        if np.max(np.abs(kn - kn.conj().T)) > tol * scale:
            raise ValueError("K_norm must be Hermitian")
        if np.linalg.eigvalsh(0.5 * (kn + kn.conj().T))[0] < -tol * scale:
            raise ValueError("K_norm must be positive semidefinite")
        out = cls(times)
        out._dense["anom"] = 0.5 * (ka + ka.T)
        out._dense["norm"] = 0.5 * (kn + kn.conj().T)
        return out

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.times)

    @property
    def factored(self) -> bool:
        return self.factors is not None

    @property
    def K_anom(self) -> np.ndarray:
        if "anom" not in self._dense:
            self._dense["anom"] = self.factors @ self.anomalous_moments @ self.factors.T
        return self._dense["anom"]

    @property
    def K_norm(self) -> np.ndarray:
        if "norm" not in self._dense:
            self._dense["norm"] = self.factors.conj() @ self.normal_moments @ self.factors.T
        return self._dense["norm"]

    def emitted_photons(self) -> float:
        """``int <c_out^dag c_out> dt``."""
        if self.factored:
            diag = np.einsum("ki,ij,kj->k", self.factors.conj(), self.normal_moments, self.factors)
        else:
            diag = np.diag(self.K_norm)
        return float(np.sum(self.weights * diag.real))

    def photon_flux(self) -> np.ndarray:
        if self.factored:
            return np.einsum("ki,ij,kj->k", self.factors.conj(), self.normal_moments, self.factors).real
        return np.diag(self.K_norm).real.copy()


def output_kernels(plan: OutputStagePlan, sigma_at_pulse: CovarianceState, method: str = "auto") -> OutputKernels:
    if plan.n_grid < MIN_GRID:
        raise ValueError(f"grid must have at least {MIN_GRID} points")
    if sigma_at_pulse.sigma.shape[0] != plan.stage2.dim:
        raise ValueError("state does not match the stage-2 mode layout")
    mm, mdm = ladder_moments(sigma_at_pulse.sigma)
    return OutputKernels(plan.times, emission_factors(plan, method), mm, mdm)


# ---------------------------------------------------------------------------
# mode functions


def _phase_fix(samples: np.ndarray) -> tuple[np.ndarray, float]:
    k = int(np.argmax(np.abs(samples)))
    phi = -float(np.angle(samples[k]))
    out = samples * np.exp(1j * phi)
    out[k] = abs(out[k])
    return out, phi


@dataclass(frozen=True)
class ModeFunction:
    """Unit-norm temporal mode on a uniform grid, largest sample real positive."""

    times: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        u = np.asarray(self.samples, dtype=complex)
        if t.ndim != 1 or u.shape != t.shape:
            raise ValueError("times and samples must be 1-d arrays of equal length")
        _check_uniform(t)
        norm = float(np.sum(trapezoid_weights(t) * np.abs(u) ** 2))
        if abs(norm - 1) > 1e-10:
            raise ValueError(f"mode function must have unit norm, got {norm:.12g}; use ModeFunction.normalized")
        k = int(np.argmax(np.abs(u)))
        if abs(u[k].imag) > 1e-12 * abs(u[k]) or u[k].real <= 0:
            raise ValueError("largest sample must be real positive")
        t.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "samples", u)

    @classmethod
    def normalized(cls, times, samples) -> "ModeFunction":
        return cls._normalized_with_phase(times, samples)[0]

    @classmethod
    def _normalized_with_phase(cls, times, samples) -> tuple["ModeFunction", float]:
        t = np.asarray(times, dtype=float)
        u = np.asarray(samples, dtype=complex)
        norm = float(np.sum(trapezoid_weights(t) * np.abs(u) ** 2))
        if not norm > 0:
            raise ValueError("mode function is identically zero")
        u, phi = _phase_fix(u / math.sqrt(norm))
        return cls(t, u), phi

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "u"])
            for t, u in zip(self.times, self.samples):
                w.writerow([repr(float(t)), _format_complex(u)])

    @classmethod
    def from_csv(cls, path) -> "ModeFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [h.strip() for h in rows[0]] != ["t", "u"]:
            raise ValueError(f"{path}: expected header 't,u'")
        t, u = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected two columns")
            try:
                t.append(float(row[0]))
                u.append(complex(row[1].replace(" ", "")))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls.normalized(t, u)


def _format_complex(z) -> str:
    z = complex(z)
    return f"{z.real!r}{'+' if z.imag >= 0 or math.isnan(z.imag) else '-'}{abs(z.imag)!r}j"


def candidate_mode(kind: str, plan: OutputStagePlan, photon_number=None) -> ModeFunction:
    """Ansatz modes: ``exp_decay`` (``e^{-kappa t/2}``) or ``sqrt_photon`` (``sqrt<c^dag c>(t)``).

    ``photon_number`` for ``sqrt_photon`` is either an array on the plan grid or
    a stage-2 :class:`Trajectory`.
    """
    t = plan.times
    if kind == "exp_decay":
        return ModeFunction.normalized(t, np.exp(-plan.stage2.kappa * t / 2))
    if kind == "sqrt_photon":
        if photon_number is None:
            raise ValueError("sqrt_photon needs the stage-2 cavity photon number")
        if isinstance(photon_number, Trajectory):
            n = photon_number.excitation(plan.stage2.cavity_index)
        else:
            n = np.asarray(photon_number, dtype=float)
        if n.shape != t.shape:
            raise ValueError("photon number must be sampled on the plan grid")
        n = np.clip(n, 0.0, None)
        if not np.any(n > 0):
            raise ValueError("photon number is zero everywhere")
        return ModeFunction.normalized(t, np.sqrt(n))
    raise ValueError(f"unknown candidate mode {kind!r}")


def _check_grid(kernels: OutputKernels, u: ModeFunction):
    if u.times.shape != kernels.times.shape or np.max(np.abs(u.times - kernels.times)) > 1e-9 * max(1.0, kernels.times[-1]):
        raise ValueError("mode function is not on the kernels' grid")


def mode_moments(kernels: OutputKernels, u: ModeFunction) -> tuple[complex, float]:
    """``(<c_u c_u>, <c_u^dag c_u>)``."""
    _check_grid(kernels, u)
    y = kernels.weights * u.samples
    if kernels.factored:
        z = kernels.factors.T @ y
        return complex(z @ kernels.anomalous_moments @ z), float((z.conj() @ kernels.normal_moments @ z).real)
    return complex(y @ kernels.K_anom @ y), float((y.conj() @ kernels.K_norm @ y).real)


def mode_variance(kernels: OutputKernels, u: ModeFunction, theta: float) -> float:
    """Variance of ``X(theta) = (e^{i theta} c_u + e^{-i theta} c_u^dag)/2``."""
    a, n = mode_moments(kernels, u)
    return 0.25 + 0.5 * float(np.real(np.exp(2j * theta) * a)) + 0.5 * n


class OptimizedMode(NamedTuple):
    mode: ModeFunction
    theta: float
    variance: float
    degenerate: bool


def _quadratic_block(anom: np.ndarray, norm: np.ndarray) -> np.ndarray:
    """Real form ``G`` with ``Re(z^T M_a z)/2 + z^dag M_n z/2 = [Re z; Im z]^T G [Re z; Im z]``."""
    ra, ia = anom.real, anom.imag
    rn, im_n = norm.real, norm.imag
    top = np.hstack([ra + rn, -(ia + im_n)])
    bottom = np.hstack([-(ia + im_n).T, rn - ra])
    return 0.5 * np.vstack([top, bottom])


def optimize_mode(kernels: OutputKernels, method: str = "auto", tol: float = 1e-10) -> OptimizedMode:
    """Minimize the mode variance over unit-norm ``u`` and ``theta``.

    The phase of ``u`` and ``theta`` are redundant, so ``theta = 0`` during the
    search and ``y = sqrt(w) u`` enters a real quadratic form whose smallest
    eigenvalue is the variance minus ``1/4``.  Factored kernels reduce the
    eigenproblem to the rank of the factors.  After the phase convention is
    applied to ``u`` the compensating ``theta`` is returned.
    """
    t = kernels.times
    w = kernels.weights
    sw = np.sqrt(w)
    n = t.size
    if method == "auto":
        method = "lowrank" if kernels.factored else "dense"
    if method == "lowrank":
        if not kernels.factored:
            raise ValueError("low-rank optimization needs factored kernels")
        f = sw[:, None] * kernels.factors
        fr, fi = f.real, f.imag
        lift = np.block([[fr.T, -fi.T], [fi.T, fr.T]])
        g = _quadratic_block(kernels.anomalous_moments, kernels.normal_moments)
        if np.max(np.abs(g - g.T)) > tol * max(1.0, np.max(np.abs(g))):
            raise ValueError("quadratic form is not symmetric; kernel construction is inconsistent")
        g = 0.5 * (g + g.T)
        basis, r = np.linalg.qr(lift.T)
        small = r @ g @ r.T
        mu, vec = np.linalg.eigh(0.5 * (small + small.T))
        if mu[0] < -tol:
            x = basis @ vec[:, 0]
            lam, degenerate = float(mu[0]), False
        else:
            # no squeezing available: any direction outside the range gives 1/4
            probe = np.eye(2 * n, basis.shape[1] + 1)
            resid = probe - basis @ (basis.T @ probe)
            j = int(np.argmax(np.linalg.norm(resid, axis=0)))
            x = resid[:, j] / np.linalg.norm(resid[:, j])
            lam, degenerate = 0.0, True
    elif method == "dense":
        ka = sw[:, None] * kernels.K_anom * sw[None, :]
        kn = sw[:, None] * kernels.K_norm * sw[None, :]
        q = 0.5 * np.block(
            [[ka.real + kn.real, -ka.imag - kn.imag], [-ka.imag + kn.imag, kn.real - ka.real]]
        )
        if np.max(np.abs(q - q.T)) > tol * max(1.0, np.max(np.abs(q))):
            raise ValueError("quadratic form is not symmetric; kernel construction is inconsistent")
        lam_arr, vec = sla.eigh(0.5 * (q + q.T), subset_by_index=[0, 0])
        lam = float(lam_arr[0])
        x = vec[:, 0]
        degenerate = lam >= -tol
        if degenerate:
            lam = 0.0
            x = np.concatenate([sw / np.linalg.norm(sw), np.zeros(n)])
    else:
        raise ValueError(f"unknown optimization method {method!r}")
    u0 = (x[:n] + 1j * x[n:]) / sw
    mode, phi = ModeFunction._normalized_with_phase(t, u0)
    theta = float(np.mod(-phi + math.pi, 2 * math.pi) - math.pi)
    return OptimizedMode(mode, theta, 0.25 + lam, bool(degenerate))


# ---------------------------------------------------------------------------
# augmented-moment cross-check


def _augmented_parts(system: ModeSystem):
    """Drift and input maps of the stage-2 model extended by the accumulator ``v``.

    ``dv/dt = u(t) (sqrt(2 kappa) c + c_in)``; everything is linear in
    ``Re u`` and ``Im u``, so three matrices of each kind suffice.
    """
    P, Q, U = ladder_coefficients(system)
    n = system.n_modes
    ic = system.cavity_index
    s2k = math.sqrt(2 * system.kappa)

    def parts(u: complex):
        pa = np.zeros((n + 1, n + 1), dtype=complex)
        qa = np.zeros_like(pa)
        pa[:n, :n], qa[:n, :n] = P, Q
        pa[n, ic] = u * s2k
        ua = np.zeros(n + 1, dtype=complex)
        ua[:n] = U
        ua[n] = u
        return ladder_to_quadrature(pa, qa), ladder_noise_to_quadrature(ua, np.zeros_like(ua))

    a0, b0 = parts(0.0)
    ar, br = parts(1.0)
    ai, bi = parts(1j)
    return a0, ar - a0, ai - a0, b0, br - b0, bi - b0


def augmented_variance(
    plan: OutputStagePlan,
    sigma_at_pulse: CovarianceState,
    u: ModeFunction,
    theta: float,
    dt: float | None = None,
) -> float:
    """Variance of ``X_v(theta)`` from RK4 on the moments of the stage-2 model plus ``v``.

    The cavity and the accumulator share the same input, which produces the
    time-dependent cross-diffusion.  ``u`` is linearly interpolated between
    grid points.  The initial accumulator block is zero, so the ``1/4`` vacuum
    level is built up by the input commutator rather than assumed.
    """
    system = plan.stage2
    t = u.times
    if sigma_at_pulse.sigma.shape[0] != system.dim:
        raise ValueError("state does not match the stage-2 mode layout")
    spacing = t[1] - t[0]
    bound = STEP_FACTOR / system.rate_scale()
    if dt is None:
        sub = max(1, int(math.ceil(spacing / bound - 1e-9)))
    else:
        if dt > bound * (1 + 1e-12):
            raise ValueError(f"dt={dt:.3g} exceeds the RK4 step bound {bound:.3g}")
        sub = max(1, int(math.ceil(spacing / dt - 1e-9)))
    h = spacing / sub
    a0, ar, ai, b0, br, bi = _augmented_parts(system)
    m = a0.shape[0]
    sig = np.zeros((m, m))
    sig[:-2, :-2] = sigma_at_pulse.sigma

    def coeff(x):
        ur = np.interp(x, t, u.samples.real)
        ui = np.interp(x, t, u.samples.imag)
        a = a0 + ur * ar + ui * ai
        b = b0 + ur * br + ui * bi
        return a, 0.5 * b @ b.T

    def rhs(s, a, d):
        y = a @ s
        return y + y.T + d

    n_steps = (t.size - 1) * sub
    x = t[0]
    a1, d1 = coeff(x)
    for _ in range(n_steps):
        a2, d2 = coeff(x + h / 2)
        a3, d3 = coeff(x + h)
        k1 = rhs(sig, a1, d1)
        k2 = rhs(sig + 0.5 * h * k1, a2, d2)
        k3 = rhs(sig + 0.5 * h * k2, a2, d2)
        k4 = rhs(sig + h * k3, a3, d3)
        sig = sig + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        sig = 0.5 * (sig + sig.T)
        x += h
        a1, d1 = a3, d3
    c, s = math.cos(theta), math.sin(theta)
    vx, vp, vxp = sig[-2, -2], sig[-1, -1], sig[-2, -1]
    return float((c * c * vx - 2 * c * s * vxp + s * s * vp) / 2)

