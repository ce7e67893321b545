"""Second-moment dynamics in the frame rotating at the reference spin frequency.

Linear Heisenberg-Langevin equations ``dR/dt = A R + B R_in`` with white vacuum
input ``R_in`` give the covariance equation

    d sigma / dt = A sigma + sigma A^T + D,      D = B B^T / 2.

Models are written in ladder form, ``dm/dt = P m + Q m^dag + U c_in + V c_in^dag``,
and converted to the real quadrature layout of :mod:`spinsqueeze.core`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .core import (
    INVERTED,
    CovarianceState,
    ModeSystem,
    QuadratureSpec,
    homogeneous_system,
)

STEP_FACTOR = 0.01
BLOWUP = 1e12
GROWTH_TOL = 1e-12
ANCHOR_STEPS = 256
# vectorized RK4 one-step maps are formed only for small systems
_KRON_MAX_DIM = 12
_DIRECT_LYAPUNOV_MAX_DIM = 24


class UnstableIntegrationError(RuntimeError):
    """Raised when moments blow up during integration."""


class NonHurwitzError(ValueError):
    """Raised when a steady state is requested for a drift without one."""


def _ladder_transform(n_modes: int) -> np.ndarray:
    """Matrix T with R = T xi, xi = (m_1..m_n, m_1^dag..m_n^dag)."""
    t = np.zeros((2 * n_modes, 2 * n_modes), dtype=complex)
    r = 1 / math.sqrt(2)
    for i in range(n_modes):
        t[2 * i, i] = t[2 * i, n_modes + i] = r
        t[2 * i + 1, i] = -1j * r
        t[2 * i + 1, n_modes + i] = 1j * r
    return t


def ladder_to_quadrature(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Real drift for ``dm/dt = P m + Q m^dag``."""
    P = np.asarray(P, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    n = P.shape[0]
    big = np.block([[P, Q], [Q.conj(), P.conj()]])
    t = _ladder_transform(n)
    a = t @ big @ np.linalg.inv(t)
    if np.max(np.abs(a.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(a.real))):
        raise ValueError("ladder coefficients do not define a real quadrature drift")
    return a.real


def ladder_noise_to_quadrature(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Real input matrix B for noise terms ``U c_in + V c_in^dag``.

    Returns B of shape (2n, 2) acting on ``(x_in, p_in)``.
    """
    U = np.asarray(U, dtype=complex)
    V = np.asarray(V, dtype=complex)
    n = U.shape[0]
    nmat = np.zeros((2 * n, 2), dtype=complex)
    nmat[:n, 0], nmat[:n, 1] = U, V
    nmat[n:, 0], nmat[n:, 1] = V.conj(), U.conj()
    b = _ladder_transform(n) @ nmat @ np.linalg.inv(_ladder_transform(1))
    if np.max(np.abs(b.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(b.real))):
        raise ValueError("noise coefficients do not define a real input map")
    return b.real


@dataclass(frozen=True)
class DriftDiffusion:
    drift: np.ndarray
    diffusion: np.ndarray
    rate: float = 0.0

    def __post_init__(self):
        a = np.array(self.drift, dtype=float)
        d = np.array(self.diffusion, dtype=float)
        if a.shape != d.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("drift and diffusion must be square matrices of equal size")
        if np.max(np.abs(d - d.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(d))):
            raise ValueError("diffusion matrix must be symmetric")
        d = 0.5 * (d + d.T)
        if d.size and np.linalg.eigvalsh(d)[0] < -1e-12 * max(1.0, np.max(np.abs(d))):
            raise ValueError("diffusion matrix must be positive semidefinite")
        a.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "drift", a)
        object.__setattr__(self, "diffusion", d)
        if not self.rate:
            object.__setattr__(self, "rate", float(np.max(np.abs(a), initial=0.0)))

    @property
    def dim(self) -> int:
        return self.drift.shape[0]


def ladder_coefficients(system: ModeSystem):
    """Ladder-form coefficients (P, Q, U) of the cavity-coupled ensembles."""
    n = system.n_modes
    ic = system.cavity_index
    P = np.zeros((n, n), dtype=complex)
    Q = np.zeros((n, n), dtype=complex)
    U = np.zeros(n, dtype=complex)
    P[ic, ic] = -(system.kappa + 1j * system.delta_c)
    U[ic] = -math.sqrt(2 * system.kappa)
    for j in system.spin_indices():
        mode = system.modes[j]
        g = mode.coupling
        if mode.kind == INVERTED:
            # H contains -Delta_j a^dag a + g (a^dag c^dag + a c)
            P[j, j] = 1j * mode.detuning
            Q[j, ic] = -1j * g
            Q[ic, j] = -1j * g
        else:
            P[j, j] = -1j * mode.detuning
            P[j, ic] = -1j * g
            P[ic, j] = -1j * g
    return P, Q, U


def build_drift_diffusion(system: ModeSystem) -> DriftDiffusion:
    if system.kappa < 0:
        raise ValueError("negative kappa")
    P, Q, U = ladder_coefficients(system)
    a = ladder_to_quadrature(P, Q)
    b = ladder_noise_to_quadrature(U, np.zeros_like(U))
    return DriftDiffusion(a, 0.5 * b @ b.T, system.rate_scale())


# ---------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class Trajectory:
    """Covariance matrices on a strictly increasing time grid."""

    times: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.sigmas, dtype=float)
        if t.ndim != 1 or s.shape[0] != t.size:
            raise ValueError("one covariance matrix per time point is required")
        if t.size and (t[0] < 0 or np.any(np.diff(t) <= 0)):
            raise ValueError("times must start at >= 0 and increase strictly")
        t.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sigmas", s)

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, k: int) -> CovarianceState:
        return CovarianceState(self.sigmas[k], self.times[k])

    @property
    def states(self) -> list[CovarianceState]:
        return [self[k] for k in range(len(self))]

    @property
    def final(self) -> CovarianceState:
        return self[len(self) - 1]

    def variance(self, spec: QuadratureSpec) -> np.ndarray:
        v = spec.coefficients
        return np.einsum("i,kij,j->k", v, self.sigmas, v)

    def excitation(self, index: int) -> np.ndarray:
        s = self.sigmas
        return 0.5 * (s[:, 2 * index, 2 * index] + s[:, 2 * index + 1, 2 * index + 1] - 1.0)


def _max_growth(drift: np.ndarray) -> complex:
    ev = np.linalg.eigvals(drift)
    return ev[np.argmax(ev.real)]


def _check_blowup(sigma: np.ndarray, drift: np.ndarray, t: float):
    if not np.all(np.isfinite(sigma)) or np.max(np.abs(sigma)) > BLOWUP:
        lam = _max_growth(drift)
        raise UnstableIntegrationError(
            f"moments exceeded {BLOWUP:g} at t={t:.6g}; growing mode with eigenvalue "
            f"{lam.real:.6g}{lam.imag:+.6g}j"
        )


def _grid(t_end: float, dt: float) -> tuple[int, float]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    n = int(math.ceil(t_end / dt - 1e-9))
    n = max(n, 1) if t_end > 0 else 0
    return n, (t_end / n if n else dt)


def _rk4_affine_map(a: np.ndarray, d: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step of the covariance ODE as an affine map on vec(sigma)."""
    n = a.shape[0]
    eye = np.eye(n)
    lop = h * (np.kron(eye, a) + np.kron(a, eye))
    l2 = lop @ lop
    l3 = l2 @ lop
    l4 = l3 @ lop
    big = np.eye(n * n)
    step = big + lop + l2 / 2 + l3 / 6 + l4 / 24
    forcing = h * (big + lop / 2 + l2 / 6 + l3 / 24) @ d.reshape(-1, order="F")
    out = np.zeros((n * n + 1, n * n + 1))
    out[:-1, :-1] = step
    out[:-1, -1] = forcing
    out[-1, -1] = 1.0
    return out


def _rk4_step(s, a, d, h):
    def rhs(x):
        y = a @ x
        return y + y.T + d

    k1 = rhs(s)
    k2 = rhs(s + 0.5 * h * k1)
    k3 = rhs(s + 0.5 * h * k2)
    k4 = rhs(s + h * k3)
    s = s + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (s + s.T)


def exact_step(dd: DriftDiffusion, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-step propagator ``(e^{Ah}, int_0^h e^{As} D e^{A^T s} ds)``."""
    a, d = dd.drift, dd.diffusion
    n = a.shape[0]
    # the block exponential contains e^{-Ah}; keep it small and double up instead
    norm = float(np.linalg.norm(a, 1)) * abs(h)
    halvings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    hs = h / 2**halvings
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -a
    block[:n, n:] = d
    block[n:, n:] = a.T
    e = sla.expm(block * hs)
    phi = e[n:, n:].T
    q = phi @ e[:n, n:]
    q = 0.5 * (q + q.T)
    for _ in range(halvings):
        q = q + phi @ q @ phi.T
        phi = phi @ phi
        q = 0.5 * (q + q.T)
    return phi, q


def step_bound(dd: DriftDiffusion) -> float:
    return STEP_FACTOR / dd.rate if dd.rate > 0 else math.inf


def evolve(
    dd: DriftDiffusion,
    initial: CovarianceState,
    t_end: float,
    dt: float,
    *,
    method: str = "rk4",
    record_every: int = 1,
) -> Trajectory:
    """Integrate the covariance equation from ``initial`` up to ``t_end``.

    ``method="rk4"`` is the fixed-step classical Runge-Kutta scheme and enforces
    ``dt <= 0.01/rate``.  ``method="exact"`` uses the matrix-exponential
    propagator, which has no step restriction.  The step is shrunk so that the
    grid lands on ``t_end``; every ``record_every``-th step is returned.
    """
    s0 = np.array(initial.sigma, dtype=float)
    if s0.shape != dd.drift.shape:
        raise ValueError(f"state dimension {s0.shape} does not match drift {dd.drift.shape}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n_steps, h = _grid(t_end, dt)
    n_rec = n_steps // record_every
    tail = n_steps - n_rec * record_every
    t0 = initial.time
    times = [t0]
    out = [s0]
    a, d = dd.drift, dd.diffusion

    if method == "rk4":
        bound = step_bound(dd)
        if h > bound * (1 + 1e-12):
            raise ValueError(f"dt={h:.3g} exceeds the RK4 step bound 0.01/rate = {bound:.3g}")
        if a.shape[0] <= _KRON_MAX_DIM:
            one = _rk4_affine_map(a, d, h)
            stride = np.linalg.matrix_power(one, record_every)
            nd = a.shape[0]

            def advance(s, mats):
                vec = mats @ np.append(s.reshape(-1, order="F"), 1.0)
                s = vec[:-1].reshape(nd, nd, order="F")
                return 0.5 * (s + s.T)

            s = s0
            for k in range(n_rec):
                s = advance(s, stride)
                _check_blowup(s, a, t0 + (k + 1) * record_every * h)
                times.append(t0 + (k + 1) * record_every * h)
                out.append(s)
            if tail:
                s = advance(s, np.linalg.matrix_power(one, tail))
                _check_blowup(s, a, t0 + n_steps * h)
                times.append(t0 + n_steps * h)
                out.append(s)
        else:
            s = s0
            for k in range(1, n_steps + 1):
                s = _rk4_step(s, a, d, h)
                if k % record_every == 0 or k == n_steps:
                    _check_blowup(s, a, t0 + k * h)
                    times.append(t0 + k * h)
                    out.append(s)
    elif method == "exact":
        phi_r, q_r = exact_step(dd, h * record_every)
        # repeated composition accumulates roundoff in squeezed directions, so
        # the state is recomputed from the start every ANCHOR_STEPS steps
        anchor_every = max(1, ANCHOR_STEPS // record_every)

        def direct(tau):
            phi_t, q_t = exact_step(dd, tau)
            return phi_t @ s0 @ phi_t.T + q_t

        s = s0
        for k in range(1, n_rec + 1):
            if k % anchor_every == 0:
                s = direct(k * record_every * h)
            else:
                s = phi_r @ s @ phi_r.T + q_r
            s = 0.5 * (s + s.T)
            _check_blowup(s, a, t0 + k * record_every * h)
            times.append(t0 + k * record_every * h)
            out.append(s)
        if tail:
            s = direct(n_steps * h)
            s = 0.5 * (s + s.T)
            _check_blowup(s, a, t0 + n_steps * h)
            times.append(t0 + n_steps * h)
            out.append(s)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Trajectory(np.array(times), np.array(out))


def variance_trajectory(
    dd: DriftDiffusion,
    initial: CovarianceState,
    spec: QuadratureSpec,
    t_end: float,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Variance of one quadrature on a uniform grid, without storing sigma(t).

    Propagates the adjoint vector ``w_k = (e^{A^T h})^k v`` so that
    ``v.sigma(t_k).v = w_k.sigma_0.w_k + sum_{j<k} w_j.Q_h.w_j`` exactly.
    Cost per step is a matrix-vector product, which makes large binned models
    cheap to scan.
    """
    v = np.asarray(spec.coefficients, dtype=float)
    if v.size != dd.dim:
        raise ValueError("quadrature does not match the drift dimension")
    n_steps, h = _grid(t_end, dt)
    phi, q = exact_step(dd, h)
    phi_t = phi.T
    s0 = initial.sigma
    w = v.copy()
    acc = 0.0
    out = np.empty(n_steps + 1)
    for k in range(n_steps + 1):
        out[k] = w @ s0 @ w + acc
        acc += w @ q @ w
        w = phi_t @ w
        if not np.isfinite(out[k]) or abs(out[k]) > BLOWUP:
            lam = _max_growth(dd.drift)
            raise UnstableIntegrationError(
                f"variance exceeded {BLOWUP:g}; growing eigenvalue {lam.real:.6g}{lam.imag:+.6g}j"
            )
    return initial.time + h * np.arange(n_steps + 1), out


# ---------------------------------------------------------------------------
# steady state


def _conserved_projector(a: np.ndarray, zero_tol: float) -> np.ndarray | None:
    ev = np.linalg.eigvals(a)
    n_zero = int(np.sum(np.abs(ev) <= zero_tol))
    if n_zero == 0:
        return None
    right = sla.null_space(a, rcond=zero_tol / max(1.0, np.linalg.norm(a, 2)))
    left = sla.null_space(a.T, rcond=zero_tol / max(1.0, np.linalg.norm(a, 2)))
    if right.shape[1] != n_zero or left.shape[1] != n_zero:
        raise NonHurwitzError(
            f"zero eigenvalue of multiplicity {n_zero} is defective (Jordan block); "
            "moments grow polynomially and no steady state exists"
        )
    return right @ np.linalg.solve(left.T @ right, left.T)


def solve_lyapunov(a: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve ``A X + X A^T + D = 0`` for a Hurwitz ``A``."""
    n = a.shape[0]
    if n <= _DIRECT_LYAPUNOV_MAX_DIM:
        eye = np.eye(n)
        lop = np.kron(eye, a) + np.kron(a, eye)
        x = np.linalg.solve(lop, -d.reshape(-1, order="F")).reshape(n, n, order="F")
    else:
        x = sla.solve_continuous_lyapunov(a, -d)
    return 0.5 * (x + x.T)


def steady_state(dd: DriftDiffusion, initial: CovarianceState | None = None) -> CovarianceState:
    """Long-time limit of the covariance starting from ``initial`` (vacuum by default).

    Strictly damped directions relax to the solution of the Lyapunov equation.
    Exactly conserved directions (zero drift eigenvalues, e.g. the dark mode)
    keep the moments they start with; this is why an initial state matters.
    Growing or undamped oscillating directions have no limit and raise.
    """
    a, d = dd.drift, dd.diffusion
    n = a.shape[0]
    scale = max(1.0, dd.rate)
    ev = np.linalg.eigvals(a)
    growth_tol = GROWTH_TOL * scale
    zero_tol = 1e-9 * scale
    worst = ev[np.argmax(ev.real)]
    if worst.real > growth_tol:
        raise NonHurwitzError(f"drift has a growing eigenvalue {worst.real:.6g}{worst.imag:+.6g}j")
    undamped = ev[(ev.real > -growth_tol) & (np.abs(ev) > zero_tol)]
    if undamped.size:
        lam = undamped[0]
        raise NonHurwitzError(f"drift has an undamped oscillating eigenvalue {lam.real:.3g}{lam.imag:+.6g}j")
    s0 = (0.5 * np.eye(n)) if initial is None else np.asarray(initial.sigma)
    p0 = _conserved_projector(a, zero_tol)
    if p0 is None:
        return CovarianceState(solve_lyapunov(a, d), math.inf)
    ps = np.eye(n) - p0
    if np.max(np.abs(p0 @ d @ p0.T)) > 1e-10 * max(1.0, np.max(np.abs(d))):
        raise NonHurwitzError("noise drives a conserved mode; its variance grows without bound")
    shifted = a - scale * p0
    x = solve_lyapunov(shifted, ps @ d @ ps.T)
    return CovarianceState(p0 @ s0 @ p0.T + x, math.inf)


# ---------------------------------------------------------------------------
# closed-form spectrum of the homogeneous model


def analytic_eigenvalues(g_a: float, g_b: float, kappa: float, delta: float) -> np.ndarray:
    """Six eigenvalues of the homogeneous three-mode drift.

    ``G^2 = 4 g_a^2 - 4 g_b^2 + kappa^2 - Delta^2 - 2i kappa Delta`` with the
    principal square root.  The last pair is the complex conjugate of the
    second (the conjugated equations for ``a^dag, b, c``).
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    g2 = 4 * g_a**2 - 4 * g_b**2 + kappa**2 - delta**2 - 2j * kappa * delta
    root = np.sqrt(complex(g2))
    l3 = 0.5j * delta - 0.5 * kappa - 0.5 * root
    l4 = 0.5j * delta - 0.5 * kappa + 0.5 * root
    return np.array([0j, 0j, l3, l4, np.conj(l3), np.conj(l4)])


def stability_classify(g_a: float, g_b: float, kappa: float, delta: float) -> str:
    lam = analytic_eigenvalues(g_a, g_b, kappa, delta)[2:]
    top = np.max(lam.real)
    if top > GROWTH_TOL:
        return "growing"
    if top < -GROWTH_TOL:
        return "damped"
    return "marginal"


def match_eigenvalues(a, b) -> float:
    """Largest distance after optimally pairing two eigenvalue lists."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max(initial=0.0))


@dataclass(frozen=True)
class SpectrumReport:
    analytic: np.ndarray
    numeric: np.ndarray
    classification: str

    @property
    def mismatch(self) -> float:
        return match_eigenvalues(self.analytic, self.numeric)


def classify_eigenvalues(ev, scale: float = 1.0) -> str:
    ev = np.asarray(ev, dtype=complex)
    tol = GROWTH_TOL * max(1.0, scale)
    if np.any(ev.real > tol):
        return "growing"
    nonzero = ev[np.abs(ev) > 1e-9 * max(1.0, scale)]
    if nonzero.size and np.all(nonzero.real < -tol):
        return "damped"
    return "marginal"


def spectrum(g_a: float, g_b: float, kappa: float, delta: float) -> SpectrumReport:
    dd = build_drift_diffusion(homogeneous_system(g_a, g_b, kappa, delta))
    numeric = np.linalg.eigvals(dd.drift)
    return SpectrumReport(analytic_eigenvalues(g_a, g_b, kappa, delta), numeric, classify_eigenvalues(numeric, dd.rate))


# ---------------------------------------------------------------------------
# dark mode


def _pair_spec(system: ModeSystem, coeffs: dict) -> QuadratureSpec:
    v = np.zeros(system.dim)
    for (label, quad), c in coeffs.items():
        v[2 * system.index(label) + quad] += c
    return QuadratureSpec(v)


def dark_mode(
    g_a: float,
    g_b: float,
    system: ModeSystem | None = None,
    labels: tuple[str, str] = ("a", "b"),
) -> tuple[QuadratureSpec, QuadratureSpec]:
    """Quadratures of ``d = (g_b a + g_a b^dag)/sqrt(g_b^2 - g_a^2)``.

    ``d`` decouples from the cavity and is constant in the rotating frame.
    """
    if not g_b > g_a >= 0:
        raise ValueError("dark mode needs g_b > g_a >= 0 for a normalizable combination")
    system = system or homogeneous_system(g_a, g_b, 1.0, 0.0)
    norm = math.sqrt(g_b**2 - g_a**2)
    la, lb = labels
    x_d = _pair_spec(system, {(la, 0): g_b / norm, (lb, 0): g_a / norm})
    p_d = _pair_spec(system, {(la, 1): g_b / norm, (lb, 1): -g_a / norm})
    return x_d, p_d


def companion_mode(
    g_a: float,
    g_b: float,
    system: ModeSystem | None = None,
    labels: tuple[str, str] = ("a", "b"),
) -> tuple[QuadratureSpec, QuadratureSpec]:
    """Quadratures of ``e = (g_a a^dag + g_b b)/sqrt(g_b^2 - g_a^2)``, the coupled partner of ``d``."""
    if not g_b > g_a >= 0:
        raise ValueError("companion mode needs g_b > g_a >= 0")
    system = system or homogeneous_system(g_a, g_b, 1.0, 0.0)
    norm = math.sqrt(g_b**2 - g_a**2)
    la, lb = labels
    x_e = _pair_spec(system, {(la, 0): g_a / norm, (lb, 0): g_b / norm})
    p_e = _pair_spec(system, {(la, 1): -g_a / norm, (lb, 1): g_b / norm})
    return x_e, p_e
