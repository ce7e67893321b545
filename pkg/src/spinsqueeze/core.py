"""Mode registry, quadrature conventions and Gaussian covariance states.

Every mode ``m`` is represented by the canonical pair

    x = (m + m^dag) / sqrt(2),     p = (m - m^dag) / (i sqrt(2)),

so the vacuum has ``<x^2> = <p^2> = 1/2``.  The quadrature vector is laid out as
``R = (x_1, p_1, ..., x_M, p_M)`` following the mode order of a
:class:`ModeSystem`, and a state is the symmetrized second-moment matrix
``sigma_ij = <{R_i, R_j}>/2``.  First moments vanish for every state handled here
and are never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

REGULAR = "regular"
INVERTED = "inverted"
_KINDS = (REGULAR, INVERTED)

SYMMETRY_TOL = 1e-12
PHYSICALITY_TOL = 1e-9
HP_THRESHOLD = 0.1


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ModeDescriptor:
    """One bosonic mode of the registry.

    ``kind`` selects how the mode couples to the cavity: ``"inverted"`` modes
    (Holstein-Primakoff mode built on the spin-up state) couple as
    ``g (a^dag c^dag + a c)``, ``"regular"`` modes as ``g (b^dag c + c^dag b)``.
    ``detuning`` is the spin transition detuning from the reference frequency.
    """

    label: str
    kind: str = REGULAR
    coupling: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"mode {self.label!r}: kind must be one of {_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.coupling) or self.coupling < 0:
            raise ValueError(f"mode {self.label!r}: coupling must be finite and >= 0, got {self.coupling}")
        if not np.isfinite(self.detuning):
            raise ValueError(f"mode {self.label!r}: detuning must be finite")


@dataclass(frozen=True)
class ModeSystem:
    """Ordered set of modes, one of which is the damped cavity.

    The cavity entry in ``modes`` carries no coupling of its own; its detuning
    from the reference spin frequency is ``delta_c`` and its field decay rate is
    ``kappa``.
    """

    modes: tuple[ModeDescriptor, ...]
    cavity_index: int
    kappa: float
    delta_c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ValueError("a mode system needs at least the cavity mode")
        if not 0 <= self.cavity_index < len(self.modes):
            raise ValueError(f"cavity_index {self.cavity_index} out of range for {len(self.modes)} modes")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        if not np.isfinite(self.delta_c):
            raise ValueError("delta_c must be finite")
        labels = [m.label for m in self.modes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"mode labels must be unique, got {labels}")
        if self.modes[self.cavity_index].coupling != 0:
            raise ValueError("the cavity mode cannot carry a coupling to itself")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return 2 * len(self.modes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(m.label for m in self.modes)

    @property
    def cavity(self) -> ModeDescriptor:
        return self.modes[self.cavity_index]

    def index(self, label: str) -> int:
        for i, m in enumerate(self.modes):
            if m.label == label:
                return i
        raise KeyError(f"unknown mode label {label!r}; known: {self.labels}")

    def spin_indices(self, kind: str | None = None) -> list[int]:
        return [
            i
            for i, m in enumerate(self.modes)
            if i != self.cavity_index and (kind is None or m.kind == kind)
        ]

    def rate_scale(self) -> float:
        """Largest angular rate of the model, used for step-size bounds."""
        rates = [self.kappa, abs(self.delta_c)]
        for i in self.spin_indices():
            rates += [self.modes[i].coupling, abs(self.modes[i].detuning)]
        return float(max(rates))

    def with_modes(self, modes: Sequence[ModeDescriptor]) -> "ModeSystem":
        return ModeSystem(tuple(modes), self.cavity_index, self.kappa, self.delta_c)


def homogeneous_system(g_a: float, g_b: float, kappa: float, delta: float) -> ModeSystem:
    """The three-mode model: inverted ensemble ``a``, ensemble ``b``, cavity ``c``."""
    return ModeSystem(
        (
            ModeDescriptor("a", INVERTED, g_a),
            ModeDescriptor("b", REGULAR, g_b),
            ModeDescriptor("c", REGULAR, 0.0),
        ),
        cavity_index=2,
        kappa=kappa,
        delta_c=delta,
    )


@dataclass(frozen=True)
class CovarianceState:
    """Symmetrized second moments at one instant."""

    sigma: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
            raise ValueError(f"sigma must be a square matrix of even size, got shape {s.shape}")
        if np.max(np.abs(s - s.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(s))):
            raise ValueError("sigma is not symmetric")
        object.__setattr__(self, "sigma", _frozen(0.5 * (s + s.T)))
        object.__setattr__(self, "time", float(self.time))

    @property
    def n_modes(self) -> int:
        return self.sigma.shape[0] // 2


@dataclass(frozen=True)
class QuadratureSpec:
    """Real linear combination ``v . R`` of the quadratures of a mode layout."""

    coefficients: np.ndarray = field()

    def __post_init__(self):
        v = np.asarray(self.coefficients, dtype=float)
        if v.ndim != 1 or v.size % 2:
            raise ValueError("coefficients must be a 1-d vector over (x_1, p_1, ..., x_M, p_M)")
        if not np.any(v != 0):
            raise ValueError("a quadrature needs at least one nonzero coefficient")
        object.__setattr__(self, "coefficients", _frozen(v))

    def __len__(self) -> int:
        return self.coefficients.size


def symplectic_form(n_modes: int) -> np.ndarray:
    """Canonical form with ``[R_i, R_j] = i Omega_ij`` for the interleaved layout."""
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def vacuum_state(system: ModeSystem | int) -> CovarianceState:
    n = system if isinstance(system, int) else system.n_modes
    return CovarianceState(0.5 * np.eye(2 * n), 0.0)


def two_mode_quadrature(system: ModeSystem, mode1: str, mode2: str, theta: float) -> QuadratureSpec:
    """``X(theta) = [cos(theta)(x_1 + x_2) - sin(theta)(p_1 + p_2)] / 2``."""
    i, j = system.index(mode1), system.index(mode2)
    if i == j:
        raise ValueError("two_mode_quadrature needs two distinct modes")
    v = np.zeros(system.dim)
    c, s = 0.5 * np.cos(theta), -0.5 * np.sin(theta)
    v[2 * i] = v[2 * j] = c
    v[2 * i + 1] = v[2 * j + 1] = s
    return QuadratureSpec(v)


def quadrature_variance(state: CovarianceState, spec: QuadratureSpec) -> float:
    v = spec.coefficients
    if v.size != state.sigma.shape[0]:
        raise ValueError(f"quadrature of length {v.size} does not match state dimension {state.sigma.shape[0]}")
    return float(v @ state.sigma @ v)


def _mode_index(state: CovarianceState, mode, system: ModeSystem | None) -> int:
    if isinstance(mode, str):
        if system is None:
            raise TypeError("a ModeSystem is needed to resolve mode labels")
        return system.index(mode)
    i = int(mode)
    if not 0 <= i < state.n_modes:
        raise KeyError(f"mode index {i} out of range")
    return i


def mean_excitation(state: CovarianceState, mode, system: ModeSystem | None = None) -> float:
    """``<m^dag m> = (<x^2> + <p^2> - 1)/2``.

    For an inverted mode this counts spins flipped away from the prepared state.
    ``mode`` is a label (requires ``system``) or an integer mode index.
    """
    i = _mode_index(state, mode, system)
    s = state.sigma
    return float(0.5 * (s[2 * i, 2 * i] + s[2 * i + 1, 2 * i + 1] - 1.0))


def ladder_moments(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(<m_i m_j>, <m_i^dag m_j>)`` for a zero-mean Gaussian state."""
    s = np.asarray(sigma, dtype=float)
    x, p, xp = s[0::2, 0::2], s[1::2, 1::2], s[0::2, 1::2]
    anomalous = 0.5 * (x - p + 1j * (xp + xp.T))
    normal = 0.5 * (x + p + 1j * (xp - xp.T)) - 0.5 * np.eye(x.shape[0])
    return anomalous, normal


def symplectic_eigenvalues(state: CovarianceState | np.ndarray) -> np.ndarray:
    """Williamson invariants of sigma, sorted ascending (one per mode)."""
    s = state.sigma if isinstance(state, CovarianceState) else np.asarray(state, dtype=float)
    if np.max(np.abs(s - s.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(s))):
        raise ValueError("symplectic eigenvalues need a symmetric matrix")
    n = s.shape[0] // 2
    omega = symplectic_form(n)
    try:
        # L^T Omega L is antisymmetric and similar to Omega sigma; eigvalsh keeps
        # the small invariants accurate when sigma is large
        chol = np.linalg.cholesky(s)
        nu = np.sort(np.abs(np.linalg.eigvalsh(1j * (chol.T @ omega @ chol))))
    except np.linalg.LinAlgError:
        nu = np.sort(np.abs(np.linalg.eigvals(omega @ s).imag))
    # eigenvalues come in pairs +-i nu
    return nu[0::2].copy() if nu.size == 2 * n else nu


def is_physical(state: CovarianceState, tol: float = PHYSICALITY_TOL) -> bool:
    """Robertson-Schroedinger condition ``sigma + i Omega/2 >= 0``."""
    n = state.n_modes
    m = state.sigma + 0.5j * symplectic_form(n)
    return bool(np.linalg.eigvalsh(m)[0] >= -tol)


@dataclass(frozen=True)
class HPReport:
    ratios: dict
    threshold: float
    flagged: bool


def hp_validity(
    state: CovarianceState,
    spins_per_ensemble: Mapping[str, int],
    system: ModeSystem | None = None,
    threshold: float = HP_THRESHOLD,
) -> HPReport:
    """Check the oscillator approximation: excitation per spin stays small.

    Keys of ``spins_per_ensemble`` are mode labels (resolved through ``system``)
    or integer mode indices.  The flag is raised once any ratio reaches
    ``threshold``.
    """
    ratios = {}
    for mode, n_spins in spins_per_ensemble.items():
        if n_spins <= 0:
            raise ValueError(f"spin count for {mode!r} must be positive")
        ratios[mode] = mean_excitation(state, mode, system) / n_spins
    flagged = any(r >= threshold for r in ratios.values())
    return HPReport(ratios, threshold, flagged)
