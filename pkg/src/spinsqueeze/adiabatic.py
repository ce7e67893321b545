"""Large-detuning regime: the cavity follows the ensembles adiabatically.

With ``|Delta| >> g_a, g_b`` and ``dc/dt`` set to zero the cavity amplitude is
slaved to the ensembles,

    c = -(i g_a a^dag + i g_b b + sqrt(2 kappa) c_in) / (kappa + i Delta),

which leaves a two-mode model for ``a`` and ``b`` with effective noise from the
cavity input.  Closed-form results for ``var X_ab(0)`` follow from it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import QuadratureSpec
from .dynamics import DriftDiffusion, ladder_noise_to_quadrature, ladder_to_quadrature

ADIABATIC_RATIO = 5.0


class AdiabaticityWarning(UserWarning):
    """The detuning is not large compared with the couplings."""


@dataclass(frozen=True)
class AdiabaticParams:
    g_a: float
    g_b: float
    kappa: float
    delta: float

    def __post_init__(self):
        for name in ("g_a", "g_b", "kappa", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.g_a < 0 or self.g_b < 0:
            raise ValueError("couplings must be >= 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.delta == 0:
            raise ValueError("adiabatic elimination needs a nonzero detuning")
        if abs(self.delta) < ADIABATIC_RATIO * max(self.g_a, self.g_b):
            warnings.warn(
                f"|delta|={abs(self.delta):g} < {ADIABATIC_RATIO:g} max(g_a, g_b); "
                "the eliminated model may be inaccurate",
                AdiabaticityWarning,
                stacklevel=3,
            )

    @property
    def t_star(self) -> float:
        """First time at which the fast exponentials have changed sign."""
        diff = self.g_b**2 - self.g_a**2
        if diff <= 0:
            raise ValueError("t_star needs g_b > g_a")
        return math.pi * abs(self.delta) / diff


def _require_distinct(p: AdiabaticParams):
    if p.g_a == p.g_b:
        raise ValueError("the closed-form variance is singular at g_a == g_b; use the full numeric model")
    if p.g_a + p.g_b == 0:
        raise ValueError("at least one coupling must be nonzero")


def analytic_variance(p: AdiabaticParams, t):
    """``var X_ab(0)`` of the eliminated model, starting from vacuum.

    Accepts a scalar or array of times.  The two complex exponentials are a
    conjugate pair, so the result is real; a residue above 1e-12 raises.
    """
    _require_distinct(p)
    ga, gb, k, d = p.g_a, p.g_b, p.kappa, p.delta
    t = np.asarray(t, dtype=float)
    x = ga**2 - gb**2
    s2 = (ga + gb) ** 2
    e1 = np.exp(2 * k * t * x / (k**2 + d**2))
    e2 = np.exp(t * x / (k + 1j * d)) + np.exp(-t * x / (1j * d - k))
    f = (e1 - 1) * (ga - gb) / (8 * (ga + gb))
    v = ((ga**2 + gb**2) / s2 * (1 + e1) + 2 * ga * gb * e2 / s2) / 8 + f
    if np.max(np.abs(np.imag(v)), initial=0.0) > 1e-12:
        raise ArithmeticError("closed-form variance has a non-negligible imaginary part")
    v = np.real(v)
    return float(v) if v.ndim == 0 else v


def noise_contribution(p: AdiabaticParams, t):
    """The input-noise term ``f(t)`` of :func:`analytic_variance`."""
    _require_distinct(p)
    ga, gb, k, d = p.g_a, p.g_b, p.kappa, p.delta
    t = np.asarray(t, dtype=float)
    e1 = np.exp(2 * k * t * (ga**2 - gb**2) / (k**2 + d**2))
    out = (e1 - 1) * (ga - gb) / (8 * (ga + gb))
    return float(out) if out.ndim == 0 else out


def longtime_variance(g_a: float, g_b: float) -> float:
    if not g_b > g_a >= 0:
        raise ValueError("the variance converges only for g_b > g_a >= 0")
    return g_b**2 / (4 * (g_a + g_b) ** 2)


def short_time_variance(p: AdiabaticParams, t):
    """Linearization ``(1 + (g_a^2 - g_b^2) kappa t / (kappa^2 + Delta^2)) / 4``.

    Valid while ``t << (kappa^2 + Delta^2)/(kappa |g_a^2 - g_b^2|)`` and, because
    the oscillating terms are dropped, while ``t |g_b^2 - g_a^2| / |Delta|`` is small.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    k, d = p.kappa, p.delta
    out = 0.25 * (1 + (p.g_a**2 - p.g_b**2) * k * t / (k**2 + d**2))
    return float(out) if out.ndim == 0 else out


def optimal_time_min_variance(p: AdiabaticParams) -> tuple[float, float]:
    """Closed-form minimum time and the first-order minimum value.

    The value is ``(g_a-g_b)^2/(4 s^2) + |g_a (g_b-g_a) kappa/(4 s^2 Delta)|``
    with ``s = g_a + g_b``; it underestimates the true minimum, see
    :func:`minimum_variance_first_order` for the expansion redone from
    :func:`analytic_variance` at ``t_star``.
    """
    ga, gb = p.g_a, p.g_b
    if not gb > ga:
        raise ValueError("a minimum exists only for g_b > g_a")
    s2 = (ga + gb) ** 2
    v = (ga - gb) ** 2 / (4 * s2) + abs(2 * ga * (gb - ga) / (8 * s2) * p.kappa / p.delta)
    return p.t_star, v


def minimum_variance_first_order(p: AdiabaticParams) -> float:
    """First order in ``kappa/Delta`` of :func:`analytic_variance` at ``t_star``.

    At ``t_star`` the exponents are ``-2 pi kappa Delta/(kappa^2+Delta^2)`` and
    ``i pi`` plus a damping of the same size; expanding gives
    ``(g_b-g_a)^2/(4 s^2) + pi g_a (g_b-g_a) kappa / (2 |Delta| s^2)`` with
    ``s = g_a + g_b``.
    """
    ga, gb = p.g_a, p.g_b
    if not gb > ga:
        raise ValueError("a minimum exists only for g_b > g_a")
    s2 = (ga + gb) ** 2
    return (gb - ga) ** 2 / (4 * s2) + math.pi * ga * (gb - ga) * p.kappa / (2 * abs(p.delta) * s2)


def adiabatic_drift(p: AdiabaticParams) -> DriftDiffusion:
    """Drift and diffusion of the eliminated model over ``(x_a, p_a, x_b, p_b)``."""
    ga, gb, k, d = p.g_a, p.g_b, p.kappa, p.delta
    z = k - 1j * d
    zc = np.conj(z)
    P = np.array([[ga**2 / z, 0], [0, -(gb**2) / zc]])
    Q = np.array([[0, ga * gb / z], [-ga * gb / zc, 0]])
    s = math.sqrt(2 * k)
    # a picks up c_in^dag through c^dag, b picks up c_in through c
    U = np.array([0, -1j * gb * s / zc])
    V = np.array([-1j * ga * s / z, 0])
    a = ladder_to_quadrature(P, Q)
    b = ladder_noise_to_quadrature(U, V)
    rate = max(ga, gb) ** 2 / abs(z)
    return DriftDiffusion(a, 0.5 * b @ b.T, rate)


def adiabatic_quadrature(theta: float = 0.0) -> QuadratureSpec:
    """``X_ab(theta)`` on the reduced ``(a, b)`` layout."""
    c, s = 0.5 * math.cos(theta), -0.5 * math.sin(theta)
    return QuadratureSpec(np.array([c, s, c, s]))
