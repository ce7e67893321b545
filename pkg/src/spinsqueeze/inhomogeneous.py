"""Gaussian inhomogeneous broadening by frequency binning.

Spins of each ensemble are grouped into frequency classes; class ``k`` becomes
its own oscillator with detuning ``Delta_k`` and coupling ``g sqrt(w_k)``, where
``w_k`` is the probability mass of the class.  The cavity then couples to the
collective combination ``sum_k sqrt(w_k) m_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import INVERTED, REGULAR, ModeDescriptor, ModeSystem, QuadratureSpec

FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))
EQUAL_MASS = "mass"
EQUAL_WIDTH = "width"


@dataclass(frozen=True)
class FrequencyDistribution:
    """Truncated Gaussian of spin detunings.

    ``width`` is the standard deviation unless ``fwhm=True``, in which case it is
    the full width at half maximum.
    """

    width: float
    cutoff: float = 4.0
    bins: int = 51
    fwhm: bool = False

    def __post_init__(self):
        if not math.isfinite(self.width) or self.width < 0:
            raise ValueError("width must be finite and >= 0")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be > 0")
        if int(self.bins) != self.bins or self.bins < 1 or self.bins % 2 == 0:
            raise ValueError(f"bins must be a positive odd integer, got {self.bins}")

    @property
    def sigma(self) -> float:
        return self.width / FWHM_PER_SIGMA if self.fwhm else self.width


@dataclass(frozen=True)
class BinnedEnsemble:
    centers: np.ndarray
    weights: np.ndarray
    couplings: np.ndarray
    g_total: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        g = np.asarray(self.couplings, dtype=float)
        if c.ndim != 1 or c.size == 0 or w.shape != c.shape or g.shape != c.shape:
            raise ValueError("centers, weights and couplings must be equal-length nonempty vectors")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        for arr in (c, w, g):
            arr.flags.writeable = False
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "couplings", g)

    def __len__(self) -> int:
        return self.centers.size


def _symmetrize(centers: np.ndarray, weights: np.ndarray):
    # mirror the lower half so roundoff cannot break the symmetry
    m = centers.size
    half = m // 2
    c = centers.copy()
    w = weights.copy()
    c[m - half :] = -c[:half][::-1]
    w[m - half :] = w[:half][::-1]
    c[half] = 0.0
    return c, w / w.sum()


def discretize(dist: FrequencyDistribution, g_total: float, scheme: str = EQUAL_MASS) -> BinnedEnsemble:
    """Bin the truncated Gaussian into ``dist.bins`` frequency classes.

    ``scheme="mass"`` (default): bins of equal probability inside the cutoff,
    each represented by its conditional mean detuning.  ``scheme="width"``:
    equal-width bins on ``[-cutoff sigma, cutoff sigma]`` at their midpoints,
    weighted by their Gaussian mass.  Equal-width bins put all detunings on a
    commensurate grid, which produces spurious collective revivals at
    ``t = 2 pi / (bin spacing)``; equal-mass bins do not.
    """
    if g_total < 0:
        raise ValueError("g_total must be >= 0")
    sigma = dist.sigma
    m = int(dist.bins)
    if sigma == 0 or m == 1:
        return BinnedEnsemble(np.zeros(1), np.ones(1), np.array([float(g_total)]), float(g_total))
    cut = dist.cutoff
    lo, hi = norm.cdf(-cut), norm.cdf(cut)
    if scheme == EQUAL_MASS:
        q = np.linspace(lo, hi, m + 1)
        edges = norm.ppf(q)
        edges[0], edges[-1] = -cut, cut
        mass = np.diff(q)
        centers = (norm.pdf(edges[:-1]) - norm.pdf(edges[1:])) / mass
    elif scheme == EQUAL_WIDTH:
        edges = np.linspace(-cut, cut, m + 1)
        mass = np.diff(norm.cdf(edges))
        centers = 0.5 * (edges[:-1] + edges[1:])
    else:
        raise ValueError(f"unknown binning scheme {scheme!r}")
    centers, w = _symmetrize(centers * sigma, mass)
    return BinnedEnsemble(centers, w, g_total * np.sqrt(w), float(g_total))


def build_system(bins_a: BinnedEnsemble, bins_b: BinnedEnsemble, kappa: float, delta_c: float) -> ModeSystem:
    """Mode order: inverted classes ``a0..``, regular classes ``b0..``, cavity ``c`` last."""
    if len(bins_a) == 0 or len(bins_b) == 0:
        raise ValueError("both ensembles need at least one bin")
    modes = [ModeDescriptor(f"a{k}", INVERTED, float(g), float(d)) for k, (g, d) in enumerate(zip(bins_a.couplings, bins_a.centers))]
    modes += [ModeDescriptor(f"b{k}", REGULAR, float(g), float(d)) for k, (g, d) in enumerate(zip(bins_b.couplings, bins_b.centers))]
    modes.append(ModeDescriptor("c", REGULAR, 0.0, 0.0))
    return ModeSystem(tuple(modes), len(modes) - 1, kappa, delta_c)


def collective_weights(bins: BinnedEnsemble, weighting: str = "coupling") -> np.ndarray:
    """Unit-norm amplitudes of the collective mode over the bins."""
    if weighting == "coupling":
        if bins.g_total > 0:
            return bins.couplings / bins.g_total
        return np.sqrt(bins.weights)
    if weighting == "uniform":
        return np.full(len(bins), 1 / math.sqrt(len(bins)))
    raise ValueError(f"unknown weighting {weighting!r}")


def _check_matches(bins: BinnedEnsemble, system: ModeSystem, prefix: str, kind: str) -> list[int]:
    idx = []
    for k in range(len(bins)):
        try:
            i = system.index(f"{prefix}{k}")
        except KeyError:
            raise ValueError(f"system has no mode {prefix}{k}; it was not built from these bins") from None
        mode = system.modes[i]
        if mode.kind != kind or not math.isclose(mode.coupling, bins.couplings[k], rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError(f"mode {prefix}{k} does not match the bins")
        idx.append(i)
    if len(system.spin_indices(kind)) != len(bins):
        raise ValueError(f"system has a different number of {kind} modes than the bins")
    return idx


def collective_quadrature(
    bins_a: BinnedEnsemble,
    bins_b: BinnedEnsemble,
    system: ModeSystem,
    theta: float,
    weighting: str = "coupling",
) -> QuadratureSpec:
    """``X_ab(theta)`` over the collective modes of the two binned ensembles."""
    ia = _check_matches(bins_a, system, "a", INVERTED)
    ib = _check_matches(bins_b, system, "b", REGULAR)
    v = np.zeros(system.dim)
    c, s = 0.5 * math.cos(theta), -0.5 * math.sin(theta)
    for idx, amp in ((ia, collective_weights(bins_a, weighting)), (ib, collective_weights(bins_b, weighting))):
        for i, a in zip(idx, amp):
            v[2 * i] += c * a
            v[2 * i + 1] += s * a
    return QuadratureSpec(v)
