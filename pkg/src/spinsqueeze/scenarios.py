"""Scenario runners shared by the command line and the figure presets.

Each runner takes plain parameters (rates in units of one reference rate) and
returns a list of :class:`Table` objects; file output lives in :mod:`.cli`.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import adiabatic as adi
from . import dynamics as dyn
from . import inhomogeneous as inh
from . import output as out
from .core import homogeneous_system, mean_excitation, quadrature_variance, two_mode_quadrature, vacuum_state


class GrowingModeError(RuntimeError):
    """A scenario would integrate an unstable system without permission."""

    def __init__(self, eigenvalue: complex, context: str = ""):
        self.eigenvalue = complex(eigenvalue)
        where = f" ({context})" if context else ""
        super().__init__(
            f"unstable system{where}: drift eigenvalue {self.eigenvalue.real:.6g}{self.eigenvalue.imag:+.6g}j "
            "has positive real part; pass --allow-growing to run anyway"
        )


@dataclass
class Table:
    name: str
    columns: list
    rows: list
    description: str = ""
    meta: dict = field(default_factory=dict)


def check_growth(dd: dyn.DriftDiffusion, allow_growing: bool, context: str = ""):
    ev = np.linalg.eigvals(dd.drift)
    worst = ev[np.argmax(ev.real)]
    if worst.real > dyn.GROWTH_TOL * max(1.0, dd.rate) and not allow_growing:
        raise GrowingModeError(worst, context)


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def dispatch(fn, items, workers: int | None = None) -> list:
    """Map ``fn`` over ``items`` on a thread pool; results keep the input order."""
    items = list(items)
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _half_quadratures(system):
    return two_mode_quadrature(system, "a", "b", 0.0), two_mode_quadrature(system, "a", "b", math.pi / 2)


def _record_grid(t_end: float, dt: float, record: float | None):
    n, h = dyn._grid(t_end, dt)
    every = 1 if record is None else max(1, int(round(record / h)))
    return h, every


def evolve_homogeneous(g_a, g_b, kappa, delta, t_end, dt=None, record=None, method="exact", allow_growing=False, name="evolve"):
    """Time series of ``var X_ab(0)``, ``var X_ab(pi/2)`` and the mean excitations."""
    system = homogeneous_system(g_a, g_b, kappa, delta)
    dd = dyn.build_drift_diffusion(system)
    check_growth(dd, allow_growing, name)
    if dt is None:
        dt = dyn.step_bound(dd)
    h, every = _record_grid(t_end, dt, record)
    tr = dyn.evolve(dd, vacuum_state(system), t_end, h, method=method, record_every=every)
    q0, q1 = _half_quadratures(system)
    cols = np.column_stack([tr.times, tr.variance(q0), tr.variance(q1)] + [tr.excitation(i) for i in range(3)])
    rows = cols.tolist()
    return [Table(name, ["t", "var_X0", "var_Xpi2", "n_a", "n_b", "n_c"], rows, "homogeneous trajectory from vacuum")]


def steady_homogeneous(g_a, g_b, kappa, delta, name="steady"):
    system = homogeneous_system(g_a, g_b, kappa, delta)
    dd = dyn.build_drift_diffusion(system)
    state = dyn.steady_state(dd)
    q0, q1 = _half_quadratures(system)
    row = [
        quadrature_variance(state, q0),
        quadrature_variance(state, q1),
        mean_excitation(state, "a", system),
        mean_excitation(state, "b", system),
        mean_excitation(state, "c", system),
    ]
    meta = {}
    if g_b > g_a >= 0:
        meta["longtime_formula"] = adi.longtime_variance(g_a, g_b)
    return [Table(name, ["var_X0", "var_Xpi2", "n_a", "n_b", "n_c"], [row], "steady state from vacuum", meta)]


def spectrum_table(g_a, g_b, kappa, delta, name="spectrum"):
    rep = dyn.spectrum(g_a, g_b, kappa, delta)
    # pair numeric eigenvalues with the closed form for a stable order
    cost = np.abs(rep.analytic[:, None] - rep.numeric[None, :])
    _, cols = linear_sum_assignment(cost)
    numeric = rep.numeric[cols]
    rows = [
        [k + 1, float(a.real), float(a.imag), float(n.real), float(n.imag)]
        for k, (a, n) in enumerate(zip(rep.analytic, numeric))
    ]
    meta = {"classification": rep.classification, "analytic_classification": dyn.stability_classify(g_a, g_b, kappa, delta)}
    return [Table(name, ["index", "analytic_re", "analytic_im", "numeric_re", "numeric_im"], rows, "drift eigenvalues", meta)]


def adiabatic_comparison(g_a, g_b, kappa, delta, t_end=None, dt=0.05, name="adiabatic"):
    """Closed form, reduced numeric model and full three-mode model side by side."""
    p = adi.AdiabaticParams(g_a, g_b, kappa, delta)
    t_star, v_min = adi.optimal_time_min_variance(p) if g_b > g_a else (math.nan, math.nan)
    if t_end is None:
        t_end = 3 * t_star if math.isfinite(t_star) else 10 / kappa
    red = adi.adiabatic_drift(p)
    t, v_red = dyn.variance_trajectory(red, vacuum_state(2), adi.adiabatic_quadrature(0.0), t_end, dt)
    system = homogeneous_system(g_a, g_b, kappa, delta)
    full = dyn.build_drift_diffusion(system)
    _, v_full = dyn.variance_trajectory(full, vacuum_state(system), two_mode_quadrature(system, "a", "b", 0.0), t_end, dt)
    v_an = adi.analytic_variance(p, t)
    v_short = adi.short_time_variance(p, t)
    rows = [[float(a), float(b), float(c), float(d), float(e)] for a, b, c, d, e in zip(t, v_an, v_red, v_full, v_short)]
    k = int(np.argmin(v_full))
    meta = {
        "t_star": t_star,
        "v_min_closed_form": v_min,
        "v_min_first_order": adi.minimum_variance_first_order(p) if g_b > g_a else math.nan,
        "full_model_min_time": float(t[k]),
        "full_model_min_variance": float(v_full[k]),
    }
    return [Table(name, ["t", "analytic", "reduced", "full", "short_time"], rows, "adiabatic elimination vs full model", meta)]


def output_study(g_a, g_b, kappa, delta, t_pulse=None, horizon=None, grid=out.DEFAULT_GRID, allow_growing=False, name="output"):
    """Emitted-field squeezing for the two ansatz modes and the optimized mode."""
    system = homogeneous_system(g_a, g_b, kappa, delta)
    check_growth(dyn.build_drift_diffusion(system), allow_growing, name)
    plan = out.OutputStagePlan.from_system(system, t_pulse=t_pulse, horizon=horizon, n_grid=grid)
    sig = out.stage1_state(plan)
    kern = out.output_kernels(plan, sig)
    traj = out.stage2_trajectory(plan, sig)
    modes = {
        "exp_decay": out.candidate_mode("exp_decay", plan),
        "sqrt_photon": out.candidate_mode("sqrt_photon", plan, traj),
    }
    opt = out.optimize_mode(kern)
    modes["optimized"] = opt.mode
    half = math.pi / 2
    summary = {
        "t_pulse": plan.t_pulse,
        "spin_var_X0_at_pulse": quadrature_variance(sig, two_mode_quadrature(system, "a", "b", 0.0)),
        "emitted_photons": kern.emitted_photons(),
        "var_exp_decay": out.mode_variance(kern, modes["exp_decay"], half),
        "var_sqrt_photon": out.mode_variance(kern, modes["sqrt_photon"], half),
        "var_optimized": opt.variance,
        "theta_optimized": opt.theta,
        "optimizer_degenerate": opt.degenerate,
    }
    rows = [
        [float(t)] + sum(([float(m.samples[k].real), float(m.samples[k].imag)] for m in modes.values()), [])
        for k, t in enumerate(plan.times)
    ]
    cols = ["t"] + sum(([f"{n}_re", f"{n}_im"] for n in modes), [])
    summary_table = Table(f"{name}_summary", list(summary), [list(summary.values())], "output-field variances", {})
    return [Table(f"{name}_modes", cols, rows, "normalized mode functions u(t)", {}), summary_table], modes


def inhomogeneous_sweep(
    g_a, g_b, kappa, delta_c, widths, t_end, dt, bins=51, cutoff=4.0, fwhm=False,
    scheme=inh.EQUAL_MASS, weighting="coupling", allow_growing=False, name="inhomo", workers=None,
):
    """``var X_ab(0)`` on a time grid for several broadening widths."""
    prepared = []
    for w in widths:
        dist = inh.FrequencyDistribution(w, cutoff, bins, fwhm)
        ba, bb = inh.discretize(dist, g_a, scheme), inh.discretize(dist, g_b, scheme)
        system = inh.build_system(ba, bb, kappa, delta_c)
        dd = dyn.build_drift_diffusion(system)
        check_growth(dd, allow_growing, f"{name} width {w:g}")
        prepared.append((dd, system, inh.collective_quadrature(ba, bb, system, 0.0, weighting)))

    def point(item):
        dd, system, q = item
        return dyn.variance_trajectory(dd, vacuum_state(system), q, t_end, dt)

    results = dispatch(point, prepared, workers)
    t = results[0][0]
    series = [v for _, v in results]
    mins = [float(v.min()) for v in series]
    cols = ["t"] + [f"var_X0_w{w:g}" for w in widths]
    rows = [[float(t[k])] + [float(s[k]) for s in series] for k in range(t.size)]
    summary = Table(f"{name}_minima", ["width", "min_var_X0"], [[float(w), m] for w, m in zip(widths, mins)], "minimum over time per width")
    return [Table(name, cols, rows, "collective variance under broadening"), summary]


def min_variance_grid(kappas, ratios, g_b=1.0, delta=None, t_end=None, dt=0.02, name="min_variance", workers=None):
    """Minimum over time of ``var X_ab(0)`` on a grid of ``kappa`` and ``g_a/g_b``."""
    delta = g_b if delta is None else delta

    def point(kr):
        k, r = kr
        horizon = t_end if t_end is not None else min(20 / k, 100 / g_b)
        system = homogeneous_system(r * g_b, g_b, k, delta)
        dd = dyn.build_drift_diffusion(system)
        _, v = dyn.variance_trajectory(dd, vacuum_state(system), two_mode_quadrature(system, "a", "b", 0.0), horizon, dt)
        return [float(k), float(r * g_b), float(v.min())]

    rows = dispatch(point, [(k, r) for k in kappas for r in ratios], workers)
    return [Table(name, ["kappa", "g_a", "min_var_X0"], rows, "minimally achieved variance")]


def adiabatic_curves(g_b, ratios, kappa, delta, t_end, dt, name="adiabatic_curves"):
    t = np.arange(int(round(t_end / dt)) + 1) * dt
    curves = [adi.analytic_variance(adi.AdiabaticParams(r * g_b, g_b, kappa, delta), t) for r in ratios]
    cols = ["t"] + [f"var_X0_ga{r:g}" for r in ratios]
    rows = [[float(t[k])] + [float(c[k]) for c in curves] for k in range(t.size)]
    return [Table(name, cols, rows, "closed-form adiabatic variance")]


def detuning_curves(g_a, g_b, kappa, deltas, t_end, dt, name="detuning", workers=None):
    def point(d):
        system = homogeneous_system(g_a, g_b, kappa, d)
        dd = dyn.build_drift_diffusion(system)
        return dyn.variance_trajectory(dd, vacuum_state(system), two_mode_quadrature(system, "a", "b", 0.0), t_end, dt)

    results = dispatch(point, deltas, workers)
    t = results[0][0]
    series = [v for _, v in results]
    cols = ["t"] + [f"var_X0_delta{d:g}" for d in deltas]
    rows = [[float(t[k])] + [float(s[k]) for s in series] for k in range(t.size)]
    return [Table(name, cols, rows, "variance for several cavity detunings")]


def output_kappa_sweep(kappas, g_b=1.0, ratio=0.9, delta=None, grid=out.DEFAULT_GRID, name="output_sweep", workers=None):
    delta = 0.01 * g_b if delta is None else delta

    def point(k):
        tables, _ = output_study(ratio * g_b, g_b, k, delta, grid=grid, name=name)
        s = dict(zip(tables[1].columns, tables[1].rows[0]))
        return [float(k), s["var_exp_decay"], s["var_sqrt_photon"], s["var_optimized"], s["t_pulse"]]

    rows = dispatch(point, kappas, workers)
    return [Table(name, ["kappa", "var_exp_decay", "var_sqrt_photon", "var_optimized", "t_pulse"], rows, "output squeezing vs kappa")]
