"""Batch front-end: ``simulate [CONFIG] [--scenario S] [--preset ID] ...``.

Config files are INI-style with the sections below; every key is optional and
unknown sections or keys are rejected with their line number.

    [run]           scenario, format (csv|json), out, allow_growing, workers
    [model]         g_a, g_b, kappa, delta, units (kappa|absolute)
    [time]          t_end, dt, record, method (exact|rk4)
    [output]        t_pulse, horizon, grid
    [distribution]  widths, cutoff, bins, fwhm, scheme (mass|width), weighting (coupling|uniform)
    [figure]        id

Rates are in units of kappa unless ``units = absolute``, in which case rates are
divided by ``kappa`` and times multiplied by it on ingest.  The default output
directory comes from ``SPINSQUEEZE_OUT`` (fallback ``simulate_out``).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import inhomogeneous as inh
from . import scenarios as sc

ENV_OUT = "SPINSQUEEZE_OUT"
DEFAULT_OUT = "simulate_out"
SCENARIOS = ("evolve", "steady", "spectrum", "adiabatic", "output", "inhomo", "figure")
FORMATS = ("csv", "json")

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# name -> (parser, default); parser raises ValueError on bad text
def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        val = text.strip()
        if val not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {val!r}")
        return val

    return parse


def _positive(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise ValueError(f"expected a positive number, got {text!r}")
    return val


def _finite(text: str) -> float:
    val = float(text)
    if not math.isfinite(val):
        raise ValueError(f"expected a finite number, got {text!r}")
    return val


def _count(text: str) -> int:
    val = int(text)
    if val < 1:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return val


def _float_list(text: str) -> list:
    vals = [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    if not vals:
        raise ValueError("expected a comma-separated list of numbers")
    return vals


SCHEMA = {
    "run": {
        "scenario": (_choice(*SCENARIOS), "evolve"),
        "format": (_choice(*FORMATS), "csv"),
        "out": (str, None),
        "allow_growing": (_bool, False),
        "workers": (_count, None),
    },
    "model": {
        "g_a": (_finite, 4.5),
        "g_b": (_finite, 5.0),
        "kappa": (_positive, 1.0),
        "delta": (_finite, 0.0),
        "units": (_choice("kappa", "absolute"), "kappa"),
    },
    "time": {
        "t_end": (_positive, None),
        "dt": (_positive, None),
        "record": (_positive, None),
        "method": (_choice("exact", "rk4"), "exact"),
    },
    "output": {
        "t_pulse": (_finite, None),
        "horizon": (_positive, None),
        "grid": (_count, 2000),
    },
    "distribution": {
        "widths": (_float_list, [0.0, 0.05, 0.5, 5.0]),
        "cutoff": (_positive, 4.0),
        "bins": (_count, 51),
        "fwhm": (_bool, False),
        "scheme": (_choice(inh.EQUAL_MASS, inh.EQUAL_WIDTH), inh.EQUAL_MASS),
        "weighting": (_choice("coupling", "uniform"), "coupling"),
    },
    "figure": {
        "id": (str, None),
    },
}

_RATE_KEYS = {("model", "g_a"), ("model", "g_b"), ("model", "delta"), ("distribution", "widths")}
_TIME_KEYS = {("time", "t_end"), ("time", "dt"), ("time", "record"), ("output", "t_pulse"), ("output", "horizon")}


def defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _line_index(text: str) -> dict:
    """Map (section, key) and section names to 1-based line numbers."""
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines.setdefault(section, n)
            continue
        for sep in ("=", ":"):
            if sep in line:
                key = line.split(sep, 1)[0].strip().lower()
                lines.setdefault((section, key), n)
                break
    return lines


def parse_config(text: str, source: str = "<config>") -> dict:
    """Validate INI text against :data:`SCHEMA` and return a nested dict."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    where = _line_index(text)
    cfg = defaults()
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{where.get(section, '?')}: unknown section [{section}]")
        for key, raw in cp.items(section):
            line = where.get((section, key), "?")
            if key not in SCHEMA[section]:
                known = ", ".join(SCHEMA[section])
                raise ConfigError(f"{source}:{line}: unknown key {section}.{key} (known: {known})")
            parser = SCHEMA[section][key][0]
            try:
                cfg[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: field {section}.{key}: {exc}") from None
    return normalize_units(cfg)


def normalize_units(cfg: dict) -> dict:
    model = cfg["model"]
    if model["units"] != "absolute":
        return cfg
    k = model["kappa"]
    for sec, key in _RATE_KEYS:
        val = cfg[sec][key]
        if val is not None:
            cfg[sec][key] = [v / k for v in val] if isinstance(val, list) else val / k
    for sec, key in _TIME_KEYS:
        if cfg[sec][key] is not None:
            cfg[sec][key] = cfg[sec][key] * k
    model["kappa"] = 1.0
    model["units"] = "kappa"
    return cfg


# ---------------------------------------------------------------------------
# presets

PRESETS = {
    "fig3a": {
        "caption": "mean excitations; Delta=10 kappa, g_b=5 kappa, g_a=0.6 g_b",
        "params": {"g_a": 3.0, "g_b": 5.0, "kappa": 1.0, "delta": 10.0, "t_end": 20.0, "record": 0.01},
    },
    "fig3b": {
        "caption": "mean excitations; Delta=10 kappa, g_b=5 kappa, g_a=0.9 g_b",
        "params": {"g_a": 4.5, "g_b": 5.0, "kappa": 1.0, "delta": 10.0, "t_end": 20.0, "record": 0.01},
    },
    "fig3c": {
        "caption": "mean excitations; Delta=10 kappa, g_b=5 kappa, g_a=1.2 g_b (exponential growth)",
        "params": {"g_a": 6.0, "g_b": 5.0, "kappa": 1.0, "delta": 10.0, "t_end": 20.0, "record": 0.01},
        "allow_growing": True,
    },
    "fig4": {
        "caption": "var X_ab(0) and var X_ab(pi/2); g_b=kappa, Delta=5 kappa, g_a=0.5 g_b",
        "params": {"g_a": 0.5, "g_b": 1.0, "kappa": 1.0, "delta": 5.0, "t_end": 50.0, "record": 0.01},
    },
    "fig5": {
        "caption": "var X_ab(0); g_b=5 kappa, g_a=0.9 g_b, Delta in {75, 50, 20, 5} kappa",
        "params": {"g_a": 4.5, "g_b": 5.0, "kappa": 1.0, "deltas": [75.0, 50.0, 20.0, 5.0], "t_end": 150.0, "dt": 0.01},
    },
    "fig6": {
        "caption": "minimum over time of var X_ab(0); Delta=g_b, grid over kappa and g_a (units of g_b)",
        "params": {
            "g_b": 1.0,
            "kappas": [round(0.1 * i, 10) for i in range(1, 21)],
            "ratios": [round(0.05 * i, 10) for i in range(1, 20)],
            "dt": 0.02,
        },
    },
    "fig7": {
        "caption": "closed-form adiabatic var X_ab(0); Delta=75 kappa, g_b=5 kappa, g_a in {0.9, 0.8, 0.7, 0.6} g_b",
        "params": {"g_b": 5.0, "ratios": [0.9, 0.8, 0.7, 0.6], "kappa": 1.0, "delta": 75.0, "t_end": 150.0, "dt": 0.05},
    },
    "fig8": {
        "caption": "output-mode variance at theta=pi/2 vs kappa; Delta_c=0.01 g_b, g_a=0.9 g_b (units of g_b)",
        "params": {"g_b": 1.0, "ratio": 0.9, "delta": 0.01, "kappas": [round(0.2 * i, 10) for i in range(1, 11)]},
    },
    "fig9": {
        "caption": "output mode functions; g_b=1.25 kappa, Delta=0.001 kappa, g_a=0.9 g_b",
        "params": {"g_a": 1.125, "g_b": 1.25, "kappa": 1.0, "delta": 0.001},
    },
    "fig10top": {
        "caption": "var X_ab(0) under broadening; g_b=5 kappa, g_a=0.9 g_b, Delta_c=75 kappa, widths {0, 0.05, 0.5, 5} kappa",
        "params": {"g_a": 4.5, "g_b": 5.0, "kappa": 1.0, "delta": 75.0, "widths": [0.0, 0.05, 0.5, 5.0], "t_end": 100.0, "dt": 0.05},
    },
    "fig10bottom": {
        "caption": "var X_ab(0) under broadening; g_b=5 kappa, g_a=0.9 g_b, Delta_c=0.5 kappa, widths {0, 0.05, 0.5, 5} kappa",
        "params": {"g_a": 4.5, "g_b": 5.0, "kappa": 1.0, "delta": 0.5, "widths": [0.0, 0.05, 0.5, 5.0], "t_end": 10.0, "dt": 0.01},
    },
}


def figure_presets() -> list:
    return sorted(PRESETS)


def run_preset(fig_id: str, cfg: dict, allow_growing: bool):
    if fig_id not in PRESETS:
        raise ConfigError(f"unknown figure id {fig_id!r}; known: {', '.join(figure_presets())}")
    spec = PRESETS[fig_id]
    p = spec["params"]
    allow = allow_growing or spec.get("allow_growing", False)
    dist = cfg["distribution"]
    workers = cfg["run"]["workers"]
    if fig_id.startswith("fig3"):
        tables = sc.evolve_homogeneous(p["g_a"], p["g_b"], p["kappa"], p["delta"], p["t_end"], record=p["record"], allow_growing=allow, name=fig_id)
        t = tables[0]
        t.columns, t.rows = ["t", "n_a", "n_b"], [[r[0], r[3], r[4]] for r in t.rows]
        return tables, {}
    if fig_id == "fig4":
        tables = sc.evolve_homogeneous(p["g_a"], p["g_b"], p["kappa"], p["delta"], p["t_end"], record=p["record"], allow_growing=allow, name=fig_id)
        t = tables[0]
        t.columns, t.rows = ["t", "var_X0", "var_Xpi2"], [r[:3] for r in t.rows]
        return tables, {}
    if fig_id == "fig5":
        return sc.detuning_curves(p["g_a"], p["g_b"], p["kappa"], p["deltas"], p["t_end"], p["dt"], name=fig_id, workers=workers), {}
    if fig_id == "fig6":
        return sc.min_variance_grid(p["kappas"], p["ratios"], g_b=p["g_b"], dt=p["dt"], name=fig_id, workers=workers), {}
    if fig_id == "fig7":
        return sc.adiabatic_curves(p["g_b"], p["ratios"], p["kappa"], p["delta"], p["t_end"], p["dt"], name=fig_id), {}
    if fig_id == "fig8":
        return sc.output_kappa_sweep(p["kappas"], g_b=p["g_b"], ratio=p["ratio"], delta=p["delta"], name=fig_id, workers=workers), {}
    if fig_id == "fig9":
        tables, modes = sc.output_study(p["g_a"], p["g_b"], p["kappa"], p["delta"], allow_growing=allow, name=fig_id)
        return tables, modes
    # fig10
    return (
        sc.inhomogeneous_sweep(
            p["g_a"], p["g_b"], p["kappa"], p["delta"], p["widths"], p["t_end"], p["dt"],
            bins=dist["bins"], cutoff=dist["cutoff"], fwhm=dist["fwhm"], scheme=dist["scheme"],
            weighting=dist["weighting"], allow_growing=allow, name=fig_id, workers=workers,
        ),
        {},
    )


def run_scenario(cfg: dict):
    run, m, tm, o, dist = cfg["run"], cfg["model"], cfg["time"], cfg["output"], cfg["distribution"]
    allow = run["allow_growing"]
    args = (m["g_a"], m["g_b"], m["kappa"], m["delta"])
    scen = run["scenario"]
    if scen == "figure":
        fig_id = cfg["figure"]["id"]
        if not fig_id:
            raise ConfigError("scenario 'figure' needs figure.id or --preset")
        return run_preset(fig_id, cfg, allow)
    if scen == "evolve":
        return sc.evolve_homogeneous(*args, tm["t_end"] or 20.0, dt=tm["dt"], record=tm["record"], method=tm["method"], allow_growing=allow), {}
    if scen == "steady":
        return sc.steady_homogeneous(*args), {}
    if scen == "spectrum":
        return sc.spectrum_table(*args), {}
    if scen == "adiabatic":
        return sc.adiabatic_comparison(*args, t_end=tm["t_end"], dt=tm["dt"] or 0.05), {}
    if scen == "output":
        return sc.output_study(*args, t_pulse=o["t_pulse"], horizon=o["horizon"], grid=o["grid"], allow_growing=allow)
    if scen == "inhomo":
        return (
            sc.inhomogeneous_sweep(
                *args, dist["widths"], tm["t_end"] or 10.0, tm["dt"] or 0.01, bins=dist["bins"], cutoff=dist["cutoff"],
                fwhm=dist["fwhm"], scheme=dist["scheme"], weighting=dist["weighting"], allow_growing=allow,
                workers=run["workers"],
            ),
            {},
        )
    raise ConfigError(f"unknown scenario {scen!r}")


# ---------------------------------------------------------------------------
# writing


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def write_table(table: sc.Table, directory: Path, fmt: str) -> str:
    if fmt == "csv":
        name = f"{table.name}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])
        (directory / name).write_text(buf.getvalue())
    else:
        name = f"{table.name}.json"
        payload = {"columns": table.columns, "rows": _jsonable(table.rows)}
        (directory / name).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return name


def write_outputs(tables, modes, directory: Path, fmt: str, cfg: dict, preset: str | None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for table in tables:
        name = write_table(table, directory, fmt)
        files.append({"file": name, "columns": table.columns, "description": table.description, "meta": _jsonable(table.meta)})
    for label, mode in modes.items():
        name = f"mode_{label}.csv"
        mode.to_csv(directory / name)
        files.append({"file": name, "columns": ["t", "u"], "description": f"mode function {label}", "meta": {}})
    manifest = {
        "tool": "simulate",
        "version": __version__,
        "scenario": cfg["run"]["scenario"],
        "preset": preset,
        "caption": PRESETS[preset]["caption"] if preset else None,
        "preset_parameters": _jsonable(PRESETS[preset]["params"]) if preset else None,
        # worker count does not change results, so it stays out of the manifest
        "config": _jsonable({sec: {k: v for k, v in keys.items() if (sec, k) != ("run", "workers")} for sec, keys in cfg.items()}),
        "files": files,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simulate", description="Gaussian spin-ensemble squeezing simulator")
    ap.add_argument("config", nargs="?", help="INI configuration file")
    ap.add_argument("--scenario", choices=SCENARIOS)
    ap.add_argument("--out", help=f"output directory (default ${ENV_OUT} or {DEFAULT_OUT})")
    ap.add_argument("--format", choices=FORMATS)
    ap.add_argument("--preset", help="figure preset id; implies --scenario figure")
    ap.add_argument("--allow-growing", action="store_true", help="integrate unstable systems anyway")
    ap.add_argument("--workers", type=int, help="threads for sweep points (results do not depend on it)")
    ap.add_argument("--list-presets", action="store_true", help="print preset ids with their captions")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_presets:
        for pid in figure_presets():
            print(f"{pid}: {PRESETS[pid]['caption']}")
        return EXIT_OK
    try:
        if args.config:
            path = Path(args.config)
            try:
                text = path.read_text()
            except OSError as exc:
                raise ConfigError(f"{path}: {exc.strerror}") from None
            cfg = parse_config(text, str(path))
        else:
            cfg = defaults()
        if args.preset:
            cfg["run"]["scenario"] = "figure"
            cfg["figure"]["id"] = args.preset
        elif args.scenario:
            cfg["run"]["scenario"] = args.scenario
        if args.format:
            cfg["run"]["format"] = args.format
        if args.allow_growing:
            cfg["run"]["allow_growing"] = True
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg["run"]["workers"] = args.workers
        out_dir = Path(args.out or cfg["run"]["out"] or os.environ.get(ENV_OUT) or DEFAULT_OUT)
        tables, modes = run_scenario(cfg)
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sc.GrowingModeError, dyn.NonHurwitzError) as exc:
        print(f"simulate: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (dyn.UnstableIntegrationError, ValueError, ArithmeticError) as exc:
        print(f"simulate: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    preset = cfg["figure"]["id"] if cfg["run"]["scenario"] == "figure" else None
    manifest = write_outputs(tables, modes, out_dir, cfg["run"]["format"], cfg, preset)
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
