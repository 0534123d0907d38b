"""Configuration documents: defaults, validation, unit conversion.

A run is described by one JSON document with sections ``potential``,
``initial``, ``fit``, ``wigner``, ``spmc``, ``exact`` and ``output``.
User documents are deep-merged over the defaults below; every quantity
in a document is in lab units (angstrom, eV, fs, cm^-1, electron
masses), and this module converts to atomic units when building the
typed objects the engines consume.
"""

import copy
import json
import math
from dataclasses import dataclass

import numpy as np

from . import units
from .grids import PhaseSpaceGrid
from .potential import (
    DoubleWellParams,
    FitConfig,
    derive_quartic_coefficients,
    eval_double_well,
    truncate,
)
from .reference import InitialStateParams
from .spmc import SpmcConfig
from .wigner import (
    AnalyticGaussianWigner,
    MomentumGrid,
    SmoothedPolynomialWigner,
)


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


DEFAULT_CONFIG = {
    "description": "",
    "potential": {
        "kind": "double_well",          # double_well | harmonic_y | free
        "mass_me": 1837.0,
        "omega_wavenumber": 2980.0,
        "coupling_eV_ang2": 2.34,
        "x_well_ang": 0.502,
        "barrier_eV": 0.27,
        "v_thr_eV": 4.0,
    },
    "initial": {
        "x0_ang": None,                  # default: minus the well distance
        "y0_ang": 0.0,
    },
    "fit": {
        "n_terms": 3,
        "window_x_ang": 1.5,
        "window_y_ang": 1.0,
        "nx": 101,
        "ny": 101,
        "learning_rate": 0.1,
        "max_iter": 12000,
        "tol": 1e-10,
        "n_restarts": 8,
        "low_region_weight": 1000.0,
        "low_region_threshold_eV": 1.0,
        "seed": 2024,
    },
    "wigner": {
        "representation": "gaussian_analytic",   # or polynomial_smoothed
        "model_file": "model.json",
        "sigma": 1.5,                              # smoothing width, atomic momentum units
        "window": {"x": [-1.17, 1.17], "y": [-0.85, 0.85], "nx": 46, "ny": 34},  # angstrom
        "gamma_grid": {"p_box": 7.0, "n": 256},
        "sampler_grid": {"p_box": 7.0, "n": 64},
    },
    "spmc": {
        "dt_fs": 0.001,
        "t_total_fs": 100.0,
        "n_particles": 100000,
        "annihilation_period": 5,
        "seed": 11,
        "gamma_dt_limit": 0.05,
        "particle_cap": 10000000,
        "observable_interval_fs": 0.5,
        "snapshot_times_fs": [0.0, 25.0, 50.0, 100.0],
        "annihilation_grid": {
            "x": {"min": -1.9, "max": 1.9, "cells": 48},      # angstrom
            "y": {"min": -1.27, "max": 1.27, "cells": 32},
            "px": {"min": -28.0, "max": 28.0, "cells": 16},   # atomic units
            "py": {"min": -28.0, "max": 28.0, "cells": 16},
        },
        "init_grid_cells": 24,
        "init_grid_sigmas": 6.0,
        "snapshot_grid": {
            "x": {"min": -1.5, "max": 1.5, "cells": 48},
            "y": {"min": -1.0, "max": 1.0, "cells": 32},
            "px": {"min": -16.0, "max": 16.0, "cells": 16},
            "py": {"min": -22.0, "max": 22.0, "cells": 16},
        },
        "prune_domain": {"x": [-2.4, 2.4], "y": [-1.27, 1.27], "p_max": 26.0},
    },
    "exact": {
        "dt_fs": 0.002,
        "t_total_fs": 100.0,
        "nx": 256,
        "ny": 128,
        "window_x_ang": 1.5,
        "window_y_ang": 1.0,
        "observable_interval_fs": 0.5,
        "snapshot_times_fs": [0.0, 25.0, 50.0, 100.0],
        "norm_tol": 1e-8,
    },
    "output": {},
    "compare": {
        "l1_tolerance": 0.1,
        "frequency_bin_tolerance": 1.0,
    },
}


def _merge(base, override, path="config"):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"{path}.{key}: unknown field")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def load_config(source):
    """Merge a JSON document (text, dict or path) over the defaults and
    validate field by field."""
    if isinstance(source, dict):
        doc = source
    else:
        text = source
        if hasattr(source, "read"):
            text = source.read()
        elif "\n" not in str(source) and str(source).endswith(".json"):
            with open(source) as fh:
                text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    cfg = _merge(DEFAULT_CONFIG, doc)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    pot = cfg["potential"]
    _require(pot["kind"] in ("double_well", "harmonic_y", "free"), "potential.kind",
             f"must be double_well, harmonic_y or free, got {pot['kind']!r}")
    for f in ("mass_me", "omega_wavenumber", "x_well_ang", "barrier_eV", "v_thr_eV"):
        _require(pot[f] > 0, f"potential.{f}", "must be positive")
    fit = cfg["fit"]
    _require(fit["n_terms"] >= 1, "fit.n_terms", "must be >= 1")
    _require(fit["max_iter"] >= 1, "fit.max_iter", "must be >= 1")
    _require(fit["low_region_weight"] >= 1, "fit.low_region_weight", "must be >= 1")
    wig = cfg["wigner"]
    _require(wig["representation"] in ("gaussian_analytic", "polynomial_smoothed"),
             "wigner.representation", f"unknown representation {wig['representation']!r}")
    _require(wig["sigma"] > 0, "wigner.sigma", "must be positive")
    for gname in ("gamma_grid", "sampler_grid"):
        g = wig[gname]
        _require(g["p_box"] > 0, f"wigner.{gname}.p_box", "must be positive")
        _require(g["n"] >= 2 and g["n"] % 2 == 0, f"wigner.{gname}.n", "must be even and >= 2")
    sp = cfg["spmc"]
    _require(sp["dt_fs"] > 0, "spmc.dt_fs", "must be positive")
    _require(sp["t_total_fs"] > 0, "spmc.t_total_fs", "must be positive")
    _require(sp["n_particles"] >= 1, "spmc.n_particles", "must be >= 1")
    _require(sp["annihilation_period"] >= 0, "spmc.annihilation_period", "must be >= 0")
    _require(sp["gamma_dt_limit"] > 0, "spmc.gamma_dt_limit", "must be positive")
    for t in sp["snapshot_times_fs"]:
        _require(0 <= t <= sp["t_total_fs"], "spmc.snapshot_times_fs",
                 f"snapshot time {t} outside [0, t_total]")
    ex = cfg["exact"]
    _require(ex["dt_fs"] > 0, "exact.dt_fs", "must be positive")
    _require(ex["nx"] >= 16 and ex["ny"] >= 16, "exact.nx/ny", "grid too small")
    return cfg


# ---------------------------------------------------------------------------
# typed views (atomic units)


@dataclass
class PhysicalSystem:
    params: DoubleWellParams
    v_thr: float
    kind: str
    initial: InitialStateParams
    x0: float
    y0: float


def physical_system(cfg):
    pot = cfg["potential"]
    m = pot["mass_me"]
    omega = units.to_internal(pot["omega_wavenumber"], "wavenumber")
    c = units.to_internal(pot["coupling_eV_ang2"], "eV_per_ang2")
    x_well = units.to_internal(pot["x_well_ang"], "angstrom")
    barrier = units.to_internal(pot["barrier_eV"], "eV")
    a0, c0 = derive_quartic_coefficients(x_well, barrier)
    params = DoubleWellParams(a0=a0, c0=c0, m=m, omega=omega, c=c)
    initial = InitialStateParams(m=m, omega=omega, omega_x=params.omega_x, x_well=x_well)
    x0_cfg = cfg["initial"]["x0_ang"]
    x0 = units.to_internal(x0_cfg, "angstrom") if x0_cfg is not None else -x_well
    y0 = units.to_internal(cfg["initial"]["y0_ang"], "angstrom")
    return PhysicalSystem(
        params=params,
        v_thr=units.to_internal(pot["v_thr_eV"], "eV"),
        kind=pot["kind"],
        initial=initial,
        x0=x0,
        y0=y0,
    )


def potential_callable(system, which):
    """Real-space potential for the exact solver.

    which: "full" (polynomial), "fitted" is handled by the caller with a
    model, "free" (zero), "harmonic" (y-oscillator only).
    """
    p = system.params
    if which == "full":
        return lambda x, y: eval_double_well(p, x, y)
    if which == "free":
        return lambda x, y: 0.0 * (x + y)
    if which == "harmonic":
        return lambda x, y: 0.5 * p.m * p.omega**2 * y**2 + 0.0 * x
    raise ConfigError(f"unknown potential selector {which!r}")


def fit_config(cfg):
    fit = cfg["fit"]
    return FitConfig(
        n_terms=fit["n_terms"],
        x_min=-units.to_internal(fit["window_x_ang"], "angstrom"),
        x_max=units.to_internal(fit["window_x_ang"], "angstrom"),
        y_min=-units.to_internal(fit["window_y_ang"], "angstrom"),
        y_max=units.to_internal(fit["window_y_ang"], "angstrom"),
        nx=fit["nx"],
        ny=fit["ny"],
        v_thr=units.to_internal(cfg["potential"]["v_thr_eV"], "eV"),
        learning_rate=fit["learning_rate"],
        max_iter=fit["max_iter"],
        tol=fit["tol"],
        n_restarts=fit["n_restarts"],
        low_region_weight=fit["low_region_weight"],
        low_region_threshold=units.to_internal(fit["low_region_threshold_eV"], "eV"),
        seed=fit["seed"],
    )


def wigner_model(cfg, system, which, gaussian_model=None):
    """Kernel model for the requested potential selector."""
    wig = cfg["wigner"]
    if which == "fitted":
        if gaussian_model is None:
            raise ConfigError("wigner.model_file: fitted potential requires a fitted model")
        return AnalyticGaussianWigner(gaussian_model)
    p = system.params
    if which == "full":
        return SmoothedPolynomialWigner(p.a0, p.c0, p.m, p.omega, p.c, wig["sigma"])
    if which == "harmonic":
        return SmoothedPolynomialWigner(0.0, 0.0, p.m, p.omega, 0.0, wig["sigma"])
    if which == "free":
        return None
    raise ConfigError(f"unknown potential selector {which!r}")


def wigner_grids(cfg):
    wig = cfg["wigner"]
    win = wig["window"]
    ax = units.to_internal(1.0, "angstrom")
    x_edges = np.linspace(win["x"][0] * ax, win["x"][1] * ax, win["nx"] + 1)
    y_edges = np.linspace(win["y"][0] * ax, win["y"][1] * ax, win["ny"] + 1)
    gamma_grid = MomentumGrid(wig["gamma_grid"]["p_box"], wig["gamma_grid"]["n"])
    sampler_grid = MomentumGrid(wig["sampler_grid"]["p_box"], wig["sampler_grid"]["n"])
    return x_edges, y_edges, gamma_grid, sampler_grid


def _grid_from_doc(doc, ang_axes=("x", "y")):
    mins, maxs, counts = [], [], []
    for ax in ("x", "y", "px", "py"):
        spec = doc[ax]
        scale = units.to_internal(1.0, "angstrom") if ax in ang_axes else 1.0
        mins.append(spec["min"] * scale)
        maxs.append(spec["max"] * scale)
        counts.append(spec["cells"])
    return PhaseSpaceGrid(mins, maxs, counts)


def init_grid(cfg, system):
    """Packet-adapted stratification grid: +-sigmas around the center."""
    sp = cfg["spmc"]
    k = sp["init_grid_sigmas"]
    n = sp["init_grid_cells"]
    ini = system.initial
    sx = math.sqrt(1.0 / (2 * ini.m * ini.omega_x))
    sy = math.sqrt(1.0 / (2 * ini.m * ini.omega))
    spx = math.sqrt(ini.m * ini.omega_x / 2.0)
    spy = math.sqrt(ini.m * ini.omega / 2.0)
    mins = [system.x0 - k * sx, system.y0 - k * sy, -k * spx, -k * spy]
    maxs = [system.x0 + k * sx, system.y0 + k * sy, k * spx, k * spy]
    return PhaseSpaceGrid(mins, maxs, [n, n, n, n])


def spmc_config(cfg, system, threads=1):
    sp = cfg["spmc"]
    fs = units.to_internal(1.0, "fs")
    prune = None
    if sp["prune_domain"]:
        pd = sp["prune_domain"]
        ax = units.to_internal(1.0, "angstrom")
        prune = {
            "x": (pd["x"][0] * ax, pd["x"][1] * ax),
            "y": (pd["y"][0] * ax, pd["y"][1] * ax),
            "p_max": pd["p_max"],
        }
    return SpmcConfig(
        dt=sp["dt_fs"] * fs,
        t_total=sp["t_total_fs"] * fs,
        n_particles=sp["n_particles"],
        mass=system.params.m,
        seed=sp["seed"],
        annihilation_period=sp["annihilation_period"],
        annihilation_grid=_grid_from_doc(sp["annihilation_grid"]),
        init_grid=init_grid(cfg, system),
        snapshot_grid=_grid_from_doc(sp["snapshot_grid"]),
        snapshot_times=tuple(t * fs for t in sp["snapshot_times_fs"]),
        observable_interval=sp["observable_interval_fs"] * fs,
        prune_domain=prune,
        particle_cap=sp["particle_cap"],
        gamma_dt_limit=sp["gamma_dt_limit"],
        threads=threads,
    )


def initial_phase_space_density(system):
    """Closed-form initial quasi-distribution, shifted to (x0, y0).

    The returned callable also exposes exact per-cell masses (product of
    one-dimensional Gaussian integrals), which the stratified particle
    initialiser uses for its quotas.
    """
    from scipy.special import erf

    ini = system.initial
    m, wx, wy = ini.m, ini.omega_x, ini.omega
    x0, y0 = system.x0, system.y0
    widths = (
        1.0 / math.sqrt(m * wx),
        1.0 / math.sqrt(m * wy),
        math.sqrt(m * wx),
        math.sqrt(m * wy),
    )
    centers = (x0, y0, 0.0, 0.0)

    def f(x, y, px, py):
        return (
            (1.0 / math.pi**2)
            * np.exp(-m * wx * (np.asarray(x) - x0) ** 2)
            * np.exp(-np.asarray(px) ** 2 / (m * wx))
            * np.exp(-m * wy * (np.asarray(y) - y0) ** 2)
            * np.exp(-np.asarray(py) ** 2 / (m * wy))
        )

    def cell_masses(grid):
        factors = []
        for d, ax in enumerate(("x", "y", "px", "py")):
            e = grid.edges(ax)
            cdf = 0.5 * (1.0 + erf((e - centers[d]) / widths[d]))
            factors.append(np.diff(cdf) * widths[d] * math.sqrt(math.pi))
        out = np.einsum("i,j,k,l->ijkl", *factors) / math.pi**2
        return out

    f.cell_masses = cell_masses
    return f


def truncated_potential_callable(system):
    p = system.params
    thr = system.v_thr
    return lambda x, y: truncate(eval_double_well(p, x, y), thr)
