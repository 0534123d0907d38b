"""Command-line workflows: fit, simulate, compare, gamma-table.

Every command reads one JSON config, writes its artifacts into an
output directory, and finishes with a manifest listing the SHA-256 of
each artifact.  Outputs carry no timestamps, so identical (config,
seed) reruns produce byte-identical files.

Exit codes: 0 ok, 1 comparison tolerance exceeded, 2 configuration or
usage error, 3 fit did not converge, 4 particle explosion, 5 reference
solver instability.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, config as cfgmod, units
from .grids import GridError, PhaseSpaceGrid
from .observables import ObservableSeries, dominant_frequency
from .potential import fit_gaussian_sum, model_from_json, model_to_json
from .reference import NormDriftError, SolverError, initial_wavepacket, solve_tdse, wigner_transform
from .rng import RngContract
from .spmc import ParticleExplosionError, run as spmc_run
from .wigner import (
    ConfigurationError,
    build_gamma_table,
    build_momentum_sampler,
    load_tables,
    save_tables,
    table_cache_key,
)

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_EXPLOSION = 4
EXIT_SOLVER = 5


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, cfg, seed, wall_time, counters=None):
    outputs = {}
    for name in sorted(os.listdir(out_dir)):
        path = os.path.join(out_dir, name)
        if name == "manifest.json" or not os.path.isfile(path):
            continue
        outputs[name] = _sha256(path)
    doc = {
        "artifact_version": __version__,
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "wall_time_s": round(wall_time, 3),
        "outputs": outputs,
        "counters": counters or {},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _marginal_csv(x_centers_ang, y_centers_ang, density_ang2):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_ang", "y_ang", "density_per_ang2"])
    for i, x in enumerate(x_centers_ang):
        for j, y in enumerate(y_centers_ang):
            w.writerow([f"{x:.12g}", f"{y:.12g}", f"{density_ang2[i, j]:.12g}"])
    return buf.getvalue()


def _read_marginal_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["x_ang", "y_ang", "density_per_ang2"]:
        raise ConfigurationError(f"{path}: not a marginal file")
    xs = sorted({float(r[0]) for r in rows[1:]})
    ys = sorted({float(r[1]) for r in rows[1:]})
    dens = np.zeros((len(xs), len(ys)))
    xi = {v: i for i, v in enumerate(xs)}
    yi = {v: i for i, v in enumerate(ys)}
    for r in rows[1:]:
        dens[xi[float(r[0])], yi[float(r[1])]] = float(r[2])
    return np.asarray(xs), np.asarray(ys), dens


def _snapshot_tag(t_fs):
    return f"{t_fs:09.3f}".replace(".", "p")


def save_snapshot(out_dir, t_fs, f, grid):
    """4D density: flat little-endian float64, row-major x,y,px,py, plus sidecar."""
    base = os.path.join(out_dir, f"fw_t{_snapshot_tag(t_fs)}fs")
    arr = np.ascontiguousarray(f, dtype="<f8")
    with open(base + ".bin", "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {
        "time_fs": t_fs,
        "grid": grid.to_dict(),
        "dtype": "<f8",
        "order": "C",
        "axes": ["x", "y", "px", "py"],
        "units": "hartree_bohr_atomic",
    }
    with open(base + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def _observables_to_csv_path(out_dir, times_au, x_au, y_au, survival, n_particles):
    fs = units.from_internal(1.0, "fs")
    ang = units.from_internal(1.0, "angstrom")
    series = ObservableSeries(
        [t * fs for t in times_au],
        [x * ang for x in x_au],
        [y * ang for y in y_au],
        survival,
        n_particles,
    )
    _write(os.path.join(out_dir, "observables.csv"), series.to_csv())
    return series


# ---------------------------------------------------------------------------
# commands


def _load_model_for(args, cfg, system):
    which = args.potential
    if which != "fitted":
        return None, cfgmod.wigner_model(cfg, system, which)
    path = args.model or cfg["wigner"]["model_file"]
    if not os.path.isabs(path) and args.config and not os.path.exists(path):
        cand = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
        if os.path.exists(cand):
            path = cand
    if not os.path.exists(path):
        raise ConfigurationError(f"wigner.model_file: model file {path!r} not found; run fit first")
    with open(path) as fh:
        gmodel, _ = model_from_json(fh.read())
    return gmodel, cfgmod.wigner_model(cfg, system, "fitted", gaussian_model=gmodel)


def _build_tables(cfg, model, cache_dir=None, threads=1):
    x_edges, y_edges, gamma_grid, sampler_grid = cfgmod.wigner_grids(cfg)
    key = table_cache_key(model, x_edges, y_edges, gamma_grid, sampler_grid)
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, f"tables_{key}.npz")
        if os.path.exists(path):
            loaded = load_tables(path, key)
            if loaded is not None:
                return loaded
    gamma = build_gamma_table(model, x_edges, y_edges, gamma_grid)
    sampler = build_momentum_sampler(model, x_edges, y_edges, sampler_grid)
    if cache_dir:
        save_tables(os.path.join(cache_dir, f"tables_{key}.npz"), gamma, sampler, key)
    return gamma, sampler


def cmd_fit(args):
    t0 = time.time()
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["fit"]["seed"] = args.seed
    system = cfgmod.physical_system(cfg)
    fit_cfg = cfgmod.fit_config(cfg)
    target = cfgmod.truncated_potential_callable(system)
    model, report = fit_gaussian_sum(target, fit_cfg)

    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "model.json"), model_to_json(model, system.v_thr, report))

    xs = np.linspace(fit_cfg.x_min, fit_cfg.x_max, fit_cfg.nx)
    ys = np.linspace(fit_cfg.y_min, fit_cfg.y_max, fit_cfg.ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    from .potential import eval_gaussian_sum

    tgt = target(X, Y)
    fitted = eval_gaussian_sum(model, X, Y)
    ang = units.from_internal(1.0, "angstrom")
    ev = units.from_internal(1.0, "eV")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_ang", "y_ang", "target_eV", "fitted_eV", "residual_eV"])
    for i in range(fit_cfg.nx):
        for j in range(fit_cfg.ny):
            w.writerow(
                [f"{xs[i] * ang:.9g}", f"{ys[j] * ang:.9g}", f"{tgt[i, j] * ev:.12g}",
                 f"{fitted[i, j] * ev:.12g}", f"{(fitted[i, j] - tgt[i, j]) * ev:.12g}"]
            )
    _write(os.path.join(args.out_dir, "fit_residuals.csv"), buf.getvalue())
    _write(os.path.join(args.out_dir, "fit_report.json"),
           json.dumps(report.to_dict(), indent=2, sort_keys=True))
    write_manifest(args.out_dir, cfg, cfg["fit"]["seed"], time.time() - t0, report.to_dict())
    print(f"fit: rmse_low = {report.rmse_low * ev:.5f} eV, rmse_full = {report.rmse_full * ev:.5f} eV, "
          f"converged = {report.converged}")
    return EXIT_OK if report.converged else EXIT_FIT


def _simulate_spmc(args, cfg, system, out_dir):
    gmodel, model = _load_model_for(args, cfg, system)
    if model is not None:
        gamma, sampler = _build_tables(cfg, model, cache_dir=args.table_cache, threads=args.threads)
    else:
        gamma = sampler = None
    sp_cfg = cfgmod.spmc_config(cfg, system, threads=args.threads)
    if args.seed is not None:
        sp_cfg.seed = args.seed
    f0 = cfgmod.initial_phase_space_density(system)
    result = spmc_run(sp_cfg, model, f0, gamma_table=gamma, sampler=sampler)

    _observables_to_csv_path(out_dir, result.times, result.x_mean, result.y_mean,
                             result.survival, result.n_particles)
    fs = units.from_internal(1.0, "fs")
    ang = units.from_internal(1.0, "angstrom")
    grid = sp_cfg.snapshot_grid
    xs_ang = grid.centers("x") * ang
    ys_ang = grid.centers("y") * ang
    for t_au, f in sorted(result.snapshots.items()):
        t_fs = t_au * fs
        save_snapshot(out_dir, t_fs, f, grid)
        marg = f.sum(axis=(2, 3)) * grid.widths[2] * grid.widths[3]  # per bohr^2
        marg_ang = marg / ang**2
        _write(os.path.join(out_dir, f"marginal_xy_t{_snapshot_tag(t_fs)}fs.csv"),
               _marginal_csv(xs_ang, ys_ang, marg_ang))
    report = dict(result.counters)
    report["method"] = "spmc"
    report["potential"] = args.potential
    if sampler is not None:
        report["max_gamma"] = sampler.max_gamma
        report["max_gamma_dt"] = sampler.max_gamma * sp_cfg.dt
    _write(os.path.join(out_dir, "run_report.json"), json.dumps(report, indent=2, sort_keys=True))
    return sp_cfg.seed, report


def _simulate_exact(args, cfg, system, out_dir):
    ex = cfg["exact"]
    fs = units.to_internal(1.0, "fs")
    ang = units.to_internal(1.0, "angstrom")
    xs = np.linspace(-ex["window_x_ang"] * ang, ex["window_x_ang"] * ang, ex["nx"])
    ys = np.linspace(-ex["window_y_ang"] * ang, ex["window_y_ang"] * ang, ex["ny"])
    if args.potential == "fitted":
        gmodel, _ = _load_model_for(args, cfg, system)
        from .potential import eval_gaussian_sum

        pot = lambda x, y: eval_gaussian_sum(gmodel, x, y)
    else:
        pot = cfgmod.potential_callable(system, args.potential)
    psi0 = initial_wavepacket(system.initial, xs, ys, center=(system.x0, system.y0))
    snap_times = tuple(t * fs for t in ex["snapshot_times_fs"])
    snapshots, series = solve_tdse(
        pot,
        psi0,
        ex["dt_fs"] * fs,
        ex["t_total_fs"] * fs,
        snapshot_times=snap_times,
        observable_interval=ex["observable_interval_fs"] * fs,
        norm_tol=ex["norm_tol"],
    )
    _observables_to_csv_path(out_dir, series["t"], series["x_mean"], series["y_mean"],
                             series["survival"], [0] * len(series["t"]))
    # marginals binned to the shared snapshot grid
    grid = cfgmod.spmc_config(cfg, system).snapshot_grid
    ang_i = units.from_internal(1.0, "angstrom")
    xs_ang = grid.centers("x") * ang_i
    ys_ang = grid.centers("y") * ang_i
    X, Y = np.meshgrid(psi0.xs, psi0.ys, indexing="ij")
    ix = np.floor((X - grid.mins[0]) / grid.widths[0]).astype(np.int64)
    iy = np.floor((Y - grid.mins[1]) / grid.widths[1]).astype(np.int64)
    ok = (ix >= 0) & (ix < grid.counts[0]) & (iy >= 0) & (iy < grid.counts[1])
    flat = np.where(ok, ix * grid.counts[1] + iy, 0)
    for t_au, wf in sorted(snapshots.items()):
        t_fs = t_au * units.from_internal(1.0, "fs")
        rho = wf.density() * wf.cell_area
        mass = np.bincount(flat[ok], weights=rho[ok], minlength=int(grid.counts[0] * grid.counts[1]))
        marg = mass.reshape(int(grid.counts[0]), int(grid.counts[1])) / (grid.widths[0] * grid.widths[1])
        _write(os.path.join(out_dir, f"marginal_xy_t{_snapshot_tag(t_fs)}fs.csv"),
               _marginal_csv(xs_ang, ys_ang, marg / ang_i**2))
        if args.emit_4d:
            fw, wxs, wys, px, py = wigner_transform(wf, stride=8)
            pg = PhaseSpaceGrid(
                [wxs[0], wys[0], px[0], py[0]],
                [wxs[-1] + (wxs[1] - wxs[0]), wys[-1] + (wys[1] - wys[0]),
                 px[-1] + (px[1] - px[0]), py[-1] + (py[1] - py[0])],
                [len(wxs), len(wys), len(px), len(py)],
            )
            save_snapshot(out_dir, t_fs, fw, pg)
    report = {
        "method": "exact",
        "potential": args.potential,
        "steps": int(round(ex["t_total_fs"] / ex["dt_fs"])),
        "final_norm": float(series["norm"][-1]) if len(series["norm"]) else 1.0,
    }
    _write(os.path.join(out_dir, "run_report.json"), json.dumps(report, indent=2, sort_keys=True))
    return cfg["spmc"]["seed"], report


def cmd_simulate(args):
    t0 = time.time()
    cfg = cfgmod.load_config(args.config)
    system = cfgmod.physical_system(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.method == "spmc":
        seed, report = _simulate_spmc(args, cfg, system, args.out_dir)
    else:
        seed, report = _simulate_exact(args, cfg, system, args.out_dir)
    write_manifest(args.out_dir, cfg, seed, time.time() - t0, report)
    print(f"simulate {args.method}/{args.potential}: done, artifacts in {args.out_dir}")
    return EXIT_OK


def cmd_compare(args):
    t0 = time.time()
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.load_config({})
    l1_tol = args.l1_tol if args.l1_tol is not None else cfg["compare"]["l1_tolerance"]
    bin_tol = args.freq_bins if args.freq_bins is not None else cfg["compare"]["frequency_bin_tolerance"]

    def marginal_files(d):
        return sorted(f for f in os.listdir(d) if f.startswith("marginal_xy_t") and f.endswith(".csv"))

    fa, fb = marginal_files(args.run_a), marginal_files(args.run_b)
    if fa != fb:
        print(f"compare: snapshot sets differ: {fa} vs {fb}", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    worst_l1 = 0.0
    for name in fa:
        xa, ya, da = _read_marginal_csv(os.path.join(args.run_a, name))
        xb, yb, db = _read_marginal_csv(os.path.join(args.run_b, name))
        if len(xa) != len(xb) or len(ya) != len(yb) or np.max(np.abs(xa - xb)) > 1e-9:
            print(f"compare: {name}: grids differ", file=sys.stderr)
            return EXIT_CONFIG
        area = (xa[1] - xa[0]) * (ya[1] - ya[0])
        na, nb = da.sum() * area, db.sum() * area
        if na <= 0 or nb <= 0:
            print(f"compare: {name}: empty marginal", file=sys.stderr)
            return EXIT_CONFIG
        l1 = float(np.abs(da / na - db / nb).sum() * area)
        worst_l1 = max(worst_l1, l1)
        rows.append({"snapshot": name, "l1": l1})

    sa = ObservableSeries.from_csv(open(os.path.join(args.run_a, "observables.csv")).read())
    sb = ObservableSeries.from_csv(open(os.path.join(args.run_b, "observables.csv")).read())
    if len(sa.t_fs) != len(sb.t_fs) or np.max(np.abs(sa.t_fs - sb.t_fs)) > 1e-9:
        print("compare: observable time series differ in sampling", file=sys.stderr)
        return EXIT_CONFIG
    x_rms = float(np.sqrt(np.mean((sa.x_mean_ang - sb.x_mean_ang) ** 2)))
    freq_a, binw, sharp_a = dominant_frequency(sa.t_fs, sa.survival)
    freq_b, _, sharp_b = dominant_frequency(sb.t_fs, sb.survival)
    dfreq_bins = abs(freq_a - freq_b) / binw

    report = {
        "snapshots": rows,
        "worst_l1": worst_l1,
        "l1_tolerance": l1_tol,
        "survival_freq_a_per_fs": freq_a,
        "survival_freq_b_per_fs": freq_b,
        "freq_bin_width_per_fs": binw,
        "freq_difference_bins": dfreq_bins,
        "freq_bin_tolerance": bin_tol,
        "x_mean_rms_diff_ang": x_rms,
        "sharpness_a": sharp_a,
        "sharpness_b": sharp_b,
    }
    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "comparison.json"), json.dumps(report, indent=2, sort_keys=True))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snapshot", "l1"])
    for r in rows:
        w.writerow([r["snapshot"], f"{r['l1']:.9g}"])
    _write(os.path.join(args.out_dir, "comparison.csv"), buf.getvalue())
    write_manifest(args.out_dir, cfg, 0, time.time() - t0, {"worst_l1": worst_l1})
    ok = worst_l1 <= l1_tol and dfreq_bins <= bin_tol
    print(f"compare: worst L1 = {worst_l1:.4f} (tol {l1_tol}), survival freq diff = "
          f"{dfreq_bins:.3f} bins (tol {bin_tol})")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_gamma_table(args):
    t0 = time.time()
    cfg = cfgmod.load_config(args.config)
    system = cfgmod.physical_system(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    gmodel, model = _load_model_for(args, cfg, system)
    x_edges, y_edges, gamma_grid, _ = cfgmod.wigner_grids(cfg)
    sigmas = [float(s) for s in args.sigma_sweep.split(",")] if args.sigma_sweep else [None]
    ang = units.from_internal(1.0, "angstrom")
    summary = {}
    for sig in sigmas:
        if sig is not None:
            if model is None or model.variant != "polynomial_smoothed":
                raise ConfigurationError("--sigma-sweep applies to the polynomial_smoothed representation")
            from .wigner import SmoothedPolynomialWigner

            m = SmoothedPolynomialWigner(model.a0, model.c0, model.m, model.omega, model.c, sig)
            tag = f"_sigma{sig:g}"
        else:
            m, tag = model, ""
        table = build_gamma_table(m, x_edges, y_edges, gamma_grid)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_ang", "y_ang", "gamma_au"])
        for i, x in enumerate(table.x_centers):
            for j, y in enumerate(table.y_centers):
                w.writerow([f"{x * ang:.9g}", f"{y * ang:.9g}", f"{table.values[i, j]:.12g}"])
        _write(os.path.join(args.out_dir, f"gamma{tag}.csv"), buf.getvalue())
        summary[f"max_gamma{tag}"] = table.max_gamma
    _write(os.path.join(args.out_dir, "gamma_report.json"), json.dumps(summary, indent=2, sort_keys=True))
    write_manifest(args.out_dir, cfg, 0, time.time() - t0, summary)
    print(f"gamma-table: {summary}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="wigsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config path")
        sp.add_argument("--out-dir", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("fit", help="fit the Gaussian-sum potential model")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("simulate", help="run a particle or reference simulation")
    common(sp)
    sp.add_argument("--method", choices=["spmc", "exact"], required=True)
    sp.add_argument("--potential", choices=["fitted", "full", "free", "harmonic"], required=True)
    sp.add_argument("--model", default=None, help="fitted model JSON (overrides config)")
    sp.add_argument("--table-cache", default=None)
    sp.add_argument("--emit-4d", action="store_true", help="also write 4D phase-space snapshots (exact)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="compare two run directories")
    sp.add_argument("--config", default=None)
    sp.add_argument("--run-a", required=True)
    sp.add_argument("--run-b", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--l1-tol", type=float, default=None)
    sp.add_argument("--freq-bins", type=float, default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gamma-table", help="tabulate the pair-creation rate surface")
    common(sp)
    sp.add_argument("--potential", choices=["fitted", "full", "harmonic"], default="full")
    sp.add_argument("--model", default=None)
    sp.add_argument("--sigma-sweep", default=None, help="comma list of smoothing widths")
    sp.set_defaults(func=cmd_gamma_table)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, ConfigurationError, GridError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParticleExplosionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXPLOSION
    except (NormDriftError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
