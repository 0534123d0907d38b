"""Signed-particle Monte Carlo engine.

The quasi-distribution is carried by an ensemble of unit-magnitude
signed impulses.  One step is: ballistic drift, stochastic pair
creation driven by the momentum-shift sampler, and (every few steps)
grid annihilation that cancels opposite signs sharing a phase-space
cell.  The signed sum of weights is conserved exactly by integer
bookkeeping: weights are sign/D with a fixed ensemble normaliser D, and
every operation preserves the integer signed count.

Pair creation implements the short-time propagator estimator: a parent
with weight u scatters with probability 2 gamma(x) dt; a momentum shift
q is drawn with mass proportional to |V_w(x, q)| and sign s carried by
the bin, and two particles are appended at momenta p + q and p - q with
weights +s u and -s u (the parent survives).  Averaged over draws this
reproduces the deterministic short-time update, which is what the
unbiasedness acceptance test pins down.  The Bernoulli uses thinning:
candidates are pre-selected at the tabulated maximum rate, then
accepted with ratio gamma(cell)/gamma_max, so the per-step cost of the
random stage scales with the actual scattering load.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grids import PhaseSpaceGrid
from .rng import RngContract
from .wigner import ConfigurationError


class ParticleExplosionError(RuntimeError):
    """Ensemble exceeded the configured hard cap."""


class EnsembleError(ValueError):
    pass


class Ensemble:
    """Growable arrays of signed phase-space impulses.

    Attributes
    ----------
    r : (capacity, 4) float64 - x, y, px, py
    s : (capacity,) int8 - particle signs, +-1
    n : live particle count
    normalizer : ensemble D; every weight is sign/D
    """

    def __init__(self, r, s, normalizer):
        self.r = r
        self.s = s
        self.n = len(r)
        self.normalizer = int(normalizer)
        self._ensure_capacity(self.n)

    def _ensure_capacity(self, need):
        cap = len(self.s)
        if need <= cap:
            return
        new_cap = max(int(need * 1.6), 1024)
        self.r = np.concatenate([self.r[: self.n], np.empty((new_cap - self.n, 4))])
        self.s = np.concatenate([self.s[: self.n], np.empty(new_cap - self.n, np.int8)])

    @property
    def positions(self):
        return self.r[: self.n]

    @property
    def signs(self):
        return self.s[: self.n]

    @property
    def n_plus(self):
        return int(np.count_nonzero(self.signs > 0))

    @property
    def n_minus(self):
        return self.n - self.n_plus

    def signed_count(self):
        return int(self.signs.astype(np.int64).sum())

    def total_weight(self):
        return self.signed_count() / self.normalizer

    def append_pairs(self, parents_r, q, pair_signs):
        """Append 2k particles: (p + q, +s) block then (p - q, -s) block."""
        k = len(pair_signs)
        self._ensure_capacity(self.n + 2 * k)
        n = self.n
        self.r[n : n + k] = parents_r
        self.r[n : n + k, 2:4] += q
        self.r[n + k : n + 2 * k] = parents_r
        self.r[n + k : n + 2 * k, 2:4] -= q
        self.s[n : n + k] = pair_signs
        self.s[n + k : n + 2 * k] = -pair_signs
        self.n += 2 * k

    def replace(self, new_r, new_s):
        self.r = new_r
        self.s = new_s
        self.n = len(new_r)

    def copy(self):
        return Ensemble(self.positions.copy(), self.signs.copy(), self.normalizer)


@dataclass
class SpmcConfig:
    """Engine controls; times and lengths in atomic units."""

    dt: float
    t_total: float
    n_particles: int
    mass: float
    seed: int = 1
    annihilation_period: int = 10
    annihilation_grid: PhaseSpaceGrid = None
    init_grid: PhaseSpaceGrid = None
    snapshot_grid: PhaseSpaceGrid = None
    snapshot_times: tuple = ()
    observable_interval: float = 0.0
    prune_domain: dict = None          # {"x": (lo, hi), "y": (lo, hi), "p_max": float}
    particle_cap: int = 10_000_000
    gamma_dt_limit: float = 0.05
    threads: int = 1

    def validate(self, max_gamma=0.0):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.annihilation_period < 0:
            raise ConfigurationError("annihilation period must be >= 0 (0 disables)")
        if self.n_particles < 1:
            raise ConfigurationError("need at least one particle")
        if max_gamma * self.dt > self.gamma_dt_limit:
            raise ConfigurationError(
                f"max(gamma)*dt = {max_gamma * self.dt:.3g} exceeds the first-order propagator "
                f"bound {self.gamma_dt_limit:g}; reduce dt or raise gamma_dt_limit explicitly"
            )


@dataclass
class SpmcState:
    ensemble: Ensemble
    time: float = 0.0
    step: int = 0
    created: int = 0
    annihilated: int = 0
    pruned: int = 0
    clamped: int = 0
    peak_count: int = 0
    rng: RngContract = field(default_factory=lambda: RngContract(0))

    def check_conservation(self):
        got = self.ensemble.signed_count()
        if got != self.ensemble.normalizer:
            raise EnsembleError(
                f"signed-weight conservation broken at step {self.step}: "
                f"{got} != {self.ensemble.normalizer}"
            )


# ---------------------------------------------------------------------------
# initialisation


def _cell_masses(f_w0, grid, refine=3):
    """|f_w0| mass per cell.

    Uses the callable's own ``cell_masses(grid)`` when it provides one
    (closed-form initial states do); otherwise a midpoint sum on a
    ``refine``-fold subdivided lattice, chunked along x to bound memory.
    """
    if hasattr(f_w0, "cell_masses"):
        return np.abs(np.asarray(f_w0.cell_masses(grid), dtype=float)).reshape(-1)
    shape = tuple(int(c) for c in grid.counts)
    sub_axes = []
    for d, ax in enumerate(("x", "y", "px", "py")):
        n = shape[d] * refine
        sub_axes.append(grid.mins[d] + (np.arange(n) + 0.5) * (grid.widths[d] / refine))
    masses = np.empty(shape)
    suby, subpx, subpy = np.meshgrid(sub_axes[1], sub_axes[2], sub_axes[3], indexing="ij")
    for i in range(shape[0]):
        vals = np.zeros_like(suby)
        for r in range(refine):
            x = np.full_like(suby, sub_axes[0][i * refine + r])
            vals += np.abs(np.asarray(f_w0(x, suby, subpx, subpy), dtype=float))
        blocked = vals.reshape(shape[1], refine, shape[2], refine, shape[3], refine)
        masses[i] = blocked.sum(axis=(1, 3, 5))
    masses *= grid.cell_volume / refine**4
    return masses.reshape(-1)


def init_particles(f_w0, grid, n_particles, rng):
    """Stratified placement proportional to the |f_w0| mass per grid cell.

    Cell quotas are largest-remainder rounded, particles are uniform
    within their cell, and each particle's sign is the sign of f_w0 at
    its own location.  The normaliser D = n_plus - n_minus makes the
    weights sum to exactly 1.
    """
    if n_particles < 1:
        raise EnsembleError("n_particles must be >= 1")
    shape = tuple(int(c) for c in grid.counts)
    dens = _cell_masses(f_w0, grid)
    total = dens.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise EnsembleError("initial distribution has zero (or non-finite) total mass on the grid")
    quota = dens * (n_particles / total)
    base = np.floor(quota).astype(np.int64)
    short = n_particles - int(base.sum())
    if short > 0:
        frac = quota - base
        top = np.argsort(-frac, kind="stable")[:short]
        base[top] += 1
    occupied = np.nonzero(base)[0]
    counts = base[occupied]
    cell_idx = np.repeat(occupied, counts)
    multi = np.unravel_index(cell_idx, shape)
    r = np.empty((n_particles, 4))
    u = rng.random((n_particles, 4))
    for d in range(4):
        r[:, d] = grid.mins[d] + (multi[d] + u[:, d]) * grid.widths[d]
    vals = np.asarray(f_w0(r[:, 0], r[:, 1], r[:, 2], r[:, 3]), dtype=float)
    s = np.where(vals >= 0.0, 1, -1).astype(np.int8)
    normalizer = int(s.astype(np.int64).sum())
    if normalizer <= 0:
        raise EnsembleError("signed normaliser n_plus - n_minus must be positive")
    return Ensemble(r, s, normalizer)


# ---------------------------------------------------------------------------
# elementary operations


def _chunks(n, workers):
    if workers <= 1 or n < 4096:
        return [(0, n)]
    size = (n + workers - 1) // workers
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def drift(state, dt, mass, threads=1):
    """Advance positions ballistically; momenta and signs untouched."""
    e = state.ensemble
    spans = _chunks(e.n, threads)
    scale = dt / mass

    def work(span):
        a, b = span
        e.r[a:b, 0] += e.r[a:b, 2] * scale
        e.r[a:b, 1] += e.r[a:b, 3] * scale

    if len(spans) == 1:
        work(spans[0])
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, spans))
    state.time += dt
    state.check_conservation()
    return state


def scatter(state, dt, gamma_table, sampler, threads=1):
    """Pair-creation pass over all live particles.

    Scattering probability is 2 * gamma(cell) * dt with gamma taken from
    the sampler's own per-cell normalisation; ``gamma_table`` is kept
    for diagnostics and may be None.  Draw order is fixed by storage
    order, and all randomness comes from the step-indexed substream, so
    the result is independent of the thread count.
    """
    e = state.ensemble
    gen = state.rng.step_stream(state.step)
    n = e.n
    gmax = sampler.max_gamma
    if gmax > 0.0 and n > 0:
        p_cap = 2.0 * gmax * dt
        p_thin = min(p_cap, 1.0)
        u_thin = gen.random(n)
        cand = np.nonzero(u_thin < p_thin)[0]
        if len(cand):
            cid = sampler.cell_of(e.r[cand, 0], e.r[cand, 1])
            g = sampler.gamma_at_cells(cid)
            p_acc = (2.0 * dt / p_thin) * g
            if p_cap > 1.0:
                state.clamped += int(np.count_nonzero(p_acc > 1.0))
            u_acc = gen.random(len(cand))
            take = u_acc < p_acc
            hit = cand[take]
            if len(hit):
                u_bin = gen.random(len(hit))
                qx, qy, sg = sampler.draw(cid[take], u_bin)
                live = sg != 0
                hit, qx, qy, sg = hit[live], qx[live], qy[live], sg[live]
                if len(hit):
                    pair_signs = (sg * e.s[hit]).astype(np.int8)
                    q = np.column_stack([qx, qy])
                    e.append_pairs(e.r[hit].copy(), q, pair_signs)
                    state.created += 2 * len(hit)
    state.step += 1
    state.peak_count = max(state.peak_count, e.n)
    state.check_conservation()
    return state


def annihilate(state, grid):
    """Cancel opposite signs per cell; survivors sit at the cell mean.

    Each occupied cell keeps |sum of signs| particles of the majority
    sign, repositioned at the plain average phase-space point of the
    cell's population.  Out-of-grid particles pass through untouched.
    """
    e = state.ensemble
    n = e.n
    if n == 0:
        return state
    flat = grid.cell_index(e.positions)
    inside = flat >= 0
    r_in = e.positions[inside]
    s_in = e.signs[inside]
    uniq, inv = np.unique(flat[inside], return_inverse=True)
    k = len(uniq)
    net = np.rint(np.bincount(inv, weights=s_in.astype(np.float64), minlength=k)).astype(np.int64)
    cnt = np.bincount(inv, minlength=k)
    keep = net != 0
    reps = np.abs(net[keep])
    n_out = int(np.count_nonzero(~inside))
    n_new = n_out + int(reps.sum())
    new_r = np.empty((max(n_new, 1), 4))
    new_s = np.empty(max(n_new, 1), np.int8)
    new_r[:n_out] = e.positions[~inside]
    new_s[:n_out] = e.signs[~inside]
    if k:
        means = np.empty((k, 4))
        for d in range(4):
            means[:, d] = np.bincount(inv, weights=r_in[:, d], minlength=k) / cnt
        new_r[n_out:n_new] = np.repeat(means[keep], reps, axis=0)
        new_s[n_out:n_new] = np.repeat(np.sign(net[keep]).astype(np.int8), reps)
    e.replace(new_r[:n_new], new_s[:n_new])
    state.annihilated += n - n_new
    state.check_conservation()
    return state


def prune_outside(state, domain):
    """Remove matched +- pairs outside the simulation domain.

    The discarded sets have equal plus and minus counts, so the signed
    sum is untouched; any sign excess outside the domain is kept.  This
    bounds the bookkeeping load of far-out noise without biasing the
    represented distribution.
    """
    if domain is None:
        return state
    e = state.ensemble
    n = e.n
    if n == 0:
        return state
    r = e.positions
    (xlo, xhi), (ylo, yhi), pmax = domain["x"], domain["y"], domain["p_max"]
    out = (
        (r[:, 0] < xlo) | (r[:, 0] > xhi) | (r[:, 1] < ylo) | (r[:, 1] > yhi)
        | (np.abs(r[:, 2]) > pmax) | (np.abs(r[:, 3]) > pmax)
    )
    if not out.any():
        return state
    s = e.signs
    plus_idx = np.nonzero(out & (s > 0))[0]
    minus_idx = np.nonzero(out & (s < 0))[0]
    k = min(len(plus_idx), len(minus_idx))
    if k == 0:
        return state
    drop = np.zeros(n, dtype=bool)
    drop[plus_idx[:k]] = True
    drop[minus_idx[:k]] = True
    e.replace(r[~drop], s[~drop])
    state.pruned += 2 * k
    state.check_conservation()
    return state


def reconstruct(ensemble, grid):
    """Signed cell masses divided by the cell volume, shaped like the grid."""
    flat = grid.cell_index(ensemble.positions)
    inside = flat >= 0
    acc = np.bincount(
        flat[inside], weights=ensemble.signs[inside].astype(np.float64), minlength=grid.n_cells
    )
    dens = acc / (ensemble.normalizer * grid.cell_volume)
    return dens.reshape(tuple(int(c) for c in grid.counts))


# ---------------------------------------------------------------------------
# run loop


@dataclass
class RunResult:
    times: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray
    survival: np.ndarray
    n_particles: np.ndarray
    snapshots: dict
    counters: dict
    state: SpmcState


def run(cfg, model, f_w0, gamma_table=None, sampler=None, progress=None):
    """Drift/scatter/annihilate loop with snapshotting and observables.

    ``model`` may be None for free propagation; otherwise pre-built
    tables are required.  Fully deterministic given (cfg, seed).
    """
    if model is not None and sampler is None:
        raise ConfigurationError("a sampler is required when a model is given; build tables first")
    max_g = sampler.max_gamma if sampler is not None else 0.0
    if gamma_table is not None:
        max_g = max(max_g, gamma_table.max_gamma)
    cfg.validate(max_gamma=max_g)

    rng = RngContract(cfg.seed)
    ens = init_particles(f_w0, cfg.init_grid, cfg.n_particles, rng.tagged(RngContract.INIT_STREAM))
    state = SpmcState(ensemble=ens, rng=rng)
    state.peak_count = ens.n
    state.check_conservation()

    n_steps = int(round(cfg.t_total / cfg.dt))
    obs_every = max(int(round(cfg.observable_interval / cfg.dt)), 1) if cfg.observable_interval else 0
    snap_steps = {int(round(t / cfg.dt)): t for t in cfg.snapshot_times}

    f0_grid = reconstruct(ens, cfg.snapshot_grid) if cfg.snapshot_grid is not None else None
    overlap_scale = (2.0 * math.pi) ** 2 * cfg.snapshot_grid.cell_volume if f0_grid is not None else 0.0

    times, xm, ym, surv, npart = [], [], [], [], []
    snapshots = {}

    def record(t_now):
        e = state.ensemble
        w = e.signs.astype(np.float64)
        d = e.normalizer
        times.append(t_now)
        xm.append(float((e.positions[:, 0] * w).sum() / d))
        ym.append(float((e.positions[:, 1] * w).sum() / d))
        if f0_grid is not None:
            ft = reconstruct(e, cfg.snapshot_grid)
            surv.append(float((f0_grid * ft).sum() * overlap_scale))
        else:
            surv.append(float("nan"))
        npart.append(e.n)

    if 0 in snap_steps:
        snapshots[snap_steps[0]] = (
            reconstruct(ens, cfg.snapshot_grid) if cfg.snapshot_grid is not None else None
        )
    if obs_every:
        record(0.0)

    for step in range(n_steps):
        drift(state, cfg.dt, cfg.mass, threads=cfg.threads)
        if sampler is not None:
            scatter(state, cfg.dt, gamma_table, sampler, threads=cfg.threads)
        else:
            state.step += 1
        if state.ensemble.n > cfg.particle_cap:
            raise ParticleExplosionError(
                f"particle count {state.ensemble.n} exceeded the cap {cfg.particle_cap} at "
                f"step {state.step}; reduce dt, scatter less (larger smoothing width), or "
                "annihilate more frequently"
            )
        if cfg.annihilation_period and (step + 1) % cfg.annihilation_period == 0:
            annihilate(state, cfg.annihilation_grid)
            prune_outside(state, cfg.prune_domain)
        if obs_every and (step + 1) % obs_every == 0:
            record((step + 1) * cfg.dt)
        if (step + 1) in snap_steps and cfg.snapshot_grid is not None:
            snapshots[snap_steps[step + 1]] = reconstruct(state.ensemble, cfg.snapshot_grid)
        if progress and (step + 1) % 1000 == 0:
            progress(step + 1, n_steps, state)

    counters = {
        "steps": n_steps,
        "created": state.created,
        "annihilated": state.annihilated,
        "pruned": state.pruned,
        "clamped": state.clamped,
        "peak_count": state.peak_count,
        "final_count": state.ensemble.n,
        "final_signed_sum": state.ensemble.signed_count(),
        "creation_rate_per_step": state.created / max(n_steps * cfg.n_particles, 1),
    }
    return RunResult(
        times=np.asarray(times),
        x_mean=np.asarray(xm),
        y_mean=np.asarray(ym),
        survival=np.asarray(surv),
        n_particles=np.asarray(npart, dtype=np.int64),
        snapshots=snapshots,
        counters=counters,
        state=state,
    )
