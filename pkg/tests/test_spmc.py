import math

import numpy as np
import pytest
from scipy.special import erf

from wigsim.grids import GridError, PhaseSpaceGrid
from wigsim.potential import GaussianSumModel, GaussianTerm
from wigsim.rng import RngContract
from wigsim.spmc import (
    Ensemble,
    EnsembleError,
    ParticleExplosionError,
    SpmcConfig,
    SpmcState,
    annihilate,
    drift,
    init_particles,
    prune_outside,
    reconstruct,
    run,
    scatter,
)
from wigsim.wigner import (
    AnalyticGaussianWigner,
    MomentumGrid,
    MomentumSampler,
    build_momentum_sampler,
)


def gaussian_f0(center=(0.0, 0.0, 0.0, 0.0), widths=(0.3, 0.3, 2.0, 2.0)):
    cx, cy, cpx, cpy = center
    wx, wy, wpx, wpy = widths

    def f(x, y, px, py):
        return np.exp(
            -((np.asarray(x) - cx) / wx) ** 2
            - ((np.asarray(y) - cy) / wy) ** 2
            - ((np.asarray(px) - cpx) / wpx) ** 2
            - ((np.asarray(py) - cpy) / wpy) ** 2
        )

    return f


def small_grid(span=2.0, pspan=8.0, cells=8):
    return PhaseSpaceGrid(
        [-span, -span, -pspan, -pspan], [span, span, pspan, pspan], [cells] * 4
    )


def make_state(r, s, normalizer=None, seed=0):
    sgn = np.asarray(s, np.int8)
    norm = int(sgn.astype(np.int64).sum()) if normalizer is None else normalizer
    st = SpmcState(ensemble=Ensemble(np.asarray(r, float), sgn, norm), rng=RngContract(seed))
    return st


class TestGrid:
    def test_cell_counts_validated(self):
        with pytest.raises(GridError):
            PhaseSpaceGrid([0, 0, 0, 0], [1, 1, 1, 1], [1, 4, 4, 4])

    def test_point_maps_to_one_cell_or_outside(self):
        g = small_grid(cells=4)
        inside = g.cell_index(np.array([[0.1, 0.1, 0.0, 0.0]]))
        assert inside[0] >= 0
        on_top = g.cell_index(np.array([[2.0, 0.0, 0.0, 0.0]]))
        assert on_top[0] == -1
        on_low = g.cell_index(np.array([[-2.0, 0.0, 0.0, 0.0]]))
        assert on_low[0] >= 0


class TestInit:
    def test_positive_density_all_plus(self, rng):
        ens = init_particles(gaussian_f0(), small_grid(), 5000, rng)
        assert ens.n_minus == 0
        assert ens.total_weight() == 1.0

    def test_single_particle(self, rng):
        ens = init_particles(gaussian_f0(), small_grid(), 1, rng)
        assert ens.n == 1
        assert ens.normalizer == 1

    def test_zero_mass_rejected(self, rng):
        with pytest.raises(EnsembleError, match="zero"):
            init_particles(lambda x, y, px, py: 0.0 * np.asarray(x), small_grid(), 100, rng)

    def test_cell_masses_match_exact_integrals(self, rng, paper_cfg, system):
        # the production initial state: per-cell mass is a product of erf
        # factors, computed here independently
        from wigsim import config as cfgmod

        f0 = cfgmod.initial_phase_space_density(system)
        grid = cfgmod.init_grid(paper_cfg, system)
        n = 500_000
        ens = init_particles(f0, grid, n, rng)
        recon = reconstruct(ens, grid) * grid.cell_volume  # masses
        ini = system.initial
        widths = [
            1 / math.sqrt(ini.m * ini.omega_x),
            1 / math.sqrt(ini.m * ini.omega),
            math.sqrt(ini.m * ini.omega_x),
            math.sqrt(ini.m * ini.omega),
        ]
        centers = [system.x0, system.y0, 0.0, 0.0]
        factors = []
        for d, w in enumerate(widths):
            e = grid.edges(("x", "y", "px", "py")[d])
            cdf = 0.5 * (1 + erf((e - centers[d]) / w))
            factors.append(np.diff(cdf))
        exact = np.einsum("i,j,k,l->ijkl", *factors)
        exact /= exact.sum()
        err = np.abs(recon - exact).max()
        assert err <= 3.0 / math.sqrt(n) * exact.max()

    def test_generic_callable_quota_close_to_exact(self, rng):
        # refined-midpoint fallback: same statistics to MC accuracy
        widths = (0.3, 0.3, 2.0, 2.0)
        f0 = gaussian_f0(widths=widths)
        grid = PhaseSpaceGrid([-1.2, -1.2, -8, -8], [1.2, 1.2, 8, 8], [6, 6, 6, 6])
        ens = init_particles(f0, grid, 100_000, rng)
        recon = reconstruct(ens, grid) * grid.cell_volume
        factors = []
        for d, w in enumerate(widths):
            e = grid.edges(("x", "y", "px", "py")[d])
            cdf = 0.5 * (1 + erf(e / w))
            factors.append(np.diff(cdf) * w * math.sqrt(math.pi))
        exact = np.einsum("i,j,k,l->ijkl", *factors)
        exact /= exact.sum()
        assert np.abs(recon - exact).max() <= 0.02 * exact.max()


class TestDrift:
    def test_positions_advance(self):
        st = make_state([[0, 0, 3.0, -1.0]], [1])
        drift(st, dt=0.5, mass=2.0)
        np.testing.assert_allclose(st.ensemble.positions[0], [0.75, -0.25, 3.0, -1.0])

    def test_zero_momentum_stays(self):
        st = make_state([[1.0, -1.0, 0.0, 0.0]], [1])
        drift(st, dt=0.5, mass=2.0)
        np.testing.assert_array_equal(st.ensemble.positions[0], [1.0, -1.0, 0.0, 0.0])

    def test_two_half_steps_equal_one(self):
        r0 = [[0.3, -0.2, 1.7, 0.4]]
        a = make_state(r0, [1])
        drift(a, 0.25, 1837.0)
        drift(a, 0.25, 1837.0)
        b = make_state(r0, [1])
        drift(b, 0.5, 1837.0)
        np.testing.assert_array_equal(a.ensemble.positions, b.ensemble.positions)


def single_bin_sampler(q=(1.5, -0.5), sign=1, gamma=0.25, pbox=4.0, n=8):
    """One spatial cell over [-1,1]^2 whose distribution is a single bin."""
    pgrid = MomentumGrid(pbox, n)
    ix = int(np.argmin(np.abs(pgrid.centers - q[0])))
    iy = int(np.argmin(np.abs(pgrid.centers - q[1])))
    flat = ix * n + iy
    return MomentumSampler(
        np.array([-1.0, 1.0]),
        np.array([-1.0, 1.0]),
        pgrid,
        np.array([0, 1], np.int64),
        np.array([flat], np.int64),
        np.array([1.0]),
        np.array([sign], np.int8),
        np.array([[gamma]]),
    ), (pgrid.centers[ix], pgrid.centers[iy])


class TestScatter:
    def test_no_kernel_is_identity_plus_bookkeeping(self):
        model = AnalyticGaussianWigner(
            GaussianSumModel((GaussianTerm(A=0.0, a=1.0, b=0.0, c=1.0),))
        )
        sampler = build_momentum_sampler(
            model, np.linspace(-1, 1, 3), np.linspace(-1, 1, 3), MomentumGrid(4.0, 8)
        )
        st = make_state([[0.0, 0.0, 1.0, 2.0]], [1])
        r_before = st.ensemble.positions.copy()
        scatter(st, 0.1, None, sampler)
        assert st.step == 1
        assert st.created == 0
        np.testing.assert_array_equal(st.ensemble.positions, r_before)

    def test_forced_scatter_pair_structure(self):
        sampler, q = single_bin_sampler(gamma=1.0)
        st = make_state([[0.0, 0.0, 0.5, -0.25]], [1])
        scatter(st, dt=0.5, gamma_table=None, sampler=sampler)  # 2*gamma*dt = 1
        e = st.ensemble
        assert e.n == 3
        np.testing.assert_allclose(e.positions[0], [0, 0, 0.5, -0.25])
        np.testing.assert_allclose(e.positions[1], [0, 0, 0.5 + q[0], -0.25 + q[1]])
        np.testing.assert_allclose(e.positions[2], [0, 0, 0.5 - q[0], -0.25 - q[1]])
        assert list(e.signs) == [1, 1, -1]
        assert e.total_weight() == 1.0

    def test_negative_kernel_sign_flips_pair(self):
        sampler, q = single_bin_sampler(sign=-1, gamma=1.0)
        st = make_state([[0.0, 0.0, 0.0, 0.0]], [1])
        scatter(st, dt=0.5, gamma_table=None, sampler=sampler)
        assert list(st.ensemble.signs) == [1, -1, 1]

    def test_expected_pair_count(self):
        sampler, _ = single_bin_sampler(gamma=0.2)
        n, dt = 20000, 0.3
        p = 2 * 0.2 * dt
        created = []
        for seed in range(5):
            st = make_state(np.zeros((n, 4)), np.ones(n), seed=seed)
            scatter(st, dt, None, sampler)
            created.append(st.created / 2)
        mean = np.mean(created)
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(mean - n * p) < 4 * sigma / math.sqrt(len(created))

    def test_outside_window_never_scatters(self):
        sampler, _ = single_bin_sampler(gamma=5.0)
        st = make_state([[5.0, 5.0, 0.0, 0.0]], [1])  # outside [-1,1]^2
        scatter(st, 0.1, None, sampler)
        assert st.created == 0


class TestAnnihilate:
    def test_opposite_pair_cancels(self):
        g = small_grid()
        # a +- pair sharing a cell plus a lone carrier in a distant cell
        st = make_state(
            [[0.1, 0.1, 0.5, 0.5], [0.12, 0.11, 0.4, 0.6], [-1.5, -1.5, -3.0, 3.0]],
            [1, -1, 1],
        )
        annihilate(st, g)
        assert st.ensemble.n == 1
        assert st.annihilated == 2
        assert st.ensemble.total_weight() == 1.0

    def test_majority_survives_at_mean(self):
        g = small_grid()
        r = np.array([[0.1, 0.1, 0.5, 0.5], [0.2, 0.1, 0.6, 0.4], [0.15, 0.12, 0.55, 0.45]])
        st = make_state(r, [1, 1, -1], normalizer=1)
        annihilate(st, g)
        e = st.ensemble
        assert e.n == 1
        assert e.signs[0] == 1
        np.testing.assert_allclose(e.positions[0], r.mean(axis=0))

    def test_conservation_and_outside_untouched(self, rng):
        g = small_grid(span=1.0, pspan=4.0, cells=4)
        n = 4000
        r = rng.uniform(-1.5, 1.5, size=(n, 4))  # some outside
        s = np.where(rng.random(n) < 0.7, 1, -1)
        st = make_state(r, s)
        before = st.ensemble.total_weight()
        outside = r[g.cell_index(r) == -1]
        annihilate(st, g)
        assert st.ensemble.total_weight() == before
        # outside particles preserved verbatim
        after = st.ensemble.positions[: len(outside)]
        np.testing.assert_array_equal(np.sort(after, axis=0), np.sort(outside, axis=0))


class TestPrune:
    def test_pairs_removed_excess_kept(self):
        dom = {"x": (-1.0, 1.0), "y": (-1.0, 1.0), "p_max": 10.0}
        r = np.array([
            [5.0, 0, 0, 0], [5.1, 0, 0, 0], [5.2, 0, 0, 0],   # outside: +, +, -
            [0.0, 0, 0, 0],
        ])
        st = make_state(r, [1, 1, -1, 1], normalizer=2)
        prune_outside(st, dom)
        e = st.ensemble
        assert e.n == 2
        assert st.pruned == 2
        assert e.total_weight() == 1.0
        assert (e.positions[:, 0] > 4).sum() == 1  # the excess + stayed


class TestReconstruct:
    def test_empty_is_zero(self):
        g = small_grid(cells=4)
        ens = Ensemble(np.zeros((0, 4)), np.zeros(0, np.int8), 1)
        assert np.all(reconstruct(ens, g) == 0)

    def test_single_particle_density(self):
        g = small_grid(cells=4)
        ens = Ensemble(np.array([[0.1, 0.1, 0.1, 0.1]]), np.array([1], np.int8), 1)
        f = reconstruct(ens, g)
        assert f.sum() * g.cell_volume == pytest.approx(1.0)
        assert f.max() == pytest.approx(1.0 / g.cell_volume)

    def test_total_integral_counts_in_grid_weight(self, rng):
        g = small_grid(span=1.0, pspan=4.0, cells=4)
        r = rng.uniform(-2, 2, size=(1000, 4))
        s = np.where(rng.random(1000) < 0.8, 1, -1)
        ens = Ensemble(r, s.astype(np.int8), int(s.sum()))
        inside = g.cell_index(r) >= 0
        expected = s[inside].sum() / s.sum()
        f = reconstruct(ens, g)
        assert f.sum() * g.cell_volume == pytest.approx(expected, abs=1e-12)


def tiny_run_config(seed=3, threads=1, t_total=2.0, n_particles=3000, cap=10**7):
    grid = small_grid(span=3.0, pspan=10.0, cells=8)
    return SpmcConfig(
        dt=0.1,
        t_total=t_total,
        n_particles=n_particles,
        mass=200.0,
        seed=seed,
        annihilation_period=3,
        annihilation_grid=grid,
        init_grid=PhaseSpaceGrid([-1, -1, -5, -5], [1, 1, 5, 5], [8, 8, 8, 8]),
        snapshot_grid=grid,
        snapshot_times=(0.0, 2.0),
        observable_interval=0.5,
        prune_domain={"x": (-4, 4), "y": (-4, 4), "p_max": 12.0},
        particle_cap=cap,
        gamma_dt_limit=1.0,
        threads=threads,
    )


@pytest.fixture(scope="module")
def toy_tables():
    model = AnalyticGaussianWigner(
        GaussianSumModel((GaussianTerm(A=0.08, a=0.9, b=0.2, c=1.2),))
    )
    sampler = build_momentum_sampler(
        model, np.linspace(-3, 3, 9), np.linspace(-3, 3, 9), MomentumGrid(4.0, 16)
    )
    return model, sampler


class TestRun:
    def test_deterministic_rerun(self, toy_tables):
        model, sampler = toy_tables
        f0 = gaussian_f0()
        a = run(tiny_run_config(), model, f0, sampler=sampler)
        b = run(tiny_run_config(), model, f0, sampler=sampler)
        np.testing.assert_array_equal(a.snapshots[2.0], b.snapshots[2.0])
        np.testing.assert_array_equal(a.x_mean, b.x_mean)
        np.testing.assert_array_equal(a.state.ensemble.positions, b.state.ensemble.positions)

    def test_thread_count_does_not_change_results(self, toy_tables):
        model, sampler = toy_tables
        f0 = gaussian_f0()
        runs = [run(tiny_run_config(threads=t), model, f0, sampler=sampler) for t in (1, 4, 8)]
        for other in runs[1:]:
            np.testing.assert_array_equal(runs[0].snapshots[2.0], other.snapshots[2.0])
            np.testing.assert_array_equal(runs[0].state.ensemble.positions, other.state.ensemble.positions)
            np.testing.assert_array_equal(runs[0].survival, other.survival)

    def test_conservation_and_counters(self, toy_tables):
        model, sampler = toy_tables
        res = run(tiny_run_config(), model, gaussian_f0(), sampler=sampler)
        assert res.state.ensemble.total_weight() == 1.0
        assert res.counters["created"] >= 0
        assert res.counters["final_signed_sum"] == res.state.ensemble.normalizer

    def test_particle_cap_aborts(self, toy_tables):
        model, sampler = toy_tables
        cfg = tiny_run_config(cap=3100, n_particles=3000, t_total=20.0)
        with pytest.raises(ParticleExplosionError, match="cap"):
            run(cfg, model, gaussian_f0(), sampler=sampler)

    def test_gamma_dt_bound_enforced(self, toy_tables):
        model, sampler = toy_tables
        cfg = tiny_run_config()
        cfg.gamma_dt_limit = 1e-6
        from wigsim.wigner import ConfigurationError

        with pytest.raises(ConfigurationError, match="gamma"):
            run(cfg, model, gaussian_f0(), sampler=sampler)

    def test_free_run_creates_nothing(self):
        cfg = tiny_run_config()
        res = run(cfg, None, gaussian_f0(), sampler=None)
        assert res.counters["created"] == 0
        assert res.state.ensemble.n == cfg.n_particles
