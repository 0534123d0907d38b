import numpy as np
import pytest
from hypothesis import given, strategies as st

from wigsim import units
from wigsim.potential import (
    DoubleWellParams,
    FitConfig,
    GaussianSumModel,
    GaussianTerm,
    PotentialError,
    derive_quartic_coefficients,
    eval_double_well,
    eval_gaussian_sum,
    fit_gaussian_sum,
    fit_loss_and_gradient,
    model_from_json,
    model_to_json,
    truncate,
)

EV = units.to_internal(1.0, "eV")
ANG = units.to_internal(1.0, "angstrom")


def paper_params(c=None):
    a0, c0 = derive_quartic_coefficients(0.502 * ANG, 0.27 * EV)
    return DoubleWellParams(
        a0=a0,
        c0=c0,
        m=1837.0,
        omega=units.to_internal(2980.0, "wavenumber"),
        c=units.to_internal(2.34, "eV_per_ang2") if c is None else c,
    )


class TestDoubleWell:
    def test_origin_vanishes(self):
        assert eval_double_well(paper_params(), 0.0, 0.0) == 0.0

    def test_well_depth_without_coupling(self):
        p = paper_params(c=0.0)
        for sign in (+1, -1):
            v = eval_double_well(p, sign * p.x_well, 0.0)
            assert v == pytest.approx(-0.27 * EV, rel=1e-12)

    def test_second_difference_in_y_is_curvature(self):
        p = paper_params()
        h = 1e-3
        x = p.x_well
        num = (eval_double_well(p, x, h) - 2 * eval_double_well(p, x, 0.0) + eval_double_well(p, x, -h)) / h**2
        assert num == pytest.approx(p.m * p.omega**2, rel=1e-6)

    def test_symmetry_without_coupling(self):
        p = paper_params(c=0.0)
        pts = np.random.default_rng(0).uniform(-2, 2, size=(32, 2))
        for x, y in pts:
            assert eval_double_well(p, x, y) == eval_double_well(p, -x, y)
            assert eval_double_well(p, x, y) == eval_double_well(p, x, -y)

    def test_invalid_params_rejected(self):
        with pytest.raises(PotentialError):
            DoubleWellParams(a0=-1.0, c0=1.0, m=1.0, omega=1.0, c=0.0)


class TestQuarticCoefficients:
    def test_paper_values(self):
        a0, c0 = derive_quartic_coefficients(0.502 * ANG, 0.27 * EV)
        assert units.from_internal(a0, "eV_per_ang2") == pytest.approx(4.2856, abs=2e-4)
        assert units.from_internal(c0, "eV_per_ang4") == pytest.approx(17.006, abs=2e-3)

    def test_round_trips(self):
        a0, c0 = derive_quartic_coefficients(0.502 * ANG, 0.27 * EV)
        assert np.sqrt(a0 / c0) == pytest.approx(0.502 * ANG, rel=1e-14)
        assert a0**2 / (4 * c0) == pytest.approx(0.27 * EV, rel=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(PotentialError):
            derive_quartic_coefficients(-1.0, 1.0)
        with pytest.raises(PotentialError):
            derive_quartic_coefficients(1.0, 0.0)


class TestTruncate:
    def test_below_threshold(self):
        assert truncate(2.0, 4.0) == 2.0

    def test_clamped(self):
        assert truncate(9.3, 4.0) == 4.0

    def test_boundary(self):
        assert truncate(4.0, 4.0) == 4.0

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 10))
    def test_idempotent_and_monotone(self, v1, v2, thr):
        assert truncate(truncate(v1, thr), thr) == truncate(v1, thr)
        lo, hi = min(v1, v2), max(v1, v2)
        assert truncate(lo, thr) <= truncate(hi, thr)


class TestGaussianSum:
    def test_unit_term_at_origin(self):
        m = GaussianSumModel((GaussianTerm(A=1.0, a=1.0, b=0.0, c=1.0, h=0.0),))
        assert eval_gaussian_sum(m, 0.0, 0.0) == pytest.approx(1.0)

    def test_offset_included(self):
        m = GaussianSumModel((GaussianTerm(A=2.0, a=1.0, b=0.0, c=1.0, h=0.5),))
        assert eval_gaussian_sum(m, 0.0, 0.0) == pytest.approx(2.5)

    def test_matches_matrix_quadratic_form(self, rng):
        terms = []
        for _ in range(3):
            a, c = rng.uniform(0.2, 2.0, 2)
            b = rng.uniform(-0.9, 0.9) * 2 * np.sqrt(a * c)
            terms.append(GaussianTerm(A=rng.normal(), a=a, b=b, c=c, h=rng.normal() * 0.1))
        model = GaussianSumModel(tuple(terms))
        for _ in range(16):
            x, y = rng.uniform(-2, 2, 2)
            expected = model.offset
            for t in terms:
                M = np.array([[t.a, t.b / 2], [t.b / 2, t.c]])
                r = np.array([x, y])
                expected += t.A * np.exp(-r @ M @ r)
            assert eval_gaussian_sum(model, x, y) == pytest.approx(expected, abs=1e-14, rel=1e-14)

    def test_bounded_by_amplitudes(self, rng):
        terms = tuple(
            GaussianTerm(A=rng.normal(), a=rng.uniform(0.2, 2), b=0.0, c=rng.uniform(0.2, 2), h=0.05)
            for _ in range(3)
        )
        model = GaussianSumModel(terms)
        bound = sum(abs(t.A) for t in terms) + abs(model.offset)
        pts = rng.uniform(-5, 5, size=(64, 2))
        vals = eval_gaussian_sum(model, pts[:, 0], pts[:, 1])
        assert np.all(np.abs(vals) <= bound + 1e-12)

    def test_positive_definiteness_enforced(self):
        with pytest.raises(PotentialError, match="positive definite"):
            GaussianTerm(A=1.0, a=0.5, b=2.0, c=0.5)

    def test_json_round_trip_is_exact(self, rng):
        terms = tuple(
            GaussianTerm(A=rng.normal(), a=rng.uniform(0.2, 2), b=rng.uniform(-0.3, 0.3), c=rng.uniform(0.2, 2), h=rng.normal())
            for _ in range(3)
        )
        model = GaussianSumModel(terms)
        text = model_to_json(model, v_thr=0.147)
        back, doc = model_from_json(text)
        for t0, t1 in zip(model.terms, back.terms):
            assert (t0.A, t0.a, t0.b, t0.c, t0.h) == (t1.A, t1.a, t1.b, t1.c, t1.h)
        assert doc["v_thr"] == 0.147


class TestFitter:
    def test_gradient_matches_finite_differences(self, rng):
        xs = np.linspace(-2, 2, 41)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        target = np.exp(-(X**2 + Y**2)) * 0.3
        w = np.ones_like(target)
        theta = np.array([0.5, 0.8, 0.1, 1.2, -0.3, 0.4, -0.05, 0.9, 0.2, 1.5, 0.02, 0.7, 0.05])
        _, grad = fit_loss_and_gradient(theta, 3, X, Y, target, w)
        for k in range(len(theta)):
            h = 1e-6
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            lp, _ = fit_loss_and_gradient(tp, 3, X, Y, target, w)
            lm, _ = fit_loss_and_gradient(tm, 3, X, Y, target, w)
            fd = (lp - lm) / (2 * h)
            assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-12)

    def test_recovers_single_gaussian(self):
        truth = GaussianTerm(A=-0.11, a=0.7, b=0.12, c=1.3, h=0.021)
        target_model = GaussianSumModel((truth,))

        def target(x, y):
            return eval_gaussian_sum(target_model, x, y)

        cfg = FitConfig(n_terms=1, x_min=-2.5, x_max=2.5, y_min=-2.0, y_max=2.0,
                        nx=61, ny=61, v_thr=1.0, max_iter=4000, n_restarts=6, seed=5)
        model, report = fit_gaussian_sum(target, cfg)
        t = model.terms[0]
        assert t.A == pytest.approx(truth.A, rel=1e-3)
        assert t.a == pytest.approx(truth.a, rel=1e-3)
        assert t.b == pytest.approx(truth.b, rel=1e-3)
        assert t.c == pytest.approx(truth.c, rel=1e-3)
        assert model.offset == pytest.approx(truth.h, rel=1e-3)
        assert report.rmse_full < 1e-5

    def test_double_well_fit_quality(self, fitted):
        model, report = fitted
        # threshold pinned from the first production fit (0.0198 eV achieved);
        # the report records the achieved value
        assert report.rmse_low <= 0.025 * EV
        assert report.rmse_low <= report.rmse_full
        for t in model.terms:
            assert 4 * t.a * t.c - t.b**2 > 0

    def test_longer_budget_never_worse(self, system):
        from wigsim import config as cfgmod

        target = lambda x, y: truncate(eval_double_well(system.params, x, y), 4 * EV)
        base = dict(n_terms=3, x_min=-2.8, x_max=2.8, y_min=-1.9, y_max=1.9, nx=41, ny=41,
                    v_thr=4 * EV, n_restarts=2, seed=9, low_region_weight=100.0,
                    low_region_threshold=1.0 * EV)
        _, short = fit_gaussian_sum(target, FitConfig(max_iter=40, **base))
        _, long = fit_gaussian_sum(target, FitConfig(max_iter=2000, **base))
        assert long.loss <= short.loss

    def test_non_convergence_flagged(self):
        target = lambda x, y: np.exp(-(x**2 + y**2))
        cfg = FitConfig(n_terms=2, nx=21, ny=21, x_min=-2, x_max=2, y_min=-2, y_max=2,
                        v_thr=1.0, max_iter=1, n_restarts=1, tol=0.0)
        model, report = fit_gaussian_sum(target, cfg)
        assert not report.converged
        assert np.isfinite(report.loss)
