"""Phase-space scattering kernels derived from the potential models.

Two interchangeable representations of the momentum-transfer kernel
V_w(x, y, px, py):

* ``AnalyticGaussianWigner`` - closed form for a Gaussian-sum potential.
  Each potential term A exp(-(a x^2 + b xy + c y^2)) transforms to

      2 A / (pi * sqrt(det)) * sin(2 (px x + py y))
        * exp(-(c px^2 - b px py + a py^2) / det),   det = a c - b^2/4,

  in atomic units.  Constant offsets drop out of the central difference
  and never enter.  The prefactor was re-derived from the defining
  transform and is cross-checked against direct quadrature in the tests.

* ``SmoothedPolynomialWigner`` - for the bare polynomial well the kernel
  is a distribution (derivatives of delta functions); replacing each
  delta by a Gaussian of width ``sigma`` gives an everywhere-smooth,
  antisymmetric kernel with closed-form Hermite factors.

Both kernels are antisymmetric under momentum inversion, which is what
makes the positive/negative split and the pair-creation picture work.

``GammaTable`` tabulates the pair-creation rate (half the momentum
integral of the positive part) on a spatial grid; ``MomentumSampler``
stores per-spatial-cell discrete CDFs of |V_w| over a momentum grid for
drawing momentum shifts.  Both use midpoint quadrature on a grid of
cell centers symmetric about zero momentum, so the sampler's per-cell
total mass and the rate table agree exactly.
"""

import hashlib
import io
import json
import math

import numpy as np

from .potential import GaussianSumModel

TABLE_FORMAT_VERSION = 1


class WignerModelError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class AnalyticGaussianWigner:
    """Closed-form kernel for a Gaussian-sum potential (atomic units)."""

    variant = "gaussian_analytic"

    def __init__(self, model):
        if not isinstance(model, GaussianSumModel):
            raise WignerModelError("expected a GaussianSumModel")
        self.model = model

    def eval(self, x, y, px, py):
        """V_w at broadcastable arrays of phase-space coordinates."""
        x, y = np.asarray(x, float), np.asarray(y, float)
        px, py = np.asarray(px, float), np.asarray(py, float)
        phase = np.sin(2.0 * (px * x + py * y))
        out = 0.0
        for t in self.model.terms:
            det = t.a * t.c - 0.25 * t.b * t.b
            pref = 2.0 * t.A / (np.pi * np.sqrt(det))
            out = out + pref * np.exp(-(t.c * px**2 - t.b * px * py + t.a * py**2) / det)
        return phase * out

    def momentum_profile(self, PX, PY):
        """x-independent momentum factor g(p); V_w = sin(2 p.r) * g(p)."""
        g = np.zeros_like(PX)
        for t in self.model.terms:
            det = t.a * t.c - 0.25 * t.b * t.b
            pref = 2.0 * t.A / (np.pi * np.sqrt(det))
            g += pref * np.exp(-(t.c * PX**2 - t.b * PX * PY + t.a * PY**2) / det)
        return (g,)

    def eval_on_profile(self, x, y, PX, PY, profile):
        (g,) = profile
        return np.sin(2.0 * (PX * x + PY * y)) * g

    def param_signature(self):
        return ("gaussian_analytic",) + tuple((t.A, t.a, t.b, t.c) for t in self.model.terms)


class SmoothedPolynomialWigner:
    """Delta-smoothed kernel for the polynomial double well.

    Accepts degenerate coefficients (e.g. a0 = c0 = c = 0 for a pure
    harmonic potential), unlike the double-well parameter container.
    """

    variant = "polynomial_smoothed"

    def __init__(self, a0, c0, m, omega, c, sigma):
        if sigma <= 0:
            raise WignerModelError("smoothing width sigma must be positive")
        self.a0, self.c0, self.m, self.omega, self.c = a0, c0, m, omega, c
        self.sigma = sigma

    @classmethod
    def from_params(cls, params, sigma):
        return cls(params.a0, params.c0, params.m, params.omega, params.c, sigma)

    def _deltas(self, p):
        s = self.sigma
        d0 = np.exp(-((p / s) ** 2)) / (s * math.sqrt(math.pi))
        d1 = (-2.0 * p / s**2) * d0
        d3 = (12.0 * p / s**4 - 8.0 * p**3 / s**6) * d0
        return d0, d1, d3

    def eval(self, x, y, px, py):
        x, y = np.asarray(x, float), np.asarray(y, float)
        px, py = np.asarray(px, float), np.asarray(py, float)
        d0x, d1x, d3x = self._deltas(px)
        d0y, d1y, _ = self._deltas(py)
        gx = -self.a0 * x + self.c0 * x**3 - self.c * y
        tx = -0.25 * self.c0 * x
        gy = self.m * self.omega**2 * y - self.c * x
        return (gx * d1x + tx * d3x) * d0y + gy * d0x * d1y

    def momentum_profile(self, PX, PY):
        d0x, d1x, d3x = self._deltas(PX)
        d0y, d1y, _ = self._deltas(PY)
        return (d1x * d0y, d3x * d0y, d0x * d1y)

    def eval_on_profile(self, x, y, PX, PY, profile):
        f1, f3, fy = profile
        gx = -self.a0 * x + self.c0 * x**3 - self.c * y
        tx = -0.25 * self.c0 * x
        gy = self.m * self.omega**2 * y - self.c * x
        return gx * f1 + tx * f3 + gy * fy

    def param_signature(self):
        return ("polynomial_smoothed", self.a0, self.c0, self.m, self.omega, self.c, self.sigma)


def eval_wigner_potential(model, x, y, px, py):
    return model.eval(x, y, px, py)


def split_plus(model, x, y, px, py):
    """Positive part max(V_w, 0); the negative part is its momentum mirror."""
    return np.maximum(model.eval(x, y, px, py), 0.0)


# ---------------------------------------------------------------------------
# momentum quadrature grid


class MomentumGrid:
    """Midpoint grid of n x n cells over [-pbox, pbox]^2.

    Cell centers come in (p, -p) pairs and never sit at p = 0, so
    midpoint sums of |V_w| and of max(V_w, 0) are related exactly by the
    kernel's antisymmetry.
    """

    def __init__(self, pbox, n):
        if pbox <= 0 or n < 2 or n % 2:
            raise ConfigurationError("momentum grid needs pbox > 0 and an even n >= 2")
        self.pbox = float(pbox)
        self.n = int(n)
        self.dp = 2.0 * self.pbox / self.n
        self.centers = -self.pbox + (np.arange(self.n) + 0.5) * self.dp
        self.PX, self.PY = np.meshgrid(self.centers, self.centers, indexing="ij")

    @property
    def cell_area(self):
        return self.dp * self.dp

    def spec(self):
        return {"pbox": self.pbox, "n": self.n}


# ---------------------------------------------------------------------------
# rate table


class GammaTable:
    """Pair-creation rate on a spatial grid, bilinear between cell centers.

    Outside the tabulated window the rate is zero: the kernel is only
    trusted (and only needed) where the dynamics actually lives, and
    particles that stray beyond the window simply stop scattering.
    """

    def __init__(self, x_edges, y_edges, values):
        self.x_edges = np.asarray(x_edges, float)
        self.y_edges = np.asarray(y_edges, float)
        self.values = np.asarray(values, float)
        if self.values.shape != (len(self.x_edges) - 1, len(self.y_edges) - 1):
            raise ConfigurationError("gamma table shape mismatch")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ConfigurationError("gamma values must be finite and >= 0")
        self.x_centers = 0.5 * (self.x_edges[:-1] + self.x_edges[1:])
        self.y_centers = 0.5 * (self.y_edges[:-1] + self.y_edges[1:])

    @property
    def max_gamma(self):
        return float(self.values.max())

    def interpolate(self, x, y):
        """Bilinear interpolation at (x, y); zero outside the window."""
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        xc, yc = self.x_centers, self.y_centers
        inside = (x >= self.x_edges[0]) & (x <= self.x_edges[-1]) & \
                 (y >= self.y_edges[0]) & (y <= self.y_edges[-1])
        fx = np.clip((x - xc[0]) / (xc[1] - xc[0]), 0.0, len(xc) - 1.000001)
        fy = np.clip((y - yc[0]) / (yc[1] - yc[0]), 0.0, len(yc) - 1.000001)
        ix = fx.astype(np.int64)
        iy = fy.astype(np.int64)
        tx = fx - ix
        ty = fy - iy
        v = self.values
        out = (
            v[ix, iy] * (1 - tx) * (1 - ty)
            + v[ix + 1, iy] * tx * (1 - ty)
            + v[ix, iy + 1] * (1 - tx) * ty
            + v[ix + 1, iy + 1] * tx * ty
        )
        out[~inside] = 0.0
        return out


def _tail_check(model, x_samples, y_samples, pgrid, tol=1e-6):
    """Mass of |V_w| in the ring between the box and its double, relative
    to the in-box mass, maximised over sampled spatial cells."""
    ring = MomentumGrid(2.0 * pgrid.pbox, 2 * pgrid.n)
    mask = (np.abs(ring.PX) > pgrid.pbox) | (np.abs(ring.PY) > pgrid.pbox)
    prof_ring = None
    prof_in = None
    worst = 0.0
    for x in x_samples:
        for y in y_samples:
            if prof_ring is None:
                prof_ring = model.momentum_profile(ring.PX, ring.PY)
                prof_in = model.momentum_profile(pgrid.PX, pgrid.PY)
            vw_ring = np.abs(model.eval_on_profile(x, y, ring.PX, ring.PY, prof_ring))
            tail = float((vw_ring * mask).sum()) * ring.cell_area
            core = float(np.abs(model.eval_on_profile(x, y, pgrid.PX, pgrid.PY, prof_in)).sum()) * pgrid.cell_area
            if core > 0:
                worst = max(worst, tail / core)
    if worst > tol:
        raise ConfigurationError(
            f"momentum box +-{pgrid.pbox:g} too small: tail mass fraction {worst:.2e} > {tol:g}; "
            "increase the momentum box"
        )
    return worst


def build_gamma_table(model, x_edges, y_edges, pgrid, check_tail=True):
    """Tabulate gamma(x, y) = (1/2) int max(V_w, 0) d2p by midpoint sum.

    On the symmetric grid this equals a quarter of the |V_w| mass, which
    is also the normalisation the momentum sampler uses.
    """
    x_edges = np.asarray(x_edges, float)
    y_edges = np.asarray(y_edges, float)
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    yc = 0.5 * (y_edges[:-1] + y_edges[1:])
    if check_tail:
        xs = xc[:: max(1, len(xc) // 4)]
        ys = yc[:: max(1, len(yc) // 4)]
        _tail_check(model, xs, ys, pgrid)
    profile = model.momentum_profile(pgrid.PX, pgrid.PY)
    values = np.empty((len(xc), len(yc)))
    for i, x in enumerate(xc):
        for j, y in enumerate(yc):
            vw = model.eval_on_profile(x, y, pgrid.PX, pgrid.PY, profile)
            values[i, j] = 0.25 * np.abs(vw).sum() * pgrid.cell_area
    return GammaTable(x_edges, y_edges, values)


# ---------------------------------------------------------------------------
# momentum-shift sampler


class MomentumSampler:
    """Per-spatial-cell discrete CDF over momentum-shift bins.

    Bins carry probability mass proportional to |V_w(x_cell, p')| and a
    stored sign.  Cells where the kernel vanishes are marked
    no-scattering.  ``cell_gamma`` is the per-cell rate implied by the
    same discretisation (total |V_w| mass / 4), which the engine uses
    for the scattering probability so that draw frequencies and bin
    masses stay exactly consistent.
    """

    def __init__(self, x_edges, y_edges, pgrid, offsets, bin_index, cdf, signs, cell_gamma):
        self.x_edges = np.asarray(x_edges, float)
        self.y_edges = np.asarray(y_edges, float)
        self.pgrid = pgrid
        self.off = offsets
        self.bin_index = bin_index
        self.cdf = cdf
        self.signs = signs
        self.cell_gamma = cell_gamma
        self.nx = len(self.x_edges) - 1
        self.ny = len(self.y_edges) - 1
        sizes = np.diff(self.off)
        blk = np.cumsum(sizes > 0, dtype=np.int64) - 1
        blk[sizes == 0] = -1
        self._block = blk
        aug = self.cdf.copy()
        nonempty = np.nonzero(sizes > 0)[0]
        for rank, cell in enumerate(nonempty):
            aug[self.off[cell] : self.off[cell + 1]] += rank
        self._aug = aug

    @property
    def max_gamma(self):
        return float(self.cell_gamma.max())

    def cell_of(self, x, y):
        """Flat cell ids for positions; -1 outside the window."""
        fx = (np.asarray(x, float) - self.x_edges[0]) * (self.nx / (self.x_edges[-1] - self.x_edges[0]))
        fy = (np.asarray(y, float) - self.y_edges[0]) * (self.ny / (self.y_edges[-1] - self.y_edges[0]))
        ix = fx.astype(np.int64)
        iy = fy.astype(np.int64)
        inside = (fx >= 0) & (ix < self.nx) & (fy >= 0) & (iy < self.ny)
        cid = ix * self.ny + iy
        np.clip(cid, 0, self.nx * self.ny - 1, out=cid)
        cid[~inside] = -1
        return cid

    def gamma_at_cells(self, cid):
        g = np.zeros(len(cid))
        ok = cid >= 0
        g[ok] = self.cell_gamma.ravel()[cid[ok]]
        return g

    def is_no_scatter(self, cell_id):
        return self.off[cell_id] == self.off[cell_id + 1]

    def draw(self, cid, u):
        """Inverse-CDF draw per particle: cid (n,) cell ids, u (n,) uniforms.

        Returns (qx, qy, sign); sign = 0 flags a no-scattering cell.
        """
        qx = np.zeros(len(cid))
        qy = np.zeros(len(cid))
        sg = np.zeros(len(cid), np.int8)
        blk = np.full(len(cid), -1, np.int64)
        valid = cid >= 0
        blk[valid] = self._block[cid[valid]]
        ok = blk >= 0
        if ok.any():
            pos = np.searchsorted(self._aug, u[ok] + blk[ok], side="right")
            np.clip(pos, 0, len(self._aug) - 1, out=pos)
            flat = self.bin_index[pos]
            qx[ok] = self.pgrid.centers[flat // self.pgrid.n]
            qy[ok] = self.pgrid.centers[flat % self.pgrid.n]
            sg[ok] = self.signs[pos]
        return qx, qy, sg

    def cell_distribution(self, ix, iy):
        """(bin ids, probabilities, signs) stored for one spatial cell."""
        cell = ix * self.ny + iy
        a, b = self.off[cell], self.off[cell + 1]
        cdf = self.cdf[a:b]
        probs = np.diff(np.concatenate([[0.0], cdf]))
        return self.bin_index[a:b], probs, self.signs[a:b]


def build_momentum_sampler(model, x_edges, y_edges, pgrid, trim=1e-10):
    """Build the per-cell CDFs; bins below ``trim`` of a cell's mass are
    dropped (and the rest renormalised)."""
    x_edges = np.asarray(x_edges, float)
    y_edges = np.asarray(y_edges, float)
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    yc = 0.5 * (y_edges[:-1] + y_edges[1:])
    profile = model.momentum_profile(pgrid.PX, pgrid.PY)
    offsets = [0]
    idx_parts, cdf_parts, sgn_parts = [], [], []
    cell_gamma = np.zeros((len(xc), len(yc)))
    for i, x in enumerate(xc):
        for j, y in enumerate(yc):
            vw = model.eval_on_profile(x, y, pgrid.PX, pgrid.PY, profile).ravel()
            w = np.abs(vw) * pgrid.cell_area
            total = float(w.sum())
            cell_gamma[i, j] = 0.25 * total
            if total > 0.0:
                keep = np.nonzero(w > total * trim)[0].astype(np.int64)
                cw = np.cumsum(w[keep])
                cw /= cw[-1]
                idx_parts.append(keep)
                cdf_parts.append(cw)
                sgn_parts.append(np.where(vw[keep] > 0, 1, -1).astype(np.int8))
                offsets.append(offsets[-1] + len(keep))
            else:
                offsets.append(offsets[-1])
    cat = (lambda parts, dtype: np.concatenate(parts) if parts else np.zeros(0, dtype))
    return MomentumSampler(
        x_edges,
        y_edges,
        pgrid,
        np.asarray(offsets, np.int64),
        cat(idx_parts, np.int64),
        cat(cdf_parts, float),
        cat(sgn_parts, np.int8),
        cell_gamma,
    )


# ---------------------------------------------------------------------------
# table cache


def table_cache_key(model, x_edges, y_edges, pgrid_gamma, pgrid_sampler):
    payload = json.dumps(
        {
            "version": TABLE_FORMAT_VERSION,
            "model": model.param_signature(),
            "x_edges": list(np.asarray(x_edges, float)),
            "y_edges": list(np.asarray(y_edges, float)),
            "gamma_grid": pgrid_gamma.spec(),
            "sampler_grid": pgrid_sampler.spec(),
        },
        sort_keys=True,
        default=float,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def save_tables(path, gamma_table, sampler, key):
    buf = io.BytesIO()
    np.savez_compressed(
        buf,
        version=np.int64(TABLE_FORMAT_VERSION),
        key=np.frombuffer(key.encode(), dtype=np.uint8),
        g_xe=gamma_table.x_edges,
        g_ye=gamma_table.y_edges,
        g_val=gamma_table.values,
        s_xe=sampler.x_edges,
        s_ye=sampler.y_edges,
        s_pbox=np.float64(sampler.pgrid.pbox),
        s_pn=np.int64(sampler.pgrid.n),
        s_off=sampler.off,
        s_idx=sampler.bin_index,
        s_cdf=sampler.cdf,
        s_sgn=sampler.signs,
        s_gam=sampler.cell_gamma,
    )
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_tables(path, expected_key):
    with np.load(path) as z:
        if int(z["version"]) != TABLE_FORMAT_VERSION:
            return None
        key = bytes(z["key"]).decode()
        if key != expected_key:
            return None
        gamma = GammaTable(z["g_xe"], z["g_ye"], z["g_val"])
        pgrid = MomentumGrid(float(z["s_pbox"]), int(z["s_pn"]))
        sampler = MomentumSampler(
            z["s_xe"], z["s_ye"], pgrid, z["s_off"], z["s_idx"], z["s_cdf"], z["s_sgn"], z["s_gam"]
        )
    return gamma, sampler
