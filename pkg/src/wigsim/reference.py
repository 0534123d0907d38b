"""Deterministic benchmarks: a 2D time-dependent Schroedinger solver and
the phase-space transform of its wavefunctions.

The solver is Crank-Nicolson on the 5-point Laplacian with hard-wall
boundaries, solved per step by fixed-point iteration (the iteration
matrix has norm ~ dt * H / 2, far below 1 at sane time steps), which
keeps the update unitary to solver tolerance.  It is meant as a ground
truth for the particle method, so defaults favour accuracy over speed.
"""

import math
from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    pass


class NormDriftError(SolverError):
    """Norm conservation broke; the step is too coarse for the grid."""


@dataclass(frozen=True)
class InitialStateParams:
    """Product-Gaussian wavepacket parameters (atomic units).

    The packet is the ground state of the local harmonic approximation,
    centred at (-x_well, 0): frequency omega_x along x, omega along y.
    """

    m: float
    omega: float
    omega_x: float
    x_well: float

    def __post_init__(self):
        if min(self.m, self.omega, self.omega_x, self.x_well) <= 0:
            raise ValueError("all initial-state parameters must be positive")


class WavefunctionGrid:
    """Complex amplitudes on a uniform rectangular (x, y) grid."""

    def __init__(self, xs, ys, psi, mass, time=0.0):
        self.xs = np.asarray(xs, float)
        self.ys = np.asarray(ys, float)
        self.psi = np.asarray(psi, complex)
        self.mass = float(mass)
        self.time = float(time)
        if self.psi.shape != (len(self.xs), len(self.ys)):
            raise ValueError("psi shape must be (len(xs), len(ys))")
        self.dx = float(self.xs[1] - self.xs[0])
        self.dy = float(self.ys[1] - self.ys[0])

    @property
    def cell_area(self):
        return self.dx * self.dy

    def norm(self):
        return float((np.abs(self.psi) ** 2).sum() * self.cell_area)

    def density(self):
        return np.abs(self.psi) ** 2

    def position_expectation(self):
        rho = self.density()
        w = rho.sum()
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return float((X * rho).sum() / w), float((Y * rho).sum() / w)

    def overlap(self, other):
        """<self|other> on the shared grid."""
        return complex((np.conj(self.psi) * other.psi).sum() * self.cell_area)

    def copy(self):
        return WavefunctionGrid(self.xs, self.ys, self.psi.copy(), self.mass, self.time)


def initial_wavepacket(params, xs, ys, center=None, min_sigmas=6.0):
    """Normalised product Gaussian, by default centred at (-x_well, 0).

    Raises if the grid does not cover ``min_sigmas`` standard deviations
    of both Gaussians on every side.
    """
    sx = math.sqrt(1.0 / (2.0 * params.m * params.omega_x))
    sy = math.sqrt(1.0 / (2.0 * params.m * params.omega))
    x0, y0 = center if center is not None else (-params.x_well, 0.0)
    if (x0 - xs[0]) < min_sigmas * sx or (xs[-1] - x0) < min_sigmas * sx:
        raise ValueError("x grid does not cover the packet")
    if (y0 - ys[0]) < min_sigmas * sy or (ys[-1] - y0) < min_sigmas * sy:
        raise ValueError("y grid does not cover the packet")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    mw = params.m
    amp = math.sqrt(mw * math.sqrt(params.omega_x * params.omega) / math.pi)
    psi = amp * np.exp(-0.5 * mw * params.omega_x * (X - x0) ** 2) * np.exp(
        -0.5 * mw * params.omega * (Y - y0) ** 2
    )
    grid = WavefunctionGrid(xs, ys, psi.astype(complex), params.m)
    grid.psi /= math.sqrt(grid.norm())
    return grid


def initial_wigner(params):
    """Closed-form phase-space density of the initial packet.

    Returns a callable f(x, y, px, py); it is positive, peaks at
    (-x_well, 0, 0, 0) with value (1/pi)^2, and integrates to 1.
    """
    m, wx, wy, xw = params.m, params.omega_x, params.omega, params.x_well

    def f(x, y, px, py):
        return (
            (1.0 / math.pi**2)
            * np.exp(-m * wx * (np.asarray(x) + xw) ** 2)
            * np.exp(-np.asarray(px) ** 2 / (m * wx))
            * np.exp(-m * wy * np.asarray(y) ** 2)
            * np.exp(-np.asarray(py) ** 2 / (m * wy))
        )

    return f


# ---------------------------------------------------------------------------
# propagation


def _apply_hamiltonian(psi, vgrid, mass, dx, dy):
    """5-point kinetic stencil plus local potential; hard-wall edges."""
    lap = np.full_like(psi, -2.0 / dx**2 - 2.0 / dy**2) * psi
    lap[1:, :] += psi[:-1, :] / dx**2
    lap[:-1, :] += psi[1:, :] / dx**2
    lap[:, 1:] += psi[:, :-1] / dy**2
    lap[:, :-1] += psi[:, 1:] / dy**2
    return (-0.5 / mass) * lap + vgrid * psi


def solve_tdse(potential, psi0, dt, t_total, snapshot_times=(), observable_interval=0.0,
               fp_tol=1e-13, max_fp_iter=60, norm_tol=1e-8, progress=None):
    """Crank-Nicolson propagation of ``psi0`` under ``potential(x, y)``.

    Returns (snapshots, series) where snapshots maps requested times to
    WavefunctionGrid copies and series is a dict of time series:
    t, x_mean, y_mean, survival (|<psi0|psi_t>|^2), norm.

    Raises NormDriftError if norm conservation degrades beyond
    ``norm_tol`` per thousand steps.
    """
    xs, ys, mass = psi0.xs, psi0.ys, psi0.mass
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vgrid = np.asarray(potential(X, Y), float)
    vmax = float(np.abs(vgrid).max())
    kmax = 2.0 / mass * (1.0 / psi0.dx**2 + 1.0 / psi0.dy**2)
    alpha = 0.5 * dt * (kmax + vmax)
    if alpha >= 0.9:
        raise SolverError(
            f"dt too large for fixed-point Crank-Nicolson: dt*||H||/2 ~ {alpha:.2f} >= 0.9"
        )

    psi = psi0.psi.copy()
    n_steps = int(round(t_total / dt))
    obs_every = max(int(round(observable_interval / dt)), 1) if observable_interval else 0
    snap_steps = {int(round(t / dt)): t for t in snapshot_times}

    snapshots = {}
    series = {"t": [], "x_mean": [], "y_mean": [], "survival": [], "norm": []}
    psi0_flat = psi0.psi
    cell = psi0.cell_area

    def record(step, cur):
        rho = np.abs(cur) ** 2
        w = rho.sum()
        series["t"].append(step * dt)
        series["x_mean"].append(float((X * rho).sum() / w))
        series["y_mean"].append(float((Y * rho).sum() / w))
        ov = (np.conj(psi0_flat) * cur).sum() * cell
        series["survival"].append(float(abs(ov) ** 2))
        series["norm"].append(float(w * cell))

    if 0 in snap_steps:
        snapshots[snap_steps[0]] = WavefunctionGrid(xs, ys, psi.copy(), mass, 0.0)
    if obs_every:
        record(0, psi)

    norm0 = float((np.abs(psi) ** 2).sum() * cell)
    half = 0.5j * dt
    for step in range(n_steps):
        hpsi = _apply_hamiltonian(psi, vgrid, mass, psi0.dx, psi0.dy)
        rhs = psi - half * hpsi
        cur = rhs - half * _apply_hamiltonian(rhs, vgrid, mass, psi0.dx, psi0.dy)
        for _ in range(max_fp_iter):
            nxt = rhs - half * _apply_hamiltonian(cur, vgrid, mass, psi0.dx, psi0.dy)
            delta = float(np.max(np.abs(nxt - cur)))
            cur = nxt
            if delta < fp_tol:
                break
        else:
            raise SolverError("fixed-point iteration did not converge; reduce dt")
        psi = cur
        if (step + 1) % 1000 == 0:
            norm = float((np.abs(psi) ** 2).sum() * cell)
            if abs(norm - norm0) > norm_tol:
                raise NormDriftError(
                    f"norm drifted by {abs(norm - norm0):.2e} after {step + 1} steps"
                )
            if progress:
                progress(step + 1, n_steps)
        if (step + 1) in snap_steps:
            snapshots[snap_steps[step + 1]] = WavefunctionGrid(xs, ys, psi.copy(), mass, (step + 1) * dt)
        if obs_every and (step + 1) % obs_every == 0:
            record(step + 1, psi)

    series = {k: np.asarray(v) for k, v in series.items()}
    return snapshots, series


# ---------------------------------------------------------------------------
# phase-space transforms


def wigner_transform_1d(psi, dx, hbar=1.0):
    """Phase-space density of a 1D pure state by FFT over the separation.

    Returns (f, p) with f shaped (n_x, n_p); p is the FFT-conjugate
    momentum grid for separation step 2*dx.
    """
    psi = np.asarray(psi, complex)
    n = len(psi)
    corr = np.zeros((n, n), complex)
    for i in range(n):
        k = np.arange(-min(i, n - 1 - i), min(i, n - 1 - i) + 1)
        corr[i, k % n] = np.conj(psi[i + k]) * psi[i - k]
    # coefficient of exp(+i p s) is ifft * n
    spec = np.fft.ifft(corr, axis=1) * n
    ds = 2.0 * dx
    f = np.fft.fftshift(spec.real, axes=1) * (ds / (2.0 * math.pi * hbar))
    p = np.fft.fftshift(np.fft.fftfreq(n, d=ds)) * (2.0 * math.pi * hbar)
    return f, p


def wigner_transform(grid, stride=4, imag_tol=1e-8):
    """Phase-space density of a 2D pure state.

    Correlations psi*(r + s/2) psi(r - s/2) are built on separation
    steps of two grid cells (so both points sit on nodes) and Fourier
    transformed per spatial point.  Output positions subsample the
    wavefunction grid by ``stride``.

    Returns (f, x, y, px, py); f has shape (nx, ny, npx, npy), is real,
    and integrates to 1 for a normalised state.
    """
    psi = grid.psi
    nx, ny = psi.shape
    xs = grid.xs[::stride]
    ys = grid.ys[::stride]
    dsx, dsy = 2.0 * grid.dx, 2.0 * grid.dy
    px = np.fft.fftshift(np.fft.fftfreq(nx, d=dsx)) * (2.0 * math.pi)
    py = np.fft.fftshift(np.fft.fftfreq(ny, d=dsy)) * (2.0 * math.pi)
    f = np.empty((len(xs), len(ys), nx, ny))
    kx = np.arange(nx)
    ky = np.arange(ny)
    peak = 0.0
    worst_imag = 0.0
    for a, i in enumerate(range(0, nx, stride)):
        mx = min(i, nx - 1 - i)
        sx = np.arange(-mx, mx + 1)
        for b, j in enumerate(range(0, ny, stride)):
            my = min(j, ny - 1 - j)
            sy = np.arange(-my, my + 1)
            corr = np.zeros((nx, ny), complex)
            block = np.conj(psi[np.ix_(i + sx, j + sy)]) * psi[np.ix_(i - sx, j - sy)]
            corr[np.ix_(sx % nx, sy % ny)] = block
            spec = np.fft.ifft2(corr) * (nx * ny)
            spec = np.fft.fftshift(spec)
            worst_imag = max(worst_imag, float(np.abs(spec.imag).max()))
            plane = spec.real * (dsx * dsy / (2.0 * math.pi) ** 2)
            f[a, b] = plane
            peak = max(peak, float(np.abs(plane).max()))
    scale = dsx * dsy / (2.0 * math.pi) ** 2
    if peak > 0 and worst_imag * scale > imag_tol * peak:
        raise SolverError(
            f"imaginary residue {worst_imag * scale:.2e} above {imag_tol:g} of peak; "
            "the state grid is inconsistent"
        )
    return f, xs, ys, px, py
