"""Derived quantities from gridded phase-space densities and time series."""

import csv
import io
import math

import numpy as np

from .grids import AXES


class ObservableError(ValueError):
    pass


def grid_integral(f, grid):
    return float(f.sum() * grid.cell_volume)


def expectation_position(f, grid, min_integral=0.5, warn_tol=0.02):
    """Mean position of a gridded density, normalised by its realised
    integral (robust to out-of-box leakage).

    Raises if the integral fell below ``min_integral`` - that state is
    corrupted, not merely noisy.
    """
    total = grid_integral(f, grid)
    if total < min_integral:
        raise ObservableError(f"grid integral {total:.3f} below {min_integral}; state corrupted")
    xm = float((f.sum(axis=(1, 2, 3)) * grid.centers("x")).sum() * grid.cell_volume / total)
    ym = float((f.sum(axis=(0, 2, 3)) * grid.centers("y")).sum() * grid.cell_volume / total)
    return xm, ym


def survival_probability(f0, ft, grid):
    """Squared state overlap as a phase-space integral:
    (2 pi)^2 * sum f0 * ft * cell_volume  (2D, hbar = 1)."""
    if f0.shape != ft.shape or f0.shape != tuple(int(c) for c in grid.counts):
        raise ObservableError("survival needs both densities on the same grid")
    return float((2.0 * math.pi) ** 2 * (f0 * ft).sum() * grid.cell_volume)


def marginal_density(f, grid, axes):
    """Integrate out the complementary axes; keeps ``axes`` order x,y,px,py.

    Returns the lower-dimensional density (units: 1/volume of the kept
    axes).
    """
    keep = tuple(AXES.index(a) for a in axes)
    if not keep:
        raise ObservableError("need at least one axis to keep")
    if len(set(keep)) != len(keep):
        raise ObservableError("duplicate axes")
    drop = tuple(d for d in range(4) if d not in keep)
    out = f.sum(axis=drop) if drop else f.copy()
    for d in drop:
        out = out * grid.widths[d]
    order = np.argsort(keep)
    if not np.array_equal(order, np.arange(len(keep))):
        out = np.transpose(out, axes=order.argsort())
    return out


def dominant_frequency(times, values, min_samples=64):
    """Location of the magnitude-spectrum peak after mean removal and a
    Hann window, refined by parabolic interpolation of log magnitude.

    Returns (frequency, bin_width, sharpness); sharpness is the peak
    magnitude over the median magnitude of the rest of the spectrum.
    """
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if len(t) < min_samples:
        raise ObservableError(f"need at least {min_samples} samples, got {len(t)}")
    dts = np.diff(t)
    if dts.min() <= 0 or (dts.max() - dts.min()) > 1e-9 * dts.mean():
        raise ObservableError("time samples must be uniform and increasing")
    w = np.hanning(len(v))
    spec = np.abs(np.fft.rfft((v - v.mean()) * w))
    freqs = np.fft.rfftfreq(len(v), d=float(dts.mean()))
    if len(spec) < 3:
        raise ObservableError("series too short for a spectrum")
    k = int(np.argmax(spec[1:]) + 1)
    if 1 <= k < len(spec) - 1 and spec[k - 1] > 0 and spec[k + 1] > 0 and spec[k] > 0:
        la, lb, lc = np.log(spec[k - 1]), np.log(spec[k]), np.log(spec[k + 1])
        denom = la - 2 * lb + lc
        delta = 0.5 * (la - lc) / denom if denom != 0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    others = np.delete(spec, k)
    sharp = float(spec[k] / max(np.median(others), 1e-300))
    binw = float(freqs[1] - freqs[0])
    return (k + delta) * binw, binw, sharp


# ---------------------------------------------------------------------------
# time-series container and CSV format


class ObservableSeries:
    """Uniform observable rows: time, mean position, survival, count."""

    FIELDS = ("t_fs", "x_mean_ang", "y_mean_ang", "survival", "n_particles")

    def __init__(self, t_fs, x_mean_ang, y_mean_ang, survival, n_particles):
        self.t_fs = np.asarray(t_fs, float)
        if len(self.t_fs) > 1 and np.any(np.diff(self.t_fs) <= 0):
            raise ObservableError("times must be strictly increasing")
        self.x_mean_ang = np.asarray(x_mean_ang, float)
        self.y_mean_ang = np.asarray(y_mean_ang, float)
        self.survival = np.asarray(survival, float)
        self.n_particles = np.asarray(n_particles, np.int64)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        for row in zip(self.t_fs, self.x_mean_ang, self.y_mean_ang, self.survival, self.n_particles):
            writer.writerow([f"{row[0]:.12g}", f"{row[1]:.12g}", f"{row[2]:.12g}", f"{row[3]:.12g}", int(row[4])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls.FIELDS:
            raise ObservableError(f"bad observables header: {rows[:1]}")
        cols = list(zip(*rows[1:])) if len(rows) > 1 else [[]] * 5
        return cls(
            [float(v) for v in cols[0]],
            [float(v) for v in cols[1]],
            [float(v) for v in cols[2]],
            [float(v) for v in cols[3]],
            [int(v) for v in cols[4]],
        )
