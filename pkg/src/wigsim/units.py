"""Unit conversions between lab units and Hartree atomic units.

Everything downstream of the configuration layer works in atomic units
(hbar = 1, electron mass = 1, hartree = 1, bohr = 1).  Only the
conversions listed in ``CONVERSION_FACTORS`` are supported; this is not
a general unit-algebra layer.
"""

import math

# CODATA 2018
BOHR_IN_ANGSTROM = 0.529177210903
HARTREE_IN_EV = 27.211386245988
ATOMIC_TIME_IN_FS = 2.4188843265857e-2
DALTON_IN_ME = 1822.888486209
HARTREE_IN_WAVENUMBER = 219474.6313632

# multiply a value in the named unit by the factor to get atomic units
CONVERSION_FACTORS = {
    "angstrom": 1.0 / BOHR_IN_ANGSTROM,
    "eV": 1.0 / HARTREE_IN_EV,
    "fs": 1.0 / ATOMIC_TIME_IN_FS,
    "dalton": DALTON_IN_ME,
    "wavenumber": 1.0 / HARTREE_IN_WAVENUMBER,
    "eV_per_ang2": (1.0 / HARTREE_IN_EV) * BOHR_IN_ANGSTROM**2,
    "eV_per_ang4": (1.0 / HARTREE_IN_EV) * BOHR_IN_ANGSTROM**4,
}


class UnitError(ValueError):
    """Unknown unit tag or non-finite value."""


def to_internal(value, unit):
    """Convert ``value`` expressed in ``unit`` to atomic units.

    Parameters
    ----------
    value : float
    unit : str
        One of ``angstrom, eV, fs, dalton, wavenumber, eV_per_ang2,
        eV_per_ang4``.
    """
    if not math.isfinite(value):
        raise UnitError(f"non-finite value {value!r}")
    try:
        return value * CONVERSION_FACTORS[unit]
    except KeyError:
        raise UnitError(f"unknown unit {unit!r}; supported: {sorted(CONVERSION_FACTORS)}") from None


def from_internal(value, unit):
    """Convert ``value`` in atomic units back to ``unit``."""
    if not math.isfinite(value):
        raise UnitError(f"non-finite value {value!r}")
    try:
        return value / CONVERSION_FACTORS[unit]
    except KeyError:
        raise UnitError(f"unknown unit {unit!r}; supported: {sorted(CONVERSION_FACTORS)}") from None
