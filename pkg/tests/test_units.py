import math

import pytest
from hypothesis import given, strategies as st

from wigsim import units


def test_zero_maps_to_zero():
    assert units.to_internal(0.0, "eV") == 0.0


def test_angstrom_is_inverse_bohr():
    # frozen from the oracle 1 / 0.529177210903
    assert units.to_internal(1.0, "angstrom") == pytest.approx(1.8897261246257702, rel=1e-12)


def test_barrier_energy_in_hartree():
    # 0.27 eV with 1 Ha = 27.211386245988 eV
    assert units.to_internal(0.27, "eV") == pytest.approx(0.27 / 27.211386245988, rel=1e-14)


def test_mass_and_frequency_scales():
    assert units.to_internal(1.0, "dalton") == pytest.approx(1822.888486209)
    assert units.to_internal(2980.0, "wavenumber") == pytest.approx(2980.0 / 219474.6313632)
    assert units.to_internal(1.0, "fs") == pytest.approx(1.0 / 2.4188843265857e-2)


def test_compound_units_compose():
    ev = units.to_internal(1.0, "eV")
    ang = units.to_internal(1.0, "angstrom")
    assert units.to_internal(1.0, "eV_per_ang2") == pytest.approx(ev / ang**2, rel=1e-14)
    assert units.to_internal(1.0, "eV_per_ang4") == pytest.approx(ev / ang**4, rel=1e-14)


@given(
    st.sampled_from(sorted(units.CONVERSION_FACTORS)),
    st.floats(min_value=1e-6, max_value=1e6, allow_nan=False),
)
def test_round_trip(unit, value):
    back = units.from_internal(units.to_internal(value, unit), unit)
    assert math.isclose(back, value, rel_tol=1e-12)


def test_unknown_unit_rejected():
    with pytest.raises(units.UnitError, match="unknown unit"):
        units.to_internal(1.0, "parsec")


def test_non_finite_rejected():
    with pytest.raises(units.UnitError):
        units.to_internal(float("nan"), "eV")
