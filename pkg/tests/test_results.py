import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qbattery.errors import ConservationError
from qbattery.results import DynamicsResult, atomic_write, average_power, fmt, read_csv


@given(st.floats(allow_nan=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x


def test_fmt_specials():
    assert fmt(math.nan) == "nan" and fmt(-math.inf) == "-inf"


def test_average_power_zero_at_origin():
    np.testing.assert_allclose(average_power([0.0, 1.0, 2.0], [0.0, 2.0, 3.0]), [0.0, 2.0, 1.5])


def _result(**over):
    t = np.linspace(0.0, 1.0, 5)
    base = dict(
        t=t, e_b=t, p_b=average_power(t, t), eta_b=t, s_vn=0.1 * t, s_vn_norm=t, e_total=np.ones(5),
        norm=np.ones(5), n_battery=t, n_charger=2 - t, n_exc=2, s_max=math.log(3),
    )
    base.update(over)
    return DynamicsResult(**base)


def test_conservation_passes_and_fails():
    _result().check_conservation()
    for bad in (
        {"norm": np.array([1, 1, 1, 1, 1.001])},
        {"e_total": np.array([1, 1, 1, 1, 1.1])},
        {"n_charger": np.ones(5)},
        {"s_vn": np.full(5, 5.0)},
    ):
        with pytest.raises(ConservationError):
            _result(**bad).check_conservation()


def test_csv_round_trip(tmp_path):
    res = _result()
    path = tmp_path / "sub" / "d.csv"
    path.parent.mkdir()
    res.to_csv(path)
    cols = read_csv(path)
    np.testing.assert_array_equal(cols["E_B"], res.e_b)
    res.realization = 3
    assert res.csv_text().splitlines()[0].endswith(",realization")


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "x.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [f.name for f in tmp_path.iterdir()] == ["x.txt"]
