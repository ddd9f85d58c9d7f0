import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbattery.analysis import (
    EnsembleStat,
    SweepPlan,
    draw_pair_noise,
    find_maxima,
    first_peak_window,
    fit_power_law,
    fit_two_segments,
    log_sizes,
    make_engine,
    maximize,
    mix_seed,
    noise_ensemble,
    noisy_table,
    run_sweep,
    splitmix64,
)
from qbattery.analytic import PairSpec, parallel_maxima
from qbattery.collective import CollectiveEngine
from qbattery.errors import ConfigError, WindowLimitedError
from qbattery.model import CouplingTable, SystemSpec
from qbattery.results import DynamicsResult, average_power
from qbattery.sector import SectorEngine


def _result(t, e):
    t = np.asarray(t, dtype=float)
    e = np.asarray(e, dtype=float)
    z = np.zeros_like(t)
    return DynamicsResult(t=t, e_b=e, p_b=average_power(t, e), eta_b=z, s_vn=z, s_vn_norm=z, e_total=z)


def test_find_maxima_earliest_of_ties():
    t = np.linspace(0.0, 4 * math.pi, 401)
    e_rec, p_rec = find_maxima(_result(t, 1 - np.cos(t)))
    assert e_rec.time == pytest.approx(math.pi, abs=1e-3)
    assert e_rec.value == pytest.approx(2.0, abs=1e-6)
    assert not e_rec.window_limited
    # (1 - cos t)/t peaks at the transcendental root
    assert p_rec.time == pytest.approx(2.3311223704144224, abs=1e-3)


def test_find_maxima_flags_window_edge():
    t = np.linspace(0.0, 1.0, 11)
    e_rec, _ = find_maxima(_result(t, t**2))
    assert e_rec.window_limited and e_rec.time == 1.0


def test_find_maxima_rejects_bad_grids():
    with pytest.raises(ValueError):
        find_maxima(_result([0.0, 1.0], [0.0, 1.0]))
    with pytest.raises(ValueError):
        find_maxima(_result([0.0, 2.0, 1.0], [0.0, 1.0, 0.5]))


def test_refinement_reaches_exact_maxima():
    pair = PairSpec(j_pair=0.7, v_b=1.0, v_c=0.2)
    spec = SystemSpec(n_b=1, n_c=1, v_c=0.2, j_b=0.0, j_c=0.0, j_bc=0.7)
    e_want, p_want = parallel_maxima(pair)
    m = maximize(SectorEngine(CouplingTable.from_spec(spec)), 10.0, n_samples=41)
    assert m.energy.value == pytest.approx(e_want.value, rel=1e-8)
    assert m.energy.time == pytest.approx(e_want.time, rel=1e-5)
    assert m.power.value == pytest.approx(p_want.value, rel=1e-8)
    assert m.power.time == pytest.approx(p_want.time, rel=1e-5)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_maxima_scale_equivariance(a, b):
    # E(t) -> a E(t / b) scales the energy maximum by a and its time by b
    t = np.linspace(0.0, 10.0, 501)
    e1, p1 = find_maxima(_result(t, 1 - np.cos(t)))
    e2, p2 = find_maxima(_result(b * t, a * (1 - np.cos(t))))
    assert e2.value == pytest.approx(a * e1.value, rel=1e-9)
    assert e2.time == pytest.approx(b * e1.time, rel=1e-9)
    assert p2.value == pytest.approx(a / b * p1.value, rel=1e-9)


def test_maximize_extends_window_then_gives_up():
    spec = SystemSpec(n_b=3, n_c=3)
    m = maximize(CollectiveEngine(spec), 0.05, n_samples=11, max_extend=32)
    assert m.window > 0.05 and not m.energy.window_limited
    with pytest.raises(WindowLimitedError):
        maximize(CollectiveEngine(spec), 0.001, n_samples=11, max_extend=2)


def test_make_engine_dispatch():
    spec = SystemSpec(n_b=2, n_c=3)
    assert make_engine(spec).name == "collective"
    assert make_engine(spec, "full").name == "full"
    assert make_engine(CouplingTable.from_spec(spec)).name == "collective"
    noisy = noisy_table(spec, 0.1, 1)
    assert make_engine(noisy, krylov_dim=12, method="spectral").name == "full"
    with pytest.raises(ConfigError):
        make_engine(noisy, "collective")
    with pytest.raises(ConfigError):
        make_engine(spec, "bogus")


def test_power_law_fit_recovers_exponent():
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    fit = fit_power_law(x, 3.0 * x**1.5)
    assert fit.alpha == pytest.approx(1.5)
    assert math.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.r_squared == pytest.approx(1.0) and fit.alpha_stderr < 1e-12
    ranged = fit_power_law(x, np.where(x > 4, x**2, x), range=(1, 4))
    assert ranged.alpha == pytest.approx(1.0) and ranged.n_points == 3


def test_power_law_fit_matches_polyfit_on_noisy_data():
    rng = np.random.default_rng(4)
    x = np.geomspace(10, 1000, 12)
    y = x**0.7 * np.exp(rng.normal(0, 0.1, x.size))
    slope, icept = np.polyfit(np.log(x), np.log(y), 1)
    fit = fit_power_law(x, y)
    assert fit.alpha == pytest.approx(slope) and fit.intercept == pytest.approx(icept)


@pytest.mark.parametrize(
    "x,y", [([1, 2], [1, 2]), ([1, 2, 3], [1, -2, 3]), ([2, 2, 2], [1, 2, 3]), ([1, 2, 3], [1, 2])]
)
def test_power_law_fit_rejects_bad_input(x, y):
    with pytest.raises(ValueError):
        fit_power_law(x, y)


def test_two_segment_fit():
    n_c = np.arange(1, 101, dtype=float)
    y = np.where(n_c <= 20, n_c**2, 400 * (n_c / 20) ** 0.5)
    first, second = fit_two_segments(n_c, y, n_b=100)
    assert first.alpha == pytest.approx(2.0)
    assert second.alpha == pytest.approx(0.5)


def test_splitmix_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_seed_streams_are_order_independent():
    seeds = {mix_seed(7, r, d) for r in range(20) for d in range(3)}
    assert len(seeds) == 60
    assert mix_seed(7, 3, 1) == mix_seed(7, 3, 1) != mix_seed(8, 3, 1)
    a = draw_pair_noise(10, 0.5, mix_seed(1, 2, 0))
    assert np.array_equal(a, draw_pair_noise(10, 0.5, mix_seed(1, 2, 0)))
    assert np.all(np.abs(a) <= 0.5)
    assert not np.any(draw_pair_noise(10, 0.0, 3))
    with pytest.raises(ValueError):
        draw_pair_noise(3, -0.1, 0)


def test_zero_noise_table_is_uniform():
    spec = SystemSpec(n_b=3, n_c=4)
    assert np.array_equal(noisy_table(spec, 0.0, 5).j, CouplingTable.from_spec(spec).j)
    assert not noisy_table(spec, 0.2, 5).is_uniform()


def test_ensemble_stat():
    s = EnsembleStat.from_values([1.0, 2.0, 3.0, math.nan])
    assert s.mean == 2.0 and s.n_realizations == 3
    assert s.sem == pytest.approx(1.0 / math.sqrt(3))
    assert EnsembleStat.from_values([math.nan]).n_realizations == 0


def test_sweep_plan_validation():
    base = SystemSpec(n_b=4, n_c=4)
    with pytest.raises(ConfigError):
        SweepPlan(base, "nonsense", (1, 2))
    with pytest.raises(ConfigError):
        SweepPlan(base, "charger_size", (3, 2))
    with pytest.raises(ConfigError):
        SweepPlan(base, "charger_size", (1.5,))
    with pytest.raises(ConfigError):
        SweepPlan(base, "noise_amplitude", (-0.1,))
    with pytest.raises(ConfigError):
        SweepPlan(base, "jc_dv_grid", (1.0,))
    plan = SweepPlan(base, "jc_dv_grid", [(0, -8), (1, 8)])
    assert plan.spec_at(0).j_c == 0.0 and plan.spec_at(0).delta_v == -8.0
    assert plan.label(1) == "1.0:8.0"
    assert SweepPlan(base, "total_size", (5,)).spec_at(0).n_c == 5


def test_sweep_is_deterministic_and_reports_errors():
    plan = SweepPlan(SystemSpec(n_b=3, n_c=3), "charger_size", (1, 2, 3), n_samples=51)
    a, b = run_sweep(plan), run_sweep(plan, jobs=2)
    assert a.csv_text() == b.csv_text()
    assert a.csv_text().splitlines()[0].startswith("point,E_max")
    bad = SweepPlan(SystemSpec(n_b=3, n_c=3), "charger_size", (2, 3), n_samples=5, t_max=1e-4, max_extend=1)
    table = run_sweep(bad)
    assert set(table.errors) == {"2", "3"}
    assert all(np.isnan(table.column("e_max")))


def test_noise_amplitude_sweep_uses_sector_engine():
    plan = SweepPlan(SystemSpec(n_b=2, n_c=2), "noise_amplitude", (0.0, 0.3), n_samples=41, seed=3)
    table = run_sweep(plan)
    assert not table.errors
    assert table.rows[0].e_max != table.rows[1].e_max


def test_log_sizes():
    assert log_sizes(500, 10000, 8)[0] == 500 and log_sizes(500, 10000, 8)[-1] == 10000
    assert len(log_sizes(500, 10000, 8)) == 8
    assert log_sizes(1, 3, 10) == (1, 2, 3)


def test_small_noise_ensemble():
    ens = noise_ensemble(SystemSpec(n_b=1, n_c=1), (2, 3, 4), (0.0, 0.3), n_real=3, seed=5)
    assert not ens.failures and len(ens.records) == 18
    zero = [r for r in ens.records if r.delta_j == 0.0]
    assert len({r.p_max for r in zero if r.size == 4}) == 1
    assert ens.stats[(0.0, 4)]["power"].sem == 0.0
    assert ens.exponents[0.3]["power"].values.size == 3
    again = noise_ensemble(SystemSpec(n_b=1, n_c=1), (2, 3, 4), (0.0, 0.3), n_real=3, seed=5, jobs=2)
    assert again.csv_text() == ens.csv_text()
    summary = ens.summary()
    assert summary["delta_j"]["0.3"]["exponents"]["power"]["sem"] >= 0
    with pytest.raises(ConfigError):
        noise_ensemble(SystemSpec(n_b=1, n_c=1), (2, 3), (0.1,), n_real=1)


def test_first_peak_window_brackets_first_maximum():
    spec = SystemSpec(n_b=4, n_c=4)
    w = first_peak_window(spec)
    m = maximize(CollectiveEngine(spec), w, n_samples=101)
    assert m.energy.time < w
    assert m.energy.time == pytest.approx(w / 1.5, rel=0.01)
