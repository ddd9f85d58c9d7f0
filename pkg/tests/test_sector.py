import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbattery.analysis import noisy_table
from qbattery.errors import SectorTooLargeError
from qbattery.model import CouplingTable, SystemSpec, make_initial_sector
from qbattery.oracle import brute_force_dynamics, pauli_hamiltonian
from qbattery.sector import (
    SectorBasis,
    SectorEngine,
    build_sector,
    entanglement_entropy,
    lanczos_propagate,
    popcount,
    rank_configs,
    unrank_configs,
)


def _itertools_configs(n, k):
    return sorted(sum(1 << b for b in bits) for bits in itertools.combinations(range(n), k))


@pytest.mark.parametrize("n,k", [(1, 0), (1, 1), (4, 2), (7, 3), (10, 5), (12, 1)])
def test_unrank_matches_itertools(n, k):
    want = np.array(_itertools_configs(n, k))
    got = unrank_configs(np.arange(math.comb(n, k)), n, k)
    np.testing.assert_array_equal(got, want)
    np.testing.assert_array_equal(rank_configs(want, n), np.arange(want.size))


@settings(max_examples=50)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))), st.data())
def test_rank_unrank_round_trip(nk, data):
    n, k = nk
    dim = math.comb(n, k)
    r = data.draw(st.integers(0, dim - 1))
    cfg = unrank_configs(np.array([r]), n, k)
    assert popcount(cfg)[0] == k
    assert rank_configs(cfg, n)[0] == r


def test_basis_index_rejects_foreign_config():
    b = SectorBasis(4, 2)
    assert b.index(0b1100) == b.dim - 1
    with pytest.raises(KeyError):
        b.index(0b111)
    with pytest.raises(ValueError):
        SectorBasis(3, 4)


def test_two_site_matrix():
    table = CouplingTable(v=[1.5, 0.25], j=[[0.0, 0.7], [0.7, 0.0]], n_b=1)
    basis, h = build_sector(table, 1)
    # configs 01 (site 0 excited) then 10 (site 1 excited)
    np.testing.assert_allclose(h.to_dense(), [[1.5, 0.7], [0.7, 0.25]])


def test_initial_config_two_by_two():
    st0 = make_initial_sector(CouplingTable.from_spec(SystemSpec(n_b=2, n_c=2)))
    assert st0.basis.configs[np.flatnonzero(st0.amps)[0]] == 0b1100


def _oracle_sector(table, n_exc):
    """Brute-force matrix restricted to n_exc excitations, ordered like the sector basis."""
    h = pauli_hamiltonian(table).toarray()
    n = table.n
    configs = _itertools_configs(n, n_exc)
    # the oracle puts site 0 in the leftmost (most significant) tensor factor
    idx = [int(format(c, f"0{n}b")[::-1], 2) for c in configs]
    return h[np.ix_(idx, idx)]


@pytest.mark.parametrize("mode", ["csr", "free", "block"])
def test_matrix_matches_oracle(mode):
    table = noisy_table(SystemSpec(n_b=3, n_c=4, v_c=0.3, j_c=0.5), 0.4, 17)
    _, h = build_sector(table, 4, mode=mode)
    want = _oracle_sector(table, 4)
    x = np.random.default_rng(1).normal(size=h.dim) + 0j
    np.testing.assert_allclose(h.matvec(x), want @ x, atol=1e-12)


@pytest.mark.parametrize("n_b,n_c", [(3, 4), (5, 3), (1, 4), (6, 6)])
def test_matvec_modes_agree(n_b, n_c):
    table = noisy_table(SystemSpec(n_b=n_b, n_c=n_c, j_b=0.6), 0.3, n_b * 10 + n_c)
    rng = np.random.default_rng(n_b)
    ref = None
    for mode in ("csr", "free", "block"):
        _, h = build_sector(table, n_c, mode=mode)
        if ref is None:
            x = rng.normal(size=h.dim) + 1j * rng.normal(size=h.dim)
            ref = h.matvec(x)
        else:
            np.testing.assert_allclose(h.matvec(x), ref, atol=1e-12)


def test_non_uniform_dynamics_match_brute_force():
    table = noisy_table(SystemSpec(n_b=3, n_c=4, v_c=0.6, j_c=0.2), 0.5, 3)
    t = np.linspace(0.0, 6.0, 31)
    got = SectorEngine(table, tol=1e-12).run(t).result
    ref = brute_force_dynamics(table, t)
    for f in ("e_b", "eta_b", "s_vn", "e_total"):
        np.testing.assert_allclose(getattr(got, f), getattr(ref, f), atol=1e-8)
    got.check_conservation()


def test_entropy_of_product_and_bell_like_states():
    basis = SectorBasis(2, 1)
    from qbattery.sector import SectorState

    prod = SectorState(basis, np.array([1.0, 0.0], dtype=complex))
    assert entanglement_entropy(prod, 1) == 0.0
    bell = SectorState(basis, np.array([1.0, 1.0], dtype=complex) / np.sqrt(2))
    assert entanglement_entropy(bell, 1) == pytest.approx(math.log(2))


def test_lanczos_propagate_checks_shapes():
    table = CouplingTable.from_spec(SystemSpec(n_b=2, n_c=2))
    _, h = build_sector(table, 2)
    st0 = make_initial_sector(table)
    states = lanczos_propagate(st0, h, [0.0, 1.0])
    assert len(states) == 2 and abs(states[1].norm_squared() - 1) < 1e-12
    _, h3 = build_sector(table, 1)
    with pytest.raises(ValueError):
        lanczos_propagate(st0, h3, [0.0, 1.0])


def test_too_large_sector_raises():
    table = CouplingTable.from_spec(SystemSpec(n_b=6, n_c=6))
    with pytest.raises(SectorTooLargeError):
        build_sector(table, 6, max_dim=100)


def test_light_observation_skips_energy_and_entropy():
    eng = SectorEngine(CouplingTable.from_spec(SystemSpec(n_b=3, n_c=3)))
    traj = eng.run(np.linspace(0.0, 1.0, 5))
    light = traj.evaluate(np.array([0.3]), light=True)
    full = traj.evaluate(np.array([0.3]))
    assert np.isnan(light.e_total[0]) and np.isnan(light.s_vn[0])
    assert light.e_b[0] == pytest.approx(full.e_b[0], abs=1e-12)
