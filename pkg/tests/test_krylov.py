import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from qbattery.krylov import LanczosPropagator


def _hermitian(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def _state(n, seed):
    rng = np.random.default_rng(seed + 1)
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    return psi / np.linalg.norm(psi)


@pytest.mark.parametrize("krylov_dim", [5, 12, 30])
def test_evolve_matches_expm(krylov_dim):
    h = _hermitian(60, 3)
    psi = _state(60, 3)
    times = np.linspace(0.0, 4.0, 9)
    prop = LanczosPropagator(lambda x: h @ x, krylov_dim=krylov_dim, tol=1e-12)
    for t, got in zip(times, prop.evolve(psi, times)):
        np.testing.assert_allclose(got, expm(-1j * h * t) @ psi, atol=1e-9)
    assert prop.n_matvec > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10**6), st.floats(-3.0, 3.0))
def test_apply_matches_expm_and_preserves_norm(n, seed, dt):
    h = _hermitian(n, seed)
    psi = _state(n, seed)
    got = LanczosPropagator(lambda x: h @ x, krylov_dim=8, tol=1e-12).apply(psi, dt)
    np.testing.assert_allclose(got, expm(-1j * h * dt) @ psi, atol=1e-9)
    assert abs(np.linalg.norm(got) - 1.0) < 1e-10


def test_invariant_subspace_terminates_early():
    # psi lies in a 2-dimensional invariant subspace
    h = np.diag([1.0, -2.0, 5.0, 7.0]).astype(complex)
    psi = np.array([1.0, 1.0, 0.0, 0.0], dtype=complex) / np.sqrt(2)
    prop = LanczosPropagator(lambda x: h @ x, krylov_dim=4)
    out = prop.apply(psi, 10.0)
    np.testing.assert_allclose(out, np.exp(-1j * np.diag(h) * 10.0) * psi, atol=1e-12)


def test_forward_then_backward_is_identity():
    h = _hermitian(40, 11)
    psi = _state(40, 11)
    prop = LanczosPropagator(lambda x: h @ x, krylov_dim=20, tol=1e-12)
    back = prop.apply(prop.apply(psi, 2.5), -2.5)
    np.testing.assert_allclose(back, psi, atol=1e-9)


def test_rejects_bad_dimension():
    with pytest.raises(ValueError):
        LanczosPropagator(lambda x: x, krylov_dim=0)
