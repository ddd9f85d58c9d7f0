"""Lanczos approximation of exp(-iHt) acting on a vector.

The propagator only needs a matvec for a real symmetric H.  Each step builds
a Krylov basis of fixed dimension from the current state and picks the
largest step (by halving) whose residual estimate stays below ``tol``.  The
same basis serves every requested sample time that falls inside the step.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import KrylovError


def _residual(beta0, alpha, beta, beta_next, tau):
    """Error estimate beta0 beta_next |e_m^T tau phi_1(-i tau T) e_1| for a trial basis."""
    shift = alpha[0]
    if alpha.size > 1:
        lam, Q = eigh_tridiagonal(alpha - shift, beta)
    else:
        lam, Q = np.zeros(1), np.ones((1, 1))
    x = -1j * tau * lam
    small = np.abs(x) < 1e-8
    phi = np.where(small, tau * (1 + x / 2), 0j)
    phi[~small] = tau * np.expm1(x[~small]) / x[~small]
    return beta0 * beta_next * abs(Q[-1] @ (phi * Q[0]))


class LanczosPropagator:
    def __init__(
        self,
        matvec: Callable[[np.ndarray], np.ndarray],
        krylov_dim: int = 30,
        tol: float = 1e-10,
        max_halvings: int = 80,
    ):
        if krylov_dim < 1:
            raise ValueError("krylov_dim must be >= 1")
        self.matvec = matvec
        self.krylov_dim = int(krylov_dim)
        self.tol = float(tol)
        self.max_halvings = int(max_halvings)
        self.n_matvec = 0
        self.n_steps = 0
        self._tau = None

    def _lanczos(self, psi: np.ndarray, horizon: float | None = None):
        """Krylov basis of ``psi``; stops early once it already covers ``horizon``."""
        beta0 = np.linalg.norm(psi)
        m = min(self.krylov_dim, psi.size)
        V = np.empty((m, psi.size), dtype=complex)
        V[0] = psi / beta0
        alpha = np.empty(m)
        beta = np.empty(m)
        k = m
        happy = False
        for j in range(m):
            w = np.asarray(self.matvec(V[j]), dtype=complex)
            self.n_matvec += 1
            a = np.vdot(V[j], w).real
            alpha[j] = a
            w -= a * V[j]
            if j:
                w -= beta[j - 1] * V[j - 1]
            # one full reorthogonalisation pass keeps V unitary to ~1e-15
            # conj(V conj(w)) == V^H w without copying V
            w -= np.conj(V[: j + 1] @ np.conj(w)) @ V[: j + 1]
            b = np.linalg.norm(w)
            beta[j] = b
            scale = abs(a) + (beta[j - 1] if j else 0.0) + 1e-300
            if b <= 1e-13 * scale or j + 1 == psi.size:
                k = j + 1
                happy = True
                break
            if j + 1 < m:
                V[j + 1] = w / b
            if horizon is not None and j >= 3 and j + 1 < m and (j + 1) % 4 == 0:
                if _residual(beta0, alpha[: j + 1], beta[:j], b, horizon) <= self.tol:
                    k = j + 1
                    break
        return beta0, V[:k], alpha[:k], beta[: k - 1], beta[k - 1], happy

    def evolve(self, psi0: np.ndarray, times, t0: float = 0.0) -> Iterator[np.ndarray]:
        """Yield exp(-iH(t - t0)) psi0 for each t in ``times`` (non-decreasing, >= t0)."""
        times = np.asarray(times, dtype=float)
        if times.size and (np.any(np.diff(times) < 0) or times[0] < t0):
            raise ValueError("times must be non-decreasing and not before t0")
        psi = np.array(psi0, dtype=complex)
        t = float(t0)
        i = 0
        while i < times.size:
            if times[i] <= t:
                yield psi.copy()
                i += 1
                continue
            psi, t, outputs = self._step(psi, t, times[i:], sign=1.0)
            for out in outputs:
                yield out
            i += len(outputs)

    def apply(self, psi: np.ndarray, dt: float) -> np.ndarray:
        """exp(-iH dt) psi for either sign of ``dt``."""
        psi = np.array(psi, dtype=complex)
        sign = 1.0 if dt >= 0 else -1.0
        target = np.array([abs(dt)])
        t = 0.0
        while t < target[0]:
            psi, t, outputs = self._step(psi, t, target, sign=sign)
            if outputs:
                return outputs[0]
        return psi

    def _step(self, psi, t, pending, sign):
        beta0, V, alpha, beta, beta_next, happy = self._lanczos(psi, horizon=pending[-1] - t)
        shift = alpha[0]
        lam, Q = eigh_tridiagonal(alpha - shift, beta) if alpha.size > 1 else (
            np.zeros(1),
            np.ones((1, 1)),
        )
        q0 = Q[0]
        q_last = Q[-1]

        def coeffs(tau):
            phase = np.exp(-1j * sign * tau * lam)
            return np.exp(-1j * sign * tau * shift) * (Q @ (phase * q0))

        def residual(tau):
            if happy:
                return 0.0
            x = -1j * sign * tau * lam
            small = np.abs(x) < 1e-8
            phi = np.where(small, tau * (1 + x / 2), 0j)
            big = ~small
            phi[big] = tau * np.expm1(x[big]) / x[big]
            return beta0 * beta_next * abs(q_last @ (phi * q0))

        horizon = pending[-1] - t
        tau = horizon if self._tau is None else min(horizon, 2.0 * self._tau)
        halvings = 0
        while residual(tau) > self.tol:
            tau *= 0.5
            halvings += 1
            if halvings > self.max_halvings:
                raise KrylovError(
                    f"residual tolerance {self.tol:g} not reached with a "
                    f"{V.shape[0]}-dimensional Krylov space at t={t:g}"
                )
        if not happy:
            self._tau = tau
        self.n_steps += 1

        end = pending[-1] if tau == horizon else t + tau
        outputs = []
        for tp in pending:
            if tp > end:
                break
            outputs.append(beta0 * (coeffs(tp - t) @ V))
        if outputs and pending[len(outputs) - 1] == end:
            psi_new = outputs[-1].copy()
        else:
            psi_new = beta0 * (coeffs(tau) @ V)
        return psi_new, end, outputs
