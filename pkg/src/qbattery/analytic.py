"""Closed-form references: the parallel battery and the low-energy
(antiferromagnetic Holstein-Primakoff) description of the collective model.

The low-energy model is H = omega a^dag a + g (a^dag b^dag + a b) + v_c n_c,
so everything below depends on the system only through omega and g.  The
average power (1 - cos x)/x peaks where tan(x/2) = x; that root and the
matching power coefficient are computed once at import.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .model import PairSpec, SystemSpec

CRITICAL_RTOL = 1e-12


def _power_root() -> float:
    # nontrivial root of tan(x/2) = x, written without the tan pole
    return brentq(lambda x: math.sin(x / 2) - x * math.cos(x / 2), 2.0, 3.0, xtol=1e-15, rtol=1e-15)


POWER_ROOT = _power_root()
POWER_COEFF = 2.0 * (1.0 - math.cos(POWER_ROOT)) / POWER_ROOT


@dataclass(frozen=True)
class MaxRecord:
    value: float
    time: float
    kind: Literal["energy", "power"]
    window_limited: bool = False


Regime = Literal["oscillatory", "critical", "hyperbolic"]


@dataclass(frozen=True)
class HpParams:
    omega: float
    g: float
    v_b: float
    v_c_times_nc: float = 0.0

    @classmethod
    def from_spec(cls, spec: SystemSpec) -> "HpParams":
        return cls(omega=spec.omega, g=spec.g, v_b=spec.v_b, v_c_times_nc=spec.v_c * spec.n_c)

    @property
    def gap_squared(self) -> float:
        """omega^2 - 4 g^2."""
        return self.omega**2 - 4.0 * self.g**2

    @property
    def regime(self) -> Regime:
        scale = max(self.omega**2, 4.0 * self.g**2)
        if scale == 0 or abs(self.gap_squared) <= CRITICAL_RTOL * scale:
            return "critical"
        return "oscillatory" if self.gap_squared > 0 else "hyperbolic"

    @property
    def frequency(self) -> float:
        """sqrt(|omega^2 - 4 g^2|), zero in the critical regime."""
        if self.regime == "critical":
            return 0.0
        return math.sqrt(abs(self.gap_squared))


def _power(t, e):
    t = np.asarray(t, dtype=float)
    p = np.zeros(np.broadcast(t, e).shape)
    nz = np.broadcast_to(t != 0, p.shape)
    p[nz] = np.broadcast_to(e, p.shape)[nz] / np.broadcast_to(t, p.shape)[nz]
    return p


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def parallel_dynamics(pair: PairSpec, t):
    """Energy, average power and entanglement entropy of the parallel battery."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    om = pair.omega
    if om == 0:
        zero = np.zeros_like(t)
        return zero, zero.copy(), zero.copy()
    j2 = pair.j_pair**2
    e = 2.0 * pair.n_pairs * pair.v_b * j2 / om**2 * (1.0 - np.cos(om * t))
    s2 = np.sin(om * t / 2) ** 2
    b = 4.0 * j2 / om**2 * s2
    a = np.cos(om * t / 2) ** 2 + pair.delta_v**2 / om**2 * s2
    s = -pair.n_pairs * (_xlogx(a) + _xlogx(b))
    return e, _power(t, e), np.maximum(s, 0.0)


def parallel_occupation(pair: PairSpec, t):
    """Probability that a pair's excitation sits on the battery qubit."""
    t = np.asarray(t, dtype=float)
    om = pair.omega
    if om == 0:
        return np.zeros_like(t)
    return 4.0 * pair.j_pair**2 / om**2 * np.sin(om * t / 2) ** 2


def parallel_maxima(pair: PairSpec) -> tuple[MaxRecord, MaxRecord]:
    om = pair.omega
    if om == 0:
        raise ValueError("degenerate pair: j_pair = 0 and delta_v = 0")
    if pair.v_b <= 0:
        raise ValueError("parallel maxima need v_b > 0")
    scale = pair.n_pairs * pair.v_b * pair.j_pair**2
    energy = MaxRecord(4.0 * scale / om**2, math.pi / om, "energy")
    power = MaxRecord(POWER_COEFF * scale / om, POWER_ROOT / om, "power")
    return energy, power


def hp_dynamics(p: HpParams, t):
    """Low-energy battery energy and average power; the v_c n_c offset is excluded."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    g2 = p.g**2
    regime = p.regime
    if regime == "critical":
        e = p.v_b * g2 * t**2
    else:
        f = p.frequency
        if regime == "oscillatory":
            e = 2.0 * g2 * p.v_b / f**2 * (1.0 - np.cos(f * t))
        else:
            e = 2.0 * g2 * p.v_b / f**2 * (np.cosh(f * t) - 1.0)
    return e, _power(t, e)


def hp_occupation(p: HpParams, t):
    """Mean number of bosons moved into the battery, <a^dag a>."""
    e, _ = hp_dynamics(HpParams(p.omega, p.g, 1.0, p.v_c_times_nc), t)
    return e


def hp_entanglement(p: HpParams, t):
    """Battery/charger entropy of the two-mode squeezed state.

    The evolved vacuum is sum_n c_n |n, n> with geometric weights, so with
    n = <a^dag a> the entropy is (n + 1) ln(n + 1) - n ln n.
    """
    n = hp_occupation(p, t)
    return _xlogx(n + 1.0) - _xlogx(n)


def hp_maxima(p: HpParams) -> tuple[MaxRecord, MaxRecord]:
    if p.regime != "oscillatory":
        raise ValueError(
            f"maxima exist only for omega^2 > 4 g^2 (regime is {p.regime}); "
            "the low-energy energy grows without bound otherwise"
        )
    f = p.frequency
    g2v = p.g**2 * p.v_b
    energy = MaxRecord(4.0 * g2v / f**2, math.pi / f, "energy")
    power = MaxRecord(POWER_COEFF * g2v / f, POWER_ROOT / f, "power")
    return energy, power


@dataclass(frozen=True)
class ScalingPrediction:
    """Asymptotic size exponents for n_b = n_c with all couplings equal.

    ``branch`` is None when the system is not deep in either regime; then all
    other fields are None too.
    """

    branch: Literal["positive_offset", "negative_offset"] | None
    e_exp: float | None = None
    p_exp: float | None = None
    t_exp: float | None = None
    e_max: float | None = None
    p_max: float | None = None
    t_e: float | None = None
    t_p: float | None = None
    reason: str = ""


def hp_scaling(spec: SystemSpec, dominance: float = 100.0) -> ScalingPrediction:
    """Which asymptotic law applies, with its leading-order prefactors.

    "Deep in the regime" means the dominant term exceeds the other by at
    least ``dominance``.
    """
    j = spec.j_b
    if spec.n_b != spec.n_c or not (spec.j_b == spec.j_c == spec.j_bc):
        return ScalingPrediction(None, reason="needs n_b == n_c and j_b == j_c == j_bc")
    n, dv, vb = spec.n_b, spec.delta_v, spec.v_b
    four_jn = 4.0 * j * n
    if j > 0 and dv > 0 and four_jn >= dominance * dv:
        root = math.sqrt(four_jn * dv)
        return ScalingPrediction(
            "positive_offset",
            e_exp=1.0,
            p_exp=1.5,
            t_exp=-0.5,
            e_max=j * n * vb / dv,
            p_max=POWER_COEFF / 2.0 * (j * n) ** 1.5 * vb / math.sqrt(dv),
            t_e=math.pi / root,
            t_p=POWER_ROOT / root,
        )
    if dv < 0 and -dv >= dominance * abs(four_jn):
        return ScalingPrediction(
            "negative_offset",
            e_exp=2.0,
            p_exp=2.0,
            t_exp=0.0,
            e_max=4.0 * j**2 * n**2 * vb / dv**2,
            p_max=POWER_COEFF * j**2 * n**2 * vb / abs(dv),
            t_e=math.pi / abs(dv),
            t_p=POWER_ROOT / abs(dv),
        )
    return ScalingPrediction(None, reason="not deep in either asymptotic regime")
