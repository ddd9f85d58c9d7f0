"""Parameter records and initial states shared by every engine.

Battery sites occupy indices ``0 .. n_b-1`` of a coupling table and the
charger sites ``n_b .. n-1``.  Energies are in units of whatever ``v_b`` is
expressed in; nothing here assumes ``v_b == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ConfigError


def _check_count(name: str, value) -> int:
    if isinstance(value, (bool, np.bool_)) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value


def _check_real(name: str, value) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SystemSpec:
    """Uniform-coupling battery/charger model.

    ``n_b`` battery qubits with onsite potential ``v_b`` and mutual coupling
    ``j_b``; ``n_c`` charger qubits with ``v_c`` and ``j_c``; every
    battery-charger pair is coupled by ``j_bc``.
    """

    n_b: int
    n_c: int
    v_b: float = 1.0
    v_c: float = 1.0
    j_b: float = 1.0
    j_c: float = 1.0
    j_bc: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "n_b", _check_count("n_b", self.n_b))
        object.__setattr__(self, "n_c", _check_count("n_c", self.n_c))
        for name in ("v_b", "v_c", "j_b", "j_c", "j_bc"):
            object.__setattr__(self, name, _check_real(name, getattr(self, name)))

    @property
    def delta_v(self) -> float:
        return self.v_b - self.v_c

    @property
    def k_max(self) -> int:
        """Number of transferable excitations, min(n_b, n_c)."""
        return min(self.n_b, self.n_c)

    @property
    def n(self) -> int:
        return self.n_b + self.n_c

    @property
    def omega(self) -> float:
        return self.j_b * self.n_b + self.j_c * self.n_c + self.delta_v

    @property
    def g(self) -> float:
        return self.j_bc * math.sqrt(self.n_b * self.n_c)

    def with_delta_v(self, delta_v: float) -> "SystemSpec":
        """Copy with ``v_c`` shifted so that ``v_b - v_c == delta_v``."""
        return replace(self, v_c=self.v_b - delta_v)

    def replace(self, **changes) -> "SystemSpec":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "n_b": self.n_b,
            "n_c": self.n_c,
            "v_b": self.v_b,
            "v_c": self.v_c,
            "j_b": self.j_b,
            "j_c": self.j_c,
            "j_bc": self.j_bc,
        }


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CouplingTable:
    """Per-site potentials and symmetric per-pair couplings.

    ``j[m, n]`` couples qubits ``m`` and ``n``; the diagonal is zero.  The
    first ``n_b`` sites form the battery.
    """

    v: np.ndarray
    j: np.ndarray
    n_b: int

    def __post_init__(self):
        v = _frozen(self.v)
        j = _frozen(self.j)
        n = v.shape[0]
        if v.ndim != 1 or n < 2:
            raise ValueError("v must be a 1-d sequence of at least two potentials")
        if j.shape != (n, n):
            raise ValueError(f"j must have shape {(n, n)}, got {j.shape}")
        if not np.array_equal(j, j.T):
            raise ValueError("coupling matrix must be symmetric")
        if np.any(np.diag(j) != 0.0):
            raise ValueError("coupling matrix must have a zero diagonal")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(j))):
            raise ValueError("couplings and potentials must be finite")
        n_b = _check_count("n_b", self.n_b)
        if n_b >= n:
            raise ValueError("the charger needs at least one site")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "n_b", n_b)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def n_c(self) -> int:
        return self.n - self.n_b

    @property
    def battery_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[: self.n_b] = True
        return mask

    @classmethod
    def from_spec(cls, spec: SystemSpec) -> "CouplingTable":
        n, nb = spec.n, spec.n_b
        v = np.empty(n)
        v[:nb] = spec.v_b
        v[nb:] = spec.v_c
        j = np.full((n, n), spec.j_bc)
        j[:nb, :nb] = spec.j_b
        j[nb:, nb:] = spec.j_c
        np.fill_diagonal(j, 0.0)
        return cls(v=v, j=j, n_b=nb)

    def uniform_spec(self) -> SystemSpec | None:
        """The SystemSpec this table was built from, or None if it is not uniform."""
        nb = self.n_b
        vb, vc = self.v[:nb], self.v[nb:]
        if np.any(vb != vb[0]) or np.any(vc != vc[0]):
            return None
        off = ~np.eye(self.n, dtype=bool)
        blocks = {
            "j_b": self.j[:nb, :nb][off[:nb, :nb]],
            "j_c": self.j[nb:, nb:][off[nb:, nb:]],
            "j_bc": self.j[:nb, nb:].ravel(),
        }
        values = {}
        for name, entries in blocks.items():
            if entries.size == 0:
                values[name] = 0.0
            elif np.all(entries == entries[0]):
                values[name] = float(entries[0])
            else:
                return None
        return SystemSpec(
            n_b=nb, n_c=self.n_c, v_b=float(vb[0]), v_c=float(vc[0]), **values
        )

    def is_uniform(self) -> bool:
        return self.uniform_spec() is not None

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Unordered pairs (m < n) in row-major order; fixes the noise draw order."""
        return np.triu_indices(self.n, k=1)

    def with_pair_noise(self, delta: np.ndarray) -> "CouplingTable":
        """Add ``delta[p]`` to the coupling of the p-th pair of :meth:`pairs`."""
        m, n = self.pairs()
        delta = np.asarray(delta, dtype=float)
        if delta.shape != m.shape:
            raise ValueError(f"need one draw per pair ({m.size}), got {delta.shape}")
        j = np.array(self.j)
        j[m, n] += delta
        j[n, m] = j[m, n]
        return CouplingTable(v=self.v, j=j, n_b=self.n_b)


@dataclass(frozen=True)
class PairSpec:
    """Parallel battery made of ``n_pairs`` independent battery-charger pairs."""

    j_pair: float
    v_b: float = 1.0
    v_c: float = 1.0
    n_pairs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_pairs", _check_count("n_pairs", self.n_pairs))
        for name in ("j_pair", "v_b", "v_c"):
            object.__setattr__(self, name, _check_real(name, getattr(self, name)))

    @property
    def delta_v(self) -> float:
        return self.v_b - self.v_c

    @property
    def omega(self) -> float:
        return math.sqrt(4.0 * self.j_pair**2 + self.delta_v**2)

    @classmethod
    def from_spec(cls, spec: SystemSpec) -> "PairSpec":
        return cls(j_pair=spec.j_bc, v_b=spec.v_b, v_c=spec.v_c, n_pairs=spec.n_b)


@dataclass(frozen=True)
class TimeGrid:
    """Sample times.  Uniform grids start at 0; logarithmic ones at ``t_min``."""

    t_max: float
    n_samples: int
    spacing: Literal["uniform", "logarithmic"] = "uniform"
    t_min: float | None = None
    _times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t_max = _check_real("t_max", self.t_max)
        if t_max <= 0:
            raise ValueError("t_max must be positive")
        n = _check_count("n_samples", self.n_samples)
        if n < 2:
            raise ValueError("a time grid needs at least two samples")
        if self.spacing == "uniform":
            times = np.linspace(0.0, t_max, n)
        elif self.spacing == "logarithmic":
            t_min = self.t_min if self.t_min is not None else t_max * 1e-4
            if not 0 < t_min < t_max:
                raise ValueError("logarithmic grid needs 0 < t_min < t_max")
            times = np.geomspace(t_min, t_max, n)
        else:
            raise ValueError(f"unknown spacing {self.spacing!r}")
        times.setflags(write=False)
        object.__setattr__(self, "t_max", t_max)
        object.__setattr__(self, "n_samples", n)
        object.__setattr__(self, "_times", times)

    @property
    def times(self) -> np.ndarray:
        return self._times


def make_initial_collective(spec: SystemSpec):
    """|k=0>: battery fully down, charger fully up."""
    from .collective import CollectiveState

    amps = np.zeros(spec.k_max + 1, dtype=complex)
    amps[0] = 1.0
    return CollectiveState(amps=amps, spec=spec)


def make_initial_sector(table: CouplingTable):
    """Unit amplitude on the configuration with every charger bit set."""
    from .sector import SectorBasis, SectorState

    basis = SectorBasis(table.n, table.n_c)
    config = ((1 << table.n_c) - 1) << table.n_b
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index(config)] = 1.0
    return SectorState(basis=basis, amps=amps)


# ----------------------------------------------------------------------------
# flat ``key = value`` configuration files

CONFIG_KEYS = {
    "n_b": int,
    "n_c": int,
    "v_b": float,
    "v_c": float,
    "j_b": float,
    "j_c": float,
    "j_bc": float,
    "t_max": float,
    "n_samples": int,
    "seed": int,
    "delta_j": "float_list",
    "realizations": int,
}


def _convert(key: str, raw: str):
    kind = CONFIG_KEYS[key]
    try:
        if kind == "float_list":
            values = [float(x) for x in raw.split(",") if x.strip()]
            if not values:
                raise ValueError("empty list")
            return values
        if kind is int:
            value = int(raw, 0) if raw.strip().lower().startswith("0x") else int(raw)
            return value
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r} ({exc})") from None


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        out.update(apply_override(key, raw, lineno=lineno))
    return out


def apply_override(key: str, raw: str, lineno: int | None = None) -> dict:
    where = f"line {lineno}: " if lineno is not None else ""
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{where}unknown key {key!r}")
    if not raw:
        raise ConfigError(f"{where}missing value for {key!r}")
    return {key: _convert(key, raw)}


def spec_from_config(cfg: dict) -> SystemSpec:
    missing = [k for k in ("n_b", "n_c") if k not in cfg]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    fields = {k: cfg[k] for k in ("n_b", "n_c", "v_b", "v_c", "j_b", "j_c", "j_bc") if k in cfg}
    try:
        return SystemSpec(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
