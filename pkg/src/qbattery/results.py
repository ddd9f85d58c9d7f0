"""Time-series container shared by the engines, plus CSV/JSON writers."""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConservationError

CSV_COLUMNS = ("t", "E_B", "P_B", "eta_B", "S_vN", "S_vN_norm", "E_total")


def fmt(x: float) -> str:
    """Shortest decimal string that round-trips to the same double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def average_power(t: np.ndarray, e_b: np.ndarray, e_b0: float = 0.0) -> np.ndarray:
    """(E_B(t) - E_B(0)) / t with the t = 0 value set to 0."""
    t = np.asarray(t, dtype=float)
    p = np.zeros_like(t)
    nz = t != 0
    p[nz] = (np.asarray(e_b)[nz] - e_b0) / t[nz]
    return p


@dataclass
class DynamicsResult:
    """Observables sampled along one trajectory.

    ``n_battery`` and ``n_charger`` are the expected excitation counts of the
    two parts; ``norm`` is the squared state norm at each sample.  They are
    diagnostics for :meth:`check_conservation` and are not written to CSV.
    """

    t: np.ndarray
    e_b: np.ndarray
    p_b: np.ndarray
    eta_b: np.ndarray
    s_vn: np.ndarray
    s_vn_norm: np.ndarray
    e_total: np.ndarray
    norm: np.ndarray | None = None
    n_battery: np.ndarray | None = None
    n_charger: np.ndarray | None = None
    n_exc: int | None = None
    s_max: float | None = None
    energy_scale: float = 0.0
    realization: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def columns(self) -> dict:
        cols = {
            "t": self.t,
            "E_B": self.e_b,
            "P_B": self.p_b,
            "eta_B": self.eta_b,
            "S_vN": self.s_vn,
            "S_vN_norm": self.s_vn_norm,
            "E_total": self.e_total,
        }
        return cols

    def row(self, i: int) -> dict:
        return {k: float(v[i]) for k, v in self.columns().items()}

    def csv_text(self) -> str:
        buf = io.StringIO()
        header = list(CSV_COLUMNS)
        if self.realization is not None:
            header.append("realization")
        buf.write(",".join(header) + "\n")
        cols = [np.asarray(c) for c in self.columns().values()]
        for i in range(len(self.t)):
            fields = [fmt(c[i]) for c in cols]
            if self.realization is not None:
                fields.append(str(self.realization))
            buf.write(",".join(fields) + "\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        atomic_write(path, self.csv_text())

    def manifest(self) -> dict:
        return dict(self.meta)

    def check_conservation(
        self, norm_tol: float = 1e-10, energy_tol: float = 1e-9, count_tol: float = 1e-9
    ) -> None:
        """Raise :class:`ConservationError` if any diagnostic drifts.

        Energy drift is measured relative to max(|<H>(0)|, energy_scale), where
        ``energy_scale`` is the engine's spread of H in the initial state; this
        keeps the check meaningful when <H>(0) happens to be 0.
        """
        problems = []
        if self.norm is not None:
            dev = np.max(np.abs(self.norm - 1.0))
            if dev >= norm_tol:
                problems.append(f"norm drift {dev:.3e} >= {norm_tol:g}")
        e = np.asarray(self.e_total)
        if e.size:
            ref = max(abs(e[0]), self.energy_scale)
            dev = np.max(np.abs(e - e[0]))
            if ref > 0 and dev > energy_tol * ref:
                problems.append(f"energy drift {dev:.3e} > {energy_tol:g} * {ref:.3e}")
        if self.n_battery is not None and self.n_charger is not None and self.n_exc is not None:
            dev = np.max(np.abs(self.n_battery + self.n_charger - self.n_exc))
            if dev > count_tol * max(1, self.n_exc):
                problems.append(f"excitation count drift {dev:.3e}")
        if self.s_max is not None:
            s = np.asarray(self.s_vn)
            if np.any(s < -1e-12) or np.any(s > self.s_max + 1e-9):
                problems.append("entanglement entropy outside [0, ln(K+1)]")
        if problems:
            raise ConservationError("; ".join(problems))

    def slice(self, idx) -> "DynamicsResult":
        def pick(a):
            return None if a is None else np.asarray(a)[idx]

        return DynamicsResult(
            t=pick(self.t),
            e_b=pick(self.e_b),
            p_b=pick(self.p_b),
            eta_b=pick(self.eta_b),
            s_vn=pick(self.s_vn),
            s_vn_norm=pick(self.s_vn_norm),
            e_total=pick(self.e_total),
            norm=pick(self.norm),
            n_battery=pick(self.n_battery),
            n_charger=pick(self.n_charger),
            n_exc=self.n_exc,
            s_max=self.s_max,
            energy_scale=self.energy_scale,
            realization=self.realization,
            meta=dict(self.meta),
        )


def read_csv(path) -> dict:
    """Read a CSV written by :meth:`DynamicsResult.to_csv` into column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")
