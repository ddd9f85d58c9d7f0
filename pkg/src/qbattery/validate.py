"""Built-in self test: cross-engine and closed-form oracle checks at small sizes."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import fit_power_law, make_engine
from .analytic import POWER_COEFF, POWER_ROOT, HpParams, hp_dynamics, hp_maxima, hp_scaling, parallel_dynamics
from .collective import CollectiveEngine
from .model import CouplingTable, PairSpec, SystemSpec
from .oracle import brute_force_dynamics
from .sector import SectorEngine


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _max_dev(a, b, fields=("e_b", "eta_b", "s_vn")) -> float:
    return max(float(np.max(np.abs(getattr(a, f) - getattr(b, f)))) for f in fields)


def check_engines_agree(sizes=(2, 3, 4), dvs=(-8.0, 0.0, 0.8), tol=1e-8):
    t = np.linspace(0.0, 10.0, 101)
    worst = 0.0
    for n in sizes:
        for dv in dvs:
            spec = SystemSpec(n_b=n, n_c=n).with_delta_v(dv)
            col = CollectiveEngine(spec).run(t).result
            sec = SectorEngine(CouplingTable.from_spec(spec)).run(t).result
            ref = brute_force_dynamics(CouplingTable.from_spec(spec), t)
            for res in (col, sec):
                res.check_conservation()
            worst = max(worst, _max_dev(col, ref), _max_dev(sec, ref))
    return worst < tol, f"max deviation {worst:.2e} (tol {tol:g})"


def check_parallel_closed_form(tol=1e-9, seed=7):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 10.0, 201)
    worst = 0.0
    for _ in range(5):
        j, dv = rng.uniform(0.2, 2.0), rng.uniform(-3.0, 3.0)
        spec = SystemSpec(n_b=1, n_c=1, v_b=1.0, v_c=1.0 - dv, j_b=0.0, j_c=0.0, j_bc=j)
        res = SectorEngine(CouplingTable.from_spec(spec)).run(t).result
        e, p, s = parallel_dynamics(PairSpec(j_pair=j, v_b=1.0, v_c=1.0 - dv), t)
        worst = max(worst, np.max(np.abs(res.e_b - e)), np.max(np.abs(res.p_b - p)), np.max(np.abs(res.s_vn - s)))
    consts = math.floor(POWER_COEFF * 100) / 100 == 1.44 and round(POWER_ROOT, 2) == 2.33
    return worst < tol and consts, f"max deviation {worst:.2e}; x*={POWER_ROOT:.6f}, coeff={POWER_COEFF:.6f}"


def check_low_energy_limit(rtol=0.05):
    spec = SystemSpec(n_b=20, n_c=1000).with_delta_v(-8.0)
    hp = HpParams.from_spec(spec)
    t_e = hp_maxima(hp)[0].time
    t = np.linspace(0.0, t_e, 200)[1:]
    res = CollectiveEngine(spec).run(t).result
    e_hp, _ = hp_dynamics(hp, t)
    dev = float(np.max(np.abs(res.e_b - e_hp) / e_hp))
    return dev < rtol, f"max relative deviation {dev:.3e} up to the first maximum"


def check_scaling_exponents(tol=0.01):
    worst = 0.0
    for dv, expect in ((1e-3, (1.0, 1.5, -0.5)), (-1e7, (2.0, 2.0, 0.0))):
        sizes = np.array([100, 200, 400, 800, 1600])
        recs = []
        for n in sizes:
            spec = SystemSpec(n_b=int(n), n_c=int(n)).with_delta_v(dv)
            e, p = hp_maxima(HpParams.from_spec(spec))
            recs.append((e.value, p.value, e.time))
        recs = np.array(recs)
        got = [fit_power_law(sizes, recs[:, k]).alpha for k in range(3)]
        worst = max(worst, *(abs(g - x) for g, x in zip(got, expect)))
        branch = hp_scaling(SystemSpec(n_b=100, n_c=100).with_delta_v(dv)).branch
        if branch is None:
            return False, f"no asymptotic branch at delta_v={dv:g}"
    return worst < tol, f"max exponent error {worst:.2e}"


def check_auto_matches_full(tol=1e-8):
    t = np.linspace(0.0, 5.0, 51)
    spec = SystemSpec(n_b=5, n_c=7, v_b=1.0, v_c=0.3, j_b=0.8, j_c=1.1, j_bc=0.9)
    a = make_engine(spec, "auto").run(t).result
    f = make_engine(spec, "full").run(t).result
    dev = _max_dev(a, f, ("e_b", "eta_b", "s_vn", "e_total"))
    return dev < tol, f"auto vs full deviation {dev:.2e}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "engines-agree": check_engines_agree,
    "parallel-closed-form": check_parallel_closed_form,
    "low-energy-limit": check_low_energy_limit,
    "scaling-exponents": check_scaling_exponents,
    "auto-vs-full": check_auto_matches_full,
}


def run_validation(names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return out
