"""Maxima over time, parameter sweeps, noise ensembles and power-law fits."""

from __future__ import annotations

import inspect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .analytic import HpParams, MaxRecord, hp_maxima
from .collective import CollectiveEngine
from .errors import ConfigError, QBatteryError, WindowLimitedError
from .model import CouplingTable, SystemSpec
from .results import DynamicsResult, fmt
from .sector import SectorEngine

EngineName = Literal["auto", "collective", "full"]
Axis = Literal["charger_size", "total_size", "jc_dv_grid", "noise_amplitude"]
AXES = ("charger_size", "total_size", "jc_dv_grid", "noise_amplitude")

SWEEP_COLUMNS = ("point", "E_max", "P_max", "t_E", "t_P", "eta_at_tE", "eta_at_tP", "SvN_at_tE", "SvN_at_tP")

TIE_RTOL = 1e-9
# peaks whose coarse parabola is this close to the best one get refined
CANDIDATE_RTOL = 1e-3
MAX_CANDIDATES = 8


# ---------------------------------------------------------------- engines


def make_engine(system, engine: EngineName = "auto", **options):
    """Collective engine for uniform couplings, sector engine otherwise.

    ``system`` is a :class:`SystemSpec` or a :class:`CouplingTable`.
    Options not understood by the chosen engine are dropped.
    """
    if engine not in ("auto", "collective", "full"):
        raise ConfigError(f"unknown engine {engine!r}")
    if isinstance(system, SystemSpec):
        spec, table = system, None
    else:
        spec, table = system.uniform_spec(), system
    if engine == "collective" and spec is None:
        raise ConfigError("the collective engine needs uniform couplings")
    if engine == "full" or spec is None:
        keep = {k: options[k] for k in ("krylov_dim", "tol", "entropy", "max_dim", "max_nnz", "mode") if k in options}
        return SectorEngine(table if table is not None else CouplingTable.from_spec(spec), **keep)
    keep = {k: options[k] for k in ("method", "krylov_dim", "tol") if k in options}
    return CollectiveEngine(spec, **keep)


# ---------------------------------------------------------------- maxima


def _earliest_argmax(y: np.ndarray, rtol: float = TIE_RTOL) -> int:
    top = np.max(y)
    return int(np.argmax(y >= top - rtol * abs(top)))


def _vertex(t3, y3):
    """Vertex of the parabola through three points, or None if not a peak inside."""
    (t0, t1, t2), (y0, y1, y2) = t3, y3
    d0, d2 = t0 - t1, t2 - t1
    denom = d0 * d2 * (d0 - d2)
    if denom == 0:
        return None
    a = (d2 * (y0 - y1) - d0 * (y2 - y1)) / denom
    b = (d0**2 * (y2 - y1) - d2**2 * (y0 - y1)) / denom
    if not a < 0:
        return None
    s = -b / (2 * a)
    if not d0 <= s <= d2:
        return None
    return t1 + s, y1 + b * s + a * s * s


def _refine(t3, y3, kind_pick, evaluator, factor, rounds):
    """Best (time, value) near the middle of three samples."""
    best_t, best_y = float(t3[1]), float(y3[1])
    for _ in range(rounds if evaluator is not None else 0):
        fine = np.linspace(t3[0], t3[2], 2 * factor + 1)
        yf = np.asarray(kind_pick(evaluator(fine)))
        j = _earliest_argmax(yf)
        if yf[j] > best_y:
            best_t, best_y = float(fine[j]), float(yf[j])
        j = min(max(j, 1), fine.size - 2)
        t3, y3 = fine[j - 1 : j + 2], yf[j - 1 : j + 2]
    peak = _vertex(t3, y3)
    # the parabola only ever raises the estimate above the best sample
    if peak is not None and peak[1] > best_y:
        best_t, best_y = float(peak[0]), float(peak[1])
    return best_t, best_y


def _locate(t, y, kind, pick, evaluator, factor, rounds):
    i = _earliest_argmax(y)
    top = float(y[i])
    if i == t.size - 1:
        return MaxRecord(top, float(t[i]), kind, window_limited=True)
    peaks = np.nonzero((y[1:-1] >= y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    if peaks.size == 0:
        return MaxRecord(top, float(t[i]), kind)
    # a coarse sample can miss its peak, so every peak whose parabola comes
    # close to the best one is refined before the earliest is chosen
    est = np.array([max(y[k], (_vertex(t[k - 1 : k + 2], y[k - 1 : k + 2]) or (0.0, -np.inf))[1]) for k in peaks])
    slack = CANDIDATE_RTOL * max(abs(est.max()), abs(top))
    keep = peaks[est >= est.max() - slack]
    if keep.size > MAX_CANDIDATES:
        keep = np.sort(keep[np.argsort(-est[est >= est.max() - slack], kind="stable")[:MAX_CANDIDATES]])
    found = [_refine(t[k - 1 : k + 2], y[k - 1 : k + 2], pick, evaluator, factor, rounds) for k in keep]
    found = sorted(found + [(float(t[i]), top)])
    best = max(v for _, v in found)
    t_best, v_best = next((tt, v) for tt, v in found if v >= best - TIE_RTOL * abs(best))
    return MaxRecord(v_best, t_best, kind)


def find_maxima(
    result: DynamicsResult,
    evaluator: Callable[[np.ndarray], DynamicsResult] | None = None,
    refine_factor: int = 10,
    rounds: int = 2,
) -> tuple[MaxRecord, MaxRecord]:
    """Maximum battery energy and average power with the earliest times attaining them.

    The coarse argmax is bracketed by its neighbours; with an ``evaluator``
    (usually ``Trajectory.evaluate``) the bracket is resampled ``refine_factor``
    times more densely for ``rounds`` rounds, and a three-point parabola
    finishes the job.  A maximum on the last sample comes back flagged
    ``window_limited`` and unrefined.
    """
    t = np.asarray(result.t, dtype=float)
    if t.size < 3:
        raise ValueError("need at least 3 samples to locate a maximum")
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be strictly increasing")
    ev = evaluator
    if evaluator is not None and "light" in inspect.signature(evaluator).parameters:

        def ev(times):
            return evaluator(times, light=True)

    energy = _locate(t, np.asarray(result.e_b), "energy", lambda r: r.e_b, ev, refine_factor, rounds)
    power = _locate(t, np.asarray(result.p_b), "power", lambda r: r.p_b, ev, refine_factor, rounds)
    return energy, power


def default_window(spec: SystemSpec) -> float:
    """Time window for locating maxima.

    Ten low-energy energy-maximum times when that prediction exists,
    otherwise 50 over the fastest coupling scale.
    """
    hp = HpParams.from_spec(spec)
    if hp.regime == "oscillatory" and hp.g != 0:
        e_rec, _ = hp_maxima(hp)
        return 10.0 * e_rec.time
    rate = max(abs(spec.j_bc) * math.sqrt(spec.n_b * spec.n_c), abs(spec.delta_v), 1e-6)
    return 50.0 / rate


@dataclass
class PointMaxima:
    """Maxima of one trajectory and the participation/entropy at their times."""

    energy: MaxRecord
    power: MaxRecord
    eta_at_te: float
    eta_at_tp: float
    svn_at_te: float
    svn_at_tp: float
    window: float
    result: DynamicsResult = field(repr=False)


def maximize(
    engine,
    t_max: float,
    n_samples: int = 401,
    max_extend: int = 8,
    refine_factor: int = 10,
    rounds: int = 2,
    check: bool = True,
    observe_at_maxima: bool = True,
) -> PointMaxima:
    """Run ``engine`` over [0, t_max], doubling the window while a maximum sits on its edge.

    The sample spacing is kept as the window grows.  Raises
    :class:`WindowLimitedError` once the window would exceed ``max_extend * t_max``.
    ``observe_at_maxima=False`` skips the extra evaluation of participation
    and entropy at the two maximizing times (they come back NaN).
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if n_samples < 3:
        raise ValueError("n_samples must be >= 3")
    window = float(t_max)
    samples = int(n_samples)
    while True:
        traj = engine.run(np.linspace(0.0, window, samples))
        if check:
            traj.result.check_conservation()
        e, p = find_maxima(traj.result, traj.evaluate, refine_factor, rounds)
        if not (e.window_limited or p.window_limited):
            break
        if 2 * window > max_extend * t_max * (1 + 1e-12):
            which = "energy" if e.window_limited else "power"
            raise WindowLimitedError(f"{which} maximum still at the window edge t={window:g}")
        window *= 2
        samples = 2 * samples - 1
    at = {e.time: (math.nan, math.nan), p.time: (math.nan, math.nan)}
    if observe_at_maxima:
        times = sorted(at)
        res = traj.evaluate(np.array(times))
        at = {tt: (float(res.eta_b[k]), float(res.s_vn_norm[k])) for k, tt in enumerate(times)}
    return PointMaxima(
        energy=e,
        power=p,
        eta_at_te=at[e.time][0],
        eta_at_tp=at[p.time][0],
        svn_at_te=at[e.time][1],
        svn_at_tp=at[p.time][1],
        window=window,
        result=traj.result,
    )


# ---------------------------------------------------------------- seeds and noise

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One output of the SplitMix64 generator seeded at ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(master: int, realization: int, index: int) -> int:
    """Seed for one realization, independent of the order realizations run in."""
    h = splitmix64(int(master) & _MASK64)
    h = splitmix64(h ^ (int(realization) & _MASK64))
    return splitmix64(h ^ (int(index) & _MASK64))


def draw_pair_noise(n_pairs: int, delta_j: float, seed: int) -> np.ndarray:
    """Uniform offsets in [-delta_j, delta_j], one per unordered pair."""
    if delta_j < 0:
        raise ValueError("delta_j must be non-negative")
    if delta_j == 0:
        return np.zeros(n_pairs)
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-delta_j, delta_j, size=n_pairs)


def noisy_table(spec: SystemSpec, delta_j: float, seed: int) -> CouplingTable:
    table = CouplingTable.from_spec(spec)
    n_pairs = table.pairs()[0].size
    return table.with_pair_noise(draw_pair_noise(n_pairs, delta_j, seed))


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepPlan:
    """One-dimensional scan around ``base``.

    Points are N_C values (``charger_size``), N_B = N_C values
    (``total_size``), (J_C, delta V) pairs (``jc_dv_grid``) or coupling noise
    amplitudes (``noise_amplitude``, one realization per point).  ``t_max``
    fixes the starting window for every point; by default it follows
    :func:`default_window`.
    """

    base: SystemSpec
    axis: Axis
    points: tuple
    n_samples: int = 401
    t_max: float | None = None
    max_extend: int = 8
    engine: EngineName = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; expected one of {', '.join(AXES)}")
        pts = tuple(self.points)
        if not pts:
            raise ConfigError("a sweep needs at least one point")
        if self.axis == "jc_dv_grid":
            try:
                pts = tuple((float(a), float(b)) for a, b in pts)
            except (TypeError, ValueError) as exc:
                raise ConfigError("jc_dv_grid points must be (J_C, delta_V) pairs") from exc
        elif self.axis in ("charger_size", "total_size"):
            if any(float(p) != int(p) or int(p) < 1 for p in pts):
                raise ConfigError("size points must be positive integers")
            pts = tuple(int(p) for p in pts)
        else:
            pts = tuple(float(p) for p in pts)
            if any(p < 0 or not math.isfinite(p) for p in pts):
                raise ConfigError("noise amplitudes must be finite and non-negative")
        if any(not a < b for a, b in zip(pts, pts[1:])):
            raise ConfigError("sweep points must be strictly increasing")
        if self.n_samples < 3:
            raise ConfigError("n_samples must be >= 3")
        if self.max_extend < 1:
            raise ConfigError("max_extend must be >= 1")
        object.__setattr__(self, "points", pts)

    def spec_at(self, i: int) -> SystemSpec:
        p = self.points[i]
        if self.axis == "charger_size":
            return self.base.replace(n_c=p)
        if self.axis == "total_size":
            return self.base.replace(n_b=p, n_c=p)
        if self.axis == "jc_dv_grid":
            return self.base.replace(j_c=p[0]).with_delta_v(p[1])
        return self.base

    def system_at(self, i: int):
        spec = self.spec_at(i)
        if self.axis == "noise_amplitude":
            return noisy_table(spec, self.points[i], mix_seed(self.seed, 0, i))
        return spec

    def label(self, i: int) -> str:
        p = self.points[i]
        if self.axis == "jc_dv_grid":
            return f"{fmt(p[0])}:{fmt(p[1])}"
        return str(p) if isinstance(p, int) else fmt(p)


@dataclass
class SweepRow:
    point: str
    e_max: float = math.nan
    p_max: float = math.nan
    t_e: float = math.nan
    t_p: float = math.nan
    eta_at_te: float = math.nan
    eta_at_tp: float = math.nan
    svn_at_te: float = math.nan
    svn_at_tp: float = math.nan
    window: float = math.nan
    error: str | None = None

    def values(self) -> tuple:
        return (
            self.e_max, self.p_max, self.t_e, self.t_p,
            self.eta_at_te, self.eta_at_tp, self.svn_at_te, self.svn_at_tp,
        )


@dataclass
class SweepTable:
    plan: SweepPlan
    rows: list

    @property
    def errors(self) -> dict:
        return {r.point: r.error for r in self.rows if r.error is not None}

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def csv_text(self) -> str:
        lines = [",".join(SWEEP_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([r.point] + [fmt(v) for v in r.values()]))
        return "\n".join(lines) + "\n"


def _sweep_point(plan: SweepPlan, i: int) -> SweepRow:
    row = SweepRow(point=plan.label(i))
    try:
        spec = plan.spec_at(i)
        t_max = plan.t_max if plan.t_max is not None else default_window(spec)
        engine = make_engine(plan.system_at(i), plan.engine)
        m = maximize(engine, t_max, plan.n_samples, plan.max_extend)
    except (QBatteryError, ValueError, MemoryError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        return row
    row.e_max, row.t_e = m.energy.value, m.energy.time
    row.p_max, row.t_p = m.power.value, m.power.time
    row.eta_at_te, row.eta_at_tp = m.eta_at_te, m.eta_at_tp
    row.svn_at_te, row.svn_at_tp = m.svn_at_te, m.svn_at_tp
    row.window = m.window
    return row


def run_sweep(plan: SweepPlan, jobs: int = 1) -> SweepTable:
    """One row per point, in point order; a failing point yields an error row."""
    idx = range(len(plan.points))
    if jobs <= 1:
        rows = [_sweep_point(plan, i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda i: _sweep_point(plan, i), idx))
    return SweepTable(plan=plan, rows=rows)


def log_sizes(lo: int, hi: int, count: int) -> tuple[int, ...]:
    """``count`` logarithmically spaced integers in [lo, hi], duplicates removed."""
    vals = np.unique(np.rint(np.geomspace(lo, hi, count)).astype(int))
    return tuple(int(v) for v in vals)


# ---------------------------------------------------------------- fits


@dataclass(frozen=True)
class FitResult:
    """Least-squares line through (ln x, ln y): y ~ exp(intercept) x^alpha."""

    alpha: float
    intercept: float
    alpha_stderr: float
    r_squared: float
    range: tuple
    n_points: int

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_stderr": self.alpha_stderr,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "range": list(self.range),
        }


def fit_power_law(x: Sequence[float], y: Sequence[float], range: tuple | None = None) -> FitResult:
    """Ordinary least squares on logs; ``range`` = (lo, hi) keeps lo <= x <= hi."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and the same length")
    if range is not None:
        lo, hi = range
        keep = (x >= lo) & (x <= hi)
        x, y = x[keep], y[keep]
    if x.size < 3:
        raise ValueError(f"a power-law fit needs at least 3 points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("power-law fits need finite positive x and y")
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    sxx = dx @ dx
    if sxx <= 1e-24 * max(1.0, lx @ lx):
        raise ValueError("degenerate x range")
    alpha = float(dx @ (ly - ly.mean()) / sxx)
    intercept = float(ly.mean() - alpha * lx.mean())
    resid = ly - (intercept + alpha * lx)
    ss_res = float(resid @ resid)
    dy = ly - ly.mean()
    ss_tot = float(dy @ dy)
    stderr = math.sqrt(ss_res / (x.size - 2) / sxx)
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return FitResult(alpha, intercept, stderr, r2, (float(x.min()), float(x.max())), int(x.size))


def fit_two_segments(
    n_c: Sequence[float],
    y: Sequence[float],
    n_b: int,
    low: float = 0.2,
    high: tuple[float, float] = (0.8, 1.0),
) -> tuple[FitResult, FitResult]:
    """Separate fits for n_c <= low*n_b and high[0]*n_b <= n_c <= high[1]*n_b."""
    first = fit_power_law(n_c, y, (0.0, low * n_b))
    second = fit_power_law(n_c, y, (high[0] * n_b, high[1] * n_b))
    return first, second


# ---------------------------------------------------------------- noise ensembles


@dataclass(frozen=True)
class EnsembleStat:
    mean: float
    sem: float
    n_realizations: int

    @classmethod
    def from_values(cls, values) -> "EnsembleStat":
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            return cls(math.nan, math.nan, 0)
        sem = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(float(v.mean()), sem, int(v.size))


@dataclass
class NoiseRecord:
    delta_j: float
    size: int
    realization: int
    seed: int
    e_max: float = math.nan
    p_max: float = math.nan
    t_e: float = math.nan
    t_p: float = math.nan
    error: str | None = None


@dataclass
class ExponentSummary:
    """Per-realization exponents and the fit through ensemble means."""

    values: np.ndarray
    mean: float
    sem: float
    variance: float
    fit_of_means: FitResult | None

    def to_json(self) -> dict:
        return {
            "per_realization": [float(v) for v in self.values],
            "mean": self.mean,
            "sem": self.sem,
            "variance": self.variance,
            "fit_of_means": None if self.fit_of_means is None else self.fit_of_means.to_json(),
        }


NOISE_COLUMNS = ("delta_j", "size", "realization", "seed", "E_max", "P_max", "t_E", "t_P", "error")


@dataclass
class NoiseEnsemble:
    sizes: tuple
    delta_js: tuple
    n_real: int
    seed: int
    records: list
    stats: dict  # (delta_j, size) -> {"energy": EnsembleStat, "power": EnsembleStat}
    exponents: dict  # delta_j -> {"energy": ExponentSummary, "power": ExponentSummary}

    @property
    def failures(self) -> list:
        return [r for r in self.records if r.error is not None]

    def csv_text(self) -> str:
        lines = [",".join(NOISE_COLUMNS)]
        for r in self.records:
            err = "" if r.error is None else r.error.replace(",", ";").replace("\n", " ")
            lines.append(
                ",".join(
                    [fmt(r.delta_j), str(r.size), str(r.realization), str(r.seed)]
                    + [fmt(v) for v in (r.e_max, r.p_max, r.t_e, r.t_p)]
                    + [err]
                )
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        out = {"sizes": list(self.sizes), "n_realizations": self.n_real, "seed": self.seed, "delta_j": {}}
        for dj in self.delta_js:
            out["delta_j"][fmt(dj)] = {
                "stats": {
                    str(s): {
                        kind: {"mean": st.mean, "sem": st.sem, "n": st.n_realizations}
                        for kind, st in self.stats[(dj, s)].items()
                    }
                    for s in self.sizes
                },
                "exponents": {k: v.to_json() for k, v in self.exponents[dj].items()},
            }
        return out


def first_peak_window(spec: SystemSpec, margin: float = 1.5, n_samples: int = 2001) -> float:
    """``margin`` times the first local maximum of the uniform-coupling energy.

    Cheap (collective engine) and used as the noise-run window, where each
    full-sector time step is expensive and only the first charging peak matters.
    """
    t_end = default_window(spec)
    traj = CollectiveEngine(spec).run(np.linspace(0.0, t_end, n_samples))
    e = traj.result.e_b
    rising = np.nonzero((e[1:-1] >= e[:-2]) & (e[1:-1] > e[2:]))[0]
    t_peak = traj.result.t[rising[0] + 1] if rising.size else t_end
    return margin * float(t_peak)


def _exponent_summary(sizes, per_real: np.ndarray) -> ExponentSummary:
    alphas = []
    for row in per_real:
        ok = np.isfinite(row) & (row > 0)
        if ok.sum() >= 3:
            alphas.append(fit_power_law(np.asarray(sizes)[ok], row[ok]).alpha)
    alphas = np.array(alphas)
    stat = EnsembleStat.from_values(alphas)
    var = float(np.var(alphas, ddof=1)) if alphas.size > 1 else 0.0
    means = np.array([np.nanmean(c) if np.any(np.isfinite(c)) else np.nan for c in per_real.T])
    ok = np.isfinite(means) & (means > 0)
    fit = fit_power_law(np.asarray(sizes)[ok], means[ok]) if ok.sum() >= 3 else None
    return ExponentSummary(alphas, stat.mean, stat.sem, var, fit)


def noise_ensemble(
    template: SystemSpec,
    sizes: Sequence[int],
    delta_js: Sequence[float],
    n_real: int,
    seed: int = 0,
    n_samples: int = 31,
    window: Callable[[SystemSpec], float] | None = None,
    max_extend: int = 8,
    jobs: int = 1,
    krylov_dim: int = 60,
    tol: float = 1e-10,
    rounds: int = 1,
) -> NoiseEnsemble:
    """Maxima of noisy-coupling runs for N_B = N_C in ``sizes``.

    Realization r at amplitude index d draws its pair offsets from seed
    ``mix_seed(seed, r, d)``, one draw per unordered pair, on top of the
    template's couplings.  Every realization uses the sector engine.  With
    ``delta_j == 0`` all realizations are the same table, so it is run once.
    """
    if n_real < 2:
        raise ConfigError("a noise ensemble needs at least 2 realizations")
    sizes = tuple(int(s) for s in sizes)
    delta_js = tuple(float(d) for d in delta_js)
    window = window or first_peak_window
    specs = {s: template.replace(n_b=s, n_c=s) for s in sizes}
    windows = {s: window(specs[s]) for s in sizes}

    def one(task):
        d, r, s = task
        dj = delta_js[d]
        rec = NoiseRecord(dj, s, r, mix_seed(seed, r, d))
        try:
            table = noisy_table(specs[s], dj, rec.seed)
            engine = SectorEngine(table, krylov_dim=krylov_dim, tol=tol, entropy=False)
            m = maximize(engine, windows[s], n_samples, max_extend, rounds=rounds, observe_at_maxima=False)
        except (QBatteryError, ValueError, MemoryError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            return rec
        rec.e_max, rec.t_e = m.energy.value, m.energy.time
        rec.p_max, rec.t_p = m.power.value, m.power.time
        return rec

    # sizes outermost so cached sector structures are reused across tasks
    tasks = [(d, r, s) for s in sizes for d in range(len(delta_js)) for r in range(n_real)]
    unique = [t for t in tasks if delta_js[t[0]] != 0 or t[1] == 0]
    if jobs <= 1:
        done = {t: one(t) for t in unique}
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            done = dict(zip(unique, pool.map(one, unique)))
    records = []
    for d, r, s in sorted(tasks):
        rec = done.get((d, r, s))
        if rec is None:
            base = done[(d, 0, s)]
            rec = NoiseRecord(**{**base.__dict__, "realization": r, "seed": mix_seed(seed, r, d)})
        records.append(rec)

    stats, exponents = {}, {}
    for d, dj in enumerate(delta_js):
        grid = {"energy": np.full((n_real, len(sizes)), np.nan), "power": np.full((n_real, len(sizes)), np.nan)}
        for rec in records:
            if rec.delta_j == dj and rec.error is None:
                grid["energy"][rec.realization, sizes.index(rec.size)] = rec.e_max
                grid["power"][rec.realization, sizes.index(rec.size)] = rec.p_max
        for k, s in enumerate(sizes):
            stats[(dj, s)] = {kind: EnsembleStat.from_values(g[:, k]) for kind, g in grid.items()}
        exponents[dj] = {kind: _exponent_summary(sizes, g) for kind, g in grid.items()}
    return NoiseEnsemble(sizes, delta_js, n_real, int(seed), records, stats, exponents)
