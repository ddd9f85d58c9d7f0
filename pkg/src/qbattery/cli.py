"""Command-line front end.

Every verb reads a flat ``key = value`` config (``--config``), applies
``--set`` overrides and flag overrides in that order, writes its artifacts
into ``--out`` atomically, and finishes with ``manifest.json``.  Failures
write ``error.json`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SWEEP_COLUMNS,
    SweepPlan,
    default_window,
    fit_power_law,
    log_sizes,
    make_engine,
    maximize,
    mix_seed,
    noise_ensemble,
    noisy_table,
    run_sweep,
)
from .analytic import HpParams, hp_dynamics, hp_entanglement, hp_maxima, hp_occupation, hp_scaling
from .analytic import parallel_dynamics, parallel_maxima, parallel_occupation
from .errors import ConfigError, QBatteryError
from .model import PairSpec, apply_override, parse_config, spec_from_config
from .results import atomic_write, fmt, write_json
from .validate import run_validation

VERBS = ("dynamics", "maxima", "sweep", "scaling", "noise", "parallel", "hp", "validate")
DEFAULT_SAMPLES = 401
EXIT_CONFIG = 2
EXIT_FAILURE = 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbattery", description="Collective quantum battery simulator.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", type=Path, help="flat key = value configuration file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (created if absent)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable, applied after the file")
    p.add_argument("--engine", choices=("collective", "full", "auto"), default="auto")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps and ensembles")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--t-max", type=float, help="time window (default: per-point policy)")
    p.add_argument("--n-samples", type=int, help="number of time samples")
    p.add_argument("--axis", choices=("charger_size", "total_size", "jc_dv_grid", "noise_amplitude"),
                   help="sweep axis (sweep, scaling)")
    p.add_argument("--points", help="comma-separated sweep points; J_C:dV pairs for jc_dv_grid; sizes for noise")
    p.add_argument("--log-range", metavar="LO:HI:COUNT",
                   help="log-spaced integer sizes instead of --points")
    return p


def resolve_config(args) -> tuple[dict, str]:
    text = args.config.read_text() if args.config is not None else ""
    cfg = parse_config(text)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        cfg.update(apply_override(key, raw))
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg["seed"] = args.seed
    if args.t_max is not None:
        cfg["t_max"] = args.t_max
    if args.n_samples is not None:
        cfg["n_samples"] = args.n_samples
    if "t_max" in cfg and not cfg["t_max"] > 0:
        raise ConfigError("t_max must be positive")
    if "n_samples" in cfg and cfg["n_samples"] < 3:
        raise ConfigError("n_samples must be >= 3")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg, text


def _input_hash(args, cfg_text: str, cfg: dict) -> str:
    payload = {
        "verb": args.verb,
        "config_text": cfg_text,
        "resolved": cfg,
        "engine": args.engine,
        "axis": args.axis,
        "points": args.points,
        "log_range": args.log_range,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _parse_points(args, axis: str):
    if args.log_range:
        try:
            lo, hi, count = (int(x) for x in args.log_range.split(":"))
        except ValueError:
            raise ConfigError("--log-range expects LO:HI:COUNT integers") from None
        return log_sizes(lo, hi, count)
    if not args.points:
        raise ConfigError(f"{args.verb} needs --points or --log-range")
    items = [x.strip() for x in args.points.split(",") if x.strip()]
    try:
        if axis == "jc_dv_grid":
            return tuple(tuple(float(v) for v in item.split(":")) for item in items)
        if axis in ("charger_size", "total_size"):
            return tuple(int(x) for x in items)
        return tuple(float(x) for x in items)
    except ValueError:
        raise ConfigError(f"cannot parse --points {args.points!r} for axis {axis}") from None


def _times(cfg, t_default: float) -> np.ndarray:
    return np.linspace(0.0, cfg.get("t_max", t_default), cfg.get("n_samples", DEFAULT_SAMPLES))


def _system(cfg, spec):
    """The system, or one noisy realization of it when a nonzero delta_j is set."""
    dj = cfg.get("delta_j")
    if not dj or (len(dj) == 1 and dj[0] == 0):
        return spec
    if len(dj) != 1:
        raise ConfigError("this verb takes a single delta_j value")
    return noisy_table(spec, dj[0], mix_seed(cfg.get("seed", 0), 0, 0))


def _engine_name(engine) -> str:
    return engine.name


def _csv(columns: dict) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    lines = [",".join(names)]
    for i in range(arrays[0].size):
        lines.append(",".join(fmt(a[i]) for a in arrays))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ verbs


def cmd_dynamics(args, cfg, out):
    spec = spec_from_config(cfg)
    engine = make_engine(_system(cfg, spec), args.engine)
    result = engine.run(_times(cfg, default_window(spec))).result
    result.check_conservation()
    result.to_csv(out / "dynamics.csv")
    return ["dynamics.csv"], {"engine": _engine_name(engine)}


def cmd_maxima(args, cfg, out):
    spec = spec_from_config(cfg)
    engine = make_engine(_system(cfg, spec), args.engine)
    m = maximize(engine, cfg.get("t_max", default_window(spec)), cfg.get("n_samples", DEFAULT_SAMPLES))
    row = (m.energy.value, m.power.value, m.energy.time, m.power.time,
           m.eta_at_te, m.eta_at_tp, m.svn_at_te, m.svn_at_tp)
    atomic_write(out / "maxima.csv", ",".join(SWEEP_COLUMNS) + "\nbase," + ",".join(fmt(v) for v in row) + "\n")
    return ["maxima.csv"], {"engine": _engine_name(engine), "window": m.window}


def _plan(args, cfg, default_axis=None) -> SweepPlan:
    axis = args.axis or default_axis
    if axis is None:
        raise ConfigError("sweep needs --axis")
    return SweepPlan(
        base=spec_from_config(cfg),
        axis=axis,
        points=_parse_points(args, axis),
        n_samples=cfg.get("n_samples", DEFAULT_SAMPLES),
        t_max=cfg.get("t_max"),
        engine=args.engine,
        seed=cfg.get("seed", 0),
    )


def _sweep_errors(table):
    errors = table.errors
    if errors:
        raise QBatteryError(f"{len(errors)} sweep point(s) failed: " + "; ".join(f"{k}: {v}" for k, v in errors.items()))


def cmd_sweep(args, cfg, out):
    table = run_sweep(_plan(args, cfg), jobs=args.jobs)
    atomic_write(out / "sweep.csv", table.csv_text())
    _sweep_errors(table)
    return ["sweep.csv"], {"axis": table.plan.axis}


def cmd_scaling(args, cfg, out):
    plan = _plan(args, cfg, default_axis="total_size")
    if plan.axis not in ("charger_size", "total_size"):
        raise ConfigError("scaling needs a size axis (charger_size or total_size)")
    table = run_sweep(plan, jobs=args.jobs)
    atomic_write(out / "scaling.csv", table.csv_text())
    _sweep_errors(table)
    x = np.array(plan.points, dtype=float)
    fits = {
        "E_max": fit_power_law(x, table.column("e_max")).to_json(),
        "P_max": fit_power_law(x, table.column("p_max")).to_json(),
        "inv_t_E": fit_power_law(x, 1.0 / table.column("t_e")).to_json(),
        "inv_t_P": fit_power_law(x, 1.0 / table.column("t_p")).to_json(),
    }
    write_json(out / "fit.json", fits)
    return ["scaling.csv", "fit.json"], {"axis": plan.axis}


def cmd_noise(args, cfg, out):
    base = spec_from_config(cfg)
    dj = cfg.get("delta_j")
    if not dj:
        raise ConfigError("noise needs delta_j")
    sizes = _parse_points(args, "total_size") if (args.points or args.log_range) else (base.n_b,)
    n_samples = cfg.get("n_samples", 31)
    window = (lambda spec: cfg["t_max"]) if "t_max" in cfg else None
    ens = noise_ensemble(base, sizes, dj, cfg.get("realizations", 11), seed=cfg.get("seed", 0),
                         n_samples=n_samples, window=window, jobs=args.jobs)
    atomic_write(out / "noise.csv", ens.csv_text())
    stats = {"delta_j": [], "size": [], "E_mean": [], "E_sem": [], "P_mean": [], "P_sem": [], "n": []}
    for (d, s), st in ens.stats.items():
        for key, val in (("delta_j", d), ("size", s), ("E_mean", st["energy"].mean), ("E_sem", st["energy"].sem),
                         ("P_mean", st["power"].mean), ("P_sem", st["power"].sem), ("n", st["power"].n_realizations)):
            stats[key].append(val)
    atomic_write(out / "noise_stats.csv", _csv(stats))
    write_json(out / "noise_fit.json", {fmt(d): {k: v.to_json() for k, v in e.items()} for d, e in ens.exponents.items()})
    if ens.failures:
        raise QBatteryError(f"{len(ens.failures)} realization(s) failed; see noise.csv")
    return ["noise.csv", "noise_stats.csv", "noise_fit.json"], {}


def cmd_parallel(args, cfg, out):
    spec = spec_from_config(cfg)
    pair = PairSpec(j_pair=spec.j_bc, v_b=spec.v_b, v_c=spec.v_c, n_pairs=spec.n_b)
    om = pair.omega
    t_default = 10.0 * math.pi / om if om else 1.0
    t = _times(cfg, t_default)
    e, p, s = parallel_dynamics(pair, t)
    atomic_write(out / "parallel.csv", _csv({"t": t, "E_B": e, "P_B": p, "eta_B": parallel_occupation(pair, t), "S_vN": s}))
    summary = {}
    if om and pair.v_b > 0:
        em, pm = parallel_maxima(pair)
        summary = {"E_max": em.value, "t_E": em.time, "P_max": pm.value, "t_P": pm.time}
    return ["parallel.csv"], {"maxima": summary}


def cmd_hp(args, cfg, out):
    spec = spec_from_config(cfg)
    hp = HpParams.from_spec(spec)
    summary = {"regime": hp.regime, "omega": hp.omega, "g": hp.g}
    if hp.regime == "oscillatory":
        em, pm = hp_maxima(hp)
        summary.update(E_max=em.value, t_E=em.time, P_max=pm.value, t_P=pm.time)
        t_default = 10.0 * em.time
    else:
        t_default = default_window(spec)
    sc = hp_scaling(spec)
    summary["scaling"] = {k: getattr(sc, k) for k in ("branch", "e_exp", "p_exp", "t_exp", "reason")}
    t = _times(cfg, t_default)
    e, p = hp_dynamics(hp, t)
    atomic_write(out / "hp.csv", _csv({"t": t, "E_B": e, "P_B": p, "n_B": hp_occupation(hp, t), "S_vN": hp_entanglement(hp, t)}))
    return ["hp.csv"], summary


def cmd_validate(args, cfg, out):
    results = run_validation()
    for r in results:
        print(r.line())
    lines = ["check,passed,seconds"] + [f"{r.name},{int(r.passed)},{fmt(r.seconds)}" for r in results]
    atomic_write(out / "validate.csv", "\n".join(lines) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise QBatteryError("validation failed: " + ", ".join(failed))
    return ["validate.csv"], {"checks": len(results)}


COMMANDS = {
    "dynamics": cmd_dynamics,
    "maxima": cmd_maxima,
    "sweep": cmd_sweep,
    "scaling": cmd_scaling,
    "noise": cmd_noise,
    "parallel": cmd_parallel,
    "hp": cmd_hp,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg, text = resolve_config(args)
        outputs, summary = COMMANDS[args.verb](args, cfg, out)
    except Exception as exc:
        code = EXIT_CONFIG if isinstance(exc, (ConfigError, OSError)) else EXIT_FAILURE
        record = {"verb": args.verb, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(record), file=sys.stderr)
        try:
            write_json(out / "error.json", record)
        except OSError:
            pass
        return code
    manifest = {
        "tool": "qbattery",
        "version": __version__,
        "verb": args.verb,
        "engine": args.engine,
        "jobs": args.jobs,
        "axis": args.axis,
        "points": args.points,
        "log_range": args.log_range,
        "resolved": cfg,
        "system": spec_from_config(cfg).as_dict() if {"n_b", "n_c"} <= cfg.keys() else None,
        "input_sha256": _input_hash(args, text, cfg),
        "outputs": outputs,
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    return 0


if __name__ == "__main__":
    sys.exit(main())
