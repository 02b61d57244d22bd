"""Command-line front end.

    qmeasure timescales --config ref.cfg
    qmeasure dephase --config ref.cfg --out runs/deph
    qmeasure register --config ref.cfg --set sector_spin=-1 --out runs/reg
    qmeasure measure --config ref.cfg --set r_uu=0.64 --set r_ud_re=0.48 --out runs/meas
    qmeasure scan --config ref.cfg --set "sweep=n_spins=100:6400:4:log" --set probe=reduction_crossing
    qmeasure oracle-check
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import NUMERIC_KEYS, ConfigError, RunConfig
from .dephasing import amplitude_crossing_time, offdiagonal_trajectory
from .measurement import (
    IncompleteMeasurementError,
    RegimeError,
    RegistrationError,
    run_measurement,
    sample_readout,
)
from .model import PARAM_KEYS, ModelParams, compute_timescales, tau_reduction, validate_regime
from .oracle import oracle_check
from .registration import register

SCHEMAS = {
    "dephase.csv": "dephase-v1: t,abs_amplitude,envelope,product",
    "register.csv": "register-v1: t,mean_m,var_m",
    "registration_up.csv": "register-v1: t,mean_m,var_m",
    "registration_down.csv": "register-v1: t,mean_m,var_m",
    "snapshots.csv": "snapshots-v1: t,m,p",
    "readout.csv": "readout-v1: outcome",
    "scan.csv": "scan-v1: index,<key>,<probe columns>",
}

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUN = 0, 1, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_summary(path: Path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in data.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs) -> None:
    manifest = {
        "command": command,
        "config": cfg.resolved(),
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "schemas": {name: SCHEMAS[name] for name in outputs if name in SCHEMAS},
        "outputs": sorted(outputs),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_fmt)
        fh.write("\n")


def _outdir(cfg: RunConfig) -> Path | None:
    out = cfg.get("out")
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- subcommands

def cmd_timescales(cfg: RunConfig) -> int:
    params = cfg.params()
    report = validate_regime(params, cfg["margin"])
    ts = compute_timescales(params)
    print(report.to_text())
    for k, v in ts.as_dict().items():
        print(f"{k:>20s} = {v:.6g}")
    out = _outdir(cfg)
    if out is not None:
        data = dict(report.to_keyvalue())
        data.update({f"timescale.{k}": v for k, v in ts.as_dict().items()})
        write_summary(out / "summary.txt", data)
        (out / "regime.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        write_manifest(out, "timescales", cfg, ["summary.txt", "regime.txt"])
    return EXIT_OK


def _time_grid(cfg: RunConfig, params: ModelParams) -> np.ndarray:
    if "times" in cfg.values:
        times = np.asarray(cfg["times"], dtype=float)
    else:
        t_max = cfg.get("t_max")
        if t_max is None:
            t_max = 1.5 * math.pi / (2.0 * params.coupling_g) if params.coupling_g > 0 else 10.0
        times = np.linspace(0.0, t_max, cfg["n_samples"] + 1)
    if times.size == 0:
        raise ConfigError("empty time grid")
    if np.any(np.diff(times) < 0):
        raise ConfigError("time grid must be sorted ascending")
    return times


def cmd_dephase(cfg: RunConfig) -> int:
    params = cfg.params()
    traj = offdiagonal_trajectory(params, _time_grid(cfg, params), threshold=cfg["threshold"])
    out = _outdir(cfg)
    if out is not None:
        traj.to_csv(out / "dephase.csv")
        write_summary(out / "summary.txt", {
            "recurrence_time": traj.recurrence_time,
            "recurrence_value": traj.recurrence_value,
            "threshold": traj.threshold,
            "recurrence_suppressed": traj.recurrence_suppressed,
        })
        write_manifest(out, "dephase", cfg, ["dephase.csv", "summary.txt"])
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["t", "abs_amplitude", "envelope", "product"])
        for row in zip(traj.times, traj.abs_amplitude, traj.envelope, traj.product):
            w.writerow([repr(float(v)) for v in row])
    state = "suppressed" if traj.recurrence_suppressed else "SURVIVES"
    print(f"first recurrence at t = {traj.recurrence_time:.6g}: {traj.recurrence_value:.3e} ({state})",
          file=sys.stderr)
    return EXIT_OK if traj.recurrence_suppressed else EXIT_FAIL


def cmd_register(cfg: RunConfig) -> int:
    params = cfg.params()
    t_max = cfg.get("t_max") or cfg.get("t_final")
    if t_max is None:
        ts = compute_timescales(params)
        if not math.isfinite(ts.tau_reg):
            raise ConfigError("set t_max: no registration timescale for these parameters")
        t_max = 4.0 * ts.tau_reg
    times = np.linspace(0.0, t_max, cfg["n_samples"] + 1)
    res = register(params, cfg["sector_spin"], t_max, times,
                   switch_off=cfg.get("t_switch_off"),
                   snapshot_times=cfg.get("snapshot_times", []))
    summary = {
        "sector_spin": res.sector_spin,
        "target_m": res.target if res.target is not None else math.nan,
        "threshold_level": res.threshold_level,
        "measured_registration_time": res.measured_registration_time,
        "registered": res.registered,
        "final_mean_m": res.mean_m[-1],
        "final_var_m": res.var_m[-1],
        "unimodal_in_correct_well": res.unimodal_in_correct_well,
        "wrong_well_mass": res.wrong_well_mass,
        "max_trace_error": res.max_trace_error,
        "min_probability": res.min_probability,
        "steps": res.steps,
    }
    out = _outdir(cfg)
    if out is not None:
        res.to_csv(out / "register.csv")
        outputs = ["register.csv", "summary.txt"]
        if res.snapshots:
            res.snapshots_to_csv(out / "snapshots.csv")
            outputs.append("snapshots.csv")
        write_summary(out / "summary.txt", summary)
        write_manifest(out, "register", cfg, outputs)
    for k, v in summary.items():
        print(f"{k} = {_fmt(v)}")
    return EXIT_OK if res.registered else EXIT_FAIL


def cmd_measure(cfg: RunConfig, force: bool = False) -> int:
    params = cfg.params()
    spin = cfg.spin()
    state, report, record = run_measurement(spin, params, cfg.schedule(), margin=cfg["margin"],
                                            force=force, threshold=cfg["threshold"])
    readout = sample_readout(state, cfg["n_readout"], cfg["seed"], threshold=cfg["threshold"])
    record.readout = readout
    summary = dict(report.as_dict())
    summary.update(record.summary())
    summary.update(record.regime.to_keyvalue())
    out = _outdir(cfg)
    if out is not None:
        record.registration_up.to_csv(out / "registration_up.csv")
        record.registration_down.to_csv(out / "registration_down.csv")
        record.dephasing.to_csv(out / "dephase.csv")
        readout.to_csv(out / "readout.csv")
        write_summary(out / "summary.txt", summary)
        write_manifest(out, "measure", cfg, ["registration_up.csv", "registration_down.csv",
                                             "dephase.csv", "readout.csv", "summary.txt"])
    for k in ("p_up", "p_down", "offdiag_residual", "entropy_initial", "entropy_final",
              "measured.tau_reg_up", "readout.f_up", "complete"):
        print(f"{k} = {_fmt(summary[k])}")
    return EXIT_OK


# ---------------------------------------------------------------- scan

PROBES = ("reduction_crossing", "registration", "timescales")


def parse_sweep(text: str) -> tuple:
    """``key=start:stop:num[:log]`` or ``key=v1,v2,...`` -> (key, values)."""
    if not text or "=" not in text:
        raise ConfigError("sweep must look like key=start:stop:num[:log] or key=v1,v2,...")
    key, rng = (s.strip() for s in text.split("=", 1))
    if key not in NUMERIC_KEYS:
        raise ConfigError(f"cannot sweep non-numeric key '{key}'")
    try:
        if ":" in rng:
            parts = rng.split(":")
            if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] not in ("lin", "log")):
                raise ValueError
            start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
            if num < 1:
                raise ValueError
            log = len(parts) == 4 and parts[3] == "log"
        else:
            values = np.array([float(v) for v in rng.split(",") if v.strip()])
            if values.size == 0:
                raise ValueError
    except ValueError:
        raise ConfigError(f"cannot parse sweep range {rng!r}") from None
    if ":" in rng:
        if stop < start:
            raise ConfigError(f"sweep bounds reversed: {start:g} > {stop:g}")
        if log and start <= 0:
            raise ConfigError("log sweep needs a positive start")
        if log:
            values = np.geomspace(start, stop, num) if num > 1 else np.array([start])
        else:
            values = np.linspace(start, stop, num)
    if key == "n_spins":
        values = np.rint(values).astype(int)
    return key, values.tolist()


def _probe_point(args):
    index, key, value, base, probe = args
    values = dict(base)
    values[key] = value
    params = ModelParams(**{k: values[k] for k in PARAM_KEYS})
    row = {"index": index, key: value}
    if probe == "reduction_crossing":
        t_c = amplitude_crossing_time(params.n_spins, params.coupling_g)
        row.update(t_cross=t_c, tau_red=tau_reduction(params))
    elif probe == "registration":
        ts = compute_timescales(params)
        t_max = values.get("t_max") or 4.0 * ts.tau_reg
        res = register(params, values.get("sector_spin", 1), t_max, [0.0, t_max])
        row.update(measured_tau_reg=res.measured_registration_time, formula_tau_reg=ts.tau_reg,
                   final_mean_m=res.mean_m[-1], well_std=res.well_std(),
                   wrong_well_mass=res.wrong_well_mass)
    else:
        ts = compute_timescales(params)
        row.update(ts.as_dict())
        row["regime_ok"] = validate_regime(params, values.get("margin", 10.0)).overall
    return row


def run_scan(cfg: RunConfig, workers: int | None = None) -> list:
    key, values = parse_sweep(cfg.get("sweep", ""))
    probe = cfg.get("probe", "timescales")
    if probe not in PROBES:
        raise ConfigError(f"unknown probe {probe!r}; choose from {', '.join(PROBES)}")
    cfg.params()  # every model key must be present
    base = cfg.resolved()
    tasks = [(i, key, v, base, probe) for i, v in enumerate(values)]
    workers = workers or cfg.get("workers") or 1
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            rows = list(pool.map(_probe_point, tasks))
    else:
        rows = [_probe_point(t) for t in tasks]
    return sorted(rows, key=lambda r: r["index"])


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def cmd_scan(cfg: RunConfig) -> int:
    rows = run_scan(cfg)
    key, _ = parse_sweep(cfg["sweep"])
    cols = list(rows[0].keys())
    out = _outdir(cfg)
    summary = {"sweep": cfg["sweep"], "probe": cfg.get("probe", "timescales"), "points": len(rows)}
    if summary["probe"] == "reduction_crossing" and len(rows) > 1:
        summary["loglog_slope"] = loglog_slope([r[key] for r in rows], [r["t_cross"] for r in rows])
    stream = open(out / "scan.csv", "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        w = csv.writer(stream)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    finally:
        if out:
            stream.close()
    if out is not None:
        write_summary(out / "summary.txt", summary)
        write_manifest(out, "scan", cfg, ["scan.csv", "summary.txt"])
    for k, v in summary.items():
        print(f"{k} = {_fmt(v)}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig) -> int:
    rows = oracle_check(seed=cfg["seed"])
    width = max(len(r[0]) for r in rows)
    print(f"{'check':<{width}s}  {'max error':>10s}  {'tol':>7s}  result")
    for name, err, tol, ok in rows:
        print(f"{name:<{width}s}  {err:10.3e}  {tol:7.0e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(r[3] for r in rows) else EXIT_FAIL


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "timescales": cmd_timescales,
    "dephase": cmd_dephase,
    "register": cmd_register,
    "measure": cmd_measure,
    "scan": cmd_scan,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmeasure", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat key = value file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable, last wins)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="run outside the validated regime")
        p.add_argument("--margin", type=float, help="factor used for each '>>' in the regime check")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.build(args.config, args.set, out=args.out, seed=args.seed, margin=args.margin)
        if args.command == "measure":
            return cmd_measure(cfg, force=args.force)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegimeError as exc:
        print(f"error: {exc} (use --force to run anyway)", file=sys.stderr)
        return EXIT_USAGE
    except (RegistrationError, IncompleteMeasurementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
