"""Command-line entry point.

    evfdia run      --config scenario.yaml --out results/ [--seed N]
    evfdia sweep    --config scenario.yaml --grid grid.yaml --out results/ [--jobs N]
    evfdia validate --config scenario.yaml
    evfdia oracle   --feeder ieee33 [--load-scale 1.0]

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime
failure. Nothing is written when validation fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, dump_resolved, from_dict, load_config, set_path, to_dict
from .feeder import FeederError, PowerFlowError, ac_power_flow, build_linear_model, linear_power_flow, load_feeder
from .sim import Scenario, records_to_csv, run_scenario

log = logging.getLogger("evfdia")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _resolve(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        if not key or not _:
            raise ConfigError(item, "expected key=value")
        d = to_dict(cfg)
        set_path(d, key, yaml.safe_load(raw))
        cfg = from_dict(d)
    # building the scenario catches placement and model errors before any output
    try:
        Scenario(cfg)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("scenario", str(e)) from None
    return cfg


def _write_run(out: Path, cfg, records, metrics):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(dump_resolved(cfg) + "\n")
    (out / "slots.csv").write_text(records_to_csv(records))
    (out / "metrics.json").write_text(metrics.to_json() + "\n")


def _progress(quiet):
    if quiet:
        return None

    def report(t, rec):
        if rec.error:
            log.warning("slot %d failed: %s", t, rec.error)
        elif t % 24 == 0:
            log.info("slot %d: min v %.4f, bdd %s", t, rec.min_voltage, "pass" if rec.bdd_pass else "fail")
    return report


def cmd_run(args) -> int:
    cfg = _resolve(args)
    records, metrics = run_scenario(cfg, progress=_progress(args.quiet))
    _write_run(Path(args.out), cfg, records, metrics)
    if not args.quiet:
        print(_summary_line(cfg.name, metrics))
    return EXIT_OK


def _summary_line(name, m):
    mape = "n/a" if m.mape_vr is None else f"{m.mape_vr:.3f}"
    return (f"{name}: mape_vr={mape}% incidents={m.undervoltage_incidents} "
            f"bdd_pass={m.bdd_pass_rate:.2f}% failed_slots={m.failed_slots}")


def _grid_points(grid: dict):
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid", "empty grid")
    keys = sorted(grid)
    values = []
    for k in keys:
        v = grid[k]
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid.{k}", "expected a non-empty list of values")
        values.append(v)
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _point_name(i, point):
    parts = [f"{k.split('.')[-1]}={v}" for k, v in point.items()]
    safe = "_".join(parts).replace("/", "-").replace(" ", "")
    return f"{i:03d}_{safe}"


def _run_point(cfg_dict, out):
    """Run one grid point; returns (metrics or None, error message)."""
    try:
        cfg = from_dict(cfg_dict)
        records, metrics = run_scenario(cfg)
        _write_run(Path(out), cfg, records, metrics)
        return metrics, ""
    except Exception as e:  # a failing point is reported, the sweep goes on
        return None, f"{type(e).__name__}: {e}"


def cmd_sweep(args) -> int:
    base = _resolve(args)
    try:
        grid = yaml.safe_load(Path(args.grid).read_text())
    except OSError as e:
        raise ConfigError("grid", f"cannot read {args.grid}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError("grid", f"parse error: {e}") from None
    points = _grid_points(grid)
    configs = []
    for point in points:
        d = to_dict(base)
        for k, v in point.items():
            set_path(d, k, v)
        configs.append(to_dict(from_dict(d)))  # validate every point before running any
    out = Path(args.out)
    dirs = [out / _point_name(i, p) for i, p in enumerate(points)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_run_point, configs, dirs))
    else:
        results = [_run_point(c, d) for c, d in zip(configs, dirs)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = sorted(points[0])
    w.writerow(["point"] + keys + ["mape_vr", "undervoltage_incidents", "bdd_pass_rate", "failed_slots", "error"])
    failed = 0
    for d, p, (m, err) in zip(dirs, points, results):
        vals = [d.name] + [p[k] for k in keys]
        if m is None:
            failed += 1
            w.writerow(vals + ["", "", "", "", err])
            log.error("point %s failed: %s", d.name, err)
            continue
        w.writerow(vals + ["" if m.mape_vr is None else f"{m.mape_vr:.12g}", m.undervoltage_incidents,
                           f"{m.bdd_pass_rate:.12g}", m.failed_slots, ""])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_summary.csv").write_text(buf.getvalue())
    if not args.quiet:
        print(buf.getvalue(), end="")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_validate(args) -> int:
    cfg = _resolve(args)
    if not args.quiet:
        print(dump_resolved(cfg))
    return EXIT_OK


def cmd_oracle(args) -> int:
    """Linear vs AC power flow on a feeder at a uniform load level."""
    from .config import ScenarioConfig
    path = ScenarioConfig(feeder=args.feeder).feeder_path()
    f = load_feeder(path)
    lin = build_linear_model(f)
    p = -args.load_scale * f.load_p[1:]
    q = -args.load_scale * f.load_q[1:]
    ac = ac_power_flow(f, p, q)
    li = linear_power_flow(lin, p, q)
    err = np.abs(li.v - ac.v)
    print(json.dumps({
        "feeder": f.name, "buses": f.n_bus, "load_scale": args.load_scale,
        "ac_min_voltage": ac.min_voltage, "ac_min_bus": int(np.argmin(ac.v)) + 1,
        "max_abs_dv": float(err.max()), "mean_abs_dv": float(err.mean()),
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evfdia", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="scenario YAML or JSON")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. attack.mode=sc (repeatable)")
        p.add_argument("--quiet", action="store_true")
        if out:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--jobs", type=int, default=1, help="worker processes (sweeps)")

    common(sub.add_parser("run", help="run one scenario"))
    sw = sub.add_parser("sweep", help="run a grid of scenarios")
    common(sw)
    sw.add_argument("--grid", required=True, help="YAML mapping dotted keys to value lists")
    common(sub.add_parser("validate", help="check a config and print its resolved form"), out=False)
    orc = sub.add_parser("oracle", help="compare linear and AC power flow on a feeder")
    orc.add_argument("--feeder", default="ieee33")
    orc.add_argument("--load-scale", type=float, default=1.0)
    orc.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate, "oracle": cmd_oracle}[args.command]
    try:
        return handler(args)
    except (ConfigError, FeederError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PowerFlowError, RuntimeError, OSError, np.linalg.LinAlgError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
