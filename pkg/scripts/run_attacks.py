"""Run a shipped scenario without attack, with the idealized-communication
attack and with the stochastic-communication attack, and print a comparison.

Usage: python scripts/run_attacks.py [default33|default123] [--horizon N] [--out DIR]
"""

import argparse
import time
from pathlib import Path

from evfdia.config import DATA_DIR, dump_resolved, from_dict, load_config, set_path, to_dict
from evfdia.sim import records_to_csv, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("scenario", nargs="?", default="default33")
    ap.add_argument("--horizon", type=int, default=None)
    ap.add_argument("--out", default=None, help="write slots.csv / metrics.json per mode here")
    args = ap.parse_args()
    base = load_config(DATA_DIR / f"{args.scenario}.yaml")
    if args.horizon:
        base = base.replace(horizon_slots=args.horizon)
    print(f"{'mode':<6} {'mape_vr %':>10} {'bdd pass %':>11} {'incidents':>10} {'seconds':>8}")
    for mode in ("none", "ic", "sc"):
        d = to_dict(base)
        set_path(d, "attack.mode", mode)
        cfg = from_dict(d)
        t0 = time.perf_counter()
        records, m = run_scenario(cfg)
        secs = time.perf_counter() - t0
        mape = "n/a" if m.mape_vr is None else f"{m.mape_vr:.2f}"
        print(f"{mode:<6} {mape:>10} {m.bdd_pass_rate:>11.2f} {m.undervoltage_incidents:>10d} {secs:>8.1f}")
        if args.out:
            out = Path(args.out) / mode
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.resolved.json").write_text(dump_resolved(cfg) + "\n")
            (out / "slots.csv").write_text(records_to_csv(records))
            (out / "metrics.json").write_text(m.to_json() + "\n")


if __name__ == "__main__":
    main()
