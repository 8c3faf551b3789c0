"""Command-line entry point: ``scfl <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from scfl import harness, incentive, privacy, training
from scfl.data import DataError, load_csv, partition_even


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _load(args) -> dict:
    cfg = harness.load_config(args.config)
    if getattr(args, "out", None):
        cfg["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg["training"]["workers"] = args.workers
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    res = harness.run_experiment(harness.build_experiment(cfg), args.kind)
    s = res.summary
    print(f"{s['kind']}: {s['rounds']} rounds, final train loss {s['final_train_loss']:.6g}, "
          f"gap {s['gap']:.6g}; outputs in {res.directory}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [int(v) if args.axis in ("tau", "coded_count_c") else float(v) for v in _floats(args.values)]
    spec = harness.SweepSpec(args.axis, tuple(values), args.repetitions)
    rows = harness.run_sweep(cfg, spec, kind=args.kind, workers=args.parallel)
    for row in rows:
        print(f"{args.axis}={row['value']}: final_test_loss {row['final_test_loss_mean']:.6g} "
              f"± {row['final_test_loss_sd']:.3g} over {row['runs']} runs ({row['failures']} failed)")
    return 1 if any(row["failures"] for row in rows) else 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    kinds = [k for k in args.kinds.replace(",", " ").split() if k]
    for row in harness.compare_baselines(cfg, kinds):
        print(f"{row['kind']}: final test loss {row['final_test_loss']:.6g}, train loss {row['final_train_loss']:.6g}")
    return 0


def cmd_privacy(args) -> int:
    ds = load_csv(args.data, args.d, args.o)
    devices = args.devices
    sigma = _floats(args.sigma)
    if len(sigma) == 1:
        sigma = sigma * devices
    if len(sigma) != devices:
        raise harness.ConfigError(f"--sigma: need 1 or {devices} values, got {len(sigma)}")
    part = partition_even(ds.m, devices)
    rows = privacy.device_table([part.local(ds, i)[0] for i in range(devices)], sigma, args.coded_count)
    _emit(args.out, ("device", "h2", "sigma2", "epsilon_bits"), rows)
    return 0


def _read_econ(path: str, c: int) -> tuple[list[incentive.DeviceEcon], list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"device", "mu", "h2"} - set(reader.fieldnames or [])
        if missing:
            raise harness.ConfigError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise harness.ConfigError(f"{path}: no devices")
    return [incentive.DeviceEcon(float(r["mu"]), float(r["h2"]), c) for r in rows], [r["device"] for r in rows]


def cmd_contract(args) -> int:
    econ, names = _read_econ(args.econ, args.coded_count)
    sorted_econ, order = incentive.sort_econ(econ)
    design = incentive.design_contract(sorted_econ, args.lam, sigma_min2=args.sigma_min2)
    con = design.contract
    rows = [{"device": names[order[pos]], "epsilon_bits": con.epsilons[pos], "sigma2": design.sigma2[pos],
             "reward": con.rewards[pos],
             "device_utility": incentive.device_utility(con.epsilons[pos], con.rewards[pos], con.mus[pos])}
            for pos in range(con.size)]
    _emit(args.out, ("device", "epsilon_bits", "sigma2", "reward", "device_utility"), rows)
    summary = [{"server_utility": design.server_utility, "total_reward": con.total_reward}]
    if args.out:
        harness.write_rows(Path(args.out).with_name(Path(args.out).stem + "_summary.csv"),
                           ("server_utility", "total_reward"), summary)
    else:
        _emit(None, ("server_utility", "total_reward"), summary)
    return 0


def cmd_lambda_table(args) -> int:
    econ, _ = _read_econ(args.econ, args.coded_count)
    sorted_econ, _ = incentive.sort_econ(econ)
    rows = incentive.lambda_table(sorted_econ, _floats(args.grid), sigma_min2=args.sigma_min2)
    _emit(args.out, ("lambda", "total_reward", "sigma2"), rows)
    return 0


def _emit(out, columns, rows) -> None:
    if out:
        harness.write_rows(Path(out), columns, rows)
        return
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([harness._fmt(row[c]) for c in columns])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scfl", description="Coded federated learning simulator and analysis tools")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_opts(p):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--workers", type=int, help="threads per training round")

    p = sub.add_parser("simulate", help="run one experiment")
    run_opts(p)
    p.add_argument("--kind", default="scfl", choices=training.KINDS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one axis over several values and seeds")
    run_opts(p)
    p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma- or space-separated values")
    p.add_argument("--repetitions", type=int, default=1, help="seeds per value")
    p.add_argument("--parallel", type=int, default=1, help="concurrent sweep points")
    p.add_argument("--kind", default="scfl", choices=training.KINDS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run several frameworks on identical seeds")
    run_opts(p)
    p.add_argument("--kinds", default="scfl,fedavg,codedfedl,dpcfl")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("privacy", help="per-device privacy budgets for a dataset CSV")
    p.add_argument("data")
    p.add_argument("--d", type=int, required=True, help="feature columns")
    p.add_argument("--o", type=int, default=1, help="label columns")
    p.add_argument("--devices", type=int, default=1, help="split rows evenly across this many devices")
    p.add_argument("--sigma", required=True, help="noise level(s) sigma^2, one or one per device")
    p.add_argument("--coded-count", type=int, default=100, help="coded rows c")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_privacy)

    for name, func, helptext in (("contract", cmd_contract, "design the optimal contract"),
                                 ("lambda-table", cmd_lambda_table, "total reward and noise across lambdas")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("econ", help="CSV with columns device,mu,h2")
        p.add_argument("--coded-count", type=int, default=100, help="coded rows c")
        p.add_argument("--sigma-min2", type=float, default=0.0, help="minimum noise level")
        p.add_argument("--out", help="output CSV (default stdout)")
        if name == "contract":
            p.add_argument("--lambda", dest="lam", type=float, required=True)
        else:
            p.add_argument("--grid", required=True, help="lambda values")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, training.ConfigError, training.DivergenceError, DataError,
            incentive.ContractError, privacy.PrivacyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
