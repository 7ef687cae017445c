"""Command-line interface: train, eval, compare, ingest-wifi."""

from __future__ import annotations

import argparse
import os
import sys

from .demand import (DemandRates, ingest_wifi_logs, load_demand_config,
                     parse_wifi_csv, write_od_csv)
from .env import EpisodeConfig
from .harness import (BenchmarkPlan, compare, format_compare_text, load_run_csv,
                      run_benchmark, write_aggregate_csv, write_compare_csv,
                      write_run_csv)
from .network import NetworkConfig, build_corridor, load_network_config, mini_config
from .ppo import PpoConfig, mini_ppo_config
from .train import train


def _network_config(args) -> NetworkConfig:
    if args.config:
        return load_network_config(args.config, mini=args.mini or None)
    if args.mini:
        return mini_config()
    return NetworkConfig()


def _add_network_args(parser) -> None:
    parser.add_argument("--config", help="network config file (key = value lines)")
    parser.add_argument("--mini", action="store_true",
                        help="desk-scale network (1 intersection + 2 mid-blocks)")
    parser.add_argument("--demand", help="demand config file (rates and weights)")


def _rates(args) -> DemandRates:
    return load_demand_config(args.demand) if args.demand else DemandRates()


def _cmd_train(args) -> int:
    net_cfg = _network_config(args)
    ppo_cfg = mini_ppo_config() if args.mini else PpoConfig()
    if args.steps:
        ppo_cfg.total_steps = args.steps
    if args.actors:
        ppo_cfg.n_actors = args.actors
    if args.lr:
        ppo_cfg.lr = args.lr
    if args.update_every:
        ppo_cfg.update_every = args.update_every
    result = train(net_cfg, ppo_cfg, rates=_rates(args), seed=args.seed,
                   checkpoint_path=args.checkpoint_out, csv_path=args.csv,
                   mode=args.mode, log_fn=print)
    print(f"trained {result.updates} updates over {result.sim_steps} simulation "
          f"steps -> {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    net_cfg = _network_config(args)
    network = build_corridor(net_cfg)
    scales = tuple(float(s) for s in args.scales.split(","))
    controllers = tuple(args.controller.split(","))
    plan = BenchmarkPlan(controllers=controllers, scales=scales,
                         runs_per_cell=args.runs, seed=args.seed,
                         checkpoint=args.checkpoint)
    trace = open(args.trace, "w") if args.trace else None
    metrics_log = open(args.metrics_log, "w") if args.metrics_log else None
    try:
        reports = run_benchmark(plan, network, rates=_rates(args),
                                episode=EpisodeConfig(), log_fn=print,
                                trace=trace, metrics_log=metrics_log)
    finally:
        if trace is not None:
            trace.close()
        if metrics_log is not None:
            metrics_log.close()
    os.makedirs(args.out_dir, exist_ok=True)
    write_run_csv(reports, os.path.join(args.out_dir, "runs.csv"))
    write_aggregate_csv(reports, os.path.join(args.out_dir, "aggregate.csv"))
    violations = sum(r.safety_violations for rep in reports for r in rep.runs)
    signalized_conflicts = sum(
        r.conflicts for rep in reports for r in rep.runs
        if rep.controller in ("fixed", "rl"))
    print(f"wrote {args.out_dir}/runs.csv and aggregate.csv")
    if violations or signalized_conflicts:
        print(f"SAFETY AUDIT FAILED: {violations} conflicting-green steps, "
              f"{signalized_conflicts} conflicts at signalized sites", file=sys.stderr)
        return 2
    return 0


def _cmd_compare(args) -> int:
    path = args.input
    if os.path.isdir(path):
        path = os.path.join(path, "runs.csv")
    reports = load_run_csv(path)
    rows = compare(reports)
    write_compare_csv(rows, args.out)
    print(format_compare_text(rows))
    print(f"wrote {args.out}")
    return 0


def _cmd_ingest_wifi(args) -> int:
    records = parse_wifi_csv(args.input)
    table = ingest_wifi_logs(records, seed=args.seed)
    write_od_csv(table, args.out)
    print(f"{len(records)} records -> {len(table)} OD pairs -> {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="corridor-rl",
                                     description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_train = sub.add_parser("train", help="train the signal-control policy")
    _add_network_args(p_train)
    p_train.add_argument("--steps", type=int,
                         help="simulation-step budget (warmup included)")
    p_train.add_argument("--actors", type=int, help="number of parallel actors")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--update-every", type=int,
                         help="aggregate action steps between updates")
    p_train.add_argument("--checkpoint-out", default="policy.ckpt")
    p_train.add_argument("--csv", help="training-curve CSV path")
    p_train.add_argument("--mode", choices=("sequential", "parallel"),
                         default="sequential")
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("eval", help="benchmark controllers")
    _add_network_args(p_eval)
    p_eval.add_argument("--controller", default="fixed,unsignalized,rl",
                        help="comma list from {fixed,unsignalized,rl}")
    p_eval.add_argument("--scales", default="0.5,0.75,1.0,1.25,1.5,1.75,2.0,2.25,2.5,2.75")
    p_eval.add_argument("--runs", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--checkpoint", help="policy checkpoint for the rl controller")
    p_eval.add_argument("--out-dir", default="eval_out")
    p_eval.add_argument("--trace", help="write per-step simulation trace to this file")
    p_eval.add_argument("--metrics-log",
                        help="write per-action-step JSON metrics (rl runs) to this file")
    p_eval.set_defaults(fn=_cmd_eval)

    p_cmp = sub.add_parser("compare", help="comparison table from a runs CSV")
    p_cmp.add_argument("--in", dest="input", required=True,
                       help="eval output directory or runs.csv path")
    p_cmp.add_argument("--out", default="compare.csv")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_wifi = sub.add_parser("ingest-wifi",
                            help="filter a Wi-Fi log CSV into an OD table")
    p_wifi.add_argument("--in", dest="input", required=True,
                        help="CSV with client_id,building_id,timestamp rows")
    p_wifi.add_argument("--out", default="od_table.csv")
    p_wifi.add_argument("--seed", type=int, default=0)
    p_wifi.set_defaults(fn=_cmd_ingest_wifi)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
