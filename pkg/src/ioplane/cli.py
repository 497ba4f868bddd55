"""Command-line entry point.

Two commands: `control` runs a standalone control plane against a policy
config file until interrupted, and `experiment` runs one of the three
harness experiments end to end, writing a CSV trace plus a JSON manifest
per run.  With --check, an experiment runs the mode pair the assertions
need and the exit code reports the verdict: 0 only when the run finished
and every check passed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from dataclasses import asdict, replace

from .clock import RealClock
from .control import (
    ConfigError,
    ControlServer,
    StageRegistry,
    load_policy_config,
    run_control_loop,
)
from .harness import checks, lsm, microbench, tenants

_LSM_MODES = {
    "baseline": lsm.BASELINE,
    "paio": lsm.PAIO,
    "paio_tail_latency": lsm.PAIO,
}
_TENANT_MODES = {
    "baseline": tenants.BASELINE,
    "static": tenants.STATIC,
    "static_limit": tenants.STATIC,
    "paio": tenants.PAIO,
    "paio_fair_share": tenants.PAIO,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "control":
        return _cmd_control(args)
    return _cmd_experiment(args)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ioplane",
        description="Software-defined storage data plane: control plane and experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    control = sub.add_parser("control", help="run a control plane until interrupted")
    control.add_argument("--config", required=True, help="policy config file")
    control.add_argument("--socket", help="override the config's socket")
    control.add_argument("--loop-interval", type=int, metavar="MS",
                         help="override the config's loop interval")

    experiment = sub.add_parser("experiment", help="run one desk-scale experiment")
    experiment.add_argument("kind", choices=["lsm", "tenants", "microbench"])
    experiment.add_argument("--mode", help="experiment mode (kind-specific)")
    experiment.add_argument("--seed", type=int, default=1)
    experiment.add_argument("--scale", type=float, help="size/rate scale factor")
    experiment.add_argument("--out", default="runs", help="output directory")
    experiment.add_argument("--check", action="store_true",
                            help="run the acceptance pair and verify assertions")
    experiment.add_argument("--loop-interval", type=int, metavar="MS")
    experiment.add_argument("--channels", default="1,4,16",
                            help="microbench channel counts, comma separated")
    experiment.add_argument("--request-size", type=int, default=0,
                            help="microbench request size in bytes")
    experiment.add_argument("--duration", type=float, default=1.0,
                            help="microbench seconds per configuration")
    return parser


# -- control -----------------------------------------------------------------


def _cmd_control(args) -> int:
    try:
        setup = load_policy_config(args.config)
    except (ConfigError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.socket:
        setup = replace(setup, socket=args.socket)
    if args.loop_interval:
        setup = replace(setup, loop_interval_s=args.loop_interval / 1000)

    policy = setup.make_policy()
    registry = StageRegistry()
    telemetry = None
    if setup.telemetry_path:
        telemetry = open(setup.telemetry_path, "w", encoding="utf-8")
    try:
        server = ControlServer(setup.socket, registry, policy)
    except OSError as exc:
        if telemetry:
            telemetry.close()
        print(f"cannot listen on {setup.socket}: {exc}", file=sys.stderr)
        return 2
    print(f"control plane ready on {setup.socket} "
          f"({setup.kind}, loop {setup.loop_interval_s * 1000:.0f} ms)")
    stop = threading.Event()
    try:
        run_control_loop(policy, registry, RealClock(),
                         setup.loop_interval_s, stop, telemetry)
    except KeyboardInterrupt:
        print("interrupted, shutting down")
    finally:
        stop.set()
        server.close()
        registry.close()
        if telemetry:
            telemetry.flush()
            telemetry.close()
    return 0


# -- experiments -------------------------------------------------------------


def _cmd_experiment(args) -> int:
    if args.kind == "lsm":
        return _run_lsm(args)
    if args.kind == "tenants":
        return _run_tenants(args)
    return _run_microbench(args)


def _write_run(out_dir: str, stem: str, rows, manifest: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", encoding="utf-8") as handle:
        handle.write("t,metric,series,value\n")
        for t, metric, series, value in rows:
            handle.write(f"{t:.6f},{metric},{series},{value:.6f}\n")
    with open(os.path.join(out_dir, f"{stem}.manifest.json"), "w",
              encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    return csv_path


def _manifest(kind: str, mode: str, cfg) -> dict:
    return {"kind": kind, "mode": mode, "config": asdict(cfg)}


def _report(outcomes) -> int:
    for outcome in outcomes:
        print(outcome.line())
    return 0 if all(o.passed for o in outcomes) else 1


def _lsm_config(args) -> lsm.LsmSimConfig:
    cfg = lsm.LsmSimConfig(seed=args.seed)
    if args.scale:
        cfg = replace(cfg, scale=args.scale)
    if args.loop_interval:
        cfg = replace(cfg, loop_interval_s=args.loop_interval / 1000)
    return cfg


def _run_lsm(args) -> int:
    cfg = _lsm_config(args)
    if args.check:
        base = lsm.run_lsm_experiment(cfg, lsm.BASELINE)
        paio = lsm.run_lsm_experiment(cfg, lsm.PAIO)
        for result in (base, paio):
            path = _write_run(args.out, f"lsm_{result.mode}_seed{cfg.seed}",
                              result.csv_rows(), _manifest("lsm", result.mode, cfg))
            print(f"{result.mode}: {len(result.ops)} ops, "
                  f"p99 {result.p(0.99) / 1e6:.1f} ms -> {path}")
        return _report(
            [checks.check_lsm_stall_invariant(base)]
            + checks.check_lsm_improvement(base, paio)
        )
    mode = _pick_mode(args.mode, _LSM_MODES, "baseline")
    if mode is None:
        print(f"unknown lsm mode {args.mode!r}", file=sys.stderr)
        return 2
    result = lsm.run_lsm_experiment(cfg, mode)
    path = _write_run(args.out, f"lsm_{mode}_seed{cfg.seed}",
                      result.csv_rows(), _manifest("lsm", mode, cfg))
    print(f"{mode}: {len(result.ops)} ops, mean {result.mean_ops_per_s:.0f} ops/s, "
          f"p99 {result.p(0.99) / 1e6:.1f} ms, "
          f"stalled {result.stall_time_ns / 1e9:.1f} s -> {path}")
    return 0


def _tenant_config(args) -> tenants.TenantSimConfig:
    cfg = tenants.TenantSimConfig(seed=args.seed)
    if args.scale:
        cfg = replace(cfg, scale=args.scale)
    if args.loop_interval:
        cfg = replace(cfg, loop_interval_s=args.loop_interval / 1000)
    return cfg


def _run_tenants(args) -> int:
    cfg = _tenant_config(args)
    if args.check:
        static = tenants.run_tenant_experiment(cfg, tenants.STATIC)
        paio = tenants.run_tenant_experiment(cfg, tenants.PAIO)
        for result in (static, paio):
            path = _write_run(args.out, f"tenants_{result.mode}_seed{cfg.seed}",
                              result.csv_rows(),
                              _manifest("tenants", result.mode, cfg))
            print(f"{result.mode}: completions "
                  + " ".join(f"{n}@{t:.0f}s" for n, t in sorted(result.completions_s.items()))
                  + f" -> {path}")
        return _report(
            checks.check_tenant_fairness(paio)
            + [checks.check_tenant_phases(paio),
               checks.check_tenant_static_contrast(static, paio)]
        )
    mode = _pick_mode(args.mode, _TENANT_MODES, "baseline")
    if mode is None:
        print(f"unknown tenants mode {args.mode!r}", file=sys.stderr)
        return 2
    result = tenants.run_tenant_experiment(cfg, mode)
    path = _write_run(args.out, f"tenants_{mode}_seed{cfg.seed}",
                      result.csv_rows(), _manifest("tenants", mode, cfg))
    last = max(result.completions_s.values())
    print(f"{mode}: {len(cfg.tenants)} instances done by t={last:.0f}s -> {path}")
    return 0


def _run_microbench(args) -> int:
    try:
        counts = [int(part) for part in args.channels.split(",") if part.strip()]
    except ValueError:
        print(f"bad --channels value {args.channels!r}", file=sys.stderr)
        return 2
    if args.check:
        cores = os.cpu_count() or 1
        top = min(cores, 16)
        sweep_counts = sorted({k for k in (1, 2, 4, 8, 16) if k <= top})
        sweep = microbench.run_microbench_sweep(sweep_counts, 0, args.duration)
        payload_run = microbench.run_microbench(1, 128 * 1024, args.duration)
        rows = _microbench_rows(sweep + [payload_run])
        path = _write_run(args.out, "microbench_check", rows,
                          {"kind": "microbench", "channels": sweep_counts,
                           "duration_s": args.duration})
        print(f"microbench sweep {sweep_counts} -> {path}")
        return _report(checks.check_microbench(sweep, payload_run))
    results = microbench.run_microbench_sweep(counts, args.request_size, args.duration)
    stem = f"microbench_{args.request_size}B"
    path = _write_run(args.out, stem, _microbench_rows(results),
                      {"kind": "microbench", "channels": counts,
                       "request_size": args.request_size,
                       "duration_s": args.duration})
    for result in results:
        print(f"{result.channels} channels: {result.ops_per_s / 1e3:.0f} kops/s, "
              f"p50 {result.p50_ns / 1e3:.1f} us, p99 {result.p99_ns / 1e3:.1f} us")
    print(path)
    return 0


def _microbench_rows(results) -> list[tuple[float, str, str, float]]:
    rows = []
    for result in results:
        series = f"{result.request_size}B"
        rows.append((float(result.channels), "ops_per_s", series, result.ops_per_s))
        rows.append((float(result.channels), "bytes_per_s", series, result.bytes_per_s))
        rows.append((float(result.channels), "p50_ns", series, float(result.p50_ns)))
        rows.append((float(result.channels), "p99_ns", series, float(result.p99_ns)))
    return rows


def _pick_mode(raw: str | None, table: dict[str, str], default: str) -> str | None:
    if raw is None:
        raw = default
    return table.get(raw)


if __name__ == "__main__":
    sys.exit(main())
