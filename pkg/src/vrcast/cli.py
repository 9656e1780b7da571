"""Command line front end: validate configs, inspect partitions, run experiments."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .geometry import natural_groups
from .harness import (
    ConfigError,
    ExperimentConfig,
    SWEEPS,
    build_instance,
    load_config,
    records_to_csv,
    run_experiment,
    write_records_csv,
    write_records_json,
)

_INT_SWEEPS = ("K", "M", "tau")


def _parser():
    p = argparse.ArgumentParser(
        prog="vrcast",
        description="Power-minimizing multicast design for tiled 360-degree streaming",
    )
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate-config", help="parse a config file and report problems")
    v.add_argument("--config", required=True)

    pt = sub.add_parser("partition", help="print the tile partition of the configured scene")
    pt.add_argument("--config", required=True)

    sv = sub.add_parser("solve", help="solve a single channel realization")
    sv.add_argument("--config", required=True)
    sv.add_argument("--scenario", choices=("no_transcode", "transcode"))
    sv.add_argument("--scheme")
    sv.add_argument("--seed", type=int)

    ex = sub.add_parser("experiment", help="run a sweep and emit records")
    ex.add_argument("--config", required=True)
    ex.add_argument("--sweep", choices=[s for s in SWEEPS if s != "none"])
    ex.add_argument("--values", help="comma-separated sweep values")
    ex.add_argument("--draws", type=int)
    ex.add_argument("--seed", type=int)
    ex.add_argument("--out", help="CSV output path (default: stdout)")
    ex.add_argument("--json", dest="json_out", help="optional JSON mirror path")
    return p


def _cmd_validate(args):
    load_config(args.config)
    print("config ok")
    return 0


def _cmd_partition(args):
    cfg = load_config(args.config)
    inst = build_instance(cfg)
    part = inst.partition
    sizes = part.part_sizes()
    print(
        f"users={inst.n_users} grid={cfg.grid.u_h}x{cfg.grid.u_v} "
        f"fov={cfg.fov.f_h:g}x{cfg.fov.f_v:g}+{cfg.fov.margin:g}"
    )
    for s in part.index_family:
        print(f"cell users={','.join(map(str, s))} tiles={sizes[s]}")
    for (s, level), members in natural_groups(part, inst.r_map).items():
        print(
            f"group cell={','.join(map(str, s))} level={level} "
            f"decoders={','.join(map(str, members))}"
        )
    return 0


def _cmd_solve(args):
    cfg = load_config(args.config)
    overrides = {"sweep": "none", "sweep_values": (), "draws": 1}
    if args.scenario:
        overrides["scenario"] = args.scenario
    if args.scheme:
        overrides["scheme"] = (args.scheme,)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    for rec in run_experiment(cfg):
        print(f"scheme={rec.scheme} scenario={cfg.scenario} seed={cfg.seed}")
        print(f"objective_w={rec.avg_power_w!r}")
        for key in ("n_messages", "n_candidates", "transcode_power_w"):
            if key in rec.metadata:
                print(f"{key}={rec.metadata[key]}")
        if rec.flags:
            print(f"flags={';'.join(rec.flags)}")
    return 0


def _cmd_experiment(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.sweep:
        overrides["sweep"] = args.sweep
    if args.values is not None:
        sweep = args.sweep or cfg.sweep
        kind = int if sweep in _INT_SWEEPS else float
        try:
            overrides["sweep_values"] = tuple(
                kind(v.strip()) for v in args.values.split(",") if v.strip()
            )
        except ValueError:
            raise ConfigError("sweep_values", f"cannot parse {args.values!r} as {kind.__name__}s")
    if args.draws is not None:
        overrides["draws"] = args.draws
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = replace(cfg, **overrides)
    records = run_experiment(cfg)
    if args.out:
        write_records_csv(records, args.out)
        print(f"wrote {len(records)} records to {args.out}")
    else:
        sys.stdout.write(records_to_csv(records))
    if args.json_out:
        write_records_json(records, args.json_out)
        print(f"wrote JSON mirror to {args.json_out}")
    return 0


_COMMANDS = {
    "validate-config": _cmd_validate,
    "partition": _cmd_partition,
    "solve": _cmd_solve,
    "experiment": _cmd_experiment,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
