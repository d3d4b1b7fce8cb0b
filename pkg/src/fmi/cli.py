"""Command-line entry points: fmi-rendezvous, fmi-store, fmi-bench.

Also usable as ``python -m fmi.cli {rendezvous|store|bench} ...`` so foreign
runtimes can start the services without the console scripts installed.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bench import COLLECTIVE_KINDS, BenchmarkSpec, launch_world
from .communicator import parse_endpoint
from .mediated import StoreServer
from .perfmodel import CostQuery, exchange_report
from .profiles import (PRESETS, S3_TABLE4_DERIVED, TABLE2_PROFILES,
                       load_profiles, profile_by_name)
from .rendezvous import RendezvousServer
from .report import (emit_report, render_cost_csv, render_cost_figure,
                     render_cost_text, render_text)


def rendezvous_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fmi-rendezvous",
        description="Pairing coordinator for NAT hole punching.")
    parser.add_argument("--bind", default="0.0.0.0:7000",
                        metavar="ADDR:PORT")
    parser.add_argument("--hold-timeout-ms", type=int, default=30_000,
                        help="evict unmatched pairings after this long")
    args = parser.parse_args(argv)
    host, port = parse_endpoint(args.bind)
    server = RendezvousServer(host, port,
                              hold_timeout=args.hold_timeout_ms / 1000)
    print(f"rendezvous listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        print(f"pairings completed: {server.state.pairings_completed}, "
              f"timeouts: {server.state.timeouts}")
    return 0


def store_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fmi-store",
        description="Embedded metered key-value store emulating one channel.")
    parser.add_argument("--bind", default="0.0.0.0:7010", metavar="ADDR:PORT")
    parser.add_argument("--profile", default="s3",
                        choices=["s3", "dynamodb", "redis", "fast"],
                        help="latency/size/price profile to emulate")
    parser.add_argument("--jitter", action="store_true",
                        help="add +-10%% uniform noise to injected delays")
    args = parser.parse_args(argv)
    host, port = parse_endpoint(args.bind)
    if args.profile == "fast":
        # zero-latency variant for local testing of foreign clients
        from dataclasses import replace
        profile = replace(profile_by_name("redis"), alpha=0.0,
                          beta_inv=1e12, poll_floor=0.0, label="fast")
    else:
        profile = profile_by_name(args.profile)
    server = StoreServer(profile, host, port, jitter=args.jitter)
    print(f"store ({profile.label}) listening on "
          f"{server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        print(json.dumps(vars(server.ledger.snapshot())))
    return 0


def _bench_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmi-bench",
        description="Local benchmark fleet and cost reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--channel", default="direct",
                       choices=["direct", "s3", "dynamodb", "redis"])
        p.add_argument("--world-size", type=int, default=2)
        p.add_argument("--size", type=int, default=1, metavar="BYTES")
        p.add_argument("--reps", type=int, default=30)
        p.add_argument("--warmups", type=int, default=1)
        p.add_argument("--out", default=None, metavar="FILE.csv")
        p.add_argument("--format", default="csv", choices=["csv", "text"])
        p.add_argument("--plot", action="store_true",
                       help="also render a PNG next to the output file")
        p.add_argument("--auto-services", action="store_true", default=True)
        p.add_argument("--no-auto-services", dest="auto_services",
                       action="store_false")
        p.add_argument("--coordinator", default=None, metavar="ADDR:PORT")
        p.add_argument("--store", default=None, metavar="ADDR:PORT")

    common(sub.add_parser("pingpong", help="2-rank half round-trip latency"))
    p_many = sub.add_parser("one-to-many", help="single producer fan-out")
    common(p_many)
    p_many.add_argument("--receivers", type=int, default=8, metavar="K")
    p_coll = sub.add_parser("collective", help="barrier-synchronized collectives")
    common(p_coll)
    p_coll.add_argument("--collective", required=True,
                        choices=list(COLLECTIVE_KINDS))

    p_cost = sub.add_parser("cost-report", help="alpha-beta price/time table")
    p_cost.add_argument("--size", type=int, required=True, metavar="BYTES")
    p_cost.add_argument("--participants", type=int, default=2, metavar="P")
    p_cost.add_argument("--memory-gib", type=float, default=2.0, metavar="M")
    p_cost.add_argument("--reps", type=int, default=1, metavar="N")
    p_cost.add_argument("--preset", default="table2",
                        help="'table2' or a JSON file with custom profiles")
    p_cost.add_argument("--out", default=None, metavar="FILE.csv")
    p_cost.add_argument("--format", default="text", choices=["csv", "text"])
    p_cost.add_argument("--plot", action="store_true")
    return parser


def bench_main(argv=None) -> int:
    args = _bench_parser().parse_args(argv)
    if args.command == "cost-report":
        return _cost_report(args)

    kind = args.command.replace("-", "_")
    spec = BenchmarkSpec(
        kind=kind,
        world_size=(args.receivers + 1 if kind == "one_to_many"
                    else args.world_size),
        message_size=args.size,
        repetitions=args.reps,
        warmups=args.warmups,
        channel=args.channel,
        collective=getattr(args, "collective", None),
        receivers=getattr(args, "receivers", None),
    )
    kwargs = {"auto_services": args.auto_services}
    if args.coordinator:
        kwargs["coordinator"] = parse_endpoint(args.coordinator)
        kwargs["auto_services"] = False
    if args.store:
        kwargs["store"] = parse_endpoint(args.store)
        kwargs["auto_services"] = False
    result = launch_world(spec, **kwargs)
    if args.out:
        emit_report([result], args.out, fmt=args.format, plot=args.plot)
        print(f"wrote {args.out}")
    else:
        print(render_text([result]), end="")
    if result.failed_ranks:
        print(f"failed ranks: {sorted(result.failed_ranks.items())}",
              file=sys.stderr)
        return 1
    return 0


def _cost_report(args) -> int:
    if args.preset == "table2":
        profiles = list(TABLE2_PROFILES) + [S3_TABLE4_DERIVED]
    elif args.preset in PRESETS:
        profiles = [PRESETS[args.preset]]
    else:
        profiles = load_profiles(args.preset)
    query = CostQuery(participants=args.participants,
                      memory_gib=args.memory_gib, size=args.size,
                      reps=args.reps)
    reports = [exchange_report(query, p) for p in profiles]
    note = ("object-store rows appear under both bandwidth presets; "
            "the source figures disagree, see README")
    text = (render_cost_csv(reports, s3_note=note) if args.format == "csv"
            else render_cost_text(reports))
    if args.out:
        from pathlib import Path
        Path(args.out).write_text(text)
        if args.plot:
            render_cost_figure(reports, Path(args.out).with_suffix(".png"))
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    """Dispatcher for ``python -m fmi.cli <service> ...``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ("rendezvous", "store", "bench"):
        print("usage: python -m fmi.cli {rendezvous|store|bench} ...",
              file=sys.stderr)
        return 2
    return {"rendezvous": rendezvous_main, "store": store_main,
            "bench": bench_main}[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
