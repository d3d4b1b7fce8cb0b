"""Worker entry point spawned by the launcher, one process per rank.

Group membership comes from FMI_* environment variables; benchmark
parameters from argv. The worker joins, runs its benchmark body, and writes
a JSON record with its samples (or its failure) for the launcher to merge.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import BenchmarkSpec, run_benchmark
from .communicator import CommState, CommunicatorConfig, join
from .core import FmiError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fmi-worker")
    parser.add_argument("--kind", required=True)
    parser.add_argument("--size", type=int, default=1)
    parser.add_argument("--reps", type=int, default=30)
    parser.add_argument("--warmups", type=int, default=1)
    parser.add_argument("--collective", default=None)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    config = CommunicatorConfig.from_env()
    spec = BenchmarkSpec(
        kind=args.kind,
        world_size=config.world_size,
        message_size=args.size,
        repetitions=args.reps,
        warmups=args.warmups,
        channel="direct" if config.channel.kind == "direct" else "mediated",
        collective=args.collective,
        receivers=config.world_size - 1 if args.kind == "one_to_many" else None,
    )

    record = {"rank": config.rank, "samples": [], "error": None,
              "aborted": False}
    comm = None
    code = 0
    try:
        comm = join(config)
        record["samples"] = run_benchmark(comm, spec)
    except FmiError as e:
        record["error"] = {"kind": e.kind.value, "detail": e.detail}
        code = 1
    finally:
        if comm is not None:
            record["aborted"] = comm.state == CommState.ABORTED
            comm.close()
        Path(args.out).write_text(json.dumps(record))
    return code


if __name__ == "__main__":
    sys.exit(main())
