"""Benchmark suite plus the local multi-process world launcher.

The launcher stands in for a cloud invoker: it starts the rendezvous and/or
store services in-process, spawns one OS process per rank with the group
wired through environment variables, merges the per-rank sample files, and
prices mediated runs from the store's meter ledger. Workers are processes,
not threads, so they exercise real sockets and share nothing.
"""

from __future__ import annotations

import json
import os
import statistics
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from .communicator import (ENV_CHANNEL, ENV_COMM_NAME, ENV_COORDINATOR,
                           ENV_EPOCH, ENV_JOIN_TIMEOUT_MS, ENV_OP_TIMEOUT_MS,
                           ENV_RANK, ENV_STORE, ENV_WORLD_SIZE, Communicator)
from .core import INT32, ProtocolViolation, buffer_of
from .mediated import StoreServer, metered_cost
from .profiles import profile_by_name
from .rendezvous import RendezvousServer
from .report import BenchmarkResult

COLLECTIVE_KINDS = ("bcast", "barrier", "gather", "scatter", "reduce",
                    "allreduce", "scan")
ROOT_TOTAL_INTS = 5000  # gather receives / scatter sends this many in total


@dataclass
class BenchmarkSpec:
    kind: str                      # pingpong | one_to_many | collective
    world_size: int
    message_size: int = 1
    repetitions: int = 30
    warmups: int = 1
    channel: str = "direct"
    collective: str | None = None
    receivers: int | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ProtocolViolation("repetitions must be >= 1")
        if self.message_size < 1:
            raise ProtocolViolation("message size must be >= 1")
        if self.kind == "pingpong" and self.world_size != 2:
            raise ProtocolViolation("pingpong needs exactly 2 ranks")
        if self.kind == "one_to_many":
            if not self.receivers or self.receivers < 1:
                raise ProtocolViolation("one_to_many needs >= 1 receiver")
            if self.world_size != self.receivers + 1:
                raise ProtocolViolation("one_to_many world must be receivers + 1")
        if self.kind == "collective" and self.collective not in COLLECTIVE_KINDS:
            raise ProtocolViolation(f"unknown collective {self.collective!r}")


# -- benchmark bodies (run inside a worker process) -------------------------

def pingpong(comm: Communicator, size: int, reps: int,
             warmups: int = 1) -> list[float]:
    """Rank 0 sends, rank 1 echoes; samples are half round-trip seconds."""
    if comm.world_size != 2:
        raise ProtocolViolation("pingpong needs exactly 2 ranks")
    if size < 1:
        raise ProtocolViolation("message size must be >= 1")
    payload = b"\x00" * size
    samples = []
    if comm.rank == 0:
        for _ in range(warmups + reps):
            t0 = time.perf_counter()
            comm.send_bytes(1, payload)
            comm.recv_bytes(1)
            samples.append((time.perf_counter() - t0) / 2)
    else:
        for _ in range(warmups + reps):
            comm.send_bytes(0, comm.recv_bytes(0))
    return samples[warmups:]


def one_to_many(comm: Communicator, size: int, reps: int,
                warmups: int = 1) -> list[float]:
    """Rank 0 pushes the payload to every receiver per repetition, no tree;
    each sample is the time until all receivers acknowledged."""
    receivers = comm.world_size - 1
    if receivers < 1:
        raise ProtocolViolation("one_to_many needs >= 1 receiver")
    payload = b"\x00" * size
    samples = []
    if comm.rank == 0:
        for _ in range(warmups + reps):
            t0 = time.perf_counter()
            for dst in range(1, comm.world_size):
                comm.send_bytes(dst, payload)
            for src in range(1, comm.world_size):
                comm.recv_bytes(src)
            samples.append(time.perf_counter() - t0)
    else:
        for _ in range(warmups + reps):
            comm.recv_bytes(0)
            comm.send_bytes(0, b"\x01")
    return samples[warmups:]


def _collective_call(comm: Communicator, kind: str):
    """Workload shapes mirror the microbenchmark setup: reductions move one
    integer per rank, the rooted pair moves ROOT_TOTAL_INTS in total."""
    from .core import SUM
    n = comm.world_size
    if kind == "barrier":
        return lambda: comm.barrier(), lambda out: True
    if kind in ("allreduce", "reduce", "scan"):
        buf = buffer_of([1], INT32)
        if kind == "allreduce":
            return (lambda: comm.allreduce(buf, SUM),
                    lambda out: out.values() == [n])
        if kind == "reduce":
            return (lambda: comm.reduce(buf, SUM, 0),
                    lambda out: comm.rank != 0 or out.values() == [n])
        return (lambda: comm.scan(buf, SUM),
                lambda out: out.values() == [comm.rank + 1])
    if kind == "bcast":
        buf = buffer_of([42], INT32)
        return (lambda: comm.bcast(buf, 0),
                lambda out: out.values() == [42])
    per_rank = max(ROOT_TOTAL_INTS // n, 1)
    if kind == "gather":
        buf = buffer_of([comm.rank] * per_rank, INT32)
        expect = [r for r in range(n) for _ in range(per_rank)]
        return (lambda: comm.gather(buf, 0),
                lambda out: comm.rank != 0 or out.values() == expect)
    # scatter
    if comm.rank == 0:
        buf = buffer_of([r for r in range(n) for _ in range(per_rank)], INT32)
    else:
        buf = buffer_of([], INT32)
    return (lambda: comm.scatter(buf, 0),
            lambda out: out.values() == [comm.rank] * per_rank)


def collective_bench(comm: Communicator, kind: str, reps: int = 30,
                     warmups: int = 1) -> list[float]:
    """Barrier-synchronized timed repetitions of one collective; the
    launcher takes the per-repetition max across ranks."""
    call, check = _collective_call(comm, kind)
    samples = []
    for _ in range(warmups + reps):
        comm.barrier()
        t0 = time.perf_counter()
        out = call()
        samples.append(time.perf_counter() - t0)
        if not check(out):
            raise ProtocolViolation(f"{kind} returned a wrong result")
    return samples[warmups:]


def run_benchmark(comm: Communicator, spec: BenchmarkSpec) -> list[float]:
    if spec.kind == "pingpong":
        return pingpong(comm, spec.message_size, spec.repetitions, spec.warmups)
    if spec.kind == "one_to_many":
        return one_to_many(comm, spec.message_size, spec.repetitions,
                           spec.warmups)
    return collective_bench(comm, spec.collective, spec.repetitions,
                            spec.warmups)


# -- world launcher ----------------------------------------------------------

class WorldLauncher:
    """Supervises N worker processes and the services they talk through."""

    def __init__(self, spec: BenchmarkSpec, comm_name: str = "bench",
                 epoch: int = 0, auto_services: bool = True,
                 coordinator: tuple[str, int] | None = None,
                 store: tuple[str, int] | None = None,
                 out_dir: str | Path | None = None,
                 join_timeout_ms: int | None = None,
                 op_timeout_ms: int | None = None,
                 store_jitter: bool = False):
        self.spec = spec
        self.comm_name = comm_name
        self.epoch = epoch
        self.auto_services = auto_services
        self.coordinator = coordinator
        self.store = store
        self.join_timeout_ms = join_timeout_ms
        self.op_timeout_ms = op_timeout_ms
        self.store_jitter = store_jitter
        self._tmp = None
        if out_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="fmi-bench-")
            out_dir = self._tmp.name
        self.out_dir = Path(out_dir)
        self.rendezvous: RendezvousServer | None = None
        self.store_server: StoreServer | None = None
        self.procs: dict[int, subprocess.Popen] = {}
        self._start_time = 0.0

    def start(self) -> "WorldLauncher":
        if self.auto_services:
            if self.spec.channel == "direct":
                self.rendezvous = RendezvousServer().start()
                self.coordinator = self.rendezvous.endpoint
            else:
                self.store_server = StoreServer(
                    profile_by_name(self.spec.channel),
                    jitter=self.store_jitter).start()
                self.store = self.store_server.endpoint
        self._start_time = time.monotonic()
        for rank in range(self.spec.world_size):
            self.procs[rank] = self._spawn(rank)
        return self

    def _worker_env(self, rank: int) -> dict:
        env = dict(os.environ)
        env[ENV_COMM_NAME] = self.comm_name
        env[ENV_RANK] = str(rank)
        env[ENV_WORLD_SIZE] = str(self.spec.world_size)
        env[ENV_CHANNEL] = self.spec.channel
        env[ENV_EPOCH] = str(self.epoch)
        if self.spec.channel == "direct":
            env[ENV_COORDINATOR] = "%s:%d" % self.coordinator
        else:
            env[ENV_STORE] = "%s:%d" % self.store
        if self.join_timeout_ms is not None:
            env[ENV_JOIN_TIMEOUT_MS] = str(self.join_timeout_ms)
        if self.op_timeout_ms is not None:
            env[ENV_OP_TIMEOUT_MS] = str(self.op_timeout_ms)
        return env

    def _spawn(self, rank: int) -> subprocess.Popen:
        spec = self.spec
        args = [sys.executable, "-m", "fmi.worker",
                "--kind", spec.kind,
                "--size", str(spec.message_size),
                "--reps", str(spec.repetitions),
                "--warmups", str(spec.warmups),
                "--out", str(self.out_dir / f"rank{rank}.json")]
        if spec.collective:
            args += ["--collective", spec.collective]
        return subprocess.Popen(args, env=self._worker_env(rank),
                                stdout=subprocess.DEVNULL,
                                stderr=subprocess.PIPE)

    def kill_rank(self, rank: int):
        """Fault injection: SIGKILL one worker mid-run."""
        self.procs[rank].kill()

    def wait(self, timeout: float = 300.0) -> BenchmarkResult:
        deadline = time.monotonic() + timeout
        stderr_tail: dict[int, str] = {}
        for rank, proc in self.procs.items():
            remaining = max(deadline - time.monotonic(), 0.1)
            try:
                _, err = proc.communicate(timeout=remaining)
            except subprocess.TimeoutExpired:
                proc.kill()
                _, err = proc.communicate()
            stderr_tail[rank] = (err or b"").decode(errors="replace")[-2000:]
        elapsed = time.monotonic() - self._start_time
        result = self._aggregate(stderr_tail, elapsed)
        self.shutdown()
        return result

    def _aggregate(self, stderr_tail: dict[int, str],
                   elapsed: float) -> BenchmarkResult:
        workers: dict[int, dict] = {}
        failed: dict[int, str] = {}
        for rank, proc in self.procs.items():
            path = self.out_dir / f"rank{rank}.json"
            record = None
            if path.exists():
                try:
                    record = json.loads(path.read_text())
                except json.JSONDecodeError:
                    record = None
            if record is None:
                rc = proc.returncode
                reason = (f"killed by signal {-rc}" if rc is not None and rc < 0
                          else f"exit {rc}, no output")
                failed[rank] = reason
                record = {"rank": rank, "samples": [], "error": {
                    "kind": "PeerFailure", "detail": reason}, "aborted": True}
            elif record.get("error"):
                failed[rank] = record["error"]["kind"]
            workers[rank] = record
            if stderr_tail.get(rank):
                record["stderr"] = stderr_tail[rank]

        samples = self._merge_samples(workers, failed)
        cost = None
        if self.store_server is not None:
            cost = metered_cost(self.store_server.ledger.snapshot(),
                                self.store_server.profile, elapsed)
        extra = {"workers": workers, "elapsed_s": elapsed}
        if self.spec.kind == "one_to_many" and samples:
            receivers = self.spec.world_size - 1
            extra["aggregate_bandwidth_bps"] = (
                receivers * self.spec.message_size
                / statistics.median(samples))
        return BenchmarkResult(
            benchmark=self.spec.kind if not self.spec.collective
            else f"collective:{self.spec.collective}",
            channel=self.spec.channel,
            world_size=self.spec.world_size,
            size_bytes=self.spec.message_size,
            samples=samples,
            metered_cost_usd=cost,
            failed_ranks=failed,
            extra=extra,
        )

    def _merge_samples(self, workers: dict[int, dict],
                       failed: dict[int, str]) -> list[float]:
        if failed:
            return []
        if self.spec.kind in ("pingpong", "one_to_many"):
            return list(workers[0].get("samples", []))
        # collective: max across workers per repetition index
        rows = [w.get("samples", []) for w in workers.values()]
        reps = min((len(r) for r in rows), default=0)
        return [max(r[i] for r in rows) for i in range(reps)]

    def shutdown(self):
        for proc in self.procs.values():
            if proc.poll() is None:
                proc.kill()
                proc.wait()
        if self.rendezvous is not None:
            self.rendezvous.stop()
            self.rendezvous = None
        if self.store_server is not None:
            self.store_server.stop()
            self.store_server = None
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None


def launch_world(spec: BenchmarkSpec, **kwargs) -> BenchmarkResult:
    """One-shot: start services and workers, wait, aggregate, tear down."""
    launcher = WorldLauncher(spec, **kwargs).start()
    try:
        return launcher.wait()
    finally:
        launcher.shutdown()
