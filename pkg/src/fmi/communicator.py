"""Group formation and lifecycle: join, channel binding, abort semantics.

A communicator is a named group of N ranked peers bound to one channel. A
join deadline runs from each participant's own join start; if the group is
not complete by then, the participant fails with JoinFailed. After any
failed operation the communicator aborts: connections close, and every
later call fails fast with the original cause.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .collectives import DirectCollectives, MediatedCollectives
from .core import (DataBuffer, FmiError, JoinFailed, ProtocolViolation,
                   ReductionOp)
from .direct import PeerConnection, connect_pair
from .mediated import StoreClient
from .profiles import ChannelProfile, profile_by_name
from .schedules import required_pairs

DEFAULT_JOIN_TIMEOUT = 60.0
DEFAULT_OP_TIMEOUT = 30.0

ENV_COMM_NAME = "FMI_COMM_NAME"
ENV_RANK = "FMI_RANK"
ENV_WORLD_SIZE = "FMI_WORLD_SIZE"
ENV_CHANNEL = "FMI_CHANNEL"
ENV_COORDINATOR = "FMI_COORDINATOR"
ENV_STORE = "FMI_STORE"
ENV_EPOCH = "FMI_EPOCH"
ENV_JOIN_TIMEOUT_MS = "FMI_JOIN_TIMEOUT_MS"
ENV_OP_TIMEOUT_MS = "FMI_OP_TIMEOUT_MS"
ENV_FULL_MESH = "FMI_FULL_MESH"


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host, int(port)


@dataclass(frozen=True)
class ChannelSpec:
    """Which channel a communicator binds: direct needs a coordinator,
    mediated needs a store endpoint and a profile."""

    kind: str                                   # "direct" | "mediated"
    coordinator: tuple[str, int] | None = None
    store: tuple[str, int] | None = None
    profile: ChannelProfile | None = None

    def __post_init__(self):
        if self.kind == "direct":
            if self.coordinator is None:
                raise ProtocolViolation("direct channel needs a coordinator")
        elif self.kind == "mediated":
            if self.store is None or self.profile is None:
                raise ProtocolViolation("mediated channel needs store + profile")
        else:
            raise ProtocolViolation(f"unknown channel kind {self.kind!r}")


def direct_channel(coordinator: tuple[str, int]) -> ChannelSpec:
    return ChannelSpec("direct", coordinator=coordinator)


def mediated_channel(store: tuple[str, int], profile: ChannelProfile) -> ChannelSpec:
    return ChannelSpec("mediated", store=store, profile=profile)


@dataclass(frozen=True)
class CommunicatorConfig:
    name: str
    world_size: int
    rank: int
    channel: ChannelSpec
    join_timeout: float = DEFAULT_JOIN_TIMEOUT
    op_timeout: float | None = DEFAULT_OP_TIMEOUT
    epoch: int = 0
    full_mesh: bool = False

    def __post_init__(self):
        if self.world_size < 1:
            raise ProtocolViolation("world size must be >= 1")
        if not 0 <= self.rank < self.world_size:
            raise ProtocolViolation(
                f"rank {self.rank} outside [0, {self.world_size})")
        if self.epoch < 0:
            raise ProtocolViolation("epoch must be >= 0")

    @classmethod
    def from_env(cls, env=os.environ) -> "CommunicatorConfig":
        channel = env.get(ENV_CHANNEL, "direct")
        if channel == "direct":
            spec = direct_channel(parse_endpoint(env[ENV_COORDINATOR]))
        else:
            spec = mediated_channel(parse_endpoint(env[ENV_STORE]),
                                    profile_by_name(channel))
        return cls(
            name=env.get(ENV_COMM_NAME, "world"),
            world_size=int(env[ENV_WORLD_SIZE]),
            rank=int(env[ENV_RANK]),
            channel=spec,
            join_timeout=int(env.get(ENV_JOIN_TIMEOUT_MS,
                                     DEFAULT_JOIN_TIMEOUT * 1000)) / 1000,
            op_timeout=int(env.get(ENV_OP_TIMEOUT_MS,
                                   DEFAULT_OP_TIMEOUT * 1000)) / 1000,
            epoch=int(env.get(ENV_EPOCH, "0")),
            full_mesh=env.get(ENV_FULL_MESH, "") == "1",
        )


class CommState:
    ACTIVE = "Active"
    ABORTED = "Aborted"


class Communicator:
    """One rank's handle on the group; owned by one thread at a time."""

    def __init__(self, config: CommunicatorConfig):
        self.config = config
        self.rank = config.rank
        self.world_size = config.world_size
        self.state = CommState.ACTIVE
        self.abort_cause: FmiError | None = None
        self._op_seq = 0
        self._conns: dict[int, PeerConnection] = {}
        self._client: StoreClient | None = None
        self._binding = None

    # -- lifecycle ---------------------------------------------------------

    def _join(self):
        cfg = self.config
        deadline = time.monotonic() + cfg.join_timeout
        if self.world_size == 1:
            return self
        try:
            if cfg.channel.kind == "direct":
                self._join_direct(deadline)
            else:
                self._join_mediated(deadline)
        except FmiError as e:
            self.abort(e if isinstance(e, JoinFailed)
                       else JoinFailed(f"join failed: {e}"))
            raise self.abort_cause from None
        return self

    def _join_direct(self, deadline: float):
        cfg = self.config
        if cfg.full_mesh:
            pairs = {(a, b) for a in range(self.world_size)
                     for b in range(a + 1, self.world_size)}
        else:
            pairs = required_pairs(self.world_size)
        mine = sorted(p for p in pairs if self.rank in p)
        self._binding = DirectCollectives(self.rank, self.world_size,
                                          self._get_conn)
        if mine:
            with ThreadPoolExecutor(max_workers=min(8, len(mine))) as pool:
                futures = {}
                for a, b in mine:
                    peer = b if a == self.rank else a
                    futures[pool.submit(self._punch, peer, deadline)] = peer
                for fut in futures:
                    fut.result()
        # local punches alone cannot prove the whole group arrived (a rank
        # may share no eager pair with a missing one); a barrier does
        self._binding.barrier(0, deadline)

    def _punch(self, peer: int, deadline: float) -> PeerConnection:
        timeout = deadline - time.monotonic()
        if timeout <= 0:
            raise JoinFailed(f"join deadline hit before punching rank {peer}")
        cfg = self.config
        conn = connect_pair(cfg.channel.coordinator, cfg.name, cfg.epoch,
                            self.rank, peer, timeout)
        self._conns[peer] = conn
        return conn

    def _join_mediated(self, deadline: float):
        cfg = self.config
        self._client = StoreClient(cfg.channel.store, cfg.channel.profile)
        self._binding = MediatedCollectives(self._client, cfg.name, cfg.epoch,
                                            self.rank, self.world_size)
        self._binding.barrier(0, deadline,
                              prefix=f"{cfg.name}/{cfg.epoch}/join/")

    def abort(self, cause: FmiError):
        """Tear the communicator down; every later call fails with cause."""
        if self.state == CommState.ABORTED:
            return
        self.state = CommState.ABORTED
        self.abort_cause = cause
        for conn in self._conns.values():
            conn.close()
        self._conns.clear()
        if self._client is not None:
            self._client.close()
            self._client = None

    def close(self):
        for conn in self._conns.values():
            conn.close()
        self._conns.clear()
        if self._client is not None:
            self._client.close()
            self._client = None

    # -- plumbing ----------------------------------------------------------

    def _get_conn(self, peer: int, deadline: float | None) -> PeerConnection:
        conn = self._conns.get(peer)
        if conn is None:
            # pair not in the eager set (different root's tree); punch now
            budget = (deadline - time.monotonic()) if deadline else \
                self.config.join_timeout
            if budget <= 0:
                raise ProtocolViolation("operation deadline already passed")
            cfg = self.config
            conn = connect_pair(cfg.channel.coordinator, cfg.name, cfg.epoch,
                                self.rank, peer, budget)
            self._conns[peer] = conn
        return conn

    def _next_op(self) -> int:
        self._op_seq += 1
        return self._op_seq

    @property
    def op_seq(self) -> int:
        return self._op_seq

    def frames_sent(self) -> int:
        """Payload frames this rank pushed over direct connections."""
        return sum(c.frames_sent for c in self._conns.values())

    def _deadline(self) -> float | None:
        if self.config.op_timeout is None:
            return None
        return time.monotonic() + self.config.op_timeout

    def _guard(self):
        if self.state == CommState.ABORTED:
            raise self.abort_cause
        if self._binding is None and self.world_size > 1:
            raise ProtocolViolation("communicator was not joined")

    def _run(self, fn):
        self._guard()
        seq = self._next_op()
        try:
            return fn(seq, self._deadline())
        except FmiError as e:
            self.abort(e)
            raise

    # -- collective entry points --------------------------------------------

    def bcast(self, buf: DataBuffer, root: int) -> DataBuffer:
        self._check_root(root)
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return buf
        return self._run(lambda seq, dl: self._binding.bcast(buf, root, seq, dl))

    def barrier(self):
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return
        self._run(lambda seq, dl: self._binding.barrier(seq, dl))

    def gather(self, buf: DataBuffer, root: int) -> DataBuffer:
        self._check_root(root)
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return buf
        return self._run(lambda seq, dl: self._binding.gather(buf, root, seq, dl))

    def scatter(self, buf: DataBuffer, root: int) -> DataBuffer:
        self._check_root(root)
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return buf
        return self._run(lambda seq, dl: self._binding.scatter(buf, root, seq, dl))

    def reduce(self, buf: DataBuffer, op: ReductionOp, root: int) -> DataBuffer:
        self._check_root(root)
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return buf
        return self._run(lambda seq, dl: self._binding.reduce(buf, op, root, seq, dl))

    def allreduce(self, buf: DataBuffer, op: ReductionOp) -> DataBuffer:
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return buf
        return self._run(lambda seq, dl: self._binding.allreduce(buf, op, seq, dl))

    def scan(self, buf: DataBuffer, op: ReductionOp) -> DataBuffer:
        if self.world_size == 1:
            self._guard()
            self._next_op()
            return buf
        return self._run(lambda seq, dl: self._binding.scan(buf, op, seq, dl))

    # -- point-to-point (benchmark surface) ----------------------------------
    # Sequenced per pair and direction rather than by op_seq, so mismatched
    # send/recv counts between ranks (one-to-many) stay consistent.

    def send_bytes(self, dst: int, payload: bytes):
        if dst == self.rank or not 0 <= dst < self.world_size:
            raise ProtocolViolation(f"bad destination rank {dst}")
        self._guard()
        try:
            self._binding.send_bytes(dst, payload, self._deadline())
        except FmiError as e:
            self.abort(e)
            raise

    def recv_bytes(self, src: int) -> bytes:
        if src == self.rank or not 0 <= src < self.world_size:
            raise ProtocolViolation(f"bad source rank {src}")
        self._guard()
        try:
            return self._binding.recv_bytes(src, self._deadline())
        except FmiError as e:
            self.abort(e)
            raise

    def _check_root(self, root: int):
        if not 0 <= root < self.world_size:
            raise ProtocolViolation(
                f"root {root} outside [0, {self.world_size})")


def join(config: CommunicatorConfig) -> Communicator:
    """Join the named group; returns an Active communicator or raises
    JoinFailed once the join deadline expires."""
    return Communicator(config)._join()
