"""The seven collective operations over both channel families.

Direct channels walk binomial trees (broadcast, gather, scatter, reduce),
recursive doubling (allreduce), and a two-phase tree sweep (scan). Mediated
channels upload to the store and poll: the root aggregates for gather and
reduce, peers chain through their predecessor for scan, and allreduce is a
root reduce followed by a broadcast of the result.

All reductions fold contiguous ascending-rank blocks, so non-commutative
(but associative) operators see exactly the serial fold order. Every
collective consumes one operation sequence number, which isolates its tags
(direct) and key prefixes (mediated) from every other operation's.
"""

from __future__ import annotations

from typing import Callable

from .core import (BYTE, NOOP, DataBuffer, Datatype, ProtocolViolation,
                   ReductionOp, apply_reduce)
from .direct import PeerConnection
from .mediated import StoreClient
from .schedules import (RoundKind, binomial_schedule,
                        recursive_doubling_rounds, reduce_tree_steps,
                        subtree_span)

# Tag layout: 10 bits of op_seq, 6 bits of phase. Collectives are issued in
# the same order on every rank, so wrapped op_seq bits cannot collide within
# a connection's in-flight window.
_PHASE_BITS = 6
_ROOT_HOP_PHASE = (1 << _PHASE_BITS) - 1
_DOWN_SWEEP_BASE = 32


def make_tag(op_seq: int, phase: int) -> int:
    return ((op_seq & 0x3FF) << _PHASE_BITS) | (phase & (_ROOT_HOP_PHASE))


def _from_raw(raw: bytes, dtype: Datatype) -> DataBuffer:
    if len(raw) % dtype.width:
        raise ProtocolViolation(
            f"{len(raw)} bytes do not tile {dtype.width}-byte elements")
    return DataBuffer(raw, dtype, len(raw) // dtype.width)


class DirectCollectives:
    """Tree and doubling algorithms over punched peer connections.

    ``get_conn(peer, deadline)`` returns the (possibly lazily punched)
    connection to a peer; the caller owns connection lifecycle.
    """

    def __init__(self, rank: int, n: int,
                 get_conn: Callable[[int, float | None], PeerConnection]):
        self.rank = rank
        self.n = n
        self.get_conn = get_conn

    # -- point-to-point, used by the benchmarks ---------------------------
    # Phase 0 is reserved for p2p traffic; connections are FIFO per tag, so
    # a constant tag with op_seq 0 keeps ordered delivery per pair.

    def send_bytes(self, dst: int, payload: bytes, deadline: float | None):
        self.get_conn(dst, deadline).send(make_tag(0, 0), payload)

    def recv_bytes(self, src: int, deadline: float | None) -> bytes:
        return self.get_conn(src, deadline).recv(make_tag(0, 0), deadline)

    # -- collectives ------------------------------------------------------

    def bcast(self, buf: DataBuffer, root: int, op_seq: int,
              deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        schedule = binomial_schedule(self.n, root)
        rstep = schedule.receive_of(self.rank)
        if rstep is None:
            data = buf.data
        else:
            conn = self.get_conn(rstep.sender, deadline)
            data = conn.recv(make_tag(op_seq, rstep.round), deadline)
        for s in schedule.sends_of(self.rank):
            self.get_conn(s.receiver, deadline).send(
                make_tag(op_seq, s.round), data)
        return _from_raw(data, buf.dtype)

    def barrier(self, op_seq: int, deadline: float | None):
        # allreduce of one byte under the no-op operator
        self.allreduce(DataBuffer(b"\x00", BYTE, 1), NOOP, op_seq, deadline)

    def gather(self, buf: DataBuffer, root: int, op_seq: int,
               deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        schedule = binomial_schedule(self.n, root)
        vrank = (self.rank - root) % self.n
        blob = bytearray(buf.data)
        # collect child subtrees in reverse broadcast order: spans ascend,
        # so each append extends a contiguous virtual-rank block
        for s in sorted(schedule.sends_of(self.rank),
                        key=lambda s: s.round, reverse=True):
            conn = self.get_conn(s.receiver, deadline)
            blob.extend(conn.recv(make_tag(op_seq, s.round), deadline))
        rstep = schedule.receive_of(self.rank)
        if rstep is not None:
            self.get_conn(rstep.sender, deadline).send(
                make_tag(op_seq, rstep.round), bytes(blob))
            return DataBuffer(b"", buf.dtype, 0)
        # root: rotate virtual-rank order back to real-rank order
        chunk = buf.nbytes
        out = bytearray(len(blob))
        for v in range(self.n):
            real = (v + root) % self.n
            out[real * chunk:(real + 1) * chunk] = blob[v * chunk:(v + 1) * chunk]
        return _from_raw(bytes(out), buf.dtype)

    def scatter(self, buf: DataBuffer, root: int, op_seq: int,
                deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        schedule = binomial_schedule(self.n, root)
        vrank = (self.rank - root) % self.n
        if self.rank == root:
            if buf.count % self.n:
                raise ProtocolViolation(
                    f"scatter count {buf.count} not divisible by {self.n}")
            chunk = buf.nbytes // self.n
            blob = bytearray()
            for v in range(self.n):
                real = (v + root) % self.n
                blob.extend(buf.data[real * chunk:(real + 1) * chunk])
            blob = bytes(blob)
        else:
            rstep = schedule.receive_of(self.rank)
            conn = self.get_conn(rstep.sender, deadline)
            blob = conn.recv(make_tag(op_seq, rstep.round), deadline)
            width = subtree_span(self.n, rstep.round)
            held = min(vrank + width, self.n) - vrank
            chunk = len(blob) // held
        for s in sorted(schedule.sends_of(self.rank), key=lambda s: s.round):
            child_v = (s.receiver - root) % self.n
            width = subtree_span(self.n, s.round)
            child_held = min(child_v + width, self.n) - child_v
            off = (child_v - vrank) * chunk
            self.get_conn(s.receiver, deadline).send(
                make_tag(op_seq, s.round),
                blob[off:off + child_held * chunk])
        return _from_raw(blob[:chunk], buf.dtype)

    def reduce(self, buf: DataBuffer, op: ReductionOp, root: int,
               op_seq: int, deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        acc = buf
        for step in reduce_tree_steps(self.n):
            if step.sender == self.rank:
                self.get_conn(step.receiver, deadline).send(
                    make_tag(op_seq, step.round), acc.data)
                acc = None
                break
            if step.receiver == self.rank:
                raw = self.get_conn(step.sender, deadline).recv(
                    make_tag(op_seq, step.round), deadline)
                acc = apply_reduce(op, acc, _from_raw(raw, buf.dtype))
        # the contiguous tree lands on rank 0; hop to the requested root
        if root == 0:
            return acc if self.rank == 0 else DataBuffer(b"", buf.dtype, 0)
        if self.rank == 0:
            self.get_conn(root, deadline).send(
                make_tag(op_seq, _ROOT_HOP_PHASE), acc.data)
            return DataBuffer(b"", buf.dtype, 0)
        if self.rank == root:
            raw = self.get_conn(0, deadline).recv(
                make_tag(op_seq, _ROOT_HOP_PHASE), deadline)
            return _from_raw(raw, buf.dtype)
        return DataBuffer(b"", buf.dtype, 0)

    def allreduce(self, buf: DataBuffer, op: ReductionOp, op_seq: int,
                  deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        acc = buf
        for phase, rnd in enumerate(recursive_doubling_rounds(self.n), start=1):
            tag = make_tag(op_seq, phase)
            if rnd.kind is RoundKind.FOLD:
                if self.rank in rnd.partners:          # odd rank: hand off
                    self.get_conn(rnd.partners[self.rank], deadline).send(
                        tag, acc.data)
                elif self.rank + 1 in rnd.partners:    # even rank: absorb
                    raw = self.get_conn(self.rank + 1, deadline).recv(
                        tag, deadline)
                    acc = apply_reduce(op, acc, _from_raw(raw, buf.dtype))
            elif rnd.kind is RoundKind.EXCHANGE:
                if self.rank not in rnd.partners:
                    continue
                peer = rnd.partners[self.rank]
                conn = self.get_conn(peer, deadline)
                # rank order fixes send-before-recv, so two large buffers
                # can never deadlock on full socket buffers
                if self.rank < peer:
                    conn.send(tag, acc.data)
                    raw = conn.recv(tag, deadline)
                else:
                    raw = conn.recv(tag, deadline)
                    conn.send(tag, acc.data)
                theirs = _from_raw(raw, buf.dtype)
                if self.rank < peer:
                    acc = apply_reduce(op, acc, theirs)
                else:
                    acc = apply_reduce(op, theirs, acc)
            else:  # UNFOLD: push the finished value back to folded ranks
                if self.rank in rnd.partners:
                    self.get_conn(rnd.partners[self.rank], deadline).send(
                        tag, acc.data)
                elif self.rank - 1 in rnd.partners:
                    raw = self.get_conn(self.rank - 1, deadline).recv(
                        tag, deadline)
                    acc = _from_raw(raw, buf.dtype)
        return acc

    def scan(self, buf: DataBuffer, op: ReductionOp, op_seq: int,
             deadline: float | None) -> DataBuffer:
        """Inclusive prefix fold: up-sweep partials toward rank 0, then
        down-sweep each child the exclusive prefix of its block."""
        if self.n == 1:
            return buf
        acc = buf
        absorbed: list[tuple[int, DataBuffer, int]] = []  # child, pre-partial, round
        parent_step = None
        for step in reduce_tree_steps(self.n):
            if step.sender == self.rank:
                self.get_conn(step.receiver, deadline).send(
                    make_tag(op_seq, step.round), acc.data)
                parent_step = step
                break
            if step.receiver == self.rank:
                raw = self.get_conn(step.sender, deadline).recv(
                    make_tag(op_seq, step.round), deadline)
                absorbed.append((step.sender, acc, step.round))
                acc = apply_reduce(op, acc, _from_raw(raw, buf.dtype))
        prefix: DataBuffer | None = None   # exclusive prefix of my block
        if parent_step is not None:
            raw = self.get_conn(parent_step.receiver, deadline).recv(
                make_tag(op_seq, _DOWN_SWEEP_BASE + parent_step.round), deadline)
            prefix = _from_raw(raw, buf.dtype)
        for child, pre_partial, rnd in reversed(absorbed):
            child_prefix = (pre_partial if prefix is None
                            else apply_reduce(op, prefix, pre_partial))
            self.get_conn(child, deadline).send(
                make_tag(op_seq, _DOWN_SWEEP_BASE + rnd), child_prefix.data)
        return buf if prefix is None else apply_reduce(op, prefix, buf)


class MediatedCollectives:
    """Upload/poll algorithms over the key-value store.

    Keys follow "{comm}/{epoch}/{op_seq}/{collective}/{src}[>{dst}]" and the
    final consumer of every object deletes it, so a completed collective
    leaves nothing under its prefix.
    """

    def __init__(self, client: StoreClient, comm_name: str, epoch: int,
                 rank: int, n: int):
        self.client = client
        self.comm_name = comm_name
        self.epoch = epoch
        self.rank = rank
        self.n = n
        self._p2p_out: dict[int, int] = {}
        self._p2p_in: dict[int, int] = {}

    def _prefix(self, op_seq: int | str, collective: str) -> str:
        return f"{self.comm_name}/{self.epoch}/{op_seq}/{collective}/"

    # -- point-to-point ----------------------------------------------------
    # Keys carry a per-pair directional counter, so both endpoints agree on
    # the key for message k without sharing the collective op counter.

    def send_bytes(self, dst: int, payload: bytes, deadline: float | None):
        k = self._p2p_out.get(dst, 0)
        self._p2p_out[dst] = k + 1
        self.client.put(
            f"{self.comm_name}/{self.epoch}/p2p/{self.rank}>{dst}/{k}", payload)

    def recv_bytes(self, src: int, deadline: float | None) -> bytes:
        k = self._p2p_in.get(src, 0)
        self._p2p_in[src] = k + 1
        key = f"{self.comm_name}/{self.epoch}/p2p/{src}>{self.rank}/{k}"
        raw = self.client.get_poll(key, deadline=deadline)
        self.client.delete(key)
        return raw

    # -- collectives -------------------------------------------------------

    def _bcast_raw(self, data: bytes | None, root: int, prefix: str,
                   deadline: float | None) -> bytes:
        """Root uploads once; readers poll, then the last reader (observed
        via ack objects) clears everything."""
        key = prefix + str(root)
        ack = prefix + "ack/"
        if self.rank == root:
            self.client.put(key, data)
            return data
        raw = self.client.get_poll(key, deadline=deadline)
        self.client.put(ack + str(self.rank), b"\x01")
        if self.client.list_count(ack) == self.n - 1:
            self.client.delete(key)
            for r in range(self.n):
                if r != root:
                    self.client.delete(ack + str(r))
        return raw

    def bcast(self, buf: DataBuffer, root: int, op_seq: int,
              deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        raw = self._bcast_raw(buf.data if self.rank == root else None,
                              root, self._prefix(op_seq, "bcast"), deadline)
        return _from_raw(raw, buf.dtype)

    def barrier(self, op_seq: int, deadline: float | None,
                prefix: str | None = None):
        """Two-phase: arrive objects release the group, depart objects tell
        rank 0 when it is safe to clear both sets."""
        if self.n == 1:
            return
        base = prefix or self._prefix(op_seq, "barrier")
        arrive, depart = base + "a/", base + "d/"
        self.client.put(arrive + str(self.rank), b"\x01")
        self.client.poll_count(arrive, self.n, deadline=deadline,
                               stop_prefix=depart)
        self.client.put(depart + str(self.rank), b"\x01")
        if self.rank == 0:
            self.client.poll_count(depart, self.n, deadline=deadline)
            for r in range(self.n):
                self.client.delete(arrive + str(r))
                self.client.delete(depart + str(r))

    def _gather_parts(self, buf: DataBuffer, root: int, prefix: str,
                      deadline: float | None) -> list[DataBuffer] | None:
        """Everyone but the root uploads; the root polls the count, reads
        all parts in rank order, and deletes them."""
        if self.rank != root:
            self.client.put(prefix + str(self.rank), buf.data)
            return None
        self.client.poll_count(prefix, self.n - 1, deadline=deadline)
        parts = []
        for r in range(self.n):
            if r == root:
                parts.append(buf)
                continue
            raw = self.client.get(prefix + str(r))
            if raw is None:
                raise ProtocolViolation(f"contribution of rank {r} vanished")
            parts.append(_from_raw(raw, buf.dtype))
        for r in range(self.n):
            if r != root:
                self.client.delete(prefix + str(r))
        return parts

    def gather(self, buf: DataBuffer, root: int, op_seq: int,
               deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        parts = self._gather_parts(buf, root, self._prefix(op_seq, "gather"),
                                   deadline)
        if parts is None:
            return DataBuffer(b"", buf.dtype, 0)
        sizes = {p.nbytes for p in parts}
        if len(sizes) > 1:
            raise ProtocolViolation(f"unequal gather contributions: {sizes}")
        return _from_raw(b"".join(p.data for p in parts), buf.dtype)

    def scatter(self, buf: DataBuffer, root: int, op_seq: int,
                deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        prefix = self._prefix(op_seq, "scatter")
        if self.rank == root:
            if buf.count % self.n:
                raise ProtocolViolation(
                    f"scatter count {buf.count} not divisible by {self.n}")
            chunk = buf.nbytes // self.n
            for dst in range(self.n):
                if dst != root:
                    self.client.put(prefix + f"{root}>{dst}",
                                    buf.data[dst * chunk:(dst + 1) * chunk])
            return _from_raw(buf.data[root * chunk:(root + 1) * chunk],
                             buf.dtype)
        key = prefix + f"{root}>{self.rank}"
        raw = self.client.get_poll(key, deadline=deadline)
        self.client.delete(key)
        return _from_raw(raw, buf.dtype)

    def _reduce_fold(self, buf: DataBuffer, op: ReductionOp, root: int,
                     prefix: str, deadline: float | None) -> DataBuffer | None:
        parts = self._gather_parts(buf, root, prefix, deadline)
        if parts is None:
            return None
        acc = parts[0]
        for part in parts[1:]:
            acc = apply_reduce(op, acc, part)
        return acc

    def reduce(self, buf: DataBuffer, op: ReductionOp, root: int,
               op_seq: int, deadline: float | None) -> DataBuffer:
        if self.n == 1:
            return buf
        acc = self._reduce_fold(buf, op, root, self._prefix(op_seq, "reduce"),
                                deadline)
        return acc if acc is not None else DataBuffer(b"", buf.dtype, 0)

    def allreduce(self, buf: DataBuffer, op: ReductionOp, op_seq: int,
                  deadline: float | None) -> DataBuffer:
        """Root-side fold then broadcast of the result."""
        if self.n == 1:
            return buf
        acc = self._reduce_fold(buf, op, 0,
                                self._prefix(op_seq, "allreduce") + "r/",
                                deadline)
        raw = self._bcast_raw(acc.data if acc is not None else None, 0,
                              self._prefix(op_seq, "allreduce") + "b/",
                              deadline)
        return _from_raw(raw, buf.dtype)

    def scan(self, buf: DataBuffer, op: ReductionOp, op_seq: int,
             deadline: float | None) -> DataBuffer:
        """Chain through predecessors: poll the previous rank's prefix,
        fold own input in, publish for the successor."""
        if self.n == 1:
            return buf
        prefix = self._prefix(op_seq, "scan")
        if self.rank == 0:
            result = buf
        else:
            key = prefix + str(self.rank - 1)
            raw = self.client.get_poll(key, deadline=deadline)
            self.client.delete(key)
            result = apply_reduce(op, _from_raw(raw, buf.dtype), buf)
        if self.rank < self.n - 1:
            self.client.put(prefix + str(self.rank), result.data)
        return result
