"""Peer-to-peer TCP channel: simultaneous-open hole punching and framing.

A punched connection carries length-prefixed frames, little-endian:
magic 0x46 0x4D ("FM") | u32 seq | u16 tag | u64 payload_len | payload.
Sequence numbers increase strictly per direction; receives can be matched
by tag with out-of-tag frames parked in arrival order, which tree
algorithms need when rounds interleave.
"""

from __future__ import annotations

import contextlib
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from .core import ChannelFailure, ProtocolViolation, Timeout
from .rendezvous import _close_quietly, _punchable_socket, pair, recv_exact

FRAME_MAGIC = b"FM"
FRAME_HEADER = struct.Struct("<2sIHQ")  # magic, seq, tag, payload_len

PUNCH_ATTEMPTS = 20
PUNCH_INTERVAL = 0.05


def encode_frame(seq: int, tag: int, payload: bytes) -> bytes:
    return FRAME_HEADER.pack(FRAME_MAGIC, seq, tag, len(payload)) + payload


def decode_frame_header(raw: bytes) -> tuple[int, int, int]:
    """Validate the magic and return (seq, tag, payload_len)."""
    magic, seq, tag, length = FRAME_HEADER.unpack(raw)
    if magic != FRAME_MAGIC:
        raise ProtocolViolation(f"bad frame magic {magic!r}")
    return seq, tag, length


def pairing_name(comm_name: str, rank_a: int, rank_b: int, epoch: int) -> str:
    lo, hi = min(rank_a, rank_b), max(rank_a, rank_b)
    return f"{comm_name}:{lo}-{hi}:{epoch}"


@dataclass
class PeerConnection:
    """One duplex stream between two ranks, owned by one thread at a time."""

    local_rank: int
    remote_rank: int
    sock: socket.socket
    next_send_seq: int = 0
    next_recv_seq: int = 0
    frames_sent: int = 0
    _parked: dict[int, deque] = field(default_factory=dict)

    def send(self, tag: int, payload: bytes):
        frame = encode_frame(self.next_send_seq, tag, payload)
        try:
            self.sock.sendall(frame)
        except OSError as e:
            raise ChannelFailure(
                f"send to rank {self.remote_rank} failed: {e}")
        self.next_send_seq += 1
        self.frames_sent += 1

    def recv(self, expected_tag: int, deadline: float | None = None) -> bytes:
        """Block until a frame with the tag arrives; park other tags."""
        queue = self._parked.get(expected_tag)
        if queue:
            return queue.popleft()
        while True:
            payload, tag = self._read_frame(deadline)
            if tag == expected_tag:
                return payload
            self._parked.setdefault(tag, deque()).append(payload)

    def _read_frame(self, deadline: float | None) -> tuple[bytes, int]:
        try:
            self._arm(deadline)
            header = recv_exact(self.sock, FRAME_HEADER.size)
            seq, tag, length = decode_frame_header(header)
            if seq != self.next_recv_seq:
                raise ProtocolViolation(
                    f"frame seq {seq} from rank {self.remote_rank}, "
                    f"expected {self.next_recv_seq}")
            self._arm(deadline)
            payload = recv_exact(self.sock, length) if length else b""
        except socket.timeout:
            raise Timeout(f"recv from rank {self.remote_rank} timed out")
        except OSError as e:
            raise ChannelFailure(f"recv from rank {self.remote_rank} failed: {e}")
        self.next_recv_seq += 1
        return payload, tag

    def _arm(self, deadline: float | None):
        if deadline is None:
            self.sock.settimeout(None)
            return
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise Timeout(f"recv from rank {self.remote_rank} timed out")
        self.sock.settimeout(remaining)

    def close(self):
        with contextlib.suppress(OSError):
            self.sock.shutdown(socket.SHUT_RDWR)
        _close_quietly(self.sock)


def _attempt_connects(local_port: int, peer: tuple[str, int], stop: threading.Event,
                      result: list, deadline: float):
    """Dial the peer's observed endpoint from the reused local port until it
    answers, the window ends, or the other path wins."""
    for _ in range(PUNCH_ATTEMPTS):
        if stop.is_set() or time.monotonic() > deadline:
            return
        sock = _punchable_socket(local_port)
        try:
            sock.settimeout(max(PUNCH_INTERVAL * 4, 0.2))
            sock.connect(peer)
            result.append(sock)
            return
        except OSError:
            _close_quietly(sock)
            stop.wait(PUNCH_INTERVAL)
    result.append(None)


def _accept_loop(listener: socket.socket, stop: threading.Event,
                 accepted: list):
    listener.settimeout(0.1)
    while not stop.is_set():
        try:
            sock, _ = listener.accept()
            accepted.append(sock)
            return
        except socket.timeout:
            continue
        except OSError:
            return


def connect_pair(coordinator: tuple[str, int], comm_name: str, epoch: int,
                 self_rank: int, peer_rank: int, timeout: float) -> PeerConnection:
    """Punch one connection to a peer through the rendezvous coordinator.

    Both sides listen on and dial from the port the coordinator observed.
    On crossing SYNs the kernel fuses the dials into one simultaneous-open
    connection and the listeners never fire, so both paths are watched and
    whichever forms first wins. If both ever form, the connection initiated
    by the lower rank is kept and the other closed.
    """
    if self_rank == peer_rank:
        raise ProtocolViolation("cannot connect a rank to itself")
    deadline = time.monotonic() + timeout
    listener = _punchable_socket(0)
    listener.listen(4)
    local_port = listener.getsockname()[1]
    stop = threading.Event()
    attempts: list = []
    accepted: list = []
    sock = None
    try:
        res = pair(coordinator, pairing_name(comm_name, self_rank, peer_rank, epoch),
                   timeout, local_port=local_port)
        peer = (res.peer_host, res.peer_port)
        dialer = threading.Thread(
            target=_attempt_connects,
            args=(local_port, peer, stop, attempts, deadline), daemon=True)
        acceptor = threading.Thread(
            target=_accept_loop, args=(listener, stop, accepted), daemon=True)
        dialer.start()
        acceptor.start()
        try:
            sock = _await_first(attempts, accepted, stop, deadline,
                                prefer_outbound=self_rank < peer_rank,
                                peer_rank=peer_rank)
        finally:
            stop.set()
            dialer.join(timeout=0.3)
            acceptor.join(timeout=0.3)
            for candidate in attempts + accepted:
                if candidate is not None and candidate is not sock:
                    _close_quietly(candidate)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        return PeerConnection(self_rank, peer_rank, sock)
    finally:
        _close_quietly(listener)


def _await_first(attempts: list, accepted: list, stop: threading.Event,
                 deadline: float, prefer_outbound: bool,
                 peer_rank: int) -> socket.socket:
    # a dead dial (None sentinel) just leaves the inbound path waiting
    while time.monotonic() <= deadline:
        outbound = attempts[0] if attempts else None
        inbound = accepted[0] if accepted else None
        if outbound is not None and inbound is not None:
            # dual success: keep the lower-rank-initiated connection
            return outbound if prefer_outbound else inbound
        if outbound is not None or inbound is not None:
            return outbound if outbound is not None else inbound
        stop.wait(0.002)
    raise Timeout(f"hole punch with rank {peer_rank} timed out")
