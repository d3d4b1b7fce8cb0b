"""Pairing coordinator for NAT traversal, plus the client-side pair call.

The coordinator is the only publicly reachable piece: two peers request the
same pairing name, and each receives the other's transport-observed endpoint.
It never relays payload traffic and keeps one pending ticket per name.

Wire protocol over TCP (integers little-endian):
  request:  u8 name_len | name bytes (UTF-8)
  response: u8 status (0=ok, 1=timeout, 2=malformed) | on ok: 4-byte IPv4 | u16 port

Note on flaky environments: NAT gateways that mangle TCP timestamps (seen
together with jumbo frames) can stall punched connections with spurious
timeouts. The in-library remedy is retrying the pairing under a fresh epoch;
disabling TCP timestamps is host configuration, out of reach from here.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .core import ChannelFailure, ProtocolViolation, Timeout

STATUS_OK = 0
STATUS_TIMEOUT = 1
STATUS_MALFORMED = 2

DEFAULT_HOLD_TIMEOUT = 30.0


@dataclass
class PairingTicket:
    """One parked pairing request: name, observed endpoint, arrival time."""

    name: str
    host: str
    port: int
    arrival_time: float
    conn: socket.socket | None = None

    def __post_init__(self):
        if not self.name:
            raise ProtocolViolation("pairing name must be non-empty")
        if not 1 <= self.port <= 65535:
            raise ProtocolViolation(f"port {self.port} out of range")


@dataclass
class Hold:
    pass


@dataclass
class Exchange:
    first: PairingTicket
    second: PairingTicket


@dataclass
class CoordinatorState:
    pending: dict[str, PairingTicket] = field(default_factory=dict)
    pairings_completed: int = 0
    timeouts: int = 0


def coordinator_step(state: CoordinatorState,
                     request: PairingTicket) -> tuple[CoordinatorState, Hold | Exchange]:
    """Park the first arrival under a name; match and clear on the second."""
    waiting = state.pending.pop(request.name, None)
    if waiting is None:
        state.pending[request.name] = request
        return state, Hold()
    state.pairings_completed += 1
    return state, Exchange(waiting, request)


def encode_endpoint(host: str, port: int) -> bytes:
    return socket.inet_aton(host) + struct.pack("<H", port)


def decode_endpoint(raw: bytes) -> tuple[str, int]:
    return socket.inet_ntoa(raw[:4]), struct.unpack("<H", raw[4:6])[0]


def encode_request(name: str) -> bytes:
    raw = name.encode("utf-8")
    if not 0 < len(raw) <= 255:
        raise ProtocolViolation(f"pairing name must be 1..255 bytes, got {len(raw)}")
    return struct.pack("<B", len(raw)) + raw


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ChannelFailure("connection closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


class RendezvousServer:
    """Accepts pairing requests, matches them by name, evicts stale tickets.

    State transitions go through :func:`coordinator_step` under one lock;
    connection handling is one short-lived thread per request, and parked
    sockets are owned by the state until matched or evicted.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 hold_timeout: float = DEFAULT_HOLD_TIMEOUT):
        self.state = CoordinatorState()
        self.hold_timeout = hold_timeout
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1024)
        self.host, self.port = self._sock.getsockname()
        self._threads: list[threading.Thread] = []

    @property
    def endpoint(self) -> tuple[str, int]:
        return self.host, self.port

    def start(self) -> "RendezvousServer":
        t = threading.Thread(target=self._accept_loop, daemon=True,
                             name="fmi-rendezvous-accept")
        t.start()
        s = threading.Thread(target=self._sweep_loop, daemon=True,
                             name="fmi-rendezvous-sweep")
        s.start()
        self._threads = [t, s]
        return self

    def serve_forever(self):
        self.start()
        while not self._stop.wait(0.5):
            pass

    def stop(self):
        self._stop.set()
        # shutdown wakes a blocked accept; plain close would leave the
        # kernel socket listening until the syscall returned
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        _close_quietly(self._sock)
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout=1.0)
        with self._lock:
            for ticket in self.state.pending.values():
                _close_quietly(ticket.conn)
            self.state.pending.clear()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._handle, args=(conn, addr),
                             daemon=True).start()

    def _handle(self, conn: socket.socket, addr: tuple[str, int]):
        try:
            conn.settimeout(10.0)
            (name_len,) = struct.unpack("<B", recv_exact(conn, 1))
            if name_len == 0:
                conn.sendall(struct.pack("<B", STATUS_MALFORMED))
                conn.close()
                return
            try:
                name = recv_exact(conn, name_len).decode("utf-8")
            except UnicodeDecodeError:
                conn.sendall(struct.pack("<B", STATUS_MALFORMED))
                conn.close()
                return
            ticket = PairingTicket(name, addr[0], addr[1], time.monotonic(), conn)
            with self._lock:
                _, action = coordinator_step(self.state, ticket)
            if isinstance(action, Exchange):
                self._complete(action)
            # on Hold the ticket (and its socket) stays parked in state
        except (OSError, ChannelFailure, ProtocolViolation):
            _close_quietly(conn)

    def _complete(self, action: Exchange):
        a, b = action.first, action.second
        for mine, theirs in ((a, b), (b, a)):
            try:
                mine.conn.sendall(struct.pack("<B", STATUS_OK)
                                  + encode_endpoint(theirs.host, theirs.port))
            except OSError:
                pass
            _close_quietly(mine.conn)

    def _sweep_loop(self):
        interval = min(max(self.hold_timeout / 4, 0.05), 1.0)
        while not self._stop.wait(interval):
            now = time.monotonic()
            expired = []
            with self._lock:
                for name, ticket in list(self.state.pending.items()):
                    if now - ticket.arrival_time > self.hold_timeout:
                        expired.append(self.state.pending.pop(name))
                        self.state.timeouts += 1
            for ticket in expired:
                try:
                    ticket.conn.sendall(struct.pack("<B", STATUS_TIMEOUT))
                except OSError:
                    pass
                _close_quietly(ticket.conn)


@dataclass(frozen=True)
class PairResult:
    """Peer endpoint as observed by the coordinator, plus the local port this
    call was made from (reusable for the punch)."""

    peer_host: str
    peer_port: int
    local_port: int


def _punchable_socket(local_port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    if hasattr(socket, "SO_REUSEPORT"):
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
    sock.bind(("", local_port))
    return sock


def pair(coordinator: tuple[str, int], name: str, timeout: float,
         local_port: int = 0) -> PairResult:
    """Request a pairing and block until the counterpart arrives.

    The socket is bound with address/port reuse enabled before connecting,
    so the port the coordinator observes stays available for the punch.
    """
    sock = _punchable_socket(local_port)
    try:
        sock.settimeout(timeout)
        try:
            sock.connect(coordinator)
            bound_port = sock.getsockname()[1]
            sock.sendall(encode_request(name))
            (status,) = struct.unpack("<B", recv_exact(sock, 1))
        except socket.timeout:
            raise Timeout(f"no counterpart for pairing {name!r} within {timeout}s")
        except OSError as e:
            raise ChannelFailure(f"coordinator unreachable: {e}")
        if status == STATUS_TIMEOUT:
            raise Timeout(f"coordinator evicted pairing {name!r}")
        if status != STATUS_OK:
            raise ProtocolViolation(f"coordinator rejected pairing {name!r}")
        try:
            host, port = decode_endpoint(recv_exact(sock, 6))
        except socket.timeout:
            raise Timeout(f"no counterpart for pairing {name!r} within {timeout}s")
        except OSError as e:
            raise ChannelFailure(f"coordinator disconnected: {e}")
        return PairResult(host, port, bound_port)
    finally:
        _close_quietly(sock)


def _close_quietly(sock: socket.socket | None):
    if sock is None:
        return
    try:
        sock.close()
    except OSError:
        pass
