"""Storage-mediated channel: key-value client, polling backoff, embedded store.

The embedded store server stands in for object storage, a NoSQL table, or an
in-memory cache at desk scale; a :class:`~fmi.profiles.ChannelProfile` is the
only thing that differentiates them. Each request is answered after an
injected service delay of ``alpha + len / beta_inv`` seconds (deterministic
unless jitter is enabled), size limits are enforced, and a ledger meters
every operation so runs can be priced afterwards.

Wire protocol over TCP (integers little-endian):
  request:  u8 opcode (1=PUT, 2=GET, 3=DELETE, 4=LIST_COUNT) | u32 key_len |
            key | (PUT only: u64 value_len | value)
  response: u8 status (0=ok, 1=not_found, 2=too_large) |
            (GET ok: u64 value_len | value) | (LIST_COUNT: u32 count)
"""

from __future__ import annotations

import random
import socket
import struct
import threading
import time
from dataclasses import dataclass
from decimal import Decimal

from .core import (ChannelFailure, MessageTooLarge, ProtocolViolation,
                   RetriesExhausted, Timeout)
from .perfmodel import ddb_units
from .profiles import ChannelName, ChannelProfile
from .rendezvous import _close_quietly, recv_exact

OP_PUT = 1
OP_GET = 2
OP_DELETE = 3
OP_LIST_COUNT = 4

ST_OK = 0
ST_NOT_FOUND = 1
ST_TOO_LARGE = 2

LINEAR_RETRIES = 100
MAX_RETRIES = 500


@dataclass(frozen=True)
class BackoffPolicy:
    """Hybrid polling backoff: 1..100 ms linear ramp, then 2x the retry
    index, capped at 500 attempts."""

    linear_retries: int = LINEAR_RETRIES
    max_retries: int = MAX_RETRIES

    def delay(self, retry: int) -> float:
        return backoff_delay(retry, self)


def backoff_delay(retry: int, policy: BackoffPolicy = BackoffPolicy()) -> float:
    """Sleep before the next poll, in seconds, for 1-based retry index."""
    if retry < 1:
        raise ProtocolViolation("retry index starts at 1")
    if retry > policy.max_retries:
        raise RetriesExhausted(f"retry {retry} exceeds {policy.max_retries}")
    ms = retry if retry <= policy.linear_retries else 2 * retry
    return ms / 1000.0


def worst_case_backoff_total(policy: BackoffPolicy = BackoffPolicy()) -> float:
    """Cumulative sleep in seconds if every retry is exhausted."""
    return sum(backoff_delay(r, policy) for r in range(1, policy.max_retries + 1))


@dataclass
class MeterLedger:
    """Operation counts and byte totals a run accumulates against a store."""

    puts: int = 0
    gets: int = 0
    deletes: int = 0
    lists: int = 0
    put_bytes: int = 0
    get_bytes: int = 0
    put_units: int = 0   # 1 kB capacity units, rounded up per request
    get_units: int = 0

    def snapshot(self) -> "MeterLedger":
        return MeterLedger(self.puts, self.gets, self.deletes, self.lists,
                           self.put_bytes, self.get_bytes,
                           self.put_units, self.get_units)


def metered_cost(ledger: MeterLedger, profile: ChannelProfile,
                 elapsed: float) -> Decimal:
    """Dollars a metered run cost: request-billed stores charge per
    operation, provisioned channels charge for elapsed wall time."""
    p = profile.price
    if profile.name is ChannelName.S3:
        return ledger.puts * p.p_s3_u + ledger.gets * p.p_s3_d
    if profile.name is ChannelName.DYNAMODB:
        return ledger.put_units * p.p_ddb_u + ledger.get_units * p.p_ddb_d
    if profile.name is ChannelName.REDIS:
        return Decimal(str(elapsed)) * p.p_redis
    return Decimal(str(elapsed)) * p.p_hps


class StoreServer:
    """Embedded key-value store with per-profile latency injection.

    Handles clients concurrently (one thread each); mutations are serialized
    under one lock, which gives per-key atomicity and strong consistency.
    """

    def __init__(self, profile: ChannelProfile, host: str = "127.0.0.1",
                 port: int = 0, jitter: bool = False, seed: int | None = None):
        self.profile = profile
        self.jitter = jitter
        self.ledger = MeterLedger()
        self._rng = random.Random(seed)
        self._data: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(256)
        self.host, self.port = self._sock.getsockname()

    @property
    def endpoint(self) -> tuple[str, int]:
        return self.host, self.port

    def start(self) -> "StoreServer":
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True,
                                          name="fmi-store-accept")
        self._acceptor.start()
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
        acceptor = getattr(self, "_acceptor", None)
        if acceptor is not None and acceptor is not threading.current_thread():
            acceptor.join(timeout=1.0)

    def key_count(self) -> int:
        with self._lock:
            return len(self._data)

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._serve_client, args=(conn,),
                             daemon=True).start()

    def _serve_client(self, conn: socket.socket):
        try:
            while not self._stop.is_set():
                head = conn.recv(1)
                if not head:
                    return
                opcode = head[0]
                (key_len,) = struct.unpack("<I", recv_exact(conn, 4))
                key = recv_exact(conn, key_len).decode("utf-8")
                if opcode == OP_PUT:
                    (value_len,) = struct.unpack("<Q", recv_exact(conn, 8))
                    value = recv_exact(conn, value_len) if value_len else b""
                    conn.sendall(self._do_put(key, value))
                elif opcode == OP_GET:
                    conn.sendall(self._do_get(key))
                elif opcode == OP_DELETE:
                    conn.sendall(self._do_delete(key))
                elif opcode == OP_LIST_COUNT:
                    conn.sendall(self._do_list_count(key))
                else:
                    return
        except (OSError, ChannelFailure):
            pass
        finally:
            _close_quietly(conn)

    def _service_delay(self, nbytes: int):
        delay = self.profile.alpha + nbytes / self.profile.beta_inv
        if self.jitter and delay > 0:
            delay *= self._rng.uniform(0.9, 1.1)
        if delay > 0:
            time.sleep(delay)

    def _do_put(self, key: str, value: bytes) -> bytes:
        if not self.profile.fits(len(value)):
            # an oversize request is refused without paying the transfer
            self._service_delay(0)
            return struct.pack("<B", ST_TOO_LARGE)
        self._service_delay(len(value))
        with self._lock:
            self._data[key] = value
            self.ledger.puts += 1
            self.ledger.put_bytes += len(value)
            self.ledger.put_units += ddb_units(len(value))
        return struct.pack("<B", ST_OK)

    def _do_get(self, key: str) -> bytes:
        with self._lock:
            value = self._data.get(key)
        self._service_delay(len(value) if value is not None else 0)
        with self._lock:
            # re-read after the delay: visibility is at response time
            value = self._data.get(key)
            self.ledger.gets += 1
            if value is not None:
                self.ledger.get_bytes += len(value)
                self.ledger.get_units += ddb_units(len(value))
        if value is None:
            return struct.pack("<B", ST_NOT_FOUND)
        return struct.pack("<BQ", ST_OK, len(value)) + value

    def _do_delete(self, key: str) -> bytes:
        self._service_delay(0)
        with self._lock:
            self._data.pop(key, None)
            self.ledger.deletes += 1
        return struct.pack("<B", ST_OK)

    def _do_list_count(self, prefix: str) -> bytes:
        self._service_delay(0)
        with self._lock:
            count = sum(1 for k in self._data if k.startswith(prefix))
            self.ledger.lists += 1
        return struct.pack("<BI", ST_OK, count)


class StoreClient:
    """Blocking client over one persistent connection; not thread-safe."""

    def __init__(self, endpoint: tuple[str, int], profile: ChannelProfile,
                 connect_timeout: float = 10.0):
        self.profile = profile
        try:
            self._sock = socket.create_connection(endpoint, timeout=connect_timeout)
        except OSError as e:
            raise ChannelFailure(f"store unreachable at {endpoint}: {e}")
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)

    def close(self):
        _close_quietly(self._sock)

    def _request(self, opcode: int, key: str, value: bytes | None = None) -> bytes:
        raw_key = key.encode("utf-8")
        msg = struct.pack("<BI", opcode, len(raw_key)) + raw_key
        if opcode == OP_PUT:
            msg += struct.pack("<Q", len(value)) + value
        try:
            self._sock.sendall(msg)
            return recv_exact(self._sock, 1)
        except OSError as e:
            raise ChannelFailure(f"store transport error: {e}")

    def put(self, key: str, value: bytes):
        """Store a value; visible to every subsequent get once acknowledged."""
        if not self.profile.fits(len(value)):
            raise MessageTooLarge(
                f"{len(value)} bytes exceeds {self.profile.name.value} "
                f"limit of {self.profile.max_message}")
        status = self._request(OP_PUT, key, value)[0]
        if status == ST_TOO_LARGE:
            raise MessageTooLarge(f"store refused {len(value)} bytes for {key!r}")
        if status != ST_OK:
            raise ChannelFailure(f"put {key!r} failed with status {status}")

    def get(self, key: str) -> bytes | None:
        """One read attempt; None when the key is absent."""
        status = self._request(OP_GET, key)[0]
        if status == ST_NOT_FOUND:
            return None
        if status != ST_OK:
            raise ChannelFailure(f"get {key!r} failed with status {status}")
        try:
            (length,) = struct.unpack("<Q", recv_exact(self._sock, 8))
            return recv_exact(self._sock, length) if length else b""
        except OSError as e:
            raise ChannelFailure(f"store transport error: {e}")

    def delete(self, key: str):
        """Remove a key; absent keys are a no-op."""
        status = self._request(OP_DELETE, key)[0]
        if status != ST_OK:
            raise ChannelFailure(f"delete {key!r} failed with status {status}")

    def list_count(self, key_prefix: str) -> int:
        """Number of keys with the prefix at the request's serialization point."""
        status = self._request(OP_LIST_COUNT, key_prefix)[0]
        if status != ST_OK:
            raise ChannelFailure(f"list {key_prefix!r} failed with status {status}")
        try:
            (count,) = struct.unpack("<I", recv_exact(self._sock, 4))
            return count
        except OSError as e:
            raise ChannelFailure(f"store transport error: {e}")

    def get_poll(self, key: str, policy: BackoffPolicy = BackoffPolicy(),
                 deadline: float | None = None) -> bytes:
        """Poll until the key appears.

        Sleeps max(backoff, profile poll floor) between attempts; every
        attempt is metered server-side because reads are what pull channels
        charge for. Raises RetriesExhausted after the policy's cap, or
        Timeout if a deadline cuts the wait short.
        """
        for attempt in range(1, policy.max_retries + 1):
            value = self.get(key)
            if value is not None:
                return value
            if attempt == policy.max_retries:
                break
            if deadline is not None and time.monotonic() > deadline:
                raise Timeout(f"gave up polling {key!r} at deadline")
            time.sleep(max(backoff_delay(attempt, policy), self.profile.poll_floor))
        raise RetriesExhausted(
            f"{policy.max_retries} poll attempts for {key!r} saw no value")

    def poll_count(self, prefix: str, target: int,
                   policy: BackoffPolicy = BackoffPolicy(),
                   deadline: float | None = None,
                   stop_prefix: str | None = None) -> None:
        """Poll list_count(prefix) until it reaches target.

        ``stop_prefix`` is an alternative completion signal: any key under it
        also ends the wait (used by the two-phase barrier).
        """
        for attempt in range(1, policy.max_retries + 1):
            if self.list_count(prefix) >= target:
                return
            if stop_prefix is not None and self.list_count(stop_prefix) > 0:
                return
            if attempt == policy.max_retries:
                break
            if deadline is not None and time.monotonic() > deadline:
                raise Timeout(f"gave up waiting for {target} keys under {prefix!r}")
            time.sleep(max(backoff_delay(attempt, policy), self.profile.poll_floor))
        raise RetriesExhausted(
            f"{policy.max_retries} polls under {prefix!r} never reached {target}")
