"""Hole punching, framing, and tag-matched receive."""

import itertools
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmi import ChannelFailure, ProtocolViolation
from fmi.direct import (FRAME_HEADER, connect_pair, decode_frame_header,
                        encode_frame, pairing_name)

from conftest import unique_name


def punch(coordinator, a=0, b=1, name=None, timeout=5.0):
    """Punch one pair on loopback; returns both PeerConnection ends."""
    name = name or unique_name("punch")
    out = {}

    def side(self_rank, peer_rank):
        out[self_rank] = connect_pair(coordinator.endpoint, name, 0,
                                      self_rank, peer_rank, timeout)

    t1 = threading.Thread(target=side, args=(a, b))
    t2 = threading.Thread(target=side, args=(b, a))
    t1.start(); t2.start(); t1.join(10); t2.join(10)
    assert a in out and b in out, "punch did not complete"
    return out[a], out[b]


def test_frame_roundtrip_exact():
    frame = encode_frame(7, 3, b"abc")
    assert frame[:2] == b"FM"
    seq, tag, length = decode_frame_header(frame[:FRAME_HEADER.size])
    assert (seq, tag, length) == (7, 3, 3)
    assert frame[FRAME_HEADER.size:] == b"abc"


@settings(max_examples=100, deadline=None)
@given(seq=st.integers(0, 2**32 - 1), tag=st.integers(0, 2**16 - 1),
       payload=st.binary(max_size=4096))
def test_frame_roundtrip_property(seq, tag, payload):
    frame = encode_frame(seq, tag, payload)
    got = decode_frame_header(frame[:FRAME_HEADER.size])
    assert got == (seq, tag, len(payload))
    assert frame[FRAME_HEADER.size:] == payload


def test_frame_large_length_arithmetic():
    # >4 GiB lengths must survive the u64 field without materializing them
    big = 5 * 2**30 + 17
    header = FRAME_HEADER.pack(b"FM", 0, 0, big)
    assert decode_frame_header(header) == (0, 0, big)


def test_frame_bad_magic():
    header = FRAME_HEADER.pack(b"XX", 0, 0, 0)
    with pytest.raises(ProtocolViolation):
        decode_frame_header(header)


def test_pairing_name_convention():
    assert pairing_name("c0", 5, 2, 3) == "c0:2-5:3"
    assert pairing_name("c0", 2, 5, 3) == "c0:2-5:3"


def test_connect_pair_self():
    with pytest.raises(ProtocolViolation):
        connect_pair(("127.0.0.1", 1), "x", 0, 1, 1, 1.0)


def test_connect_pair_no_coordinator():
    with pytest.raises(ChannelFailure):
        connect_pair(("127.0.0.1", 1), "x", 0, 0, 1, 1.0)


def test_punch_loopback_under_second(coordinator):
    t0 = time.monotonic()
    c0, c1 = punch(coordinator)
    try:
        assert time.monotonic() - t0 < 1.0
        c0.send(1, b"hello")
        assert c1.recv(1) == b"hello"
    finally:
        c0.close(); c1.close()


def test_echo_roundtrip(coordinator):
    c0, c1 = punch(coordinator)
    try:
        c0.send(3, b"abc")
        assert c1.recv(3) == b"abc"
        c1.send(3, b"abc")
        assert c0.recv(3) == b"abc"
    finally:
        c0.close(); c1.close()


def test_tag_queueing(coordinator):
    c0, c1 = punch(coordinator)
    try:
        c0.send(1, b"x")
        c0.send(2, b"y")
        assert c1.recv(2) == b"y"
        assert c1.recv(1) == b"x"
    finally:
        c0.close(); c1.close()


def test_fifo_per_tag(coordinator):
    c0, c1 = punch(coordinator)
    try:
        for i in range(20):
            c0.send(5, bytes([i]))
        got = [c1.recv(5)[0] for i in range(20)]
        assert got == list(range(20))
    finally:
        c0.close(); c1.close()


def test_recv_on_closed_stream(coordinator):
    c0, c1 = punch(coordinator)
    c0.close()
    with pytest.raises(ChannelFailure):
        c1.recv(0)
    c1.close()


def test_seq_increments_and_counts(coordinator):
    c0, c1 = punch(coordinator)
    try:
        for i in range(5):
            c0.send(0, b"")
        assert c0.next_send_seq == 5
        assert c0.frames_sent == 5
        for i in range(5):
            c1.recv(0)
        assert c1.next_recv_seq == 5
    finally:
        c0.close(); c1.close()


def test_empty_and_large_payloads(coordinator):
    c0, c1 = punch(coordinator)
    try:
        c0.send(9, b"")
        assert c1.recv(9) == b""
        blob = bytes(range(256)) * 4096  # 1 MiB
        c0.send(9, blob)
        assert c1.recv(9) == blob
    finally:
        c0.close(); c1.close()


def test_all_28_pairs_of_8_ranks(coordinator):
    """Punch C(8,2) pairs concurrently and ping each connection."""
    name = unique_name("mesh")
    pairs = list(itertools.combinations(range(8), 2))
    conns = {}
    lock = threading.Lock()

    def one_end(self_rank, peer_rank):
        conn = connect_pair(coordinator.endpoint, name, 0, self_rank,
                            peer_rank, 15.0)
        with lock:
            conns[(self_rank, peer_rank)] = conn

    with ThreadPoolExecutor(max_workers=56) as pool:
        futures = []
        for a, b in pairs:
            futures.append(pool.submit(one_end, a, b))
            futures.append(pool.submit(one_end, b, a))
        for f in futures:
            f.result(timeout=30)

    assert len(conns) == 56  # both ends of 28 pairs
    try:
        for a, b in pairs:
            conns[(a, b)].send(1, bytes([a, b]))
            assert conns[(b, a)].recv(1) == bytes([a, b])
    finally:
        for conn in conns.values():
            conn.close()


def test_pingpong_median_under_1ms(coordinator):
    c0, c1 = punch(coordinator)

    def echo():
        for _ in range(200):
            c1.send(0, c1.recv(0))

    t = threading.Thread(target=echo)
    t.start()
    samples = []
    try:
        for _ in range(200):
            t0 = time.perf_counter()
            c0.send(0, b"\x00")
            c0.recv(0)
            samples.append((time.perf_counter() - t0) / 2)
        t.join(5)
    finally:
        c0.close(); c1.close()
    assert statistics.median(samples) < 1e-3
