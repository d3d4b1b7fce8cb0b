"""Collectives against the serial oracle, both channel families."""

import random
import threading
import time

import pytest

from fmi import (BYTE, FLOAT64, INT32, INT64, MAX, MIN, PROD, SUM, DataBuffer,
                 ProtocolViolation, ReductionOp, buffer_of)

import oracles
from conftest import (FAST_PROFILE, direct_configs, expect_clean,
                      mediated_configs, run_world, unique_name)

DTYPES = {"int32": INT32, "int64": INT64, "float64": FLOAT64, "byte": BYTE}
OPS = {"sum": SUM, "prod": PROD, "min": MIN, "max": MAX}


def family_configs(family, n, coordinator, fast_store, **overrides):
    if family == "direct":
        return direct_configs(n, coordinator, **overrides)
    return mediated_configs(n, fast_store, **overrides)


def gen_values(rng: random.Random, kind: str, op: str, count: int) -> list:
    """Association-exact inputs so tree folds match the serial fold bitwise.

    Integer dtypes wrap modulo their width (associative, any values);
    float64 sums use integer-valued doubles and float64 products use powers
    of two, both exact under any grouping.
    """
    if kind == "int32":
        return [rng.randint(-2**31, 2**31 - 1) for _ in range(count)]
    if kind == "int64":
        return [rng.randint(-2**63, 2**63 - 1) for _ in range(count)]
    if kind == "byte":
        return [rng.randint(0, 255) for _ in range(count)]
    if op == "prod":
        return [float(rng.choice([-1, 1]) * 2.0 ** rng.randint(-8, 8))
                for _ in range(count)]
    if op == "sum":
        return [float(rng.randint(-2**20, 2**20)) for _ in range(count)]
    return [rng.uniform(-1e6, 1e6) for _ in range(count)]


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_bcast_matches_root(family, n, coordinator, fast_store):
    rng = random.Random(42 + n)
    values = [[rng.randint(0, 10**6) for _ in range(16)] for _ in range(n)]
    root = rng.randrange(n)

    def body(comm):
        return comm.bcast(buffer_of(values[comm.rank], INT32), root).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert results == oracles.oracle_bcast(values, root)


@pytest.mark.parametrize("family", ["direct", "mediated"])
def test_bcast_10kb_payload(family, coordinator, fast_store):
    n = 7
    rng = random.Random(7)
    payload = bytes(rng.getrandbits(8) for _ in range(10_000))

    def body(comm):
        own = payload if comm.rank == 2 else b"\x00" * len(payload)
        return comm.bcast(DataBuffer(own, BYTE, len(own)), 2).data

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert all(r == payload for r in results)


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n", [1, 4, 8])
def test_barrier_holds_until_everyone_entered(family, n, coordinator, fast_store):
    delays = {r: 0.0 for r in range(n)}
    if n > 1:
        delays[min(3, n - 1)] = 0.2
    entered = {}
    returned = {}
    lock = threading.Lock()

    def body(comm):
        time.sleep(delays[comm.rank])
        with lock:
            entered[comm.rank] = time.monotonic()
        comm.barrier()
        with lock:
            returned[comm.rank] = time.monotonic()

    _, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert min(returned.values()) >= max(entered.values())


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n", [1, 4, 6])
def test_gather_concatenates_in_rank_order(family, n, coordinator, fast_store):
    rng = random.Random(n)
    values = [[rng.randint(-100, 100) for _ in range(5)] for _ in range(n)]
    root = n - 1

    def body(comm):
        return comm.gather(buffer_of(values[comm.rank], INT32), root).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert results == oracles.oracle_gather(values, root)


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n,root", [(1, 0), (3, 0), (5, 2), (8, 7)])
def test_scatter_slices(family, n, root, coordinator, fast_store):
    per = 1000 if n == 5 else 4
    root_values = list(range(n * per))

    def body(comm):
        if comm.rank == root:
            buf = buffer_of(root_values, INT32)
        else:
            buf = buffer_of([], INT32)
        return comm.scatter(buf, root).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert results == oracles.oracle_scatter(root_values, n, root)


def test_scatter_identity_assert(coordinator):
    """Each of 3 ranks receives its own id from a {0,1,2} scatter."""
    def body(comm):
        buf = buffer_of([0, 1, 2], INT32) if comm.rank == 0 \
            else buffer_of([], INT32)
        recv = comm.scatter(buf, 0)
        assert recv.values()[0] == comm.rank
        return recv.values()

    results, errors = run_world(direct_configs(3, coordinator), body)
    expect_clean(errors)
    assert results == [[0], [1], [2]]


def test_scatter_indivisible_count(coordinator):
    def body(comm):
        buf = buffer_of([1, 2, 3], INT32) if comm.rank == 0 \
            else buffer_of([], INT32)
        comm.scatter(buf, 0)

    _, errors = run_world(direct_configs(2, coordinator), body)
    assert isinstance(errors[0], ProtocolViolation)


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n,root", [(1, 0), (4, 0), (9, 4)])
def test_reduce_fold_at_root(family, n, root, coordinator, fast_store):
    rng = random.Random(n * 31 + root)
    values = [[rng.randint(-10**6, 10**6) for _ in range(8)] for _ in range(n)]

    def body(comm):
        return comm.reduce(buffer_of(values[comm.rank], INT32), MAX,
                           root).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert results == oracles.oracle_reduce(values, "max", "int32", root)


def test_reduce_sum_of_rank_plus_one(coordinator):
    def body(comm):
        return comm.reduce(buffer_of([comm.rank + 1], INT32), SUM, 0).values()

    results, errors = run_world(direct_configs(4, coordinator), body)
    expect_clean(errors)
    assert results[0] == [10]


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n", [1, 2, 4, 6, 8, 11, 16])
def test_allreduce_everyone_agrees(family, n, coordinator, fast_store):
    rng = random.Random(n * 7)
    values = [[rng.randint(-10**9, 10**9) for _ in range(4)] for _ in range(n)]

    def body(comm):
        return comm.allreduce(buffer_of(values[comm.rank], INT64), SUM).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert results == oracles.oracle_allreduce(values, "sum", "int64")


def test_allreduce_nonpower_sum_of_ranks(coordinator):
    def body(comm):
        return comm.allreduce(buffer_of([comm.rank], INT32), SUM).values()

    results, errors = run_world(direct_configs(6, coordinator), body)
    expect_clean(errors)
    assert results == [[15]] * 6


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("n", [1, 3, 4, 7, 8])
def test_scan_inclusive_prefix(family, n, coordinator, fast_store):
    rng = random.Random(n * 13)
    values = [[rng.randint(-10**6, 10**6) for _ in range(6)] for _ in range(n)]

    def body(comm):
        return comm.scan(buffer_of(values[comm.rank], INT32), SUM).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert results == oracles.oracle_scan(values, "sum", "int32")


def test_scan_explicit_example(coordinator):
    """Inputs 1,2,3 -> prefix sums 1,3,6."""
    def body(comm):
        return comm.scan(buffer_of([comm.rank + 1], INT32), SUM).values()

    results, errors = run_world(direct_configs(3, coordinator), body)
    expect_clean(errors)
    assert results == [[1], [3], [6]]


@pytest.mark.parametrize("family", ["direct", "mediated"])
@pytest.mark.parametrize("projection,expected_rank", [("first", 0), ("last", -1)])
def test_non_commutative_ordering(family, projection, expected_rank,
                                  coordinator, fast_store):
    """Projection operators expose any fold-order mistake immediately."""
    n = 6
    fn = (lambda a, b: a) if projection == "first" else (lambda a, b: b)
    op = ReductionOp(projection, fn, commutative=False)
    values = [[r * 10 + 1, r * 10 + 2] for r in range(n)]

    def body(comm):
        out = {}
        out["reduce"] = comm.reduce(buffer_of(values[comm.rank], INT32),
                                    op, 2).values()
        out["allreduce"] = comm.allreduce(buffer_of(values[comm.rank], INT32),
                                          op).values()
        out["scan"] = comm.scan(buffer_of(values[comm.rank], INT32),
                                op).values()
        return out

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    want = values[expected_rank]
    assert results[2]["reduce"] == want
    for r in range(n):
        assert results[r]["allreduce"] == want
        # first-projection scan keeps rank 0's input; last-projection
        # scan keeps each rank's own
        assert results[r]["scan"] == (values[0] if projection == "first"
                                      else values[r])


@pytest.mark.parametrize("family", ["direct", "mediated"])
def test_empty_buffers_all_collectives(family, coordinator, fast_store):
    n = 4

    def body(comm):
        empty = buffer_of([], INT32)
        out = [comm.bcast(empty, 0).count,
               comm.gather(empty, 0).count,
               comm.scatter(empty, 0).count,
               comm.reduce(empty, SUM, 0).count,
               comm.allreduce(empty, SUM).count,
               comm.scan(empty, SUM).count]
        comm.barrier()
        return out

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    assert all(all(c == 0 for c in r) for r in results)


def test_mediated_cleanup_leaves_no_keys(coordinator, fast_store):
    """After each collective completes everywhere, its prefix is empty."""
    n = 5
    name = unique_name("clean")

    def body(comm):
        comm.bcast(buffer_of([1, 2], INT32), 1)
        comm.barrier()
        comm.gather(buffer_of([comm.rank], INT32), 0)
        comm.scatter(buffer_of(list(range(n)), INT32)
                     if comm.rank == 0 else buffer_of([], INT32), 0)
        comm.reduce(buffer_of([comm.rank], INT32), SUM, 3)
        comm.allreduce(buffer_of([comm.rank], INT32), SUM)
        comm.scan(buffer_of([comm.rank], INT32), SUM)

    _, errors = run_world(mediated_configs(n, fast_store, name=name), body)
    expect_clean(errors)
    client_check = __import__("fmi").StoreClient(fast_store.endpoint,
                                                 FAST_PROFILE)
    assert client_check.list_count(f"{name}/") == 0
    client_check.close()


def test_direct_bcast_message_economy(coordinator):
    """n=8 broadcast must push exactly 7 payload frames in total."""
    n = 8

    def body(comm):
        before = comm.frames_sent()  # join traffic is not bcast's
        comm.bcast(buffer_of([9], INT32), 0)
        return comm.frames_sent() - before

    results, errors = run_world(direct_configs(n, coordinator), body)
    expect_clean(errors)
    assert sum(results) == 7


def test_direct_allreduce_message_economy(coordinator):
    """Power-of-two allreduce: n * log2(n) frames."""
    n = 8

    def body(comm):
        before = comm.frames_sent()
        comm.allreduce(buffer_of([1], INT32), SUM)
        return comm.frames_sent() - before

    results, errors = run_world(direct_configs(n, coordinator), body)
    expect_clean(errors)
    assert sum(results) == n * 3


@pytest.mark.parametrize("family", ["direct", "mediated"])
def test_oracle_equivalence_randomized(family, coordinator, fast_store):
    """Randomized sweep: every collective, mixed dtypes/ops, n up to 16."""
    rng = random.Random(20240817)
    trials = 25
    for _ in range(trials):
        n = rng.choice([1, 2, 3, 4, 5, 6, 7, 8, 12, 16])
        kind = rng.choice(list(DTYPES))
        opname = rng.choice(list(OPS))
        count = rng.choice([0, 1, 3, 17])
        coll = rng.choice(["bcast", "gather", "scatter", "reduce",
                           "allreduce", "scan"])
        root = rng.randrange(n)
        inputs = [gen_values(rng, kind, opname, count) for _ in range(n)]
        run_trial(family, coordinator, fast_store, n, kind, opname, count,
                  coll, root, inputs)


def run_trial(family, coordinator, fast_store, n, kind, opname, count,
              coll, root, inputs):
    dtype, op = DTYPES[kind], OPS[opname]
    scatter_root_input = (inputs[root] * n)[:count * n]

    def body(comm):
        own = buffer_of(inputs[comm.rank], dtype)
        if coll == "bcast":
            return comm.bcast(own, root).values()
        if coll == "gather":
            return comm.gather(own, root).values()
        if coll == "scatter":
            buf = buffer_of(scatter_root_input if comm.rank == root else [],
                            dtype)
            return comm.scatter(buf, root).values()
        if coll == "reduce":
            return comm.reduce(own, op, root).values()
        if coll == "allreduce":
            return comm.allreduce(own, op).values()
        return comm.scan(own, op).values()

    results, errors = run_world(
        family_configs(family, n, coordinator, fast_store), body)
    expect_clean(errors)
    if coll == "bcast":
        expected = oracles.oracle_bcast(inputs, root)
    elif coll == "gather":
        expected = oracles.oracle_gather(inputs, root)
    elif coll == "scatter":
        expected = oracles.oracle_scatter(scatter_root_input, n, root)
    elif coll == "reduce":
        expected = oracles.oracle_reduce(inputs, opname, kind, root)
    elif coll == "allreduce":
        expected = oracles.oracle_allreduce(inputs, opname, kind)
    else:
        expected = oracles.oracle_scan(inputs, opname, kind)
    context = f"{family}/{coll} n={n} {kind}/{opname} count={count} root={root}"
    assert results == expected, context
