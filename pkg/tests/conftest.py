"""Shared fixtures: in-process services and a threaded rank harness."""

import itertools
import threading
from dataclasses import replace

import pytest

from fmi import RendezvousServer, StoreServer, join
from fmi.communicator import (CommunicatorConfig, direct_channel,
                              mediated_channel)
from fmi.profiles import REDIS_TABLE2

_counter = itertools.count()


def unique_name(prefix: str = "t") -> str:
    return f"{prefix}{next(_counter)}"


# Zero-latency store profile: collectives correctness does not depend on the
# injected service times, and the oracle suite has thousands of operations.
FAST_PROFILE = replace(REDIS_TABLE2, alpha=0.0, beta_inv=1e12,
                       poll_floor=0.0, label="fast")


@pytest.fixture(scope="module")
def coordinator():
    server = RendezvousServer().start()
    yield server
    server.stop()


@pytest.fixture(scope="module")
def fast_store():
    server = StoreServer(FAST_PROFILE).start()
    yield server
    server.stop()


def direct_configs(n, coordinator, name=None, **overrides):
    name = name or unique_name("d")
    spec = direct_channel(coordinator.endpoint)
    overrides.setdefault("join_timeout", 30.0)
    return [CommunicatorConfig(name=name, world_size=n, rank=r, channel=spec,
                               **overrides)
            for r in range(n)]


def mediated_configs(n, store, name=None, profile=FAST_PROFILE, **overrides):
    name = name or unique_name("m")
    spec = mediated_channel(store.endpoint, profile)
    overrides.setdefault("join_timeout", 30.0)
    return [CommunicatorConfig(name=name, world_size=n, rank=r, channel=spec,
                               **overrides)
            for r in range(n)]


def run_world(configs, body, timeout=120.0):
    """One thread per rank: join, run body(comm), collect results and errors.

    Returns (results, errors), both indexed by rank. Raises if a thread is
    still alive at the deadline (deadlock guard).
    """
    n = len(configs)
    results = [None] * n
    errors = [None] * n

    def runner(i):
        comm = None
        try:
            comm = join(configs[i])
            results[i] = body(comm)
        except BaseException as e:  # noqa: BLE001 - harness must capture all
            errors[i] = e
        finally:
            if comm is not None:
                comm.close()

    threads = [threading.Thread(target=runner, args=(i,), daemon=True)
               for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
        if t.is_alive():
            raise TimeoutError(f"rank thread {t.name} hung beyond {timeout}s")
    return results, errors


def expect_clean(errors):
    failed = [(i, e) for i, e in enumerate(errors) if e is not None]
    assert not failed, f"rank failures: {failed}"
