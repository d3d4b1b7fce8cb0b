"""Schedule generator properties, enumerated up to n=64."""

import math

import pytest

from fmi import ProtocolViolation
from fmi.schedules import (RoundKind, binomial_schedule, ceil_log2,
                           recursive_doubling_rounds, reduce_tree_steps,
                           required_pairs)



def check_binomial_invariants(n, root):
    sched = binomial_schedule(n, root)
    assert len(sched.steps) == n - 1
    receivers = [s.receiver for s in sched.steps]
    assert sorted(receivers) == sorted(set(range(n)) - {root})
    assert len(set(receivers)) == n - 1
    recv_round = {root: 0}
    for s in sched.steps:
        recv_round[s.receiver] = s.round
    for s in sched.steps:
        assert s.sender in recv_round, "sender must already hold the data"
        assert recv_round[s.sender] < s.round
    assert sched.max_round == ceil_log2(n) if n > 1 else sched.max_round == 0


def test_binomial_single_rank():
    assert binomial_schedule(1, 0).steps == ()


def test_binomial_n8():
    sched = binomial_schedule(8, 0)
    assert len(sched.steps) == 7
    assert sched.max_round == 3


def test_binomial_n5_root2():
    sched = binomial_schedule(5, 2)
    assert len(sched.steps) == 4
    assert sched.max_round == 3
    check_binomial_invariants(5, 2)


def test_binomial_root_out_of_range():
    with pytest.raises(ProtocolViolation):
        binomial_schedule(4, 4)


@pytest.mark.parametrize("n", list(range(1, 65)))
def test_binomial_all_sizes_all_roots(n):
    for root in range(n):
        check_binomial_invariants(n, root)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32, 64])
def test_doubling_power_of_two_perfect_matchings(n):
    rounds = recursive_doubling_rounds(n)
    assert len(rounds) == int(math.log2(n)) if n > 1 else rounds == []
    for rnd in rounds:
        assert rnd.kind is RoundKind.EXCHANGE
        assert rnd.is_perfect_matching(n)


def test_doubling_n1():
    assert recursive_doubling_rounds(1) == []


def test_doubling_n6_shape():
    rounds = recursive_doubling_rounds(6)
    kinds = [r.kind for r in rounds]
    assert kinds == [RoundKind.FOLD, RoundKind.EXCHANGE, RoundKind.EXCHANGE,
                     RoundKind.UNFOLD]


@pytest.mark.parametrize("n", list(range(1, 33)))
def test_doubling_simulation_matches_serial_sum(n):
    """Execute the rounds with plain integer sums: every rank must end with
    the total, whatever the fold/unfold shape did."""
    values = {r: r + 1 for r in range(n)}
    acc = dict(values)
    alive = set(range(n))
    for rnd in recursive_doubling_rounds(n):
        if rnd.kind is RoundKind.FOLD:
            for sender, receiver in rnd.partners.items():
                acc[receiver] += acc[sender]
                alive.discard(sender)
        elif rnd.kind is RoundKind.EXCHANGE:
            snapshot = dict(acc)
            for a, b in rnd.partners.items():
                acc[a] = snapshot[a] + snapshot[b]
        else:
            for sender, receiver in rnd.partners.items():
                acc[receiver] = acc[sender]
                alive.add(receiver)
    expected = sum(values.values())
    assert alive == set(range(n))
    for r in range(n):
        assert acc[r] == expected, f"rank {r} of {n}"


@pytest.mark.parametrize("n", list(range(1, 33)))
def test_reduce_tree_contiguous_ascending(n):
    """The mirrored tree folds adjacent ascending blocks into rank 0."""
    blocks = {r: [r] for r in range(n)}
    for step in reduce_tree_steps(n):
        low = blocks[step.receiver]
        high = blocks.pop(step.sender)
        assert low[-1] + 1 == high[0] or low[-1] < high[0]
        assert max(low) < min(high), "fold must keep ascending order"
        blocks[step.receiver] = low + high
    assert list(blocks) == [0]
    assert blocks[0] == list(range(n))
    assert len(reduce_tree_steps(n)) == n - 1


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6, 8, 13, 16])
def test_required_pairs_cover_schedules(n):
    pairs = required_pairs(n)
    full = {(a, b) for a in range(n) for b in range(a + 1, n)}
    assert pairs <= full
    # every binomial root-0 edge and every doubling partner is present
    for s in binomial_schedule(n, 0).steps:
        assert (min(s.sender, s.receiver), max(s.sender, s.receiver)) in pairs
