"""Pure communication-schedule generators for the tree and doubling collectives.

Everything here is deterministic data: schedules are computed identically on
every rank, so each participant can read off its own sends and receives
without negotiation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .core import ProtocolViolation


@dataclass(frozen=True)
class ScheduleStep:
    round: int      # 1-based
    sender: int
    receiver: int


@dataclass(frozen=True)
class CommSchedule:
    steps: tuple[ScheduleStep, ...]

    @property
    def max_round(self) -> int:
        return max((s.round for s in self.steps), default=0)

    def sends_of(self, rank: int) -> list[ScheduleStep]:
        return [s for s in self.steps if s.sender == rank]

    def receive_of(self, rank: int) -> ScheduleStep | None:
        for s in self.steps:
            if s.receiver == rank:
                return s
        return None


def ceil_log2(n: int) -> int:
    return max(n - 1, 0).bit_length()


def binomial_schedule(n: int, root: int) -> CommSchedule:
    """Broadcast tree from ``root``: n-1 messages in ceil(log2 n) rounds.

    Ranks are relabeled so the root is virtual rank 0. Spans halve per
    round: in round k (1-based) a holder v sends to v + 2^(K-k), so the
    subtree below a receiver is the contiguous virtual range of that span.
    Contiguity is what lets scatter and gather ship subtree slices along the
    same tree. Every non-root receives exactly once, always before any of
    its own sends.
    """
    if not 0 <= root < n:
        raise ProtocolViolation(f"root {root} out of range [0, {n})")
    depth = ceil_log2(n)
    steps = []
    for k in range(1, depth + 1):
        span = 1 << (depth - k)
        for v in range(0, n, span * 2):
            u = v + span
            if u < n:
                steps.append(ScheduleStep(k, (v + root) % n, (u + root) % n))
    return CommSchedule(tuple(steps))


def subtree_span(n: int, depth_round: int) -> int:
    """Virtual-rank width of the subtree handed over in a given round."""
    return 1 << (ceil_log2(n) - depth_round)


def reduce_tree_steps(n: int) -> list[ScheduleStep]:
    """Mirrored binomial tree toward rank 0 that keeps partials contiguous.

    In round k, ranks whose low bits equal 2^(k-1) send their block to the
    block start below them, so every fold combines two adjacent rank ranges
    in ascending order. That makes the tree safe for non-commutative
    reductions.
    """
    steps = []
    k = 0
    while (1 << k) < n:
        span = 1 << k
        for v in range(span, n, span * 2):
            steps.append(ScheduleStep(k + 1, v, v - span))
        k += 1
    return steps


class RoundKind(enum.Enum):
    FOLD = "fold"        # extra ranks push their input into a neighbor
    EXCHANGE = "exchange"  # bidirectional partner swap
    UNFOLD = "unfold"    # neighbors push the final value back out


@dataclass(frozen=True)
class DoublingRound:
    kind: RoundKind
    # rank -> partner; exchange rounds list both directions, fold/unfold
    # rounds list only the participating edge endpoints.
    partners: dict[int, int] = field(hash=False)

    def is_perfect_matching(self, n: int) -> bool:
        return (len(self.partners) == n
                and all(self.partners.get(self.partners[r]) == r
                        for r in self.partners))


def largest_pow2_below(n: int) -> int:
    p = 1
    while p * 2 <= n:
        p *= 2
    return p


def recursive_doubling_rounds(n: int) -> list[DoublingRound]:
    """Partner maps for doubling-based allreduce, fold/unfold included.

    Power-of-two n: log2(n) exchange rounds, round k pairing r with
    r XOR 2^k. Otherwise the first 2*(n - p) ranks pre-fold pairwise into
    p = largest power of two participants and unfold afterwards.
    """
    if n < 1:
        raise ProtocolViolation("world size must be >= 1")
    p = largest_pow2_below(n)
    rem = n - p
    rounds: list[DoublingRound] = []
    if rem:
        rounds.append(DoublingRound(
            RoundKind.FOLD, {2 * i + 1: 2 * i for i in range(rem)}))

    def to_real(v: int) -> int:
        return 2 * v if v < rem else v + rem

    k = 1
    while k < p:
        partners = {}
        for v in range(p):
            partners[to_real(v)] = to_real(v ^ k)
        rounds.append(DoublingRound(RoundKind.EXCHANGE, partners))
        k *= 2
    if rem:
        rounds.append(DoublingRound(
            RoundKind.UNFOLD, {2 * i: 2 * i + 1 for i in range(rem)}))
    return rounds


def doubling_block(n: int, rank: int) -> tuple[int, int] | None:
    """Contiguous rank block [lo, hi) whose inputs a participant holds after
    the fold step; None for ranks that folded away."""
    p = largest_pow2_below(n)
    rem = n - p
    if rank < 2 * rem:
        if rank % 2 == 1:
            return None
        return (rank, rank + 2)
    return (rank, rank + 1)


def required_pairs(n: int) -> set[tuple[int, int]]:
    """Peer pairs the seven collectives can touch for root-0 schedules:
    broadcast-tree edges, reduce/scan-tree edges, and doubling partners."""
    pairs: set[tuple[int, int]] = set()
    for s in binomial_schedule(n, 0).steps:
        pairs.add((min(s.sender, s.receiver), max(s.sender, s.receiver)))
    for s in reduce_tree_steps(n):
        pairs.add((min(s.sender, s.receiver), max(s.sender, s.receiver)))
    for rnd in recursive_doubling_rounds(n):
        for a, b in rnd.partners.items():
            pairs.add((min(a, b), max(a, b)))
    return pairs
