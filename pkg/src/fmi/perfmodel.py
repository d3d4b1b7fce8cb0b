"""Analytical time and dollar-cost engine for channel selection.

Transfer time follows the alpha-beta model: moving ``s`` bytes over a channel
takes ``alpha + s / beta_inv`` seconds. Worker cost is linear in participant
count, wall time, and memory; channel cost is per-request for object/key-value
stores and per-second for provisioned hosts. Money is computed in exact
decimals and rendered to cents only at the edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .core import ProtocolViolation
from .profiles import ChannelName, ChannelProfile

KB = 1000  # key-value capacity-unit granularity, bytes


@dataclass(frozen=True)
class CostQuery:
    """One repeated exchange: P participants with M GiB each move s bytes."""

    participants: int
    memory_gib: float
    size: int
    reps: int
    channel: ChannelProfile | None = None

    def __post_init__(self):
        if self.participants < 1:
            raise ProtocolViolation("participants must be >= 1")
        if self.memory_gib <= 0:
            raise ProtocolViolation("memory_gib must be > 0")
        if self.reps < 0:
            raise ProtocolViolation("reps must be >= 0")
        if self.size < 0:
            raise ProtocolViolation("size must be >= 0")


@dataclass(frozen=True)
class CostReport:
    """Predicted cost of a repeated exchange, split by where the money goes."""

    channel: str
    preset: str
    time_per_exchange: float       # seconds
    faas_cost: Decimal
    channel_cost: Decimal
    total_cost: Decimal

    def cents(self, value: Decimal) -> Decimal:
        return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def transfer_time(profile: ChannelProfile, size: int) -> float:
    """Minimal one-way transfer time in seconds for ``size`` bytes."""
    if size < 0:
        raise ProtocolViolation("size must be >= 0")
    return profile.alpha + size / profile.beta_inv


def function_cost(participants: int, t: float, memory_gib: float,
                  p_faas: Decimal) -> Decimal:
    """Worker-time dollars: participants x seconds x rate x GiB."""
    return (Decimal(participants) * Decimal(str(t))
            * p_faas * Decimal(str(memory_gib)))


def ddb_units(size: int) -> int:
    """Capacity units consumed by one key-value request of ``size`` bytes,
    rounded up per 1 kB."""
    return math.ceil(size / KB)


def channel_cost(profile: ChannelProfile, size: int, reps: int,
                 total_time: float) -> Decimal:
    """Dollars charged by the channel itself for ``reps`` exchanges.

    Request-billed stores charge one write plus one read per exchange;
    provisioned hosts (cache instance, punch host) charge for wall time.
    """
    p = profile.price
    if profile.name is ChannelName.S3:
        return Decimal(reps) * (p.p_s3_u + p.p_s3_d)
    if profile.name is ChannelName.DYNAMODB:
        return Decimal(reps) * Decimal(ddb_units(size)) * (p.p_ddb_u + p.p_ddb_d)
    if profile.name is ChannelName.REDIS:
        return Decimal(str(total_time)) * p.p_redis
    return Decimal(str(total_time)) * p.p_hps


def exchange_report(query: CostQuery, profile: ChannelProfile | None = None) -> CostReport:
    """Compose transfer time, worker cost, and channel cost for one query."""
    prof = profile or query.channel
    if prof is None:
        raise ProtocolViolation("no channel profile given")
    t = transfer_time(prof, query.size)
    total_time = t * query.reps
    faas = function_cost(query.participants, total_time, query.memory_gib,
                         prof.price.p_faas)
    chan = channel_cost(prof, query.size, query.reps, total_time)
    return CostReport(
        channel=prof.name.value,
        preset=prof.label,
        time_per_exchange=t,
        faas_cost=faas,
        channel_cost=chan,
        total_cost=faas + chan,
    )


class SelectionPolicy(enum.Enum):
    MIN_COST = "min_cost"
    MIN_TIME = "min_time"
    MIN_COST_UNDER_TIME_BUDGET = "min_cost_under_time_budget"


def select_channel(profiles: list[ChannelProfile], query: CostQuery,
                   policy: SelectionPolicy = SelectionPolicy.MIN_COST,
                   time_budget: float | None = None) -> list[CostReport]:
    """Rank channels for a query under a policy; best first.

    Ties break toward lower per-exchange time, then lexicographic channel
    name. The budget policy drops channels whose per-exchange time exceeds
    the budget and fails if none remain, naming the tightest achievable time.
    """
    if not profiles:
        raise ProtocolViolation("profile list is empty")
    reports = [exchange_report(query, p) for p in profiles]
    if policy is SelectionPolicy.MIN_COST_UNDER_TIME_BUDGET:
        if time_budget is None:
            raise ProtocolViolation("policy requires a time budget")
        feasible = [r for r in reports if r.time_per_exchange <= time_budget]
        if not feasible:
            best = min(r.time_per_exchange for r in reports)
            raise ProtocolViolation(
                f"no channel meets a {time_budget:.6f}s budget; "
                f"tightest achievable is {best:.6f}s")
        reports = feasible
        key = lambda r: (r.total_cost, r.time_per_exchange, r.channel)
    elif policy is SelectionPolicy.MIN_TIME:
        key = lambda r: (r.time_per_exchange, r.time_per_exchange, r.channel)
    else:
        key = lambda r: (r.total_cost, r.time_per_exchange, r.channel)
    return sorted(reports, key=key)
