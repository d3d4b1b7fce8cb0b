"""fmi: message passing for ephemeral, NAT-isolated workers.

Ranked communicators over two channel families (direct TCP established by a
hole-punching rendezvous, or a storage-mediated channel with polling), the
full collective-operation set, and an alpha-beta time/cost model that drives
channel selection.
"""

from .core import (BYTE, FLOAT64, INT32, INT64, MAX, MIN, NOOP, PROD, SUM,
                   ChannelFailure, DataBuffer, Datatype, ErrorKind, FmiError,
                   JoinFailed, MessageTooLarge, PeerFailure,
                   ProtocolViolation, ReductionOp, RetriesExhausted, Timeout,
                   apply_reduce, buffer_of, bytes_buffer)
from .communicator import (ChannelSpec, Communicator, CommunicatorConfig,
                           direct_channel, join, mediated_channel)
from .profiles import (ChannelName, ChannelProfile, PriceComponents,
                       TABLE2_PROFILES, TABLE3_PRICES, profile_by_name)
from .perfmodel import (CostQuery, CostReport, SelectionPolicy, channel_cost,
                        exchange_report, function_cost, select_channel,
                        transfer_time)
from .mediated import (BackoffPolicy, MeterLedger, StoreClient, StoreServer,
                       backoff_delay, metered_cost, worst_case_backoff_total)
from .rendezvous import RendezvousServer, pair

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
