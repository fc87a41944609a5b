"""Point-to-point message transports shared by the island engine."""

from .base import (
    CHANNEL_NAMES,
    CHANNELS,
    DEACTIVATE,
    EMIGRANT,
    INTRA_ISLAND,
    MIGRATION,
    NO_MODE,
    POLLINATION,
    Endpoint,
    Envelope,
    Layout,
    TimeoutExceeded,
    TransportClosed,
    TransportError,
    UnknownDestination,
    WorkerAddress,
    decode,
    encode,
)
from .inprocess import BarrierPending, InProcessEndpoint, InProcessHub
from .mesh import RANK_ENV, MeshEndpoint, RankEntry, RankTable, localhost_table, rank_from_env

__all__ = [
    "CHANNEL_NAMES",
    "CHANNELS",
    "DEACTIVATE",
    "EMIGRANT",
    "INTRA_ISLAND",
    "MIGRATION",
    "NO_MODE",
    "POLLINATION",
    "BarrierPending",
    "Endpoint",
    "Envelope",
    "InProcessEndpoint",
    "InProcessHub",
    "Layout",
    "MeshEndpoint",
    "RANK_ENV",
    "RankEntry",
    "RankTable",
    "TimeoutExceeded",
    "TransportClosed",
    "TransportError",
    "UnknownDestination",
    "WorkerAddress",
    "decode",
    "encode",
    "localhost_table",
    "rank_from_env",
]
