"""Reliable datagram messaging, a deterministic network simulator, and the
MalStone benchmark built on top of them."""

from .gmp import (Endpoint, GmpConfig, GmpPacket, Kind, PacketError, PeerUnreachable, TransferTimeout,
                  decode_packet, encode_packet)
from .malgen import EventRecord, GenConfig, Records, format_record, parse_record, read_records
from .malstone import RatioTable, compromise_times, malstone_a, malstone_b
from .netsim import LinkSpec, Scenario, SimNet, builtin_scenario, load_scenario
from .topology import TopologyTree, UnknownNode

__version__ = "0.1.0"

__all__ = [
    "Endpoint", "GmpConfig", "GmpPacket", "Kind", "PacketError", "PeerUnreachable", "TransferTimeout",
    "decode_packet", "encode_packet", "EventRecord", "GenConfig", "Records", "format_record",
    "parse_record", "read_records", "RatioTable", "compromise_times", "malstone_a", "malstone_b",
    "LinkSpec", "Scenario", "SimNet", "builtin_scenario", "load_scenario", "TopologyTree", "UnknownNode",
]
