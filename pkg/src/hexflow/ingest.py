"""Capture-file ingestion: classic pcap parsing, bidirectional flow
segmentation, endpoint anonymization and packet selection.

Only classic pcap (not pcapng) with Ethernet link type is accepted, and only
IPv4 TCP/UDP packets are admissible for flow building; everything else is
counted and skipped.  Packet bytes kept for downstream tokenization start at
the IPv4 header (the link-layer frame is stripped).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (
    EmptyFlow,
    MalformedHeader,
    MalformedPacket,
    TruncatedRecord,
    UnsupportedLinkType,
)

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800
PROTO_TCP = 6
PROTO_UDP = 17

_GLOBAL_HEADER = struct.Struct("<IHHiIII")   # magic, vmaj, vmin, tz, sigfigs, snaplen, network
_RECORD_HEADER = struct.Struct("<IIII")      # ts_sec, ts_usec, incl_len, orig_len


@dataclass(frozen=True)
class RawPacketRecord:
    """One packet block as captured: link-layer frame plus capture metadata."""

    ts_sec: int
    ts_usec: int
    captured_bytes: bytes
    original_length: int

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec * 1e-6


class Direction(Enum):
    A_TO_B = "a>b"
    B_TO_A = "b>a"


@dataclass(frozen=True, order=True)
class Endpoint:
    ip: bytes   # 4 bytes, network order
    port: int

    def __str__(self) -> str:
        return f"{'.'.join(str(b) for b in self.ip)}:{self.port}"


@dataclass(frozen=True)
class FlowKey:
    """Canonical bidirectional 5-tuple: endpoint_a <= endpoint_b, so both
    directions of a session map to the same key."""

    endpoint_a: Endpoint
    endpoint_b: Endpoint
    protocol: str  # "tcp" | "udp"

    @staticmethod
    def from_endpoints(src: Endpoint, dst: Endpoint, protocol: str) -> tuple["FlowKey", Direction]:
        if (src.ip, src.port) <= (dst.ip, dst.port):
            return FlowKey(src, dst, protocol), Direction.A_TO_B
        return FlowKey(dst, src, protocol), Direction.B_TO_A

    def key_string(self) -> str:
        """Stable textual form used by label files."""
        return f"{self.protocol}|{self.endpoint_a}|{self.endpoint_b}"


@dataclass(frozen=True)
class AnonymizedPacket:
    """IPv4 header + transport header + payload with addresses/ports zeroed."""

    direction: Direction
    data: bytes
    arrival_index: int


@dataclass
class FlowRecord:
    """Ordered packets sharing one canonical bidirectional session key."""

    key: FlowKey
    packets: list[AnonymizedPacket] = field(default_factory=list)
    label: int | None = None


@dataclass
class IngestStats:
    """Counters for one segmentation pass."""

    packets_total: int = 0
    packets_kept: int = 0
    dropped_non_ethernet: int = 0
    dropped_non_ipv4: int = 0
    dropped_non_tcp_udp: int = 0
    dropped_malformed: int = 0
    flows: int = 0


def parse_pcap(data: bytes) -> list[RawPacketRecord]:
    """Decode a classic libpcap byte stream into per-packet records.

    Both endiannesses are accepted; the magic number decides how record
    headers are decoded.  Raises MalformedHeader, UnsupportedLinkType or
    TruncatedRecord.
    """
    if len(data) < _GLOBAL_HEADER.size:
        raise MalformedHeader(f"global header truncated: {len(data)} bytes")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif magic_le == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise MalformedHeader(f"bad magic 0x{magic_le:08X}")
    _, _, _, _, _, snaplen, network = struct.unpack_from(endian + "IHHiIII", data, 0)
    if network != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {network}, only Ethernet supported")

    records: list[RawPacketRecord] = []
    offset = _GLOBAL_HEADER.size
    rec = struct.Struct(endian + "IIII")
    while offset < len(data):
        if offset + rec.size > len(data):
            raise TruncatedRecord(f"record header truncated at byte {offset}")
        ts_sec, ts_usec, incl_len, orig_len = rec.unpack_from(data, offset)
        offset += rec.size
        if offset + incl_len > len(data):
            raise TruncatedRecord(
                f"record at byte {offset - rec.size} claims {incl_len} bytes, "
                f"{len(data) - offset} remain"
            )
        records.append(
            RawPacketRecord(ts_sec, ts_usec, bytes(data[offset:offset + incl_len]), orig_len)
        )
        offset += incl_len
    return records


def read_pcap(f: BinaryIO | str) -> list[RawPacketRecord]:
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return parse_pcap(fh.read())
    return parse_pcap(f.read())


def anonymize(packet_bytes: bytes) -> bytes:
    """Zero the source/destination IPv4 addresses and transport ports.

    Input must start at the IPv4 header.  Length is preserved and checksums
    are deliberately left untouched: the model consumes bytes, not valid
    packets.  Idempotent.
    """
    if len(packet_bytes) < 20:
        raise MalformedPacket(f"IPv4 header needs 20 bytes, got {len(packet_bytes)}")
    version = packet_bytes[0] >> 4
    if version != 4:
        raise MalformedPacket(f"IP version {version}, expected 4")
    ihl = (packet_bytes[0] & 0x0F) * 4
    if ihl < 20:
        raise MalformedPacket(f"IPv4 IHL {ihl} below minimum")
    if len(packet_bytes) < ihl + 4:
        raise MalformedPacket("transport ports truncated")
    out = bytearray(packet_bytes)
    out[12:20] = b"\x00" * 8              # src + dst address
    out[ihl:ihl + 4] = b"\x00" * 4        # src + dst port
    return bytes(out)


def _admit(record: RawPacketRecord, stats: IngestStats):
    """Classify one captured frame; returns (key, direction, ip_bytes) or None."""
    frame = record.captured_bytes
    if len(frame) < 14:
        stats.dropped_non_ethernet += 1
        return None
    ethertype = (frame[12] << 8) | frame[13]
    if ethertype != ETHERTYPE_IPV4:
        stats.dropped_non_ethernet += 1
        return None
    ip = frame[14:]
    if len(ip) < 20 or (ip[0] >> 4) != 4:
        stats.dropped_non_ipv4 += 1
        return None
    ihl = (ip[0] & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl + 4:
        stats.dropped_malformed += 1
        return None
    proto = ip[9]
    if proto == PROTO_TCP:
        protocol = "tcp"
    elif proto == PROTO_UDP:
        protocol = "udp"
    else:
        stats.dropped_non_tcp_udp += 1
        return None
    src = Endpoint(bytes(ip[12:16]), (ip[ihl] << 8) | ip[ihl + 1])
    dst = Endpoint(bytes(ip[16:20]), (ip[ihl + 2] << 8) | ip[ihl + 3])
    key, direction = FlowKey.from_endpoints(src, dst, protocol)
    return key, direction, ip


def segment_flows_with_stats(
    packets: Iterable[RawPacketRecord],
) -> tuple[list[FlowRecord], IngestStats]:
    """Group captured packets into bidirectional session flows.

    Whole-trace grouping by canonical 5-tuple: no idle timeout, no FIN/RST
    splitting.  Flows are returned in order of their first packet; within a
    flow, arrival_index preserves capture order.  Inadmissible packets are
    counted, never raised.
    """
    stats = IngestStats()
    flows: dict[FlowKey, FlowRecord] = {}
    order: list[FlowKey] = []
    for record in packets:
        stats.packets_total += 1
        admitted = _admit(record, stats)
        if admitted is None:
            continue
        key, direction, ip = admitted
        flow = flows.get(key)
        if flow is None:
            flow = FlowRecord(key=key)
            flows[key] = flow
            order.append(key)
        flow.packets.append(
            AnonymizedPacket(direction, anonymize(bytes(ip)), len(flow.packets))
        )
        stats.packets_kept += 1
    stats.flows = len(order)
    return [flows[k] for k in order], stats


def segment_flows(packets: Iterable[RawPacketRecord]) -> list[FlowRecord]:
    return segment_flows_with_stats(packets)[0]


# --- packet selection policies ---

@dataclass(frozen=True)
class FirstK:
    """Keep the first k packets in arrival order."""

    k: int


@dataclass(frozen=True)
class RandomKofFirstM:
    """Sample k packets without replacement from the first m, seeded;
    the selection is returned in arrival order."""

    k: int
    m: int
    seed: int = 0


def select_packets(
    flow: FlowRecord, policy: FirstK | RandomKofFirstM
) -> list[AnonymizedPacket]:
    """Apply a selection policy; flows shorter than k are returned whole."""
    if not flow.packets:
        raise EmptyFlow(f"flow {flow.key.key_string()} has no packets")
    if isinstance(policy, FirstK):
        return flow.packets[: policy.k]
    if policy.k > policy.m:
        raise ValueError(f"k={policy.k} exceeds m={policy.m}")
    pool = flow.packets[: policy.m]
    if len(pool) <= policy.k:
        return list(pool)
    rng = np.random.Generator(np.random.PCG64(policy.seed))
    picks = rng.choice(len(pool), size=policy.k, replace=False)
    return [pool[i] for i in sorted(picks)]


# --- hex interchange format ---
#
# One flow per line.  Tab-separated fields: the label (integer, -1 when
# unknown) followed by one field per packet; inside a packet field each byte
# is two lowercase hex digits, bytes separated by single spaces.

def format_flow_line(label: int | None, packets: Sequence[bytes]) -> str:
    lab = -1 if label is None else int(label)
    fields = [str(lab)]
    fields.extend(" ".join(f"{b:02x}" for b in pkt) for pkt in packets)
    return "\t".join(fields)


def parse_flow_line(line: str) -> tuple[int, list[bytes]]:
    fields = line.rstrip("\n").split("\t")
    if not fields or not fields[0]:
        raise ValueError("empty flow line")
    label = int(fields[0])
    packets = [bytes.fromhex(f.replace(" ", "")) for f in fields[1:] if f]
    return label, packets


def write_hex_flows(path: str, flows: Iterable[tuple[int | None, Sequence[bytes]]]) -> int:
    """Write (label, packet bytes) pairs in the interchange format; returns
    the number of lines written."""
    n = 0
    with open(path, "w", encoding="ascii") as fh:
        for label, packets in flows:
            fh.write(format_flow_line(label, packets))
            fh.write("\n")
            n += 1
    return n


def read_hex_flows(path: str) -> list[tuple[int, list[bytes]]]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_flow_line(line))
    return out


def read_label_file(path: str) -> dict[str, int]:
    """Label file: one `key_string<TAB>class` line per flow."""
    labels: dict[str, int] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("\t")
            labels[key] = int(value)
    return labels


def write_label_file(path: str, labels: dict[str, int]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for key, value in labels.items():
            fh.write(f"{key}\t{value}\n")
