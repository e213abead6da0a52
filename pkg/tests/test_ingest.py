"""Capture parsing, flow segmentation, anonymization and interchange files."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import build_pcap, ethernet_frame, ipv4_packet
from hexflow import errors, ingest

IP_A = bytes([10, 0, 0, 1])
IP_B = bytes([10, 0, 0, 2])
IP_C = bytes([192, 168, 1, 9])


def _frame(src, dst, sport, dport, proto=6, payload=b"", ihl_words=5):
    return ethernet_frame(ipv4_packet(src, dst, proto, sport, dport, payload,
                                      ihl_words))


# --- pcap parsing ---

def test_parse_both_endiannesses():
    frames = [_frame(IP_A, IP_B, 1111, 80, payload=b"hello")]
    le = ingest.parse_pcap(build_pcap(frames))
    be = ingest.parse_pcap(build_pcap(frames, big_endian=True))
    assert len(le) == len(be) == 1
    assert le[0].captured_bytes == be[0].captured_bytes == frames[0]
    assert le[0].ts_sec == 100 and le[0].ts_usec == 0
    assert le[0].timestamp == pytest.approx(100.0)


def test_parse_timestamps_and_order():
    frames = [_frame(IP_A, IP_B, 1, 2), _frame(IP_A, IP_B, 3, 4)]
    records = ingest.parse_pcap(
        build_pcap(frames, timestamps=[(5, 250000), (6, 0)]))
    assert [r.timestamp for r in records] == [pytest.approx(5.25), 6.0]


def test_parse_rejects_bad_magic():
    data = build_pcap([])
    with pytest.raises(errors.MalformedHeader):
        ingest.parse_pcap(b"\x00\x01\x02\x03" + data[4:])


def test_parse_rejects_short_header():
    with pytest.raises(errors.MalformedHeader):
        ingest.parse_pcap(build_pcap([])[:10])


def test_parse_rejects_non_ethernet_link():
    with pytest.raises(errors.UnsupportedLinkType):
        ingest.parse_pcap(build_pcap([], link_type=113))


def test_parse_rejects_truncated_record_header():
    data = build_pcap([_frame(IP_A, IP_B, 1, 2)])
    with pytest.raises(errors.TruncatedRecord):
        ingest.parse_pcap(data[:24 + 7])


def test_parse_rejects_truncated_record_body():
    data = build_pcap([_frame(IP_A, IP_B, 1, 2)])
    with pytest.raises(errors.TruncatedRecord):
        ingest.parse_pcap(data[:-3])


def test_read_pcap_accepts_path_and_file(tmp_path):
    data = build_pcap([_frame(IP_A, IP_B, 1, 2)])
    path = tmp_path / "t.pcap"
    path.write_bytes(data)
    assert len(ingest.read_pcap(str(path))) == 1
    with open(path, "rb") as fh:
        assert len(ingest.read_pcap(fh)) == 1


# --- anonymization ---

def test_anonymize_zeroes_addresses_and_ports():
    pkt = ipv4_packet(IP_A, IP_B, 6, 4321, 443, b"payload")
    anon = ingest.anonymize(pkt)
    assert len(anon) == len(pkt)
    assert anon[12:20] == b"\x00" * 8
    assert anon[20:24] == b"\x00" * 4
    # everything else byte-identical, including the (stale) checksums
    assert anon[:12] == pkt[:12]
    assert anon[24:] == pkt[24:]
    assert anon[10:12] == pkt[10:12]


def test_anonymize_honors_ip_options():
    pkt = ipv4_packet(IP_A, IP_B, 6, 4321, 443, b"x", ihl_words=6)
    anon = ingest.anonymize(pkt)
    assert anon[12:20] == b"\x00" * 8
    assert anon[20:24] == b"\x01" * 4         # options untouched
    assert anon[24:28] == b"\x00" * 4         # ports sit after the options


def test_anonymize_is_idempotent():
    pkt = ipv4_packet(IP_A, IP_B, 17, 53, 5353, b"q")
    once = ingest.anonymize(pkt)
    assert ingest.anonymize(once) == once


def test_anonymize_rejects_garbage():
    with pytest.raises(errors.MalformedPacket):
        ingest.anonymize(b"\x45\x00")
    with pytest.raises(errors.MalformedPacket):
        ingest.anonymize(b"\x60" + b"\x00" * 30)      # version 6
    with pytest.raises(errors.MalformedPacket):
        ingest.anonymize(b"\x41" + b"\x00" * 30)      # IHL below 20


# --- flow keys ---

def test_flow_key_direction_symmetric():
    a = ingest.Endpoint(IP_A, 1111)
    b = ingest.Endpoint(IP_B, 80)
    key_fwd, dir_fwd = ingest.FlowKey.from_endpoints(a, b, "tcp")
    key_rev, dir_rev = ingest.FlowKey.from_endpoints(b, a, "tcp")
    assert key_fwd == key_rev
    assert dir_fwd != dir_rev
    assert key_fwd.key_string() == "tcp|10.0.0.1:1111|10.0.0.2:80"


def test_flow_key_orders_by_port_on_equal_ip():
    lo = ingest.Endpoint(IP_A, 80)
    hi = ingest.Endpoint(IP_A, 9000)
    key, direction = ingest.FlowKey.from_endpoints(hi, lo, "udp")
    assert key.endpoint_a == lo
    assert direction is ingest.Direction.B_TO_A


def test_protocol_distinguishes_flows():
    tcp = _frame(IP_A, IP_B, 1000, 53, proto=6)
    udp = _frame(IP_A, IP_B, 1000, 53, proto=17)
    flows = ingest.segment_flows(ingest.parse_pcap(build_pcap([tcp, udp])))
    assert len(flows) == 2
    assert {f.key.protocol for f in flows} == {"tcp", "udp"}


# --- segmentation ---

def test_segment_groups_both_directions():
    frames = [
        _frame(IP_A, IP_B, 1111, 80),
        _frame(IP_C, IP_B, 2222, 443),
        _frame(IP_B, IP_A, 80, 1111),      # reply of flow 0
    ]
    flows, stats = ingest.segment_flows_with_stats(
        ingest.parse_pcap(build_pcap(frames)))
    assert stats.flows == len(flows) == 2
    assert stats.packets_total == 3 and stats.packets_kept == 3
    first = flows[0]
    assert len(first.packets) == 2
    assert [p.arrival_index for p in first.packets] == [0, 1]
    assert first.packets[0].direction != first.packets[1].direction


def test_segment_counts_inadmissible():
    frames = [
        _frame(IP_A, IP_B, 1111, 80),
        ethernet_frame(b"\x60" + b"\x00" * 39, ethertype=0x86DD),  # not v4 ethertype
        ethernet_frame(b"\x60" + b"\x00" * 39),   # v4 ethertype, v6 header
        _frame(IP_A, IP_B, 0, 0, proto=1),        # ICMP
        ethernet_frame(ipv4_packet(IP_A, IP_B, 6, 1, 2)[:21]),  # truncated transport
        b"\x02\x00",                               # runt frame
    ]
    flows, stats = ingest.segment_flows_with_stats(
        ingest.parse_pcap(build_pcap(frames)))
    assert stats.packets_total == 6
    assert stats.packets_kept == 1
    assert stats.dropped_non_ethernet == 2
    assert stats.dropped_non_ipv4 == 1
    assert stats.dropped_non_tcp_udp == 1
    assert stats.dropped_malformed == 1
    assert len(flows) == 1


def test_segment_output_is_anonymized():
    frames = [_frame(IP_A, IP_B, 1111, 80, payload=b"secret")]
    (flow,) = ingest.segment_flows(ingest.parse_pcap(build_pcap(frames)))
    data = flow.packets[0].data
    assert data[12:20] == b"\x00" * 8
    assert data[20:24] == b"\x00" * 4
    assert data.endswith(b"secret")
    # link layer stripped: packet starts at the IP version byte
    assert data[0] >> 4 == 4


def test_segment_preserves_first_seen_flow_order():
    frames = [
        _frame(IP_C, IP_B, 5, 6),
        _frame(IP_A, IP_B, 1, 2),
        _frame(IP_B, IP_C, 6, 5),
    ]
    flows = ingest.segment_flows(ingest.parse_pcap(build_pcap(frames)))
    assert flows[0].key.key_string().startswith("tcp|10.0.0.2:6|192.168.1.9:5")


# --- selection policies ---

def _flow_with(n):
    frames = [_frame(IP_A, IP_B, 1111, 80, payload=bytes([i])) for i in range(n)]
    return ingest.segment_flows(ingest.parse_pcap(build_pcap(frames)))[0]


def test_first_k_truncates_in_order():
    flow = _flow_with(6)
    picked = ingest.select_packets(flow, ingest.FirstK(4))
    assert [p.arrival_index for p in picked] == [0, 1, 2, 3]


def test_first_k_returns_short_flow_whole():
    flow = _flow_with(2)
    assert len(ingest.select_packets(flow, ingest.FirstK(5))) == 2


def test_random_k_of_m_is_seeded_and_ordered():
    flow = _flow_with(10)
    policy = ingest.RandomKofFirstM(k=3, m=8, seed=42)
    a = ingest.select_packets(flow, policy)
    b = ingest.select_packets(flow, policy)
    assert [p.arrival_index for p in a] == [p.arrival_index for p in b]
    idx = [p.arrival_index for p in a]
    assert idx == sorted(idx) and len(set(idx)) == 3
    assert max(idx) < 8
    other = ingest.select_packets(flow, ingest.RandomKofFirstM(3, 8, seed=43))
    # different seeds are allowed to agree, but not for this pair
    assert [p.arrival_index for p in other] != idx


def test_random_k_of_m_small_pool_returned_whole():
    flow = _flow_with(2)
    picked = ingest.select_packets(flow, ingest.RandomKofFirstM(k=3, m=8))
    assert [p.arrival_index for p in picked] == [0, 1]


def test_random_k_exceeding_m_rejected():
    flow = _flow_with(3)
    with pytest.raises(ValueError):
        ingest.select_packets(flow, ingest.RandomKofFirstM(k=9, m=8))


def test_empty_flow_rejected():
    flow = ingest.FlowRecord(key=ingest.FlowKey(
        ingest.Endpoint(IP_A, 1), ingest.Endpoint(IP_B, 2), "tcp"))
    with pytest.raises(errors.EmptyFlow):
        ingest.select_packets(flow, ingest.FirstK(1))


# --- interchange formats ---

def test_flow_line_round_trip():
    line = ingest.format_flow_line(3, [b"\x00\xff", b"ab"])
    assert line == "3\t00 ff\t61 62"
    label, packets = ingest.parse_flow_line(line)
    assert label == 3 and packets == [b"\x00\xff", b"ab"]


def test_flow_line_none_label_becomes_minus_one():
    label, _ = ingest.parse_flow_line(ingest.format_flow_line(None, [b"\x01"]))
    assert label == -1


@settings(max_examples=60, deadline=None)
@given(st.integers(-1, 99),
       st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=5))
def test_flow_line_round_trip_property(label, packets):
    got_label, got = ingest.parse_flow_line(
        ingest.format_flow_line(label, packets))
    assert got_label == label and got == packets


def test_hex_file_round_trip(tmp_path):
    flows = [(0, [b"\x01\x02", b"\x03"]), (7, [b"zz"])]
    path = str(tmp_path / "flows.hex")
    assert ingest.write_hex_flows(path, flows) == 2
    assert ingest.read_hex_flows(path) == flows


def test_label_file_round_trip(tmp_path):
    labels = {"tcp|10.0.0.1:1|10.0.0.2:2": 0, "udp|1.1.1.1:9|2.2.2.2:8": 3}
    path = str(tmp_path / "labels.tsv")
    ingest.write_label_file(path, labels)
    with open(path, "a") as fh:
        fh.write("# trailing comment\n\n")
    assert ingest.read_label_file(path) == labels


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=4, max_size=64))
def test_canonical_key_ignores_direction_property(raw):
    ips = [bytes(raw[i:i + 4].ljust(4, b"\x00")) for i in (0, 4)]
    if ips[0] == ips[1]:
        return
    a = ingest.Endpoint(ips[0], raw[0])
    b = ingest.Endpoint(ips[1], raw[1])
    kf, _ = ingest.FlowKey.from_endpoints(a, b, "tcp")
    kr, _ = ingest.FlowKey.from_endpoints(b, a, "tcp")
    assert kf == kr and kf.key_string() == kr.key_string()
