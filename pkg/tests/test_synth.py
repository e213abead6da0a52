"""Synthetic corpus generators: determinism, motif plants, learnability."""

import io

import numpy as np
import pytest

from hexflow import synth
from hexflow.ingest import (FlowKey, read_pcap, segment_flows,
                            segment_flows_with_stats)
from hexflow.synth import SyntheticSpec
from hexflow.tokenizer import CLS_ID, CONTENT_VOCAB, PAD_ID

SMALL = SyntheticSpec(class_count=4, flows_per_class=5, seed=7)

IP_TCP = 20 + 20    # payload offset inside AnonymizedPacket.data (no Ethernet)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(class_count=1)
    with pytest.raises(ValueError):
        SyntheticSpec(flows_per_class=0)
    with pytest.raises(ValueError):
        SyntheticSpec(packets_min=0)
    with pytest.raises(ValueError):
        SyntheticSpec(packets_min=6, packets_max=5)
    with pytest.raises(ValueError):
        SyntheticSpec(payload_min=1, payload_max=4)
    with pytest.raises(ValueError):
        SyntheticSpec(motif_len=0)
    with pytest.raises(ValueError):
        SyntheticSpec(noise_rate=1.0)
    assert SMALL.total_flows == 20


def test_class_motifs_distinct():
    motifs = [synth.class_motif(SMALL, c) for c in range(SMALL.class_count)]
    assert all(len(m) == SMALL.motif_len for m in motifs)
    assert len({m[0] for m in motifs}) == len(motifs)


def test_payload_generation_deterministic_and_labeled():
    a = list(synth.generate_payloads(SMALL))
    b = list(synth.generate_payloads(SMALL))
    assert a == b
    assert len(a) == 20
    for flow_index, label, payloads in a:
        assert label == flow_index // SMALL.flows_per_class
        assert SMALL.packets_min <= len(payloads) <= SMALL.packets_max
        need = synth.class_offset(SMALL, label) + SMALL.motif_len
        assert all(len(p) >= need for p in payloads)


def test_motif_presence_matches_noise_rate():
    spec = SyntheticSpec(class_count=3, flows_per_class=40, noise_rate=0.2,
                         seed=11)
    total = hits = 0
    for _, label, payloads in synth.generate_payloads(spec):
        motif = synth.class_motif(spec, label)
        off = synth.class_offset(spec, label)
        for p in payloads:
            total += 1
            hits += p[off:off + len(motif)] == motif
    expect = total * (1 - spec.noise_rate)
    sigma = np.sqrt(total * spec.noise_rate * (1 - spec.noise_rate))
    assert abs(hits - expect) <= 3 * sigma + 1


def test_generate_pcap_deterministic():
    blob1, labels1 = synth.generate_pcap(SMALL)
    blob2, labels2 = synth.generate_pcap(SMALL)
    assert blob1 == blob2 and labels1 == labels2
    assert blob1[:4] == bytes.fromhex("d4c3b2a1")      # little-endian magic
    assert len(labels1) == 20


def test_pcap_round_trips_through_ingest():
    """Every synthetic flow survives parsing, segmentation and keying, and
    packet payloads come back byte for byte in arrival order."""
    blob, labels = synth.generate_pcap(SMALL)
    flows, stats = segment_flows_with_stats(read_pcap(io.BytesIO(blob)))
    assert len(flows) == 20
    assert {f.key.key_string() for f in flows} == set(labels)
    assert stats.dropped_non_ipv4 == 0 and stats.dropped_malformed == 0

    by_key = {f.key.key_string(): f for f in flows}
    for flow_index, label, payloads in synth.generate_payloads(SMALL):
        client, server = synth._flow_endpoints(SMALL, flow_index, label)
        key, _ = FlowKey.from_endpoints(client, server, "tcp")
        flow = by_key[key.key_string()]
        assert len(flow.packets) == len(payloads)
        for pkt, payload in zip(flow.packets, payloads):
            assert pkt.data[IP_TCP:] == payload
            assert pkt.data[12:20] == b"\x00" * 8      # addresses scrubbed


def test_pcap_motifs_survive_anonymization():
    blob, labels = synth.generate_pcap(SMALL)
    flows = segment_flows(read_pcap(io.BytesIO(blob)))
    total = hits = 0
    for flow in flows:
        label = labels[flow.key.key_string()]
        motif = synth.class_motif(SMALL, label)
        off = IP_TCP + synth.class_offset(SMALL, label)
        for pkt in flow.packets:
            total += 1
            hits += pkt.data[off:off + len(motif)] == motif
    sigma = np.sqrt(total * SMALL.noise_rate * (1 - SMALL.noise_rate))
    assert abs(hits - total * (1 - SMALL.noise_rate)) <= 3 * sigma + 1


# --- token-level generator ---

def test_token_dataset_layout():
    spec = SyntheticSpec(class_count=3, flows_per_class=4, seed=2)
    ds = synth.generate_token_dataset(spec, n_packets=5, row_length=16)
    assert ds.grids.shape == (12, 5, 16)
    assert ds.grids.dtype == np.int32
    assert (ds.grids[:, :, 0] == CLS_ID).all()
    assert np.array_equal(ds.labels, np.repeat(np.arange(3), 4))
    content = ds.grids[:, :, 1:]
    assert ((content == PAD_ID) | (content < CONTENT_VOCAB)).all()

    again = synth.generate_token_dataset(spec, n_packets=5, row_length=16)
    assert np.array_equal(ds.grids, again.grids)


def test_token_dataset_short_flows_pad_whole_rows():
    spec = SyntheticSpec(class_count=2, flows_per_class=3, packets_min=2,
                         packets_max=3, seed=5)
    ds = synth.generate_token_dataset(spec, n_packets=6, row_length=12)
    tail = ds.grids[:, 4:, :]           # beyond any flow's packet count
    assert (tail[:, :, 0] == CLS_ID).all()
    assert (tail[:, :, 1:] == PAD_ID).all()


def test_token_dataset_plants_motifs():
    spec = SyntheticSpec(class_count=3, flows_per_class=10, noise_rate=0.0,
                         seed=3)
    ds = synth.generate_token_dataset(spec, n_packets=4, row_length=16,
                                      motif_tokens=3)
    max_offset = 16 - 1 - 3
    for flow in range(len(ds)):
        label = int(ds.labels[flow])
        motif = synth.class_token_motif(spec, label, 3)
        offset = 1 + (1 + 2 * label) % max_offset
        for row in ds.grids[flow]:
            if (row[1:] == PAD_ID).all():
                continue                # unused row for a short flow
            assert np.array_equal(row[offset:offset + 3], motif)


def test_token_dataset_rejects_tiny_rows():
    with pytest.raises(ValueError):
        synth.generate_token_dataset(SMALL, n_packets=3, row_length=4,
                                     motif_tokens=3)


# --- split and baseline ---

def test_split_is_stratified_and_disjoint():
    spec = SyntheticSpec(class_count=4, flows_per_class=10, seed=1)
    ds = synth.generate_token_dataset(spec, n_packets=3, row_length=12)
    train, test = synth.split_dataset(ds, test_fraction=0.25, seed=8)
    assert len(train) + len(test) == len(ds)
    # round(2.5) banker-rounds to 2 per class of 10
    assert len(test) == 8
    for label in range(4):
        assert (train.labels == label).sum() >= 1
        assert (test.labels == label).sum() >= 1
        assert (train.labels == label).sum() + (test.labels == label).sum() == 10


def test_split_rejects_bad_fraction():
    ds = synth.generate_token_dataset(SMALL, n_packets=3, row_length=12)
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            synth.split_dataset(ds, bad)


def test_split_is_seed_deterministic():
    ds = synth.generate_token_dataset(SMALL, n_packets=3, row_length=12)
    a = synth.split_dataset(ds, 0.3, seed=4)
    b = synth.split_dataset(ds, 0.3, seed=4)
    assert np.array_equal(a[0].grids, b[0].grids)
    assert np.array_equal(a[1].labels, b[1].labels)


def test_bag_of_tokens_counts():
    from hexflow.tokenizer import TokenDataset
    grids = np.full((2, 1, 6), PAD_ID, dtype=np.int32)
    grids[:, :, 0] = CLS_ID
    grids[0, 0, 1:4] = [7, 7, 300]
    grids[1, 0, 1:3] = [0, 65535]
    ds = TokenDataset(grids, np.array([0, 1], dtype=np.int32))
    bag = synth.bag_of_tokens(ds)
    assert bag.shape == (2, CONTENT_VOCAB)
    assert bag[0, 7] == 2 and bag[0, 300] == 1
    assert bag[1, 0] == 1 and bag[1, 65535] == 1
    assert bag.sum() == 5               # specials contribute nothing


def test_logistic_baseline_solves_clean_task():
    """The learnability gate itself: a distinct-motif task with mild noise
    must be almost perfectly separable from token counts."""
    spec = SyntheticSpec(class_count=3, flows_per_class=16, noise_rate=0.05,
                         seed=6)
    ds = synth.generate_token_dataset(spec, n_packets=4, row_length=16)
    train, test = synth.split_dataset(ds, 0.25, seed=0)
    acc = synth.logistic_baseline_accuracy(train, test)
    assert acc >= 0.95
