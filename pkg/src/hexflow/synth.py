"""Deterministic labeled synthetic traffic, at PCAP level and token level.

Each class gets a distinct byte motif planted at a class-specific payload
offset; everything else is seeded noise.  The token-level generator bypasses
PCAP framing for fast training-loop tests but keeps the same motif/label
semantics.  A logistic bag-of-tokens baseline doubles as a learnability
gate: if that cannot solve a generated task, the task is broken, not the
model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ingest import Endpoint, FlowKey
from .tokenizer import CLS_ID, CONTENT_VOCAB, PAD_ID, TokenDataset

ETHERTYPE_IPV4 = 0x0800
_MAC_A = bytes.fromhex("021a2b3c4d5e")
_MAC_B = bytes.fromhex("02f1e2d3c4b5")


@dataclass(frozen=True)
class SyntheticSpec:
    class_count: int = 4
    flows_per_class: int = 60
    packets_min: int = 5
    packets_max: int = 8
    payload_min: int = 40
    payload_max: int = 120
    motif_len: int = 6
    noise_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least 2 classes")
        if self.flows_per_class < 1:
            raise ValueError("need at least 1 flow per class")
        if not 1 <= self.packets_min <= self.packets_max:
            raise ValueError("bad packets_per_flow range")
        if not 2 <= self.payload_min <= self.payload_max:
            raise ValueError("bad payload length range")
        if self.motif_len < 1:
            raise ValueError("motif_len must be positive")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must be in [0, 1)")

    @property
    def total_flows(self) -> int:
        return self.class_count * self.flows_per_class


def class_motif(spec: SyntheticSpec, label: int) -> bytes:
    """Class byte motif; the first byte encodes the class, so motifs are
    pairwise distinct by construction."""
    rng = np.random.default_rng((spec.seed, 0, label))
    body = rng.integers(0, 256, size=spec.motif_len - 1, dtype=np.uint8)
    return bytes([0xA0 + (label % 0x5F)]) + body.tobytes()


def class_offset(spec: SyntheticSpec, label: int) -> int:
    """Byte offset of the motif inside the payload, class-specific while it
    fits below the shortest payload."""
    return min(4 + 3 * label, max(0, spec.payload_min - spec.motif_len))


def _flow_rng(spec: SyntheticSpec, flow_index: int) -> np.random.Generator:
    return np.random.default_rng((spec.seed, 1, flow_index))


def generate_payloads(spec: SyntheticSpec):
    """Yields (flow_index, label, [payload bytes...]) for every flow."""
    for flow_index in range(spec.total_flows):
        label = flow_index // spec.flows_per_class
        rng = _flow_rng(spec, flow_index)
        motif = class_motif(spec, label)
        offset = class_offset(spec, label)
        n_packets = int(rng.integers(spec.packets_min, spec.packets_max + 1))
        payloads = []
        for _ in range(n_packets):
            size = int(rng.integers(spec.payload_min, spec.payload_max + 1))
            size = max(size, offset + len(motif))
            body = rng.integers(0, 256, size=size, dtype=np.uint8)
            if rng.random() >= spec.noise_rate:
                body[offset : offset + len(motif)] = np.frombuffer(motif, np.uint8)
            payloads.append(body.tobytes())
        yield flow_index, label, payloads


# --- PCAP-level generation ---

def _flow_endpoints(spec: SyntheticSpec, flow_index: int, label: int):
    client = Endpoint(bytes([10, label % 256, (flow_index >> 8) % 256, flow_index % 256]),
                      20000 + (flow_index % 40000))
    server = Endpoint(bytes([192, 168, 0, 1]), 443)
    return client, server


def _ipv4_tcp_frame(src: Endpoint, dst: Endpoint, seq: int, payload: bytes,
                    reverse: bool) -> bytes:
    if reverse:
        src, dst = dst, src
    total_len = 20 + 20 + len(payload)
    ip = struct.pack(
        ">BBHHHBBH4s4s",
        0x45, 0, total_len, seq & 0xFFFF, 0, 64, 6, 0, src.ip, dst.ip,
    )
    tcp = struct.pack(
        ">HHIIBBHHH",
        src.port, dst.port, seq * 512, 0, 0x50, 0x18, 8192, 0, 0,
    )
    return _MAC_B + _MAC_A + struct.pack(">H", ETHERTYPE_IPV4) + ip + tcp + payload


def generate_pcap(spec: SyntheticSpec) -> tuple[bytes, dict[str, int]]:
    """Classic little-endian pcap byte stream plus flow-key -> class labels.

    Flows are interleaved in timestamp order and roughly every third packet
    runs server-to-client, so segmentation and key canonicalization get
    exercised rather than just replayed.
    """
    records = []
    labels: dict[str, int] = {}
    for flow_index, label, payloads in generate_payloads(spec):
        client, server = _flow_endpoints(spec, flow_index, label)
        key, _ = FlowKey.from_endpoints(client, server, "tcp")
        labels[key.key_string()] = label
        for pkt_index, payload in enumerate(payloads):
            reverse = pkt_index % 3 == 2
            frame = _ipv4_tcp_frame(client, server, pkt_index, payload, reverse)
            ts_micro = flow_index * 17 + pkt_index * spec.total_flows * 100 + 1
            records.append((ts_micro, flow_index, frame))
    records.sort(key=lambda r: (r[0], r[1]))
    out = [struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)]
    for ts_micro, _, frame in records:
        out.append(struct.pack("<IIII", ts_micro // 1_000_000,
                               ts_micro % 1_000_000, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out), labels


# --- token-level generation ---

def class_token_motif(spec: SyntheticSpec, label: int, n_tokens: int = 3) -> np.ndarray:
    """Distinct content-token motif per class (token-level analogue)."""
    rng = np.random.default_rng((spec.seed, 2, label))
    body = rng.integers(0, CONTENT_VOCAB, size=n_tokens, dtype=np.int64)
    body[0] = (label * 257 + 31) % CONTENT_VOCAB
    return body.astype(np.int32)


def generate_token_dataset(
    spec: SyntheticSpec,
    n_packets: int,
    row_length: int,
    motif_tokens: int = 3,
) -> TokenDataset:
    """Token grids with class motifs planted at class-specific positions.

    Rows beyond a flow's packet count are CLS followed by padding, matching
    what the tokenizer emits for short flows.
    """
    max_offset = row_length - 1 - motif_tokens
    if max_offset < 1:
        raise ValueError("row_length too small for the motif")
    grids = np.full((spec.total_flows, n_packets, row_length), PAD_ID, dtype=np.int32)
    grids[:, :, 0] = CLS_ID
    labels = np.empty(spec.total_flows, dtype=np.int32)
    for flow_index in range(spec.total_flows):
        label = flow_index // spec.flows_per_class
        labels[flow_index] = label
        rng = _flow_rng(spec, flow_index)
        motif = class_token_motif(spec, label, motif_tokens)
        offset = 1 + (1 + 2 * label) % max_offset
        n_rows = min(int(rng.integers(spec.packets_min, spec.packets_max + 1)), n_packets)
        for row in range(n_rows):
            min_len = offset - 1 + motif_tokens
            content_len = int(rng.integers(max(min_len, motif_tokens),
                                           row_length - 1 + 1))
            content = rng.integers(0, CONTENT_VOCAB, size=content_len, dtype=np.int64)
            if rng.random() >= spec.noise_rate:
                content[offset - 1 : offset - 1 + motif_tokens] = motif
            grids[flow_index, row, 1 : 1 + content_len] = content
    return TokenDataset(grids, labels)


def split_dataset(
    dataset: TokenDataset, test_fraction: float, seed: int = 0
) -> tuple[TokenDataset, TokenDataset]:
    """Stratified shuffled split; every class contributes to both sides when
    it has at least two members."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == label)
        members = members[rng.permutation(len(members))]
        n_test = max(1, int(round(len(members) * test_fraction))) if len(members) > 1 else 0
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    train_idx = np.sort(np.array(train_idx, dtype=np.int64))
    test_idx = np.sort(np.array(test_idx, dtype=np.int64))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def bag_of_tokens(dataset: TokenDataset):
    """Sparse per-flow counts of content tokens (specials dropped)."""
    from scipy import sparse

    rows, cols, vals = [], [], []
    flat = dataset.grids.reshape(len(dataset), -1)
    for i in range(flat.shape[0]):
        ids = flat[i]
        ids = ids[ids < CONTENT_VOCAB]
        uniq, counts = np.unique(ids, return_counts=True)
        rows.extend([i] * len(uniq))
        cols.extend(uniq.tolist())
        vals.extend(counts.tolist())
    return sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(dataset), CONTENT_VOCAB), dtype=np.float64
    )


def logistic_baseline_accuracy(
    train: TokenDataset, test: TokenDataset, seed: int = 0, max_iter: int = 200
) -> float:
    """Accuracy of logistic regression on bag-of-token counts.

    This is the learnability gate for the synthetic task, not a model of
    interest.
    """
    from sklearn.linear_model import LogisticRegression

    clf = LogisticRegression(max_iter=max_iter, random_state=seed)
    clf.fit(bag_of_tokens(train), train.labels)
    return float(clf.score(bag_of_tokens(test), test.labels))
