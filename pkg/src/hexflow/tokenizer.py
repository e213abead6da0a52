"""Byte-pair tokenization of packet bytes into fixed-length token rows.

Content tokens are overlapping bigrams of consecutive bytes, 256*b1 + b2,
so the content vocabulary is exactly 0..65535.  Three special ids are
appended after the content space.  A packet row is [CLS] + content tokens
truncated to L-1 + [PAD] fill; a flow is N such rows stacked into a grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, TooManyPackets

CONTENT_VOCAB = 65536
CLS_ID = 65536
PAD_ID = 65537
MASK_ID = 65538
VOCAB_SIZE = 65539


@dataclass(frozen=True)
class TokenizedPacket:
    """One packet row: ids[0] is CLS, then content tokens, then PAD fill."""

    ids: np.ndarray        # (L,) int32
    content_len: int


@dataclass
class TokenGrid:
    """N token rows for one flow; rows beyond the packet count are CLS+PAD."""

    ids: np.ndarray          # (N, L) int32
    content_lens: np.ndarray  # (N,) int32, zero for padding rows
    label: int = -1

    @property
    def n_packets(self) -> int:
        return int(np.count_nonzero(self.content_lens))


def bigram_tokens(data: bytes) -> np.ndarray:
    """Overlapping bigram ids for a byte sequence; length is len(data)-1."""
    arr = np.frombuffer(data, dtype=np.uint8).astype(np.int32)
    if arr.size < 2:
        return np.empty(0, dtype=np.int32)
    return arr[:-1] * 256 + arr[1:]


def decode_tokens(content_ids: Sequence[int]) -> bytes:
    """Reconstruct bytes from an overlapping-bigram sequence.

    The first token contributes both bytes, every later token appends its
    low byte.  Used as the independent round-trip oracle for encoding.
    """
    ids = list(content_ids)
    if not ids:
        return b""
    out = bytearray([ids[0] >> 8, ids[0] & 0xFF])
    for t in ids[1:]:
        out.append(t & 0xFF)
    return bytes(out)


def encode_packet(data: bytes, length: int) -> TokenizedPacket:
    """Tokenize one packet into a fixed-length row.

    Bigrams are truncated to length-1 content tokens (packet prefix kept),
    CLS is prepended and PAD fills the remainder.
    """
    if length < 2:
        raise ValueError(f"row length must be >= 2, got {length}")
    if len(data) == 0:
        raise EmptyInput("cannot tokenize an empty packet")
    content = bigram_tokens(data)[: length - 1]
    ids = np.full(length, PAD_ID, dtype=np.int32)
    ids[0] = CLS_ID
    ids[1:1 + content.size] = content
    return TokenizedPacket(ids, int(content.size))


def empty_row(length: int) -> np.ndarray:
    ids = np.full(length, PAD_ID, dtype=np.int32)
    ids[0] = CLS_ID
    return ids


def build_token_grid(
    packets: Sequence[bytes], n_packets: int, length: int, label: int = -1
) -> TokenGrid:
    """Stack per-packet rows into an (N, L) grid, padding missing rows."""
    if len(packets) == 0:
        raise ValueError("need at least one packet")
    if len(packets) > n_packets:
        raise TooManyPackets(f"{len(packets)} packets for {n_packets} rows")
    ids = np.empty((n_packets, length), dtype=np.int32)
    lens = np.zeros(n_packets, dtype=np.int32)
    for i, pkt in enumerate(packets):
        row = encode_packet(pkt, length)
        ids[i] = row.ids
        lens[i] = row.content_len
    for i in range(len(packets), n_packets):
        ids[i] = empty_row(length)
    return TokenGrid(ids, lens, label)


# --- binary dataset format ---
#
# Header: N, L, record count as little-endian int32.  Then per record the
# label followed by N*L token ids, all little-endian int32.

@dataclass
class TokenDataset:
    grids: np.ndarray    # (count, N, L) int32
    labels: np.ndarray   # (count,) int32

    @property
    def n_packets(self) -> int:
        return self.grids.shape[1]

    @property
    def row_length(self) -> int:
        return self.grids.shape[2]

    def __len__(self) -> int:
        return self.grids.shape[0]

    def subset(self, index: np.ndarray) -> "TokenDataset":
        return TokenDataset(self.grids[index], self.labels[index])


def write_token_dataset(path: str, dataset: TokenDataset) -> None:
    count, n, length = dataset.grids.shape
    with open(path, "wb") as fh:
        fh.write(np.array([n, length, count], dtype="<i4").tobytes())
        for i in range(count):
            fh.write(np.asarray(dataset.labels[i], dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(dataset.grids[i], dtype="<i4").tobytes())


def read_token_dataset(path: str) -> TokenDataset:
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(12), dtype="<i4")
        if header.size != 3:
            raise ValueError(f"{path}: truncated dataset header")
        n, length, count = (int(x) for x in header)
        body = np.frombuffer(fh.read(), dtype="<i4")
    per_record = 1 + n * length
    if body.size != count * per_record:
        raise ValueError(
            f"{path}: expected {count * per_record} ints, found {body.size}"
        )
    body = body.reshape(count, per_record)
    labels = body[:, 0].astype(np.int32)
    grids = body[:, 1:].reshape(count, n, length).astype(np.int32)
    return TokenDataset(grids, labels)


def grids_from_hex_flows(
    flows: Sequence[tuple[int, Sequence[bytes]]], n_packets: int, length: int
) -> TokenDataset:
    """Tokenize already-selected packet byte lists into a dataset."""
    all_ids = np.empty((len(flows), n_packets, length), dtype=np.int32)
    labels = np.empty(len(flows), dtype=np.int32)
    for i, (label, packets) in enumerate(flows):
        grid = build_token_grid(packets, n_packets, length, label)
        all_ids[i] = grid.ids
        labels[i] = label
    return TokenDataset(all_ids, labels)
