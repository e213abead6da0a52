"""Shared builders for the test suite.

Packet construction here is deliberately independent of hexflow.synth: the
tests hand-assemble frames with struct so the ingest checks do not lean on
the code they verify.
"""

import struct

import numpy as np
import pytest

from hexflow.model import ModelConfig, cast_params, init_params

ETH_DST = b"\x02\x00\x00\x00\x00\x01"
ETH_SRC = b"\x02\x00\x00\x00\x00\x02"


def ipv4_packet(src_ip, dst_ip, proto, sport, dport, payload=b"", ihl_words=5):
    """IPv4 header (options padded with zeros when ihl_words > 5) plus a
    minimal 20-byte TCP or 8-byte UDP header and payload."""
    ihl = ihl_words * 4
    if proto == 6:
        transport = struct.pack(">HHIIBBHHH", sport, dport, 1, 0, 0x50, 0x18,
                                8192, 0, 0)
    elif proto == 17:
        transport = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0)
    else:
        transport = struct.pack(">HH", sport, dport)
    total = ihl + len(transport) + len(payload)
    header = struct.pack(">BBHHHBBH4s4s", (4 << 4) | ihl_words, 0, total,
                         0x1234, 0, 64, proto, 0xBEEF, src_ip, dst_ip)
    header += b"\x01" * (ihl - 20)    # nonzero option bytes, visible in tests
    return header + transport + payload


def ethernet_frame(ip_packet, ethertype=0x0800):
    return ETH_DST + ETH_SRC + struct.pack(">H", ethertype) + ip_packet


def build_pcap(frames, big_endian=False, link_type=1, timestamps=None):
    """Classic capture bytes from a list of link-layer frames."""
    endian = ">" if big_endian else "<"
    magic = 0xA1B2C3D4
    out = struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, link_type)
    for i, frame in enumerate(frames):
        ts = timestamps[i] if timestamps else (100 + i, i * 10)
        out += struct.pack(endian + "IIII", ts[0], ts[1], len(frame), len(frame))
        out += frame
    return out


def tiny_config(**overrides):
    base = dict(n_packets=3, row_length=8, embed_dim=16, n_layers=1,
                n_heads=2, mlp_hidden=32)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_params(config=None, seed=0, n_classes=None, dtype=np.float64,
                jitter=0.0):
    """Small f64 registry; optional jitter moves weights off the tiny init
    so gradients are well above finite-difference noise."""
    config = config or tiny_config()
    params = cast_params(init_params(config, seed=seed, n_classes=n_classes),
                         dtype)
    if jitter:
        rng = np.random.Generator(np.random.PCG64(seed + 1))
        for v in params.values():
            v += rng.normal(0.0, jitter, size=v.shape)
    return params


def numeric_grad(f, x, h=1e-6):
    """Dense central-difference gradient for small arrays."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
