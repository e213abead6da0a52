"""Encrypted-traffic flow classification toolkit.

PCAP ingestion, bidirectional flow segmentation with anonymization, byte
bigram tokenization, a two-level attention encoder (within-packet then
across-packet), three self-supervised pre-training objectives, supervised
fine-tuning, and the surrounding training/benchmark/CLI plumbing.

Submodules load lazily so that importing the package stays cheap and the
CLI can configure thread pools before NumPy comes in.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "backend",
    "bench",
    "cli",
    "errors",
    "finetune",
    "ingest",
    "layers",
    "model",
    "pretrain",
    "synth",
    "tokenizer",
    "trainer",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
