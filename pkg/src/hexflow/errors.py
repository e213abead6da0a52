"""Exception types raised across the pipeline."""


class HexflowError(Exception):
    """Base class for all library errors."""


# --- capture ingestion ---

class MalformedHeader(HexflowError):
    """Capture file does not start with a valid classic-pcap global header."""


class TruncatedRecord(HexflowError):
    """A per-packet record claims more bytes than the file contains."""


class UnsupportedLinkType(HexflowError):
    """Capture link type is not Ethernet."""


class MalformedPacket(HexflowError):
    """Packet bytes are too short or not IPv4 where IPv4 is required."""


class EmptyFlow(HexflowError):
    """Packet selection applied to a flow with no packets."""


# --- tokenization ---

class EmptyInput(HexflowError):
    """Tokenizer received an empty byte sequence."""


class TooManyPackets(HexflowError):
    """More packets supplied than rows in the token grid."""


# --- model / losses ---

class IdOutOfRange(HexflowError):
    """Token id not covered by the embedding table."""


class ShapeMismatch(HexflowError):
    """Array argument has the wrong shape."""


class NoContentTokens(HexflowError):
    """Masking requested on a grid that has no maskable content tokens."""


class EmptyPlan(HexflowError):
    """Masked-prediction loss evaluated with an empty masking plan."""


class InvalidPermutation(HexflowError):
    """Packet-order argument is not a permutation of 0..N-1."""


class DegenerateBatch(HexflowError):
    """Contrastive loss needs at least two flows and two packet positions."""


class ZeroVector(HexflowError):
    """A projected vector has zero norm where a direction is required."""


class LabelOutOfRange(HexflowError):
    """Class label outside [0, num_classes)."""


class EmptyDataset(HexflowError):
    """Evaluation requested on an empty dataset."""


# --- training ---

class NonFiniteLoss(HexflowError):
    """Training step produced NaN or Inf; carries the loss breakdown."""


class CorruptCheckpoint(HexflowError):
    """Checkpoint file failed manifest or shape validation."""


class PatternMatchesNothing(UserWarning):
    """A freeze pattern matched no parameter names (warning, not an error)."""
