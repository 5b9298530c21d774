# Error taxonomy for the CDCM simulator


class CdcmError(Exception):
    """Base class for every error raised by the simulator."""


class InvalidParameter(CdcmError, ValueError):
    """A numeric argument violates an operation's precondition."""


# codec

class CodecError(CdcmError):
    pass


class InvalidGeometry(CodecError):
    pass


class SymbolOutOfRange(CodecError):
    pass


class WordLengthMismatch(CodecError):
    pass


class BadHeader(CodecError):
    pass


class NonUnaryPayload(CodecError):
    pass


class UnknownWord(CodecError):
    pass


# stream

class StreamError(CdcmError):
    pass


class ZeroState(StreamError):
    pass


class InvalidPair(StreamError):
    def __init__(self, index: int, pair: tuple[int, int]):
        super().__init__(f"invalid Manchester pair {pair} at pair index {index}")
        self.index = index
        self.pair = pair


class OddLength(StreamError):
    pass


# waveform

class WaveformError(CdcmError):
    pass


class InvalidWaveform(WaveformError):
    pass


class MixedWordLength(WaveformError):
    pass


class OutOfRange(WaveformError):
    pass


class EdgeReorder(WaveformError):
    pass


class TooFewEdges(WaveformError):
    pass


# pll

class PllError(CdcmError):
    pass


class NoLock(PllError):
    pass


class CaptureRange(PllError):
    pass


# netlink / topology / scenarios

class LinkError(CdcmError):
    pass


class SyncFailed(LinkError):
    pass


class ExtractorUnsupported(LinkError):
    pass


class TopologyError(CdcmError):
    pass


class ScenarioError(CdcmError):
    """Scenario validation failure, located by line number or field path."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        location = ""
        if line is not None:
            location = f" (line {line})"
        elif field:
            location = f" (field '{field}')"
        super().__init__(f"{message}{location}")
        self.field = field
        self.line = line
