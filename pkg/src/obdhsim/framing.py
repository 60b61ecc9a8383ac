"""Byte-at-a-time framing codecs for every protocol on the OBDH bus.

Four protocols share the bus:

- Uplink frames (ground -> OBDH): ``'#' <subsystem id> <reserved> <payload> '&'``.
  The start byte always restarts accumulation, so a receiver joining
  mid-stream resynchronizes on the next frame.
- Downlink envelopes (OBDH -> ground): ``'#' <subsystem id> <payload> '&'``.
  Same delimiters, no reserved byte; the asymmetry is deliberate.
- Wheel-drive (WDE) replies: free-form bytes terminated by 0xAC. Battery
  and custom housekeeping frames reuse the 0xAC terminator; GPS sentences
  terminate with LF.
- Star-sensor (STS) frames: the first byte is a type code that fixes the
  total frame length (see STS_TYPE_LENGTHS).

There is no escaping anywhere: a payload containing a delimiter byte would
corrupt parsing, so the encoder rejects such payloads outright and the
deframers are documented as delimiter-blind. No checksums either; link
integrity is the transport's problem.

Deframers are plain single-owner state machines: push one byte, get one
event back. They never raise on garbage input; unterminated streams hit a
buffer cap and report an overflow reset instead.
"""

from __future__ import annotations

from dataclasses import dataclass

FRAME_START = 0x23  # '#'
FRAME_END = 0x26    # '&'
WDE_TERMINATOR = 0xAC
GPS_TERMINATOR = 0x0A  # LF

# Star-sensor message type byte -> total frame length, type byte included.
STS_TYPE_LENGTHS: dict[int, int] = {
    0x00: 152,
    0x01: 16,
    0xA0: 11,
    0xA7: 3120,
    0xA8: 180,
    0x4D: 8,
    0x02: 32,
}

STS_MAX_LENGTH = max(STS_TYPE_LENGTHS.values())

DEFAULT_BUFFER_CAP = 4096


class FramingError(ValueError):
    """Raised when a frame cannot be encoded (delimiter byte in a field)."""


@dataclass(frozen=True)
class GsFrame:
    """One uplink frame: addressed, with an opaque reserved byte."""

    subsystem_id: int
    reserved: int = 0x00
    payload: bytes = b""

    def encoded_length(self) -> int:
        return len(self.payload) + 4


# Deframer events. Shared singletons keep the per-byte hot path allocation-free.

@dataclass(frozen=True)
class Pending:
    """Byte absorbed (or discarded as pre-frame junk); nothing to report."""


@dataclass(frozen=True)
class Reset:
    """Accumulation restarted: a new start byte, or an overflowed buffer."""

    overflow: bool = False


@dataclass(frozen=True)
class Complete:
    """A whole frame came off the wire. ``data`` is a GsFrame for the
    uplink deframer, raw bytes everywhere else."""

    data: object


@dataclass(frozen=True)
class Resync:
    """STS only: leading byte is not a known type code, discarded."""


PENDING = Pending()
RESET = Reset()
OVERFLOW_RESET = Reset(overflow=True)
RESYNC = Resync()

DeframerEvent = Pending | Reset | Complete | Resync


def encode_gs_frame(frame: GsFrame) -> bytes:
    """Encode an uplink frame as start byte, id, reserved, payload, end byte.

    Rejects any field byte equal to the start or end delimiter: with no
    escaping in the protocol, such a frame could never round-trip.
    """
    for name, value in (("subsystem_id", frame.subsystem_id), ("reserved", frame.reserved)):
        if not 0 <= value <= 0xFF:
            raise FramingError(f"{name} {value!r} is not a byte")
        if value in (FRAME_START, FRAME_END):
            raise FramingError(f"{name} 0x{value:02x} collides with a frame delimiter")
    if FRAME_START in frame.payload or FRAME_END in frame.payload:
        raise FramingError("payload contains a frame delimiter byte (no escaping exists)")
    return bytes((FRAME_START, frame.subsystem_id, frame.reserved)) + frame.payload + bytes((FRAME_END,))


def encode_downlink_envelope(subsystem_id: int, payload: bytes) -> bytes:
    """Wrap a subsystem payload for the ground link: '#', id, payload, '&'.

    Downlink has no reserved byte. The payload is wrapped verbatim, even if
    it contains delimiter bytes; the on-board forwarder does not validate
    subsystem data.
    """
    if not 0 <= subsystem_id <= 0xFF:
        raise FramingError(f"subsystem_id {subsystem_id!r} is not a byte")
    return bytes((FRAME_START, subsystem_id)) + payload + bytes((FRAME_END,))


class GsDeframer:
    """Incremental parser for uplink frames ('#' id reserved payload '&').

    The start byte unconditionally restarts accumulation. Bytes arriving
    before any start byte are discarded. The end byte completes a frame
    only once the id and reserved bytes exist (accumulated length >= 4);
    an earlier '&' is treated as frame content.
    """

    def __init__(self, cap: int = DEFAULT_BUFFER_CAP):
        self.cap = cap
        self._buf = bytearray()
        self.overflows = 0

    def push(self, b: int) -> DeframerEvent:
        if b == FRAME_START:
            self._buf.clear()
            self._buf.append(b)
            return RESET
        if not self._buf:
            return PENDING
        self._buf.append(b)
        if b == FRAME_END and len(self._buf) >= 4:
            frame = GsFrame(self._buf[1], self._buf[2], bytes(self._buf[3:-1]))
            self._buf.clear()
            return Complete(frame)
        if len(self._buf) > self.cap:
            self._buf.clear()
            self.overflows += 1
            return OVERFLOW_RESET
        return PENDING

    def feed(self, data: bytes) -> list[DeframerEvent]:
        return [self.push(b) for b in data]

    def feed_frames(self, data: bytes) -> list[GsFrame]:
        """Feed a chunk and keep only the completed frames."""
        return [ev.data for ev in self.feed(data) if isinstance(ev, Complete)]


class DownlinkDeframer:
    """Incremental parser for downlink envelopes ('#' id payload '&').

    Same discipline as GsDeframer with a one-byte header; completion needs
    accumulated length >= 3. Payload bytes equal to a delimiter corrupt the
    parse, faithfully to the escaping-free wire format.
    """

    def __init__(self, cap: int = DEFAULT_BUFFER_CAP):
        self.cap = cap
        self._buf = bytearray()
        self.overflows = 0

    def push(self, b: int) -> DeframerEvent:
        if b == FRAME_START:
            self._buf.clear()
            self._buf.append(b)
            return RESET
        if not self._buf:
            return PENDING
        self._buf.append(b)
        if b == FRAME_END and len(self._buf) >= 3:
            envelope = (self._buf[1], bytes(self._buf[2:-1]))
            self._buf.clear()
            return Complete(envelope)
        if len(self._buf) > self.cap:
            self._buf.clear()
            self.overflows += 1
            return OVERFLOW_RESET
        return PENDING

    def feed(self, data: bytes) -> list[DeframerEvent]:
        return [self.push(b) for b in data]

    def feed_envelopes(self, data: bytes) -> list[tuple[int, bytes]]:
        return [ev.data for ev in self.feed(data) if isinstance(ev, Complete)]


class TerminatorDeframer:
    """Accumulates everything up to and including a terminator byte.

    This is the WDE reply parser (terminator 0xAC); battery and custom
    housekeeping frames use the same terminator, GPS sentences use LF.
    The completed frame includes the terminator, matching what the on-board
    forwarder ships to ground.
    """

    def __init__(self, terminator: int = WDE_TERMINATOR, cap: int = DEFAULT_BUFFER_CAP):
        self.terminator = terminator
        self.cap = cap
        self._buf = bytearray()
        self.overflows = 0

    def push(self, b: int) -> DeframerEvent:
        self._buf.append(b)
        if b == self.terminator:
            frame = bytes(self._buf)
            self._buf.clear()
            return Complete(frame)
        if len(self._buf) > self.cap:
            self._buf.clear()
            self.overflows += 1
            return OVERFLOW_RESET
        return PENDING

    def feed(self, data: bytes) -> list[DeframerEvent]:
        return [self.push(b) for b in data]


class StsDeframer:
    """Star-sensor parser: first byte picks the expected total length.

    Unknown leading bytes are dropped one at a time (Resync) until a known
    type code lines the stream back up. A frame completes exactly when the
    accumulated length reaches the table length, never on content.
    """

    def __init__(self, table: dict[int, int] | None = None):
        self.table = STS_TYPE_LENGTHS if table is None else table
        self._buf = bytearray()
        self._expected = 0
        self.resyncs = 0

    def push(self, b: int) -> DeframerEvent:
        if not self._buf:
            expected = self.table.get(b)
            if expected is None:
                self.resyncs += 1
                return RESYNC
            self._buf.append(b)
            self._expected = expected
            if expected == 1:
                frame = bytes(self._buf)
                self._buf.clear()
                return Complete(frame)
            return PENDING
        self._buf.append(b)
        if len(self._buf) == self._expected:
            frame = bytes(self._buf)
            self._buf.clear()
            return Complete(frame)
        return PENDING

    def feed(self, data: bytes) -> list[DeframerEvent]:
        return [self.push(b) for b in data]


def sts_expected_length(type_byte: int, table: dict[int, int] | None = None) -> int | None:
    """Total frame length for an STS type byte, or None if the type is unknown."""
    return (STS_TYPE_LENGTHS if table is None else table).get(type_byte)


def convert_to_bin(n: int) -> str:
    """Minimal binary text for a non-negative integer, MSB first.

    Zero gives the empty string: the conversion loop peels bits off the low
    end while the value is non-zero, so there is nothing to emit for 0.
    """
    if n < 0:
        raise ValueError("negative input")
    bits = []
    while n != 0:
        bits.append("1" if n & 1 else "0")
        n >>= 1
    return "".join(reversed(bits))
