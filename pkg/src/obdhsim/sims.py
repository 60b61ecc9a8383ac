"""Protocol-level subsystem simulators and the passive loop-cable node.

Each simulator speaks its subsystem's wire format and nothing more: no
wheel dynamics, no orbit, no star field. Frames carry deterministic
content derived from a seed, so a rerun with the same seed and command
sequence produces the identical byte stream.

Wire formats (terminator-framed ones never contain an interior terminator;
any value byte that would equal 0xAC is saturated to 0xAB, a documented
simulator quirk that trades one fixed-point count for parseability):

- WDE: request/reply. 0x01 -> telemetry [0x01 seq speed_hi speed_lo 0xAC];
  0x02 hi lo -> set wheel speed, ack [0x02 0x00 0xAC]; anything else ->
  nak [0xEE 0xAC]. Speed is signed 16-bit big-endian, clamped to
  +/-10000 rpm.
- STS: a request byte that is a known type code yields one frame of the
  table length, first byte the type, remainder seeded bytes that avoid
  the downlink envelope delimiters.
- Battery: [0xB1 seq v_hi v_lo i_hi i_lo chk 0xAC], voltage/current as
  unsigned hundredths, chk = XOR of the preceding bytes.
- Custom housekeeping: [0xC1 seq t_hi t_lo v_hi v_lo i_hi i_lo chk 0xAC],
  temperature signed hundredths of a degree C.
- GPS: printable NMEA-style sentence ending LF.
"""

from __future__ import annotations

import random
import struct
import threading
import time

from .framing import FRAME_END, FRAME_START, STS_TYPE_LENGTHS, WDE_TERMINATOR
from .transport import Link, LinkSignal

WDE_TELEMETRY_REQUEST = 0x01
WDE_SET_SPEED = 0x02
WDE_NAK = 0xEE
WDE_MAX_SPEED = 10_000

BATTERY_FRAME_HEAD = 0xB1
CUSTOM_FRAME_HEAD = 0xC1


def _saturate(b: int) -> int:
    """Keep value bytes off the frame terminator."""
    return 0xAB if b == WDE_TERMINATOR else b


def _terminated_frame(fields: list[int]) -> bytes:
    return bytes([_saturate(b) for b in fields] + [WDE_TERMINATOR])


class WdeSimulator:
    """Wheel drive electronics: holds a commanded wheel speed, answers
    telemetry requests, and naks anything it does not understand."""

    def __init__(self, device_id: int = 0x01):
        self.device_id = device_id
        self.wheel_speed = 0
        self.telemetry_seq = 0
        self._partial = bytearray()

    def handle_command(self, command: bytes) -> bytes:
        """Reply for one complete command. Every reply ends with 0xAC."""
        if not command:
            raise ValueError("empty command")
        if command == bytes([WDE_TELEMETRY_REQUEST]):
            hi, lo = struct.pack(">h", self.wheel_speed)
            reply = _terminated_frame([WDE_TELEMETRY_REQUEST, self.telemetry_seq & 0xFF, hi, lo])
            self.telemetry_seq += 1
            return reply
        if len(command) == 3 and command[0] == WDE_SET_SPEED:
            (speed,) = struct.unpack(">h", command[1:3])
            self.wheel_speed = max(-WDE_MAX_SPEED, min(WDE_MAX_SPEED, speed))
            return _terminated_frame([WDE_SET_SPEED, 0x00])
        return _terminated_frame([WDE_NAK])

    def feed_byte(self, b: int) -> bytes | None:
        """Incremental command chunking for a byte stream: a set-speed
        command spans three bytes, everything else is one."""
        self._partial.append(b)
        if self._partial[0] == WDE_SET_SPEED and len(self._partial) < 3:
            return None
        command = bytes(self._partial)
        self._partial.clear()
        return self.handle_command(command)


def decode_wde_telemetry(payload: bytes) -> int | None:
    """Wheel speed out of a telemetry reply, None if the shape is wrong."""
    if len(payload) < 5 or payload[0] != WDE_TELEMETRY_REQUEST or payload[-1] != WDE_TERMINATOR:
        return None
    (speed,) = struct.unpack(">h", payload[2:4])
    return speed


class StsSimulator:
    """Star sensor: emits fixed-length frames keyed by the request's type byte.

    Frame bodies come from a seeded generator and avoid the '#' and '&'
    envelope delimiters so a ground-side parse of the wrapped frame cannot
    be corrupted by payload content.
    """

    def __init__(self, device_id: int = 0x04, seed: int = 0):
        self.device_id = device_id
        self._rng = random.Random(seed)

    def emit(self, type_byte: int) -> bytes:
        length = STS_TYPE_LENGTHS.get(type_byte)
        if length is None:
            raise ValueError(f"unknown star-sensor type 0x{type_byte:02x}")
        body = bytearray([type_byte])
        while len(body) < length:
            b = self._rng.randrange(256)
            if b in (FRAME_START, FRAME_END):
                continue
            body.append(b)
        return bytes(body)


class BatterySimulator:
    """Battery monitor: voltage and current as fixed-point hundredths."""

    def __init__(self, seed: int = 0, voltage: float = 28.0, current: float = 1.5):
        self.voltage = voltage
        self.current = current
        self.seq = 0
        self._rng = random.Random(seed)

    def step(self) -> None:
        """Deterministic wander inside the battery's plausible range."""
        self.voltage = min(35.0, max(0.0, self.voltage + self._rng.uniform(-0.05, 0.05)))
        self.current = min(20.0, max(0.0, self.current + self._rng.uniform(-0.02, 0.02)))

    def emit(self) -> bytes:
        v = max(0, min(3500, round(self.voltage * 100)))
        i = max(0, min(0xFFFF, round(self.current * 100)))
        fields = [BATTERY_FRAME_HEAD, _saturate(self.seq & 0xFF),
                  _saturate(v >> 8), _saturate(v & 0xFF),
                  _saturate(i >> 8), _saturate(i & 0xFF)]
        chk = 0
        for b in fields:
            chk ^= b
        self.seq += 1
        return bytes(fields + [_saturate(chk), WDE_TERMINATOR])


def decode_battery_frame(payload: bytes) -> tuple[float, float] | None:
    """(volts, amps) from a battery frame, None if the shape is wrong."""
    if len(payload) != 8 or payload[0] != BATTERY_FRAME_HEAD or payload[-1] != WDE_TERMINATOR:
        return None
    v = (payload[2] << 8) | payload[3]
    i = (payload[4] << 8) | payload[5]
    return v / 100.0, i / 100.0


class CustomBoardSimulator:
    """The custom housekeeping board: temperature, voltage, current."""

    def __init__(self, seed: int = 0, temperature: float = 25.0,
                 voltage: float = 5.0, current: float = 0.4):
        self.temperature = temperature
        self.voltage = voltage
        self.current = current
        self.seq = 0
        self._rng = random.Random(seed)

    def step(self) -> None:
        self.temperature = min(85.0, max(-40.0, self.temperature + self._rng.uniform(-0.1, 0.1)))
        self.voltage = min(35.0, max(0.0, self.voltage + self._rng.uniform(-0.01, 0.01)))
        self.current = min(20.0, max(0.0, self.current + self._rng.uniform(-0.01, 0.01)))

    def emit(self) -> bytes:
        t = max(-4000, min(8500, round(self.temperature * 100)))
        t_hi, t_lo = struct.pack(">h", t)
        v = max(0, min(0xFFFF, round(self.voltage * 100)))
        i = max(0, min(0xFFFF, round(self.current * 100)))
        fields = [CUSTOM_FRAME_HEAD, _saturate(self.seq & 0xFF),
                  _saturate(t_hi), _saturate(t_lo),
                  _saturate(v >> 8), _saturate(v & 0xFF),
                  _saturate(i >> 8), _saturate(i & 0xFF)]
        chk = 0
        for b in fields:
            chk ^= b
        self.seq += 1
        return bytes(fields + [_saturate(chk), WDE_TERMINATOR])


def decode_custom_frame(payload: bytes) -> tuple[float, float, float] | None:
    """(temp C, volts, amps) from a housekeeping frame."""
    if len(payload) != 10 or payload[0] != CUSTOM_FRAME_HEAD or payload[-1] != WDE_TERMINATOR:
        return None
    (t,) = struct.unpack(">h", payload[2:4])
    v = (payload[4] << 8) | payload[5]
    i = (payload[6] << 8) | payload[7]
    return t / 100.0, v / 100.0, i / 100.0


class GpsSimulator:
    """GPS receiver: NMEA-style printable sentences, LF-terminated."""

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)
        self.count = 0

    def emit(self) -> bytes:
        lat = 6.49 + self._rng.uniform(-0.01, 0.01)
        lon = 106.85 + self._rng.uniform(-0.01, 0.01)
        seconds = self.count % 86400
        hhmmss = f"{seconds // 3600:02d}{(seconds // 60) % 60:02d}{seconds % 60:02d}"
        body = f"GPGGA,{hhmmss}.00,{lat:09.4f},S,{lon:010.4f},E,1,08,0.9,545.4,M"
        chk = 0
        for ch in body:
            chk ^= ord(ch)
        self.count += 1
        return f"${body}*{chk:02X}\r\n".encode("ascii")


def hook_node_forward(in_link: Link, out_link: Link,
                      stop: threading.Event | None = None) -> int:
    """Copy every byte from in_link to out_link, unchanged and in order.

    Models one external loop cable. Returns the byte count forwarded;
    end-of-stream on the input closes the output.
    """
    forwarded = 0
    while stop is None or not stop.is_set():
        chunk = in_link.recv_chunk()
        if chunk is LinkSignal.TIMEOUT:
            continue
        if chunk is LinkSignal.EOF:
            out_link.close()
            return forwarded
        out_link.send_bytes(chunk)
        forwarded += len(chunk)
    return forwarded


# Service loops used by the sim CLI; each runs until stop is set or the
# link reports end-of-stream.

def run_wde_service(link: Link, sim: WdeSimulator,
                    stop: threading.Event | None = None) -> None:
    while stop is None or not stop.is_set():
        chunk = link.recv_chunk()
        if chunk is LinkSignal.TIMEOUT:
            continue
        if chunk is LinkSignal.EOF:
            return
        for b in chunk:
            reply = sim.feed_byte(b)
            if reply is not None:
                link.send_bytes(reply)


def run_sts_service(link: Link, sim: StsSimulator, stop: threading.Event | None = None,
                    rate: float | None = None, emit_type: int = 0x01) -> None:
    """Answer request-by-type bytes; with a rate, also emit periodically."""
    next_emit = time.monotonic()
    while stop is None or not stop.is_set():
        chunk = link.recv_chunk()
        if chunk is LinkSignal.EOF:
            return
        if chunk is not LinkSignal.TIMEOUT:
            for b in chunk:
                if b in STS_TYPE_LENGTHS:
                    link.send_bytes(sim.emit(b))
        if rate:
            now = time.monotonic()
            if now >= next_emit:
                link.send_bytes(sim.emit(emit_type))
                next_emit = now + 1.0 / rate


def run_periodic_service(link: Link, sim, rate: float = 1.0,
                         stop: threading.Event | None = None) -> None:
    """Battery / GPS / custom board: emit at a fixed rate, drain any input."""
    period = 1.0 / rate
    next_emit = time.monotonic()
    while stop is None or not stop.is_set():
        now = time.monotonic()
        if now >= next_emit:
            if hasattr(sim, "step"):
                sim.step()
            link.send_bytes(sim.emit())
            next_emit = now + period
        wait = max(0.01, min(next_emit - time.monotonic(), period))
        # bounded read keeps the loop responsive to stop and to EOF
        chunk = link.recv_chunk(timeout=wait)
        if chunk is LinkSignal.EOF:
            return
