"""The OBDH node: one receive task per port, routing, and telemetry memory.

The node owns nine ports. The ground-segment (EGSE) port runs an uplink
parser and forwards each frame's payload verbatim to the port whose
subsystem id matches. Every other port runs the deframer matching its
subsystem's protocol, stores each completed frame as a telemetry record,
and, when the port's disposition says so, wraps the frame in a downlink
envelope back to the ground link.

Subsystem id assignments: 0x01..0x03 the three wheel drives, 0x04/0x05
the star sensors, 0x06 battery, 0x07 GPS, 0x08 the custom housekeeping
board. Id 0x00 addresses the node itself (status queries). The EGSE port
has no id; it is the ground link, not a destination.

Downlink writes from concurrent port tasks are serialized per ground link
so envelope bytes never interleave.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, replace

from .framing import (
    GPS_TERMINATOR,
    Complete,
    GsDeframer,
    GsFrame,
    Reset,
    Resync,
    StsDeframer,
    TerminatorDeframer,
    encode_downlink_envelope,
)
from .transport import (
    Link,
    LinkError,
    LinkSignal,
    PortConfig,
    open_link,
    register_memory_pair,
)
from . import transport

log = logging.getLogger("obdhsim.node")

INTERNAL_ID = 0x00

SUBSYSTEM_KINDS = ("egse", "wde", "sts", "battery", "gps", "custom")

DISPOSITION_FORWARD = "forward"
DISPOSITION_STORE = "store"

DEFAULT_TELEMETRY_CAP = 10_000

# Internal (id 0x00) query opcodes
INTERNAL_STATUS_REQUEST = 0x01
INTERNAL_ERROR_REPLY = 0xEE


class PortTableError(ValueError):
    """Bad port table configuration."""


@dataclass(frozen=True)
class PortRow:
    """One port definition: who is plugged in and how it is handled."""

    port: str
    standard: str
    subsystem: str            # kind: egse | wde | sts | battery | gps | custom
    name: str                 # display name, e.g. "WDE 1"
    subsystem_id: int | None  # uplink address; None for the EGSE port
    backend: str
    disposition: str = DISPOSITION_FORWARD
    hook: int | None = None   # loop-test hook number, None when hard-wired
    baud: int = 9600
    min_read_bytes: int = 1
    intercharacter_timeout: float = 0.5

    def port_config(self) -> PortConfig:
        return PortConfig(
            port_name=self.port,
            baud=self.baud,
            min_read_bytes=self.min_read_bytes,
            intercharacter_timeout=self.intercharacter_timeout,
            electrical_standard=self.standard,
        )


def default_port_table(backend_fmt: str = "mem:{port}") -> "PortTable":
    """The stock nine-port wiring: EGSE, three wheel drives, two star
    sensors, battery, GPS, and the custom housekeeping board."""
    mk = lambda port: backend_fmt.format(port=port)
    rows = [
        PortRow("PortRxMainBoard2", "RS232", "egse", "EGSE", None, mk("PortRxMainBoard2")),
        PortRow("PortRxMainBoard3", "TTL", "wde", "WDE 1", 0x01, mk("PortRxMainBoard3")),
        PortRow("PortRxOsci0", "TTL", "wde", "WDE 2", 0x02, mk("PortRxOsci0"), hook=1),
        PortRow("PortRxOsci2", "TTL", "wde", "WDE 3", 0x03, mk("PortRxOsci2"), hook=2),
        PortRow("PortRxOsci4", "RS422", "sts", "STS 1", 0x04, mk("PortRxOsci4")),
        PortRow("PortRxOsci6", "RS422", "sts", "STS 2", 0x05, mk("PortRxOsci6"), hook=3),
        PortRow("PortRxOsci1", "TTL", "battery", "BATTERY", 0x06, mk("PortRxOsci1"),
                disposition=DISPOSITION_STORE, hook=4),
        PortRow("PortRxOsci3", "RS232", "gps", "GPS", 0x07, mk("PortRxOsci3"),
                disposition=DISPOSITION_STORE, hook=5),
        PortRow("PortRxOsci5", "TTL", "custom", "CUSTOM PC104", 0x08, mk("PortRxOsci5"),
                disposition=DISPOSITION_STORE),
    ]
    return PortTable(rows)


class PortTable:
    """Validated port rows with id and name lookups."""

    def __init__(self, rows: list[PortRow]):
        ports_seen: set[str] = set()
        ids_seen: set[int] = set()
        egse_rows = []
        for row in rows:
            if row.subsystem not in SUBSYSTEM_KINDS:
                raise PortTableError(f"unknown subsystem kind {row.subsystem!r}")
            if row.port in ports_seen:
                raise PortTableError(f"duplicate port {row.port!r}")
            ports_seen.add(row.port)
            if row.subsystem == "egse":
                egse_rows.append(row)
                continue
            if row.subsystem_id is None:
                raise PortTableError(f"port {row.port!r} needs a subsystem id")
            if not 0 < row.subsystem_id <= 0xFF:
                raise PortTableError(f"subsystem id {row.subsystem_id!r} out of range")
            if row.subsystem_id in ids_seen:
                raise PortTableError(f"duplicate subsystem id 0x{row.subsystem_id:02x}")
            ids_seen.add(row.subsystem_id)
            if row.disposition not in (DISPOSITION_FORWARD, DISPOSITION_STORE):
                raise PortTableError(f"unknown disposition {row.disposition!r}")
        if len(egse_rows) != 1:
            raise PortTableError("exactly one EGSE port required")
        self.rows = list(rows)
        self.egse = egse_rows[0]
        self._by_id = {r.subsystem_id: r for r in rows if r.subsystem_id is not None}
        self._by_port = {r.port: r for r in rows}

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def by_id(self, subsystem_id: int) -> PortRow | None:
        return self._by_id.get(subsystem_id)

    def by_port(self, port: str) -> PortRow | None:
        return self._by_port.get(port)

    def subsystem_rows(self) -> list[PortRow]:
        return [r for r in self.rows if r.subsystem != "egse"]


def build_port_table(config: dict | None) -> PortTable:
    """Port table from a parsed config mapping; defaults when absent.

    Accepted keys: ``ports`` (full row list, replaces the default wiring)
    and ``overrides`` (per-port field patches on top of whatever ``ports``
    or the defaults produced). Row fields mirror PortRow; ``id`` maps to
    subsystem_id and may be given as int or hex string.
    """
    if not config:
        return default_port_table()
    if "ports" in config:
        rows = [_row_from_dict(d) for d in config["ports"]]
    else:
        rows = list(default_port_table().rows)
    overrides = config.get("overrides", {})
    if overrides:
        by_port = {r.port: r for r in rows}
        for port, patch in overrides.items():
            if port not in by_port:
                raise PortTableError(f"override for unknown port {port!r}")
            by_port[port] = _patch_row(by_port[port], patch)
        rows = [by_port[r.port] for r in rows]
    return PortTable(rows)


def _parse_id(value) -> int | None:
    if value is None:
        return None
    if isinstance(value, str):
        return int(value, 16)
    return int(value)


def _row_from_dict(d: dict) -> PortRow:
    try:
        return PortRow(
            port=d["port"],
            standard=d.get("standard", "TTL"),
            subsystem=d["subsystem"],
            name=d.get("name", d["subsystem"].upper()),
            subsystem_id=_parse_id(d.get("id")),
            backend=d["backend"],
            disposition=d.get("disposition", DISPOSITION_FORWARD),
            hook=d.get("hook"),
            baud=d.get("baud", 9600),
            min_read_bytes=d.get("min_read_bytes", 1),
            intercharacter_timeout=d.get("intercharacter_timeout", 0.5),
        )
    except KeyError as exc:
        raise PortTableError(f"port row missing field {exc}") from exc


def _patch_row(row: PortRow, patch: dict) -> PortRow:
    fields = dict(patch)
    if "id" in fields:
        fields["subsystem_id"] = _parse_id(fields.pop("id"))
    try:
        return replace(row, **fields)
    except TypeError as exc:
        raise PortTableError(f"bad override for {row.port!r}: {exc}") from exc


class RouteResult(enum.Enum):
    INTERNAL = "internal"
    UNKNOWN = "unknown"


def route_uplink(frame: GsFrame, table: PortTable) -> str | RouteResult:
    """Destination port name for an uplink frame.

    Id 0x00 is the node itself; an id matching no table row is UNKNOWN
    (a value, not an error: the router drops and counts it).
    """
    if frame.subsystem_id == INTERNAL_ID:
        return RouteResult.INTERNAL
    row = table.by_id(frame.subsystem_id)
    if row is None:
        return RouteResult.UNKNOWN
    return row.port


@dataclass(frozen=True)
class TelemetryRecord:
    """A subsystem frame kept in OBDH memory."""

    timestamp: float          # monotonic seconds
    source_port: str
    payload: bytes
    disposition: str

    def __post_init__(self):
        if not self.payload:
            raise ValueError("telemetry payload must be non-empty")


class TelemetryStore:
    """Bounded in-memory record store; oldest records fall off the end."""

    def __init__(self, capacity: int = DEFAULT_TELEMETRY_CAP):
        self._records: deque[TelemetryRecord] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def append(self, record: TelemetryRecord) -> None:
        with self._lock:
            self._records.append(record)

    def query(self, source_port: str | None = None, since: float | None = None,
              limit: int | None = None) -> list[TelemetryRecord]:
        """Matching records, oldest first (newest last), at most ``limit``."""
        with self._lock:
            records = list(self._records)
        if source_port is not None:
            records = [r for r in records if r.source_port == source_port]
        if since is not None:
            records = [r for r in records if r.timestamp >= since]
        if limit is not None:
            records = records[-limit:]
        return records


class RouterCounters:
    """Monotonic event counters shared by the port tasks."""

    NAMES = ("frames_routed", "frames_dropped", "overflows", "resyncs",
             "downlink_frames", "internal_queries")

    def __init__(self):
        self._lock = threading.Lock()
        for name in self.NAMES:
            setattr(self, name, 0)

    def bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {name: getattr(self, name) for name in self.NAMES}


def _deframer_for(kind: str):
    if kind == "wde" or kind == "battery" or kind == "custom":
        return TerminatorDeframer()
    if kind == "sts":
        return StsDeframer()
    if kind == "gps":
        return TerminatorDeframer(terminator=GPS_TERMINATOR)
    raise ValueError(f"no deframer for subsystem kind {kind!r}")


class ObdhNode:
    """The routing node. One thread per port, plus the ground-segment task.

    Links are opened from each row's backend spec at start(); tests can
    inject pre-opened links per port instead. stop() closes every link,
    which unblocks and ends the tasks.
    """

    def __init__(self, table: PortTable | None = None,
                 telemetry_cap: int = DEFAULT_TELEMETRY_CAP,
                 links: dict[str, Link] | None = None):
        self.table = table or default_port_table()
        self.telemetry = TelemetryStore(telemetry_cap)
        self.counters = RouterCounters()
        self._injected = dict(links or {})
        self.links: dict[str, Link] = {}
        self._threads: list[threading.Thread] = []
        self._gs_lock = threading.Lock()
        self._stop = threading.Event()
        self._started = False

    # lifecycle

    def start(self) -> None:
        if self._started:
            raise RuntimeError("node already started")
        self._started = True
        for row in self.table:
            self.links[row.port] = self._injected.get(row.port) or self._open_row_link(row)
        gs = threading.Thread(target=self._gs_task, name="obdh-gs", daemon=True)
        self._threads.append(gs)
        for row in self.table.subsystem_rows():
            t = threading.Thread(target=self._subsystem_task, args=(row,),
                                 name=f"obdh-{row.port}", daemon=True)
            self._threads.append(t)
        for t in self._threads:
            t.start()

    def _open_row_link(self, row: PortRow) -> Link:
        if row.backend.startswith("mem:"):
            # lazily create the pair so a stock node starts without a
            # pre-wired world side
            name = row.backend.partition(":")[2]
            if name not in transport._memory_registry:
                register_memory_pair(name)
        return open_link(row.port_config(), row.backend)

    def stop(self) -> None:
        self._stop.set()
        for link in self.links.values():
            link.close()
        for t in self._threads:
            t.join(timeout=5)

    def run_forever(self) -> None:
        try:
            while not self._stop.is_set():
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # ground-segment task

    def _gs_task(self) -> None:
        link = self.links[self.table.egse.port]
        deframer = GsDeframer()
        port = self.table.egse.port
        while not self._stop.is_set():
            chunk = link.recv_chunk()
            if chunk is LinkSignal.TIMEOUT:
                continue
            if chunk is LinkSignal.EOF:
                log.info("%s eof -", port)
                return
            for b in chunk:
                ev = deframer.push(b)
                if type(ev) is Complete:
                    self._handle_uplink(ev.data)
                elif type(ev) is Reset and ev.overflow:
                    self.counters.bump("overflows")
                    log.info("%s overflow -", port)

    def _handle_uplink(self, frame: GsFrame) -> None:
        dest = route_uplink(frame, self.table)
        if dest is RouteResult.INTERNAL:
            self.counters.bump("internal_queries")
            reply = self._internal_reply(frame.payload)
            self._send_downlink(INTERNAL_ID, reply)
            log.info("%s internal %s", self.table.egse.port, frame.payload[:32].hex())
        elif dest is RouteResult.UNKNOWN:
            self.counters.bump("frames_dropped")
            log.info("%s drop id=%02x %s", self.table.egse.port,
                     frame.subsystem_id, frame.payload[:32].hex())
        else:
            try:
                self.links[dest].send_bytes(frame.payload)
            except LinkError as exc:
                # a dead peripheral link must not take the router down
                self.counters.bump("frames_dropped")
                log.info("%s drop write-failed (%s)", dest, exc)
                return
            self.counters.bump("frames_routed")
            log.info("%s routed id=%02x %s", dest, frame.subsystem_id,
                     frame.payload[:32].hex())

    def _internal_reply(self, request: bytes) -> bytes:
        if request[:1] == bytes([INTERNAL_STATUS_REQUEST]):
            status = dict(self.counters.snapshot(), records=len(self.telemetry))
            return json.dumps(status, separators=(",", ":")).encode()
        return bytes([INTERNAL_ERROR_REPLY])

    def _send_downlink(self, subsystem_id: int, payload: bytes) -> None:
        envelope = encode_downlink_envelope(subsystem_id, payload)
        with self._gs_lock:
            self.links[self.table.egse.port].send_bytes(envelope)

    # subsystem tasks

    def _subsystem_task(self, row: PortRow) -> None:
        link = self.links[row.port]
        deframer = _deframer_for(row.subsystem)
        while not self._stop.is_set():
            chunk = link.recv_chunk()
            if chunk is LinkSignal.TIMEOUT:
                continue
            if chunk is LinkSignal.EOF:
                log.info("%s eof -", row.port)
                return
            for b in chunk:
                ev = deframer.push(b)
                kind = type(ev)
                if kind is Complete:
                    self._handle_subsystem_frame(row, ev.data)
                elif kind is Reset and ev.overflow:
                    self.counters.bump("overflows")
                    log.info("%s overflow -", row.port)
                elif kind is Resync:
                    self.counters.bump("resyncs")

    def _handle_subsystem_frame(self, row: PortRow, payload: bytes) -> None:
        record = TelemetryRecord(time.monotonic(), row.port, payload, row.disposition)
        self.telemetry.append(record)
        log.info("%s rx_frame %s", row.port, payload[:32].hex())
        if row.disposition == DISPOSITION_FORWARD:
            try:
                self._send_downlink(row.subsystem_id, payload)
            except LinkError as exc:
                # ground link trouble: keep recording telemetry regardless
                log.info("%s downlink-failed (%s)", row.port, exc)
                return
            self.counters.bump("downlink_frames")
            log.info("%s downlink id=%02x %s", row.port, row.subsystem_id,
                     payload[:32].hex())

    # queries

    def query_telemetry(self, source_port: str | None = None, since: float | None = None,
                        limit: int | None = None) -> list[TelemetryRecord]:
        return self.telemetry.query(source_port=source_port, since=since, limit=limit)
