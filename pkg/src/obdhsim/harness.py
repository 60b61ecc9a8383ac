"""Close-loop and integration test drivers with integrity reports.

The close-loop run rebuilds the bench test that proves every port carries
bytes intact: a chain of internal forwards (the node copying one port's
input to another port's output) and external cables (loopbacks between two
ports) that eventually returns everything pumped into the ingress port
back out of the egress port. Each pumped frame is a 4-byte big-endian
sequence number plus a payload derived deterministically from (seed, seq),
so the collector can tell a lost frame from a corrupted one.

The integration scenario drives the bus from the ground seat: send an
uplink frame, wait for a downlink envelope matching an expectation, step
by step. A timed-out expectation fails that step and the run continues.
"""

from __future__ import annotations

import itertools
import json
import logging
import random
import socket
import statistics
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .framing import DownlinkDeframer, GsFrame, encode_gs_frame
from .sims import decode_wde_telemetry, hook_node_forward
from .transport import Link, LinkSignal, PortConfig, make_loopback_pair, open_link

log = logging.getLogger("obdhsim.harness")

FRAME_SEQ_BYTES = 4
DEFAULT_PAYLOAD_LEN = 64
DRAIN_GRACE = 3.0  # seconds of egress silence before giving up on stragglers

_run_ids = itertools.count()


class TopologyError(ValueError):
    """Loop topology does not describe a single ingress-to-egress chain."""


@dataclass
class LoopTopology:
    """Ordered forwarding rules plus external cable links for one loop chain."""

    ingress: str
    internal_forwards: list[tuple[str, str]]  # rx port -> tx port, inside the node
    cables: list[tuple[str, str]]             # tx port -> rx port, external loop cable
    egress: str

    @staticmethod
    def default() -> "LoopTopology":
        """The stock five-hook chain over the OSCI ports."""
        return LoopTopology(
            ingress="PortRxOsci3",
            internal_forwards=[
                ("PortRxOsci3", "PortRxOsci0"),
                ("PortRxOsci1", "PortRxOsci2"),
                ("PortRxOsci6", "PortRxOsci3"),
            ],
            cables=[
                ("PortRxOsci0", "PortRxOsci1"),
                ("PortRxOsci2", "PortRxOsci6"),
            ],
            egress="PortRxOsci3",
        )

    @staticmethod
    def from_dict(d: dict) -> "LoopTopology":
        return LoopTopology(
            ingress=d["ingress"],
            internal_forwards=[tuple(pair) for pair in d["forwards"]],
            cables=[tuple(pair) for pair in d["cables"]],
            egress=d["egress"],
        )

    def ports(self) -> list[str]:
        seen: dict[str, None] = {}
        for name in ([self.ingress, self.egress]
                     + [p for pair in self.internal_forwards for p in pair]
                     + [p for pair in self.cables for p in pair]):
            seen.setdefault(name)
        return list(seen)

    def validate(self) -> list[str]:
        """Walk the chain; returns the hop sequence or raises TopologyError."""
        forwards = dict(self.internal_forwards)
        cables = dict(self.cables)
        if len(forwards) != len(self.internal_forwards):
            raise TopologyError("duplicate rx port in internal forwards")
        if len(cables) != len(self.cables):
            raise TopologyError("duplicate tx port in cables")
        hops = [self.ingress]
        rx = self.ingress
        for _ in range(len(forwards) + len(cables) + 1):
            tx = forwards.pop(rx, None)
            if tx is None:
                raise TopologyError(f"no internal forward out of {rx!r}")
            hops.append(tx)
            if tx == self.egress and not forwards and not cables:
                return hops
            nxt = cables.pop(tx, None)
            if nxt is None:
                raise TopologyError(f"chain dead-ends at {tx!r} before reaching egress")
            hops.append(nxt)
            rx = nxt
        raise TopologyError("cycle without egress")


@dataclass
class LoopReport:
    """Outcome of one close-loop run. Pass = nothing lost, nothing corrupt."""

    frames_sent: int
    frames_received: int
    corrupt: int
    lost: int
    duration: float
    latency_min_ms: float = 0.0
    latency_mean_ms: float = 0.0
    latency_max_ms: float = 0.0

    @property
    def passed(self) -> bool:
        return self.frames_sent > 0 and self.lost == 0 and self.corrupt == 0

    def summary_line(self) -> str:
        return json.dumps({
            "sent": self.frames_sent, "received": self.frames_received,
            "corrupt": self.corrupt, "lost": self.lost,
            "duration_s": round(self.duration, 3),
            "latency_ms": {"min": round(self.latency_min_ms, 3),
                           "mean": round(self.latency_mean_ms, 3),
                           "max": round(self.latency_max_ms, 3)},
            "pass": self.passed,
        }, separators=(",", ":"))


def _frame_payload(seed: int, seq: int, payload_len: int) -> bytes:
    return random.Random((seed << 32) ^ seq).randbytes(payload_len)


def first_difference(sent: bytes, received: bytes) -> int | None:
    """Index of the first differing byte, or None when byte-exact equal.

    A truncated ``received`` differs at its own length; extra trailing
    bytes differ at ``len(sent)``.
    """
    n = min(len(sent), len(received))
    for i in range(n):
        if sent[i] != received[i]:
            return i
    if len(sent) != len(received):
        return n
    return None


def run_close_loop(topology: LoopTopology | None = None, duration: float = 60.0,
                   rate: float = 100.0, payload_len: int = DEFAULT_PAYLOAD_LEN,
                   seed: int = 1,
                   broken_cables: set[tuple[str, str]] | None = None) -> LoopReport:
    """Pump sequenced frames around the loop chain and audit what returns.

    Runs over in-memory links. ``broken_cables`` names cable rules to leave
    physically unwired, simulating a disconnected hook. Frame count is
    duration * rate, paced on a fixed schedule.
    """
    topology = topology or LoopTopology.default()
    topology.validate()
    if rate <= 0:
        raise ValueError("rate must be > 0")
    if duration <= 0:
        raise ValueError("duration must be > 0")
    broken = broken_cables or set()

    ns = f"loop{next(_run_ids)}-{random.randrange(1 << 24):06x}"
    obdh_end: dict[str, Link] = {}
    world_end: dict[str, Link] = {}
    for port in topology.ports():
        config = PortConfig(port_name=port, intercharacter_timeout=0.2)
        obdh_end[port], world_end[port] = make_loopback_pair(f"{ns}:{port}", config)

    stop = threading.Event()
    copiers = []
    for rx, tx in topology.internal_forwards:
        copiers.append(threading.Thread(
            target=hook_node_forward, args=(obdh_end[rx], obdh_end[tx], stop),
            name=f"fwd-{rx}", daemon=True))
    for tx, rx in topology.cables:
        if (tx, rx) in broken:
            continue
        copiers.append(threading.Thread(
            target=hook_node_forward, args=(world_end[tx], world_end[rx], stop),
            name=f"cable-{tx}", daemon=True))
    for t in copiers:
        t.start()

    total = int(duration * rate)
    frame_size = FRAME_SEQ_BYTES + payload_len
    send_times: list[float] = [0.0] * total
    latencies: list[float] = []
    received = 0
    corrupt = 0

    def driver():
        ingress = world_end[topology.ingress]
        start = time.monotonic()
        for seq in range(total):
            target = start + seq / rate
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            send_times[seq] = time.monotonic()
            ingress.send_bytes(seq.to_bytes(FRAME_SEQ_BYTES, "big")
                               + _frame_payload(seed, seq, payload_len))

    started = time.monotonic()
    driver_thread = threading.Thread(target=driver, name="loop-driver", daemon=True)
    driver_thread.start()

    egress = world_end[topology.egress]
    buf = bytearray()
    last_arrival = time.monotonic()
    while received + corrupt < total:
        chunk = egress.recv_chunk(timeout=0.2)
        if chunk is LinkSignal.EOF:
            break
        if chunk is LinkSignal.TIMEOUT:
            if not driver_thread.is_alive() and time.monotonic() - last_arrival > DRAIN_GRACE:
                break
            continue
        last_arrival = time.monotonic()
        buf += chunk
        while len(buf) >= frame_size:
            frame = bytes(buf[:frame_size])
            del buf[:frame_size]
            seq = int.from_bytes(frame[:FRAME_SEQ_BYTES], "big")
            if seq < total and frame[FRAME_SEQ_BYTES:] == _frame_payload(seed, seq, payload_len):
                received += 1
                latencies.append((last_arrival - send_times[seq]) * 1000.0)
            else:
                corrupt += 1

    driver_thread.join()
    stop.set()
    for link in list(obdh_end.values()) + list(world_end.values()):
        link.close()
    for t in copiers:
        t.join(timeout=2)

    elapsed = time.monotonic() - started
    report = LoopReport(
        frames_sent=total,
        frames_received=received + corrupt,
        corrupt=corrupt,
        lost=total - received - corrupt,
        duration=elapsed,
        latency_min_ms=min(latencies) if latencies else 0.0,
        latency_mean_ms=statistics.fmean(latencies) if latencies else 0.0,
        latency_max_ms=max(latencies) if latencies else 0.0,
    )
    log.info("close-loop %s", report.summary_line())
    return report


# Integration scenario

@dataclass
class StepResult:
    label: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    steps: list[StepResult] = field(default_factory=list)
    transcript: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.steps) and all(s.passed for s in self.steps)


def default_scenario_steps() -> list[dict]:
    """Ground-seat script: query the wheel, spin it to 500 rpm, confirm the
    telemetry follows, then pull one 16-byte star-sensor frame."""
    return [
        {"label": "request WDE telemetry", "send": {"id": 0x01, "payload": "01"}},
        {"label": "WDE telemetry envelope", "expect": {"id": 0x01, "prefix": "01", "length": 5}},
        {"label": "set wheel speed 500", "send": {"id": 0x01, "payload": "0201f4"}},
        {"label": "set-speed ack", "expect": {"id": 0x01, "payload": "0200ac"}},
        {"label": "re-request WDE telemetry", "send": {"id": 0x01, "payload": "01"}},
        {"label": "telemetry reflects 500 rpm", "expect": {"id": 0x01, "wde_speed": 500}},
        {"label": "request STS type 0x01", "send": {"id": 0x04, "payload": "01"}},
        {"label": "16-byte star frame", "expect": {"id": 0x04, "sts_type": 0x01, "length": 16}},
    ]


def _matches(matcher: dict, subsystem_id: int, payload: bytes) -> bool:
    if "id" in matcher and subsystem_id != matcher["id"]:
        return False
    if "payload" in matcher and payload != bytes.fromhex(matcher["payload"]):
        return False
    if "prefix" in matcher and not payload.startswith(bytes.fromhex(matcher["prefix"])):
        return False
    if "length" in matcher and len(payload) != matcher["length"]:
        return False
    if "min_length" in matcher and len(payload) < matcher["min_length"]:
        return False
    if "wde_speed" in matcher and decode_wde_telemetry(payload) != matcher["wde_speed"]:
        return False
    if "sts_type" in matcher and (not payload or payload[0] != matcher["sts_type"]):
        return False
    return True


def run_integration_scenario(egse_link: Link, steps: list[dict] | None = None,
                             default_timeout: float = 5.0) -> ScenarioReport:
    """Execute send/expect steps over the ground link.

    Envelopes that match no pending expectation stay in the transcript;
    an expect step consumes the first match and fails on timeout without
    aborting the run.
    """
    steps = steps if steps is not None else default_scenario_steps()
    report = ScenarioReport()
    deframer = DownlinkDeframer()
    pending: list[tuple[int, bytes]] = []

    def next_envelope(deadline: float) -> tuple[int, bytes] | None:
        if pending:
            return pending.pop(0)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            chunk = egse_link.recv_chunk(timeout=min(remaining, 0.2))
            if chunk is LinkSignal.EOF:
                return None
            if chunk is LinkSignal.TIMEOUT:
                continue
            envelopes = deframer.feed_envelopes(chunk)
            if envelopes:
                pending.extend(envelopes[1:])
                return envelopes[0]

    for step in steps:
        label = step.get("label", "step")
        if "send" in step:
            spec = step["send"]
            payload = bytes.fromhex(spec.get("payload", ""))
            frame = GsFrame(spec["id"], spec.get("reserved", 0x00), payload)
            egse_link.send_bytes(encode_gs_frame(frame))
            report.transcript.append(f"up id={frame.subsystem_id:02x} {payload.hex()}")
            report.steps.append(StepResult(label, True, f"sent {payload.hex()}"))
        elif "expect" in step:
            matcher = step["expect"]
            deadline = time.monotonic() + matcher.get("timeout", default_timeout)
            matched = False
            while not matched:
                envelope = next_envelope(deadline)
                if envelope is None:
                    report.steps.append(StepResult(label, False, "timeout"))
                    break
                subsystem_id, payload = envelope
                report.transcript.append(f"down id={subsystem_id:02x} {payload.hex()}")
                if _matches(matcher, subsystem_id, payload):
                    report.steps.append(StepResult(label, True, f"got {payload.hex()}"))
                    matched = True
        else:
            report.steps.append(StepResult(label, False, "step has neither send nor expect"))
    return report


# Managed process stack: node + sims as real subprocesses over TCP.

def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ScenarioStack:
    """Spawns the node and the WDE/STS simulators as separate processes,
    wired over localhost TCP, and connects the caller as the ground seat."""

    def __init__(self, seed: int = 1):
        self.seed = seed
        self.processes: list[subprocess.Popen] = []
        self.egse_link: Link | None = None
        self._tmp: tempfile.TemporaryDirectory | None = None

    def __enter__(self) -> "ScenarioStack":
        egse_port = _free_port()
        wde_port = _free_port()
        sts_port = _free_port()
        self._tmp = tempfile.TemporaryDirectory(prefix="obdhsim-scenario-")
        config_path = Path(self._tmp.name) / "node.json"
        config_path.write_text(json.dumps({
            "overrides": {
                "PortRxMainBoard2": {"backend": f"tcp-listen:127.0.0.1:{egse_port}"},
                "PortRxMainBoard3": {"backend": f"tcp-listen:127.0.0.1:{wde_port}"},
                "PortRxOsci4": {"backend": f"tcp-listen:127.0.0.1:{sts_port}"},
            }
        }))
        self._spawn("obdh", "run", "--config", str(config_path))
        self._spawn("sim", "wde", "--backend", f"tcp:127.0.0.1:{wde_port}", "--device-id", "1")
        self._spawn("sim", "sts", "--backend", f"tcp:127.0.0.1:{sts_port}",
                    "--seed", str(self.seed))
        self.egse_link = _connect_with_retry(
            PortConfig(port_name="egse", intercharacter_timeout=0.2),
            f"tcp:127.0.0.1:{egse_port}")
        return self

    def _spawn(self, *args: str) -> None:
        self.processes.append(subprocess.Popen(
            [sys.executable, "-m", "obdhsim", *args],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL))

    def __exit__(self, *exc) -> None:
        if self.egse_link is not None:
            self.egse_link.close()
        for proc in self.processes:
            proc.terminate()
        for proc in self.processes:
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
        if self._tmp is not None:
            self._tmp.cleanup()


def _connect_with_retry(config: PortConfig, backend: str, timeout: float = 15.0) -> Link:
    deadline = time.monotonic() + timeout
    while True:
        try:
            return open_link(config, backend)
        except Exception:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.1)


def run_managed_scenario(steps: list[dict] | None = None, seed: int = 1) -> ScenarioReport:
    """Default scenario against a freshly spawned node + sims over TCP."""
    with ScenarioStack(seed=seed) as stack:
        # give the sims a moment to finish their own connects
        time.sleep(0.5)
        return run_integration_scenario(stack.egse_link, steps)
