"""Acceptance suite: one test per shipping criterion, each timed against
its runtime budget and printing a PASS line (run with ``pytest -s`` to see
them live).

These drive the public surfaces only: a running node over links, the
harness entry points, and the CLI for the process-separated scenario.
"""

import random
import subprocess
import sys
import threading
import time
from contextlib import contextmanager

from obdhsim.core import default_port_table
from obdhsim.framing import (
    Complete,
    DownlinkDeframer,
    GsFrame,
    STS_TYPE_LENGTHS,
    StsDeframer,
    convert_to_bin,
    encode_gs_frame,
)
from obdhsim.harness import run_close_loop, run_managed_scenario
from obdhsim.sims import BatterySimulator, CustomBoardSimulator, GpsSimulator, StsSimulator
from obdhsim.transport import LinkSignal, make_loopback_pair

from helpers import read_exactly, start_node, stop_node, unique_ns

# delimiter-free payload bytes: map '#'->'$' and '&'->'\''
_SCRUB = bytes.maketrans(bytes([0x23, 0x26]), bytes([0x24, 0x27]))
# additionally terminator-free for frames that must survive 0xAC framing
_SCRUB_WDE = bytes.maketrans(bytes([0x23, 0x26, 0xAC]), bytes([0x24, 0x27, 0xAB]))


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.monotonic()
    yield
    elapsed = time.monotonic() - start
    assert elapsed < budget_s, f"{name}: {elapsed:.1f}s exceeded {budget_s}s budget"
    print(f"PASS {name} ({elapsed:.1f}s)")


def test_gs_routing_fidelity():
    """10 000 random uplink frames land verbatim on the right port, none
    anywhere else, in under 30 s."""
    with criterion("GS routing fidelity", 30.0):
        node, world = start_node()
        try:
            rng = random.Random(20260808)
            ids = [r.subsystem_id for r in node.table.subsystem_rows()]
            sent: dict[int, list[bytes]] = {i: [] for i in ids}
            batch = bytearray()
            egse = world["PortRxMainBoard2"]
            for _ in range(10_000):
                subsystem_id = rng.choice(ids)
                payload = rng.randbytes(rng.randint(0, 1024)).translate(_SCRUB)
                sent[subsystem_id].append(payload)
                batch += encode_gs_frame(GsFrame(subsystem_id, 0x00, payload))
                if len(batch) >= 65536:
                    egse.send_bytes(bytes(batch))
                    batch.clear()
            egse.send_bytes(bytes(batch))

            for row in node.table.subsystem_rows():
                expected = b"".join(sent[row.subsystem_id])
                got = read_exactly(world[row.port], len(expected), timeout=25)
                assert got == expected, f"misroute or corruption on {row.port}"
            assert node.counters.frames_routed == 10_000
            assert node.counters.frames_dropped == 0
        finally:
            stop_node(node, world)


def test_downlink_wrapping():
    """10 000 terminator-framed replies each arrive at the ground port as
    exactly start-byte, id, reply, end-byte."""
    with criterion("Downlink wrapping", 30.0):
        node, world = start_node()
        try:
            rng = random.Random(42)
            replies = []
            batch = bytearray()
            for _ in range(10_000):
                body = rng.randbytes(rng.randint(0, 63))
                reply = body.replace(b"\xac", b"\xab") + b"\xac"
                replies.append(reply)
                batch += reply
            world["PortRxMainBoard3"].send_bytes(bytes(batch))

            expected = b"".join(
                bytes([0x23, 0x01]) + reply + bytes([0x26]) for reply in replies)
            got = read_exactly(world["PortRxMainBoard2"], len(expected), timeout=25)
            assert got == expected
            assert node.counters.downlink_frames == 10_000
        finally:
            stop_node(node, world)


def test_sts_table_conformance():
    """Every type completes at exactly its table length; fuzz never
    completes at a non-table length."""
    with criterion("STS table conformance", 30.0):
        rng = random.Random(7)
        for type_byte, length in STS_TYPE_LENGTHS.items():
            d = StsDeframer()
            events = d.feed(bytes([type_byte]) + rng.randbytes(length - 1))
            completes = [(i, e) for i, e in enumerate(events) if type(e) is Complete]
            assert len(completes) == 1
            index, event = completes[0]
            assert index == length - 1, f"type {type_byte:#x} completed early or late"
            assert len(event.data) == length

        fuzz = rng.randbytes(10_000)
        d = StsDeframer()
        for ev in d.feed(fuzz):
            if type(ev) is Complete:
                assert STS_TYPE_LENGTHS.get(ev.data[0]) == len(ev.data)


def test_close_loop_soak_scaled():
    """60 s at 100 frames/s around the default five-hook chain: 6000 sent,
    nothing lost, nothing corrupt. The CLI exposes --duration for the full
    twelve-hour run."""
    with criterion("Close-loop soak (60 s)", 90.0):
        report = run_close_loop(duration=60.0, rate=100.0, payload_len=64, seed=1)
        assert report.frames_sent == 6000
        assert report.lost == 0
        assert report.corrupt == 0
        assert report.passed

    help_text = subprocess.run(
        [sys.executable, "-m", "obdhsim", "harness", "closeloop", "--help"],
        capture_output=True, text=True, timeout=30).stdout
    assert "--duration" in help_text


def test_integration_scenario_processes_over_tcp():
    """The ground-seat script passes against a node and sims living in
    separate processes, wired over TCP."""
    with criterion("Integration scenario", 60.0):
        report = run_managed_scenario(seed=1)
        details = [(s.label, s.passed, s.detail) for s in report.steps]
        assert report.passed, details
        assert len(report.steps) == 8


def test_nine_port_soak():
    """30 s of simultaneous traffic on all nine ports: no cross-port
    contamination, no interleaved downlink envelopes."""
    with criterion("Nine-port soak", 60.0):
        node, world = start_node()
        try:
            duration = 30.0
            stop_at = time.monotonic() + duration
            ids = {r.port: r.subsystem_id for r in node.table.subsystem_rows()}
            sent_uplink: dict[str, list[bytes]] = {p: [] for p in ids}
            sent_frames: dict[str, list[bytes]] = {p: [] for p in ids}

            def uplink_pump():
                rng = random.Random(1000)
                rows = node.table.subsystem_rows()
                while time.monotonic() < stop_at:
                    for row in rows:
                        payload = rng.randbytes(rng.randint(1, 32)).translate(_SCRUB)
                        sent_uplink[row.port].append(payload)
                        world["PortRxMainBoard2"].send_bytes(
                            encode_gs_frame(GsFrame(row.subsystem_id, 0x00, payload)))
                    time.sleep(0.02)

            def subsystem_pump(row, make_frame):
                while time.monotonic() < stop_at:
                    frame = make_frame()
                    sent_frames[row.port].append(frame)
                    world[row.port].send_bytes(frame)
                    time.sleep(0.01)

            def wde_frame_maker(seed):
                rng = random.Random(seed)
                return lambda: rng.randbytes(rng.randint(0, 16)).translate(_SCRUB_WDE) + b"\xac"

            sts_sims = {p: StsSimulator(seed=i) for i, p in
                        enumerate(("PortRxOsci4", "PortRxOsci6"))}
            battery, gps, custom = BatterySimulator(seed=1), GpsSimulator(seed=2), \
                CustomBoardSimulator(seed=3)
            makers = {
                "PortRxMainBoard3": wde_frame_maker(11),
                "PortRxOsci0": wde_frame_maker(12),
                "PortRxOsci2": wde_frame_maker(13),
                "PortRxOsci4": lambda: sts_sims["PortRxOsci4"].emit(0x01),
                "PortRxOsci6": lambda: sts_sims["PortRxOsci6"].emit(0xA0),
                "PortRxOsci1": battery.emit,
                "PortRxOsci3": gps.emit,
                "PortRxOsci5": custom.emit,
            }
            threads = [threading.Thread(target=uplink_pump, daemon=True)]
            threads += [threading.Thread(target=subsystem_pump,
                                         args=(node.table.by_port(port), maker), daemon=True)
                        for port, maker in makers.items()]

            downlink = bytearray()
            received: dict[str, bytearray] = {p: bytearray() for p in ids}

            def drain(link, sink):
                while True:
                    chunk = link.recv_chunk(timeout=0.1)
                    if chunk is LinkSignal.EOF:
                        return
                    if chunk is LinkSignal.TIMEOUT:
                        if time.monotonic() > stop_at + 2.0:
                            return
                        continue
                    sink += chunk

            threads.append(threading.Thread(
                target=drain, args=(world["PortRxMainBoard2"], downlink), daemon=True))
            threads += [threading.Thread(target=drain, args=(world[p], received[p]),
                                         daemon=True) for p in ids]
            for t in threads:
                t.start()
            for t in threads:
                t.join(timeout=duration + 20)

            # uplink side: each port saw exactly its own payload stream
            for port in ids:
                expected = b"".join(sent_uplink[port])
                assert bytes(received[port]) == expected, f"cross-talk on {port}"

            # downlink side: envelope stream parses cleanly into intact,
            # correctly ordered frames from forwarding ports only
            envelopes = DownlinkDeframer().feed_envelopes(bytes(downlink))
            by_id: dict[int, list[bytes]] = {}
            for subsystem_id, payload in envelopes:
                by_id.setdefault(subsystem_id, []).append(payload)
            forwarding = {r.port: r.subsystem_id for r in node.table.subsystem_rows()
                          if r.disposition == "forward"}
            store_only_ids = {ids[p] for p in ids if p not in forwarding}
            assert not (set(by_id) & store_only_ids), "store-only traffic reached ground"
            for port, subsystem_id in forwarding.items():
                got = by_id.get(subsystem_id, [])
                want = sent_frames[port]
                assert got == want, (
                    f"{port}: {len(got)} envelopes vs {len(want)} frames sent "
                    "(interleaving or loss)")
            # store-only ports really did record telemetry
            for port in set(ids) - set(forwarding):
                assert node.query_telemetry(source_port=port), f"{port} stored nothing"
        finally:
            stop_node(node, world)


def test_convert_to_bin():
    """Fixed conversions hold and the parse-back oracle covers every value
    below 2^20, inside 10 s."""
    with criterion("ConvertToBin", 10.0):
        assert convert_to_bin(8) == "1000"
        assert convert_to_bin(3) == "11"
        assert convert_to_bin(2) == "10"
        for n in range(1, 1 << 20):
            if int(convert_to_bin(n), 2) != n:
                raise AssertionError(f"parse-back failed at {n}")


def test_timeout_semantics():
    """A stalled stream reports a timeout at 0.5 s +/- 0.2 s and loses
    nothing once bytes flow again."""
    with criterion("Timeout semantics", 10.0):
        _, quiet_end = make_loopback_pair(unique_ns())  # stock 0.5 s timeout
        start = time.monotonic()
        event = quiet_end.recv_byte()
        elapsed = time.monotonic() - start
        assert event is LinkSignal.TIMEOUT
        assert 0.3 <= elapsed <= 0.7, f"timeout at {elapsed:.3f}s"

        talker, listener = make_loopback_pair(unique_ns())
        assert listener.recv_byte() is LinkSignal.TIMEOUT
        talker.send_bytes(bytes(range(100)))
        assert read_exactly(listener, 100) == bytes(range(100))
