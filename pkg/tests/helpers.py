"""Shared wiring for tests: in-process nodes and link-draining utilities."""

from __future__ import annotations

import time
import uuid

from obdhsim.core import ObdhNode, default_port_table
from obdhsim.transport import Link, LinkSignal, PortConfig, open_link


def unique_ns() -> str:
    return f"t{uuid.uuid4().hex[:10]}"


def start_node(ns: str | None = None, telemetry_cap: int = 10_000,
               table=None) -> tuple[ObdhNode, dict[str, Link]]:
    """A running node over fresh memory links plus the world-side ends."""
    ns = ns or unique_ns()
    table = table or default_port_table(backend_fmt=f"mem:{ns}.{{port}}")
    node = ObdhNode(table, telemetry_cap=telemetry_cap)
    node.start()
    world = {}
    for row in table:
        config = PortConfig(port_name=f"world-{row.port}", intercharacter_timeout=0.2)
        world[row.port] = open_link(config, row.backend)
    return node, world


def stop_node(node: ObdhNode, world: dict[str, Link]) -> None:
    for link in world.values():
        link.close()
    node.stop()


def read_exactly(link: Link, n: int, timeout: float = 5.0) -> bytes:
    """Read n bytes or raise; timeouts inside the window are retried."""
    out = bytearray()
    deadline = time.monotonic() + timeout
    while len(out) < n:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise TimeoutError(f"got {len(out)}/{n} bytes")
        chunk = link.recv_chunk(max_bytes=n - len(out), timeout=min(remaining, 0.2))
        if chunk is LinkSignal.EOF:
            raise EOFError(f"eof after {len(out)}/{n} bytes")
        if chunk is LinkSignal.TIMEOUT:
            continue
        out += chunk
    return bytes(out)


def read_until_quiet(link: Link, quiet: float = 0.4, max_time: float = 10.0) -> bytes:
    """Drain everything until the line stays silent for `quiet` seconds."""
    out = bytearray()
    deadline = time.monotonic() + max_time
    last = time.monotonic()
    while time.monotonic() < deadline:
        chunk = link.recv_chunk(timeout=0.05)
        if chunk is LinkSignal.EOF:
            break
        if chunk is LinkSignal.TIMEOUT:
            if time.monotonic() - last > quiet:
                break
            continue
        out += chunk
        last = time.monotonic()
    return bytes(out)
