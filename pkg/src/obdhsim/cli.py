"""Command-line entry points: obdh, sim, harness, gateway."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

from .core import ObdhNode, build_port_table
from .framing import STS_TYPE_LENGTHS
from .gateway import GatewayServer
from .harness import (
    LoopTopology,
    run_close_loop,
    run_integration_scenario,
    run_managed_scenario,
)
from .sims import (
    BatterySimulator,
    CustomBoardSimulator,
    GpsSimulator,
    StsSimulator,
    WdeSimulator,
    hook_node_forward,
    run_periodic_service,
    run_sts_service,
    run_wde_service,
)
from .transport import LinkError, PortConfig, open_link


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(
        fmt="%(asctime)s.%(msecs)03d %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S"))
    root = logging.getLogger("obdhsim")
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper()))


def _load_json(path: str | None):
    if path is None:
        return None
    return json.loads(Path(path).read_text())


def _open_with_retry(config: PortConfig, backend: str, timeout: float = 15.0):
    deadline = time.monotonic() + timeout
    while True:
        try:
            return open_link(config, backend)
        except LinkError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.1)


# obdh

def obdh_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="obdh", description="Run the OBDH routing node.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="start the node and serve until interrupted")
    run.add_argument("--config", help="JSON port table (defaults to the stock 9-port wiring)")
    run.add_argument("--telemetry-cap", type=int,
                     help="record capacity (overrides the config's telemetry_cap)")
    run.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)

    _setup_logging(args.log_level)
    config = _load_json(args.config)
    table = build_port_table(config)
    cap = args.telemetry_cap or (config or {}).get("telemetry_cap", 10_000)
    node = ObdhNode(table, telemetry_cap=cap)
    node.start()
    logging.getLogger("obdhsim.node").info("node up with %d ports", len(table))
    node.run_forever()
    return 0


# sim

def sim_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="sim", description="Run one subsystem simulator.")
    parser.add_argument("kind", choices=["wde", "sts", "battery", "gps", "custom", "hook"])
    parser.add_argument("--backend", required=True, help="link spec, e.g. tcp:127.0.0.1:47001")
    parser.add_argument("--out-backend", help="hook only: where forwarded bytes go")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device-id", type=lambda s: int(s, 0), default=1)
    parser.add_argument("--rate", type=float, help="emissions per second (periodic sims)")
    parser.add_argument("--emit-type", type=lambda s: int(s, 0), default=0x01,
                        help="sts only: type byte for periodic emission")
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args(argv)

    if args.kind == "hook" and not args.out_backend:
        parser.error("hook needs --out-backend")
    if args.kind == "sts" and args.emit_type not in STS_TYPE_LENGTHS:
        parser.error(f"unknown sts type 0x{args.emit_type:02x}")

    _setup_logging(args.log_level)
    config = PortConfig(port_name=f"sim-{args.kind}", intercharacter_timeout=0.2)
    link = _open_with_retry(config, args.backend)
    try:
        if args.kind == "wde":
            run_wde_service(link, WdeSimulator(device_id=args.device_id))
        elif args.kind == "sts":
            run_sts_service(link, StsSimulator(device_id=args.device_id, seed=args.seed),
                            rate=args.rate, emit_type=args.emit_type)
        elif args.kind == "battery":
            run_periodic_service(link, BatterySimulator(seed=args.seed), rate=args.rate or 1.0)
        elif args.kind == "gps":
            run_periodic_service(link, GpsSimulator(seed=args.seed), rate=args.rate or 1.0)
        elif args.kind == "custom":
            run_periodic_service(link, CustomBoardSimulator(seed=args.seed), rate=args.rate or 1.0)
        elif args.kind == "hook":
            out_link = _open_with_retry(PortConfig(port_name="sim-hook-out"), args.out_backend)
            hook_node_forward(link, out_link)
    except KeyboardInterrupt:
        pass
    finally:
        link.close()
    return 0


# harness

def harness_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="harness", description="Loop and scenario test drivers.")
    sub = parser.add_subparsers(dest="command", required=True)

    loop = sub.add_parser("closeloop", help="pump frames around the loop chain")
    loop.add_argument("--config", help="topology JSON (defaults to the 5-hook chain)")
    loop.add_argument("--duration", type=float, default=60.0, help="seconds (43200 for the 12 h soak)")
    loop.add_argument("--rate", type=float, default=100.0, help="frames per second")
    loop.add_argument("--payload-len", type=int, default=64)
    loop.add_argument("--seed", type=int, default=1)
    loop.add_argument("--break-cable", metavar="TX:RX",
                      help="leave one cable unwired to demonstrate a dead hook")

    scenario = sub.add_parser("scenario", help="scripted ground-seat run")
    scenario.add_argument("--script", help="JSON steps; omitted = default script "
                                           "against a managed node+sim stack")
    scenario.add_argument("--egse", help="connect to an existing stack at this backend "
                                         "instead of spawning one")
    scenario.add_argument("--seed", type=int, default=1)

    args = parser.parse_args(argv)

    if args.command == "closeloop":
        topo_cfg = _load_json(args.config)
        topology = LoopTopology.from_dict(topo_cfg) if topo_cfg else None
        broken = None
        if args.break_cable:
            tx, _, rx = args.break_cable.partition(":")
            broken = {(tx, rx)}
        report = run_close_loop(topology, duration=args.duration, rate=args.rate,
                                payload_len=args.payload_len, seed=args.seed,
                                broken_cables=broken)
        print(f"frames sent:     {report.frames_sent}")
        print(f"frames received: {report.frames_received}")
        print(f"corrupt:         {report.corrupt}")
        print(f"lost:            {report.lost}")
        print(f"duration:        {report.duration:.1f} s")
        print(f"latency ms:      min {report.latency_min_ms:.2f} "
              f"mean {report.latency_mean_ms:.2f} max {report.latency_max_ms:.2f}")
        print(report.summary_line())
        return 0 if report.passed else 1

    steps = None
    if args.script:
        script = _load_json(args.script)
        steps = script["steps"] if isinstance(script, dict) else script
    if args.egse:
        link = _open_with_retry(PortConfig(port_name="egse", intercharacter_timeout=0.2),
                                args.egse)
        try:
            report = run_integration_scenario(link, steps)
        finally:
            link.close()
    else:
        report = run_managed_scenario(steps, seed=args.seed)
    for step in report.steps:
        print(f"{'PASS' if step.passed else 'FAIL'}  {step.label}  ({step.detail})")
    print(json.dumps({"passed": report.passed,
                      "steps": [[s.label, s.passed] for s in report.steps]},
                     separators=(",", ":")))
    return 0 if report.passed else 1


# gateway

def gateway_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gateway",
                                     description="Console gateway for the ground link.")
    parser.add_argument("--gs-backend", required=True,
                        help="link spec for the ground port, e.g. tcp:127.0.0.1:47000")
    parser.add_argument("--listen", default="127.0.0.1:8765", help="host:port for clients")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)

    _setup_logging(args.log_level)
    gs_link = _open_with_retry(
        PortConfig(port_name="gateway-gs", intercharacter_timeout=0.2), args.gs_backend)
    host, _, port = args.listen.rpartition(":")
    server = GatewayServer(gs_link, host or "127.0.0.1", int(port))
    server.start()
    print(f"gateway listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    finally:
        gs_link.close()
    return 0


_PROGRAMS = {
    "obdh": obdh_main,
    "sim": sim_main,
    "harness": harness_main,
    "gateway": gateway_main,
}


def main(argv: list[str] | None = None) -> int:
    """Dispatcher for ``python -m obdhsim <program> ...``."""
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in _PROGRAMS:
        names = ", ".join(_PROGRAMS)
        print(f"usage: python -m obdhsim {{{names}}} ...", file=sys.stderr)
        return 2
    return _PROGRAMS[argv[0]](argv[1:])
