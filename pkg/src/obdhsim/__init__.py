"""Desk-scale satellite on-board data handling simulator.

A frame-routing OBDH node with one receive task per port, the subsystem
framing protocols it speaks (ground frames, terminator-framed wheel-drive
replies, length-keyed star-sensor frames), pluggable byte-stream
transports, subsystem simulators, loop/integration test harnesses, and a
WebSocket gateway for operator consoles.
"""

from .core import (
    ObdhNode,
    PortRow,
    PortTable,
    RouteResult,
    TelemetryRecord,
    TelemetryStore,
    build_port_table,
    default_port_table,
    route_uplink,
)
from .framing import (
    Complete,
    DownlinkDeframer,
    FramingError,
    GsDeframer,
    GsFrame,
    Pending,
    Reset,
    Resync,
    STS_TYPE_LENGTHS,
    StsDeframer,
    TerminatorDeframer,
    convert_to_bin,
    encode_downlink_envelope,
    encode_gs_frame,
    sts_expected_length,
)
from .gateway import ConsoleMessage, GatewayServer, encode_console_message, serve_gateway
from .harness import (
    LoopReport,
    LoopTopology,
    ScenarioReport,
    first_difference,
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
)
from .transport import (
    Link,
    LinkClosedError,
    LinkError,
    LinkSignal,
    PortConfig,
    make_loopback_pair,
    open_link,
    register_memory_pair,
)

__version__ = "0.1.0"
