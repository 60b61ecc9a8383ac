"""Bridge between the ground byte link and message-per-line console clients.

Clients connect over WebSocket and exchange one JSON object per text
message: ``{"dir": "up"|"down"|"status", "id": "01", "payload": "1122",
"ts": "..."}`` with ids and payloads as lowercase hex. An uplink message
is framed and written to the ground link with the reserved byte fixed to
0x00; every downlink envelope coming off the link is broadcast to all
connected clients. A malformed client message earns a status reply and
the connection stays open.

A plain ``GET /telemetry?limit=N`` on the same port returns the most
recent downlink messages as JSON, for scripting without a socket.

Each client has a bounded outbound queue; when a slow client falls behind,
the oldest queued messages are dropped and replaced with a status notice.
The ground-link reader never waits on any client.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http import HTTPStatus
from urllib.parse import parse_qs, urlparse

from websockets.exceptions import ConnectionClosed
from websockets.sync.server import Server, ServerConnection, serve

from .framing import DownlinkDeframer, FramingError, GsFrame, encode_gs_frame
from .transport import Link, LinkError, LinkSignal

log = logging.getLogger("obdhsim.gateway")

UPLINK_RESERVED = 0x00
CLIENT_QUEUE_CAP = 1024
HISTORY_CAP = 1000

DIR_UPLINK = "up"
DIR_DOWNLINK = "down"
DIR_STATUS = "status"


@dataclass(frozen=True)
class ConsoleMessage:
    """One console-protocol message, either direction."""

    direction: str
    subsystem_id: int
    payload_hex: str
    timestamp: str
    note: str = ""


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def encode_console_message(msg: ConsoleMessage) -> str:
    """Single-line JSON for the wire; hex fields are lowercase."""
    if len(msg.payload_hex) % 2 != 0:
        raise ValueError("payload_hex must be even-length")
    bytes.fromhex(msg.payload_hex)  # raises on non-hex
    obj = {
        "dir": msg.direction,
        "id": f"{msg.subsystem_id:02x}",
        "payload": msg.payload_hex.lower(),
        "ts": msg.timestamp,
    }
    if msg.note:
        obj["note"] = msg.note
    return json.dumps(obj, separators=(",", ":"))


def parse_uplink_message(text: str) -> GsFrame:
    """Validate a client message and build the uplink frame it asks for.

    Raises ValueError with a human-readable reason on anything malformed;
    the caller turns that into a status reply.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"bad json: {exc.msg}") from exc
    if not isinstance(obj, dict) or obj.get("dir") != DIR_UPLINK:
        raise ValueError("not an uplink message")
    raw_id = obj.get("id")
    try:
        subsystem_id = int(raw_id, 16) if isinstance(raw_id, str) else int(raw_id)
    except (TypeError, ValueError) as exc:
        raise ValueError("bad id") from exc
    if not 0 <= subsystem_id <= 0xFF:
        raise ValueError("id out of range")
    payload_hex = obj.get("payload", "")
    if not isinstance(payload_hex, str) or len(payload_hex) % 2 != 0:
        raise ValueError("bad payload")
    try:
        payload = bytes.fromhex(payload_hex)
    except ValueError as exc:
        raise ValueError("bad payload") from exc
    return GsFrame(subsystem_id, UPLINK_RESERVED, payload)


class _Client:
    """One connected console: its socket and its bounded outbound queue."""

    def __init__(self, connection: ServerConnection):
        self.connection = connection
        self.outbound: queue.Queue[str] = queue.Queue(maxsize=CLIENT_QUEUE_CAP)
        self.dropped = 0

    def offer(self, line: str) -> None:
        """Queue without ever blocking; drop oldest and leave a notice."""
        try:
            self.outbound.put_nowait(line)
            return
        except queue.Full:
            pass
        drops = 0
        while True:
            try:
                self.outbound.get_nowait()
                drops += 1
            except queue.Empty:
                break
            if drops >= 2:
                break
        self.dropped += drops
        notice = ConsoleMessage(DIR_STATUS, 0, "", _now_iso(),
                                note=f"slow client: {self.dropped} messages dropped")
        try:
            self.outbound.put_nowait(encode_console_message(notice))
            self.outbound.put_nowait(line)
        except queue.Full:
            pass


class GatewayServer:
    """Serves console clients on one port and pumps the ground link."""

    def __init__(self, gs_link: Link, host: str = "127.0.0.1", port: int = 0,
                 history_cap: int = HISTORY_CAP):
        self.gs_link = gs_link
        self.host = host
        self.port = port
        self._history: list[dict] = []
        self._history_cap = history_cap
        self._clients: set[_Client] = set()
        self._clients_lock = threading.Lock()
        self._uplink_lock = threading.Lock()
        self._stop = threading.Event()
        self._server: Server | None = None
        self._threads: list[threading.Thread] = []

    # lifecycle

    def start(self) -> None:
        self._server = serve(self._handle_client, self.host, self.port,
                             process_request=self._process_request)
        self.port = self._server.socket.getsockname()[1]
        for target, name in ((self._server.serve_forever, "gateway-serve"),
                             (self._gs_reader, "gateway-gs-reader")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        log.info("gateway listening on %s:%d", self.host, self.port)

    def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            self._server.shutdown()
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            try:
                client.connection.close()
            except Exception:
                pass
        for t in self._threads:
            t.join(timeout=5)

    def serve_forever(self) -> None:
        try:
            while not self._stop.is_set():
                self._stop.wait(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # plain HTTP endpoint

    def _process_request(self, connection: ServerConnection, request):
        url = urlparse(request.path)
        if url.path != "/telemetry":
            return None  # anything else proceeds as a WebSocket handshake
        params = parse_qs(url.query)
        try:
            limit = int(params.get("limit", ["100"])[0])
        except ValueError:
            return connection.respond(HTTPStatus.BAD_REQUEST, "bad limit\n")
        body = json.dumps(self._recent(limit)) + "\n"
        response = connection.respond(HTTPStatus.OK, body)
        response.headers["Content-Type"] = "application/json"
        return response

    def _recent(self, limit: int) -> list[dict]:
        with self._clients_lock:
            return self._history[-max(0, limit):]

    # ground-link pump

    def _gs_reader(self) -> None:
        deframer = DownlinkDeframer()
        while not self._stop.is_set():
            chunk = self.gs_link.recv_chunk(timeout=0.2)
            if chunk is LinkSignal.TIMEOUT:
                continue
            if chunk is LinkSignal.EOF:
                log.info("ground link closed")
                return
            for subsystem_id, payload in deframer.feed_envelopes(chunk):
                msg = ConsoleMessage(DIR_DOWNLINK, subsystem_id, payload.hex(), _now_iso())
                line = encode_console_message(msg)
                with self._clients_lock:
                    self._history.append(json.loads(line))
                    del self._history[:-self._history_cap]
                    clients = list(self._clients)
                for client in clients:
                    client.offer(line)

    # per-client handling

    def _handle_client(self, connection: ServerConnection) -> None:
        client = _Client(connection)
        with self._clients_lock:
            self._clients.add(client)
        sender = threading.Thread(target=self._client_sender, args=(client,),
                                  name="gateway-client-sender", daemon=True)
        sender.start()
        try:
            while not self._stop.is_set():
                try:
                    text = connection.recv()
                except ConnectionClosed:
                    return
                if isinstance(text, bytes):
                    text = text.decode("utf-8", errors="replace")
                self._handle_uplink_text(client, text)
        finally:
            with self._clients_lock:
                self._clients.discard(client)
            try:
                client.outbound.put_nowait("")  # wake the sender so it exits
            except queue.Full:
                pass  # sender will die on the closed connection instead

    def _handle_uplink_text(self, client: _Client, text: str) -> None:
        try:
            frame = parse_uplink_message(text)
            encoded = encode_gs_frame(frame)
        except (ValueError, FramingError) as exc:
            reply = ConsoleMessage(DIR_STATUS, 0, "", _now_iso(), note=str(exc))
            client.offer(encode_console_message(reply))
            return
        try:
            with self._uplink_lock:
                self.gs_link.send_bytes(encoded)
        except LinkError as exc:
            reply = ConsoleMessage(DIR_STATUS, 0, "", _now_iso(),
                                   note=f"ground link write failed: {exc}")
            client.offer(encode_console_message(reply))
            return
        log.info("uplink id=%02x %s", frame.subsystem_id, frame.payload.hex())

    def _client_sender(self, client: _Client) -> None:
        while True:
            line = client.outbound.get()
            if not line:
                return
            try:
                client.connection.send(line)
            except ConnectionClosed:
                return


def serve_gateway(gs_link: Link, listen_addr: str) -> GatewayServer:
    """Start a gateway on ``host:port`` and return it (caller owns stop())."""
    host, _, port = listen_addr.rpartition(":")
    server = GatewayServer(gs_link, host or "127.0.0.1", int(port))
    server.start()
    return server
