"""Byte-stream links with serial-port read semantics.

Every link, whatever the backend, honors the same port-read contract:
``recv_byte`` blocks until at least ``min_read_bytes`` are buffered, or
until ``intercharacter_timeout`` passes with no new byte. A timeout is an
event, not an error, and never discards buffered data. A peer that closes
its end produces a clean end-of-stream, never garbage.

Backends are named by a spec string:

- ``mem:<name>``        an in-process pair created by make_loopback_pair
                        or register_memory_pair
- ``tcp:<host>:<port>`` outgoing TCP connection, raw bytes, no framing
- ``tcp-listen:<host>:<port>`` accept exactly one incoming connection;
                        until a peer connects, reads time out and writes
                        are discarded, like an unplugged serial line
- ``pty:<path>``        a real or virtual serial device node

Baud is informational for the virtual backends unless ``pace`` is set on
the config, which throttles writes to baud/10 bytes per second to emulate
line rate. Electrical standard is a label only.

A link supports one concurrent reader and one concurrent writer; sharing
a direction between threads needs external locking.
"""

from __future__ import annotations

import dataclasses
import enum
import os
import select
import socket
import threading
import time
from dataclasses import dataclass

DEFAULT_BAUD = 9600
DEFAULT_MIN_READ_BYTES = 1
DEFAULT_INTERCHARACTER_TIMEOUT = 0.5

ELECTRICAL_STANDARDS = ("RS232", "RS422", "TTL")

_RECV_CHUNK = 65536


class LinkError(Exception):
    """Base class for transport failures."""


class LinkClosedError(LinkError):
    """Operation on a link this side already closed."""


class UnknownBackendError(LinkError):
    """Backend spec names no registered backend."""


class UnknownEndpointError(LinkError):
    """Memory endpoint name was never registered."""


class DuplicatePairError(LinkError):
    """Memory pair name already in use."""


class LinkSignal(enum.Enum):
    """Out-of-band read results: quiet line vs. dead peer."""

    TIMEOUT = "timeout"
    EOF = "eof"


@dataclass
class PortConfig:
    """Per-port settings: identity, speed, and the read contract."""

    port_name: str = ""
    baud: int = DEFAULT_BAUD
    min_read_bytes: int = DEFAULT_MIN_READ_BYTES
    intercharacter_timeout: float = DEFAULT_INTERCHARACTER_TIMEOUT
    electrical_standard: str = "RS232"
    pace: bool = False

    def __post_init__(self):
        if self.min_read_bytes < 1:
            raise ValueError("min_read_bytes must be >= 1")
        if self.intercharacter_timeout <= 0:
            raise ValueError("intercharacter_timeout must be > 0")
        if self.baud <= 0:
            raise ValueError("baud must be > 0")
        if self.electrical_standard not in ELECTRICAL_STANDARDS:
            raise ValueError(f"unknown electrical standard {self.electrical_standard!r}")


class Link:
    """Duplex byte stream. Subclasses provide the raw wait-for-bytes hook."""

    backend = "abstract"

    def __init__(self, config: PortConfig):
        self.config = config
        self._rx = bytearray()
        self._closed = False
        self._eof = False

    # Subclasses: block up to `timeout` seconds for new bytes. Return the
    # bytes, b"" on peer close, None on timeout.
    def _wait_bytes(self, timeout: float) -> bytes | None:
        raise NotImplementedError

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def _close_backend(self) -> None:
        raise NotImplementedError

    def _fill(self, timeout: float | None = None) -> LinkSignal | None:
        """Block per the read contract. On None return, _rx is non-empty."""
        want = self.config.min_read_bytes
        gap = self.config.intercharacter_timeout if timeout is None else timeout
        if len(self._rx) >= want:
            return None
        while True:
            if self._eof:
                return None if self._rx else LinkSignal.EOF
            chunk = self._wait_bytes(gap)
            if chunk:
                self._rx += chunk
                if len(self._rx) >= want:
                    return None
                continue  # gap timer restarts with each arrival
            if chunk == b"":
                self._eof = True
                return None if self._rx else LinkSignal.EOF
            # quiet for a full gap: deliver a partial read, else report timeout
            if self._rx:
                return None
            return LinkSignal.TIMEOUT

    def recv_byte(self) -> int | LinkSignal:
        """Next byte from the peer, or TIMEOUT/EOF."""
        if self._closed:
            return LinkSignal.EOF
        signal = self._fill()
        if signal is not None:
            return signal
        b = self._rx[0]
        del self._rx[:1]
        return b

    def recv_chunk(self, max_bytes: int = _RECV_CHUNK,
                   timeout: float | None = None) -> bytes | LinkSignal:
        """Like recv_byte but drains everything buffered, up to max_bytes.

        ``timeout`` overrides the configured intercharacter timeout for
        this one call (service loops use short polls to stay responsive).
        """
        if self._closed:
            return LinkSignal.EOF
        signal = self._fill(timeout)
        if signal is not None:
            return signal
        data = bytes(self._rx[:max_bytes])
        del self._rx[:max_bytes]
        return data

    def send_bytes(self, data: bytes) -> int:
        """Write data toward the peer; returns the byte count accepted."""
        if self._closed:
            raise LinkClosedError("link closed")
        if not data:
            return 0
        self._write(bytes(data))
        if self.config.pace:
            time.sleep(len(data) / (self.config.baud / 10))
        return len(data)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._close_backend()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# In-memory backend

class _MemoryPipe:
    """One direction of a memory pair: bytes in order, writer-close = EOF."""

    def __init__(self):
        self._buf = bytearray()
        self._cond = threading.Condition()
        self._writer_closed = False

    def write(self, data: bytes) -> None:
        with self._cond:
            if self._writer_closed:
                return  # reader hung up; bytes go nowhere, like a cut cable
            self._buf += data
            self._cond.notify_all()

    def close_writer(self) -> None:
        with self._cond:
            self._writer_closed = True
            self._cond.notify_all()

    def take(self, timeout: float) -> bytes | None:
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                if self._buf:
                    data = bytes(self._buf)
                    self._buf.clear()
                    return data
                if self._writer_closed:
                    return b""
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)


class MemoryLink(Link):
    backend = "memory"

    def __init__(self, config: PortConfig, rx_pipe: _MemoryPipe, tx_pipe: _MemoryPipe):
        super().__init__(config)
        self._rx_pipe = rx_pipe
        self._tx_pipe = tx_pipe

    def _wait_bytes(self, timeout: float) -> bytes | None:
        return self._rx_pipe.take(timeout)

    def _write(self, data: bytes) -> None:
        self._tx_pipe.write(data)

    def _close_backend(self) -> None:
        self._tx_pipe.close_writer()   # peer sees EOF
        self._rx_pipe.close_writer()   # wake our own blocked reader


class _MemoryPair:
    def __init__(self, name: str):
        self.name = name
        self.forward = _MemoryPipe()
        self.backward = _MemoryPipe()
        self.claimed = [False, False]

    def end(self, index: int, config: PortConfig) -> MemoryLink:
        if index == 0:
            return MemoryLink(config, rx_pipe=self.backward, tx_pipe=self.forward)
        return MemoryLink(config, rx_pipe=self.forward, tx_pipe=self.backward)


_memory_registry: dict[str, _MemoryPair] = {}
_registry_lock = threading.Lock()


def register_memory_pair(name: str) -> None:
    """Create an unclaimed memory pair that open_link('mem:<name>') can claim."""
    with _registry_lock:
        if name in _memory_registry:
            raise DuplicatePairError(f"duplicate memory pair {name!r}")
        _memory_registry[name] = _MemoryPair(name)


def make_loopback_pair(name: str, config: PortConfig | None = None) -> tuple[Link, Link]:
    """Both ends of a fresh memory pair: wire one end to the other, both ways."""
    with _registry_lock:
        if name in _memory_registry:
            raise DuplicatePairError(f"duplicate memory pair {name!r}")
        pair = _MemoryPair(name)
        pair.claimed = [True, True]
        _memory_registry[name] = pair
    base = config or PortConfig(port_name=name)
    a = pair.end(0, dataclasses.replace(base, port_name=f"{name}.a"))
    b = pair.end(1, dataclasses.replace(base, port_name=f"{name}.b"))
    return a, b


def _claim_memory_end(name: str, config: PortConfig) -> MemoryLink:
    with _registry_lock:
        pair = _memory_registry.get(name)
        if pair is None:
            raise UnknownEndpointError(f"unknown endpoint {name!r}")
        for index in (0, 1):
            if not pair.claimed[index]:
                pair.claimed[index] = True
                return pair.end(index, config)
    raise LinkError(f"both ends of memory pair {name!r} already claimed")


# TCP backends

class TcpLink(Link):
    backend = "tcp"

    def __init__(self, config: PortConfig, sock: socket.socket):
        super().__init__(config)
        self._sock = sock
        self._sock.setblocking(True)

    def _wait_bytes(self, timeout: float) -> bytes | None:
        ready, _, _ = select.select([self._sock], [], [], timeout)
        if not ready:
            return None
        try:
            return self._sock.recv(_RECV_CHUNK)
        except OSError:
            return b""

    def _write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise LinkError(f"tcp write failed: {exc}") from exc

    def _close_backend(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TcpListenLink(Link):
    """Server-side link: bound immediately, usable before anyone connects.

    Until the single peer arrives, reads report timeouts and writes are
    buffered; everything written early is delivered the moment the peer
    connects, so bring-up order between a node and its peripherals does
    not matter.
    """

    backend = "tcp-listen"

    def __init__(self, config: PortConfig, host: str, port: int):
        super().__init__(config)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self._conn: socket.socket | None = None
        self._conn_ready = threading.Event()
        self._pre_buf = bytearray()
        self._write_lock = threading.Lock()
        self._accept_thread = threading.Thread(target=self._accept_one, daemon=True)
        self._accept_thread.start()

    @property
    def bound_port(self) -> int:
        return self._listener.getsockname()[1]

    @property
    def peer_connected(self) -> bool:
        return self._conn is not None

    def _accept_one(self) -> None:
        try:
            conn, _ = self._listener.accept()
        except OSError:
            return  # listener closed before anyone connected
        conn.setblocking(True)
        with self._write_lock:
            self._conn = conn
            backlog = bytes(self._pre_buf)
            self._pre_buf.clear()
            if backlog:
                try:
                    conn.sendall(backlog)
                except OSError:
                    pass
        self._conn_ready.set()
        try:
            self._listener.close()
        except OSError:
            pass

    def _wait_bytes(self, timeout: float) -> bytes | None:
        deadline = time.monotonic() + timeout
        if self._conn is None:
            if not self._conn_ready.wait(timeout):
                return None
        remaining = max(deadline - time.monotonic(), 0.0)
        ready, _, _ = select.select([self._conn], [], [], remaining)
        if not ready:
            return None
        try:
            return self._conn.recv(_RECV_CHUNK)
        except OSError:
            return b""

    def _write(self, data: bytes) -> None:
        with self._write_lock:
            if self._conn is None:
                self._pre_buf += data
                return
            conn = self._conn
        try:
            conn.sendall(data)
        except OSError as exc:
            raise LinkError(f"tcp write failed: {exc}") from exc

    def _close_backend(self) -> None:
        try:
            self._listener.close()
        except OSError:
            pass
        if self._conn is not None:
            try:
                self._conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._conn.close()


# Serial device backend

class PtyLink(Link):
    """A device node, typically a pty created by socat or a real tty."""

    backend = "pty"

    def __init__(self, config: PortConfig, path: str):
        super().__init__(config)
        try:
            self._fd = os.open(path, os.O_RDWR | os.O_NOCTTY)
        except OSError as exc:
            raise LinkError(f"device not present: {path} ({exc})") from exc
        if os.isatty(self._fd):
            self._configure_tty()

    def _configure_tty(self) -> None:
        import termios

        attrs = termios.tcgetattr(self._fd)
        # raw mode, then the read contract: VMIN bytes or VTIME gap
        attrs[0] = 0
        attrs[1] = 0
        attrs[2] = termios.CREAD | termios.CLOCAL | termios.CS8
        attrs[3] = 0
        speed = getattr(termios, f"B{self.config.baud}", termios.B9600)
        attrs[4] = speed
        attrs[5] = speed
        attrs[6][termios.VMIN] = self.config.min_read_bytes
        attrs[6][termios.VTIME] = max(1, int(self.config.intercharacter_timeout * 10))
        termios.tcsetattr(self._fd, termios.TCSANOW, attrs)

    def _wait_bytes(self, timeout: float) -> bytes | None:
        ready, _, _ = select.select([self._fd], [], [], timeout)
        if not ready:
            return None
        try:
            data = os.read(self._fd, _RECV_CHUNK)
        except OSError:
            return b""
        return data if data else b""

    def _write(self, data: bytes) -> None:
        try:
            os.write(self._fd, data)
        except OSError as exc:
            raise LinkError(f"device write failed: {exc}") from exc

    def _close_backend(self) -> None:
        try:
            os.close(self._fd)
        except OSError:
            pass


def open_link(config: PortConfig | None, backend_spec: str) -> Link:
    """Open a duplex link named by a backend spec string.

    Spec grammar: ``mem:<name>`` | ``tcp:<host>:<port>`` |
    ``tcp-listen:<host>:<port>`` | ``pty:<path>``.
    """
    cfg = config or PortConfig()
    scheme, _, address = backend_spec.partition(":")
    if scheme == "mem":
        return _claim_memory_end(address, cfg)
    if scheme == "tcp":
        host, _, port = address.rpartition(":")
        if not host:
            raise UnknownBackendError(f"bad tcp address {address!r}")
        try:
            sock = socket.create_connection((host, int(port)), timeout=10)
        except OSError as exc:
            raise LinkError(f"address unreachable: {address} ({exc})") from exc
        sock.settimeout(None)
        return TcpLink(cfg, sock)
    if scheme == "tcp-listen":
        host, _, port = address.rpartition(":")
        if not host:
            raise UnknownBackendError(f"bad tcp-listen address {address!r}")
        return TcpListenLink(cfg, host, int(port))
    if scheme == "pty":
        return PtyLink(cfg, address)
    raise UnknownBackendError(f"unknown backend {scheme!r}")
