"""Link behavior across backends: ordering, timeouts, EOF, isolation."""

import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obdhsim.transport import (
    DuplicatePairError,
    LinkClosedError,
    LinkSignal,
    PortConfig,
    UnknownBackendError,
    UnknownEndpointError,
    make_loopback_pair,
    open_link,
    register_memory_pair,
)

from helpers import read_exactly, unique_ns


def fast_config(name="t", timeout=0.2):
    return PortConfig(port_name=name, intercharacter_timeout=timeout)


class TestPortConfig:
    def test_defaults(self):
        config = PortConfig()
        assert config.baud == 9600
        assert config.min_read_bytes == 1
        assert config.intercharacter_timeout == 0.5

    @pytest.mark.parametrize("kwargs", [
        {"min_read_bytes": 0},
        {"intercharacter_timeout": 0},
        {"baud": -1},
        {"electrical_standard": "RS999"},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PortConfig(**kwargs)


class TestMemoryPairs:
    def test_loopback_both_directions(self):
        a, b = make_loopback_pair(unique_ns())
        a.send_bytes(bytes([0x55]))
        assert b.recv_byte() == 0x55
        b.send_bytes(bytes([0x01, 0x02]))
        assert a.recv_byte() == 0x01
        assert a.recv_byte() == 0x02

    def test_duplicate_name_rejected(self):
        name = unique_ns()
        make_loopback_pair(name)
        with pytest.raises(DuplicatePairError):
            make_loopback_pair(name)

    def test_open_link_claims_registered_ends(self):
        name = unique_ns()
        register_memory_pair(name)
        a = open_link(fast_config(), f"mem:{name}")
        b = open_link(fast_config(), f"mem:{name}")
        a.send_bytes(b"\xaa")
        assert b.recv_byte() == 0xAA

    def test_open_link_unknown_endpoint(self):
        with pytest.raises(UnknownEndpointError):
            open_link(fast_config(), f"mem:{unique_ns()}")

    def test_unknown_backend_scheme(self):
        with pytest.raises(UnknownBackendError):
            open_link(fast_config(), "carrier-pigeon:roof")

    def test_send_returns_count(self):
        a, b = make_loopback_pair(unique_ns())
        assert a.send_bytes(bytes([0x23, 0x01])) == 2
        assert a.send_bytes(b"") == 0

    def test_send_on_closed_raises(self):
        a, _ = make_loopback_pair(unique_ns())
        a.close()
        with pytest.raises(LinkClosedError):
            a.send_bytes(b"\x00")

    def test_no_shared_buffers_between_pairs(self):
        a1, b1 = make_loopback_pair(unique_ns())
        a2, b2 = make_loopback_pair(unique_ns(), fast_config())
        a1.send_bytes(b"\x11\x22\x33")
        assert b2.recv_byte() is LinkSignal.TIMEOUT
        assert read_exactly(b1, 3) == b"\x11\x22\x33"


class TestReadContract:
    def test_timeout_after_half_second(self):
        _, b = make_loopback_pair(unique_ns())  # default 0.5 s timeout
        start = time.monotonic()
        assert b.recv_byte() is LinkSignal.TIMEOUT
        elapsed = time.monotonic() - start
        assert 0.3 <= elapsed <= 0.7

    def test_timeout_loses_nothing(self):
        a, b = make_loopback_pair(unique_ns(), fast_config())
        assert b.recv_byte() is LinkSignal.TIMEOUT
        a.send_bytes(b"\x41\x42")
        assert b.recv_byte() == 0x41
        assert b.recv_byte() == 0x42

    def test_eof_after_buffer_drained(self):
        a, b = make_loopback_pair(unique_ns(), fast_config())
        a.send_bytes(b"\x99")
        a.close()
        assert b.recv_byte() == 0x99
        assert b.recv_byte() is LinkSignal.EOF
        assert b.recv_byte() is LinkSignal.EOF

    def test_min_read_bytes_blocks_for_quorum(self):
        name = unique_ns()
        register_memory_pair(name)
        writer = open_link(fast_config(), f"mem:{name}")
        reader = open_link(PortConfig(min_read_bytes=3, intercharacter_timeout=0.3),
                           f"mem:{name}")

        def trickle():
            for byte in (b"\x01", b"\x02", b"\x03"):
                time.sleep(0.05)
                writer.send_bytes(byte)

        t = threading.Thread(target=trickle)
        t.start()
        assert reader.recv_byte() == 0x01  # returned only once 3 were buffered
        assert len(reader._rx) == 2
        t.join()

    def test_intercharacter_gap_delivers_partial(self):
        # fewer than min_read_bytes buffered, line goes quiet: deliver anyway
        name = unique_ns()
        register_memory_pair(name)
        writer = open_link(fast_config(), f"mem:{name}")
        reader = open_link(PortConfig(min_read_bytes=4, intercharacter_timeout=0.15),
                           f"mem:{name}")
        writer.send_bytes(b"\xaa")
        assert reader.recv_byte() == 0xAA

    def test_recv_chunk_drains_buffer(self):
        a, b = make_loopback_pair(unique_ns(), fast_config())
        a.send_bytes(bytes(range(10)))
        assert read_exactly(b, 10) == bytes(range(10))


class TestRoundTrip:
    @given(data=st.binary(min_size=1, max_size=4096))
    @settings(max_examples=30, deadline=None)
    def test_memory_round_trip(self, data):
        a, b = make_loopback_pair(unique_ns(), fast_config())
        a.send_bytes(data)
        assert read_exactly(b, len(data)) == data

    def test_memory_round_trip_64k(self):
        a, b = make_loopback_pair(unique_ns(), fast_config())
        data = bytes(i & 0xFF for i in range(65536))
        a.send_bytes(data)
        assert read_exactly(b, len(data)) == data

    def test_interleaved_writes_keep_order(self):
        a, b = make_loopback_pair(unique_ns(), fast_config())
        for i in range(100):
            a.send_bytes(bytes([i]))
        assert read_exactly(b, 100) == bytes(range(100))


class TestTcpBackend:
    def test_connect_exchange_eof(self):
        server = open_link(fast_config("srv"), "tcp-listen:127.0.0.1:0")
        port = server.bound_port
        client = open_link(fast_config("cli"), f"tcp:127.0.0.1:{port}")
        client.send_bytes(b"\x23\x01")
        assert read_exactly(server, 2) == b"\x23\x01"
        server.send_bytes(b"\xac" * 3)
        assert read_exactly(client, 3) == b"\xac\xac\xac"
        client.close()
        assert server.recv_byte() is LinkSignal.EOF

    def test_listen_link_times_out_before_peer(self):
        server = open_link(fast_config("srv", timeout=0.1), "tcp-listen:127.0.0.1:0")
        assert server.recv_byte() is LinkSignal.TIMEOUT
        server.close()

    def test_writes_before_peer_are_delivered_on_connect(self):
        server = open_link(fast_config("srv", timeout=0.1), "tcp-listen:127.0.0.1:0")
        server.send_bytes(b"\x01\x02\x03")  # nobody attached yet
        client = open_link(fast_config("cli"), f"tcp:127.0.0.1:{server.bound_port}")
        assert read_exactly(client, 3) == b"\x01\x02\x03"
        client.close()
        server.close()

    def test_unreachable_address(self):
        from obdhsim.transport import LinkError
        with pytest.raises(LinkError):
            open_link(fast_config(), "tcp:127.0.0.1:1")

    def test_tcp_round_trip_large(self):
        server = open_link(fast_config("srv"), "tcp-listen:127.0.0.1:0")
        client = open_link(fast_config("cli"), f"tcp:127.0.0.1:{server.bound_port}")
        data = bytes((i * 7) & 0xFF for i in range(65536))
        t = threading.Thread(target=client.send_bytes, args=(data,))
        t.start()
        assert read_exactly(server, len(data), timeout=10) == data
        t.join()
        client.close()
        server.close()


class TestPtyBackend:
    def test_device_round_trip(self):
        import os
        import select

        master, slave = os.openpty()
        path = os.ttyname(slave)
        os.close(slave)
        link = open_link(fast_config("dev", timeout=0.2), f"pty:{path}")
        try:
            os.write(master, b"\x23\x01")
            assert read_exactly(link, 2) == b"\x23\x01"
            link.send_bytes(b"\xac")
            ready, _, _ = select.select([master], [], [], 2)
            assert ready and os.read(master, 10) == b"\xac"
            assert link.recv_byte() is LinkSignal.TIMEOUT
        finally:
            link.close()
            os.close(master)

    def test_missing_device(self):
        from obdhsim.transport import LinkError
        with pytest.raises(LinkError):
            open_link(fast_config(), "pty:/dev/does-not-exist-0")


class TestPacing:
    def test_paced_write_throttles(self):
        config = PortConfig(port_name="paced", baud=9600, pace=True,
                            intercharacter_timeout=0.2)
        a, b = make_loopback_pair(unique_ns(), config)
        start = time.monotonic()
        a.send_bytes(b"\x00" * 480)  # 9600/10 = 960 B/s -> 0.5 s
        elapsed = time.monotonic() - start
        assert elapsed >= 0.45
        assert read_exactly(b, 480) == b"\x00" * 480
