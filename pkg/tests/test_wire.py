"""Store line protocol: codec round trips and a served socket session."""

from __future__ import annotations

import socket
import threading

import numpy as np
import pytest

from embcache.errors import WireFormatError
from embcache.store import ShardedStore
from embcache.traces import EmbeddingKey, Schema
from embcache.wire import (
    MSG_ACK,
    MSG_FETCH,
    decode_ack,
    decode_fetch,
    decode_fetch_resp,
    decode_write,
    encode_ack,
    encode_fetch,
    encode_fetch_resp,
    encode_write,
    read_message,
    remote_fetch,
    remote_write,
    serve_connection,
)

SCHEMA = Schema(1, (64,), 0, 3)
KEYS = [EmbeddingKey(0, r) for r in (3, 9, 17)]


class TestCodecs:
    def test_fetch_round_trip(self):
        import io

        frame = encode_fetch(KEYS)
        msg_type, payload = read_message(io.BytesIO(frame))
        assert msg_type == MSG_FETCH
        assert decode_fetch(payload) == KEYS

    def test_fetch_resp_round_trip(self):
        import io

        values = np.arange(6, dtype=np.float32).reshape(2, 3)
        _, payload = read_message(io.BytesIO(encode_fetch_resp(values)))
        np.testing.assert_array_equal(decode_fetch_resp(payload), values)

    def test_write_round_trip(self):
        import io

        values = np.arange(9, dtype=np.float32).reshape(3, 3)
        _, payload = read_message(io.BytesIO(encode_write(KEYS, values)))
        keys, got = decode_write(payload)
        assert keys == KEYS
        np.testing.assert_array_equal(got, values)

    def test_ack_round_trip(self):
        import io

        msg_type, payload = read_message(io.BytesIO(encode_ack(7)))
        assert msg_type == MSG_ACK and decode_ack(payload) == 7

    def test_truncated_frame_rejected(self):
        import io

        with pytest.raises(WireFormatError):
            read_message(io.BytesIO(encode_fetch(KEYS)[:-3]))

    def test_end_of_stream_is_none(self):
        import io

        assert read_message(io.BytesIO(b"")) is None


class TestServedSession:
    def test_fetch_write_fetch_over_socketpair(self):
        store = ShardedStore(SCHEMA, 2, seed=1)
        server_sock, client_sock = socket.socketpair()
        server = threading.Thread(
            target=serve_connection,
            args=(store, server_sock.makefile("rb"), server_sock.makefile("wb")),
            daemon=True,
        )
        server.start()
        rfile = client_sock.makefile("rb")
        wfile = client_sock.makefile("wb")

        initial = remote_fetch(rfile, wfile, KEYS)
        np.testing.assert_array_equal(initial, store.fetch(KEYS))

        new_values = np.full((3, 3), 0.5, dtype=np.float32)
        assert remote_write(rfile, wfile, KEYS, new_values) == 3
        np.testing.assert_array_equal(remote_fetch(rfile, wfile, KEYS), new_values)

        wfile.close()
        client_sock.shutdown(socket.SHUT_WR)
        server.join(timeout=5)
        assert not server.is_alive()
        np.testing.assert_array_equal(store.fetch(KEYS), new_values)
