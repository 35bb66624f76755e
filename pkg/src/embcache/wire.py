"""Length-prefixed binary protocol for running the store behind a byte stream.

Frame layout (little-endian): u32 payload length, u8 message type, u8 version,
u16 reserved, payload. Messages:

* FETCH (1):      u32 count, then count * (u32 table_id, u64 row_id)
* FETCH_RESP (2): u32 count, u32 emb_dim, then count*emb_dim f32 values
* WRITE (3):      u32 count, u32 emb_dim, keys as in FETCH, then values
* ACK (4):        u32 count acknowledged

One request gets one response; a connection serves requests sequentially.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Sequence

import numpy as np

from .errors import WireFormatError
from .store import ShardedStore
from .traces import EmbeddingKey

WIRE_VERSION = 1

MSG_FETCH = 1
MSG_FETCH_RESP = 2
MSG_WRITE = 3
MSG_ACK = 4

_HEADER = struct.Struct("<IBBH")


def _pack_keys(keys: Sequence[EmbeddingKey]) -> bytes:
    return b"".join(struct.pack("<IQ", k.table_id, k.row_id) for k in keys)


def _unpack_keys(payload: bytes, offset: int, count: int) -> tuple[list[EmbeddingKey], int]:
    keys = []
    for _ in range(count):
        t, r = struct.unpack_from("<IQ", payload, offset)
        keys.append(EmbeddingKey(t, r))
        offset += 12
    return keys, offset


def encode_fetch(keys: Sequence[EmbeddingKey]) -> bytes:
    payload = struct.pack("<I", len(keys)) + _pack_keys(keys)
    return _HEADER.pack(len(payload), MSG_FETCH, WIRE_VERSION, 0) + payload


def encode_fetch_resp(values: np.ndarray) -> bytes:
    count, dim = values.shape
    payload = struct.pack("<II", count, dim) + values.astype("<f4").tobytes()
    return _HEADER.pack(len(payload), MSG_FETCH_RESP, WIRE_VERSION, 0) + payload


def encode_write(keys: Sequence[EmbeddingKey], values: np.ndarray) -> bytes:
    count, dim = values.shape
    if count != len(keys):
        raise WireFormatError("key/value count mismatch")
    payload = struct.pack("<II", count, dim) + _pack_keys(keys) + values.astype("<f4").tobytes()
    return _HEADER.pack(len(payload), MSG_WRITE, WIRE_VERSION, 0) + payload


def encode_ack(count: int) -> bytes:
    payload = struct.pack("<I", count)
    return _HEADER.pack(len(payload), MSG_ACK, WIRE_VERSION, 0) + payload


def read_message(stream: BinaryIO) -> tuple[int, bytes] | None:
    """Read one frame; returns (type, payload) or None at clean end of stream."""
    header = stream.read(_HEADER.size)
    if not header:
        return None
    if len(header) != _HEADER.size:
        raise WireFormatError("truncated frame header")
    length, msg_type, version, _ = _HEADER.unpack(header)
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported wire version {version}")
    payload = stream.read(length)
    if len(payload) != length:
        raise WireFormatError("truncated frame payload")
    return msg_type, payload


def decode_fetch(payload: bytes) -> list[EmbeddingKey]:
    (count,) = struct.unpack_from("<I", payload, 0)
    keys, _ = _unpack_keys(payload, 4, count)
    return keys


def decode_fetch_resp(payload: bytes) -> np.ndarray:
    count, dim = struct.unpack_from("<II", payload, 0)
    return np.frombuffer(payload, dtype="<f4", count=count * dim, offset=8).reshape(count, dim)


def decode_write(payload: bytes) -> tuple[list[EmbeddingKey], np.ndarray]:
    count, dim = struct.unpack_from("<II", payload, 0)
    keys, offset = _unpack_keys(payload, 8, count)
    values = np.frombuffer(payload, dtype="<f4", count=count * dim, offset=offset).reshape(count, dim)
    return keys, values


def decode_ack(payload: bytes) -> int:
    (count,) = struct.unpack_from("<I", payload, 0)
    return count


def serve_connection(store: ShardedStore, rfile: BinaryIO, wfile: BinaryIO) -> int:
    """Serve FETCH/WRITE requests until end of stream; returns requests served."""
    served = 0
    while (msg := read_message(rfile)) is not None:
        msg_type, payload = msg
        if msg_type == MSG_FETCH:
            values = store.fetch(decode_fetch(payload))
            wfile.write(encode_fetch_resp(values))
        elif msg_type == MSG_WRITE:
            keys, values = decode_write(payload)
            store.write_back(keys, values)
            wfile.write(encode_ack(len(keys)))
        else:
            raise WireFormatError(f"unexpected message type {msg_type}")
        wfile.flush()
        served += 1
    return served


def remote_fetch(rfile: BinaryIO, wfile: BinaryIO, keys: Sequence[EmbeddingKey]) -> np.ndarray:
    """Client-side fetch over an open connection."""
    wfile.write(encode_fetch(keys))
    wfile.flush()
    msg = read_message(rfile)
    if msg is None or msg[0] != MSG_FETCH_RESP:
        raise WireFormatError("expected FETCH_RESP")
    return decode_fetch_resp(msg[1])


def remote_write(rfile: BinaryIO, wfile: BinaryIO, keys: Sequence[EmbeddingKey], values: np.ndarray) -> int:
    """Client-side write-back over an open connection; returns the acked count."""
    wfile.write(encode_write(keys, values))
    wfile.flush()
    msg = read_message(rfile)
    if msg is None or msg[0] != MSG_ACK:
        raise WireFormatError("expected ACK")
    return decode_ack(msg[1])
