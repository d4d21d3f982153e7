"""Channel framing and the SK-protected control channel.

Frame: ``type (1 byte) || u32 length || body``. Context transfers and control
messages are sealed with ChaCha20-Poly1305 under the session key; the body
is ``u64 counter || ciphertext`` and the nonce is
``direction byte || 3 zero bytes || u64 counter``.
"""

from __future__ import annotations

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .records import DecodeError, Reader, u32, u64

MSG_KEY_EXCHANGE = 0x01
MSG_CONTEXT = 0x02
MSG_COMMIT_OK = 0x03
MSG_ABORT = 0x04

MESSAGE_TYPES = (MSG_KEY_EXCHANGE, MSG_CONTEXT, MSG_COMMIT_OK, MSG_ABORT)

INITIATOR_TO_RESPONDER = 0
RESPONDER_TO_INITIATOR = 1


class ChannelError(Exception):
    pass


def frame(kind: int, body: bytes) -> bytes:
    if kind not in MESSAGE_TYPES:
        raise ValueError(f"unknown message type {kind:#x}")
    return bytes([kind]) + u32(len(body)) + body


def parse_frame(data: bytes) -> tuple[int, bytes]:
    try:
        r = Reader(data)
        kind = r.u8()
        body = r.take(r.u32())
        r.finish()
    except DecodeError as exc:
        raise ChannelError(f"malformed frame: {exc}") from exc
    if kind not in MESSAGE_TYPES:
        raise ChannelError(f"unknown message type {kind:#x}")
    return kind, body


def _nonce(direction: int, counter: int) -> bytes:
    return bytes([direction, 0, 0, 0]) + u64(counter)


class SecureChannel:
    """One endpoint's view of the encrypted channel.

    Counters are per direction; a receiver only accepts strictly increasing
    counters, so replays and reordering are rejected.
    """

    def __init__(self, key: bytes, send_direction: int):
        self._aead = ChaCha20Poly1305(key)
        self._send_dir = send_direction
        self._recv_dir = 1 - send_direction
        self._send_counter = 0
        self._recv_floor = 0

    @classmethod
    def for_role(cls, key: bytes, initiator: bool) -> SecureChannel:
        return cls(key, INITIATOR_TO_RESPONDER if initiator else RESPONDER_TO_INITIATOR)

    def seal(self, kind: int, plaintext: bytes) -> bytes:
        counter = self._send_counter
        self._send_counter += 1
        ct = self._aead.encrypt(_nonce(self._send_dir, counter), plaintext, bytes([kind]))
        return frame(kind, u64(counter) + ct)

    def open(self, kind: int, body: bytes) -> bytes:
        try:
            r = Reader(body)
            counter = r.u64()
            ct = r.take(len(body) - 8)
        except DecodeError as exc:
            raise ChannelError("short sealed body") from exc
        if counter < self._recv_floor:
            raise ChannelError("replayed or reordered message")
        try:
            pt = self._aead.decrypt(_nonce(self._recv_dir, counter), ct, bytes([kind]))
        except InvalidTag as exc:
            raise ChannelError("authentication failed") from exc
        self._recv_floor = counter + 1
        return pt
