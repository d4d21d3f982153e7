"""Canonical records shared by the ledger, the Merkle layer and the protocol.

All encodings here are bit-exact: integers are big-endian, variable-length
byte strings carry a big-endian u32 length prefix.
"""

from __future__ import annotations

import base64
import hashlib
import struct
from dataclasses import dataclass, field

HASH_LEN = 32
ZERO_HASH = bytes(HASH_LEN)


def H(*parts: bytes) -> bytes:
    """Project-wide 32-byte hash (SHA-256 over the concatenated parts)."""
    return hashlib.sha256(b"".join(parts)).digest()


def u16(n: int) -> bytes:
    return struct.pack(">H", n)


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def enc(data: bytes) -> bytes:
    """Length-prefixed byte string."""
    return u32(len(data)) + data


class DecodeError(ValueError):
    pass


class Reader:
    """Cursor over a byte string; raises DecodeError on truncation."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def finish(self) -> None:
        if not self.at_end():
            raise DecodeError("trailing bytes")


def check_digest(value: bytes, what: str = "digest") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != HASH_LEN:
        raise ValueError(f"{what} must be {HASH_LEN} bytes")
    return bytes(value)


@dataclass(frozen=True)
class Context:
    """Index key under which a key-exchange event is published.

    ``oob_code`` of ``b""`` is normalised to ``None`` so that the canonical
    encoding stays injective.
    """

    app_id: bytes
    endpoint_ids: tuple[bytes, ...] = field(default=())
    oob_code: bytes | None = None

    def __post_init__(self):
        object.__setattr__(self, "app_id", bytes(self.app_id))
        object.__setattr__(self, "endpoint_ids", tuple(bytes(i) for i in self.endpoint_ids))
        if self.oob_code is not None:
            code = bytes(self.oob_code)
            object.__setattr__(self, "oob_code", code or None)
        if not (self.app_id or any(self.endpoint_ids) or self.oob_code):
            raise ValueError("context must have at least one non-empty field")

    @classmethod
    def natural(cls, app_id: bytes, *endpoint_ids: bytes) -> Context:
        """Order-independent context built from public endpoint identifiers."""
        return cls(app_id, tuple(sorted(endpoint_ids)))

    def encode(self) -> bytes:
        out = [enc(self.app_id), u32(len(self.endpoint_ids))]
        out.extend(enc(i) for i in self.endpoint_ids)
        out.append(enc(self.oob_code or b""))
        return b"".join(out)

    @classmethod
    def read(cls, r: Reader) -> Context:
        app_id = r.blob()
        ids = tuple(r.blob() for _ in range(r.u32()))
        return cls(app_id, ids, r.blob() or None)

    @classmethod
    def decode(cls, data: bytes) -> Context:
        r = Reader(data)
        ctx = cls.read(r)
        r.finish()
        return ctx

    def code_text(self) -> str:
        """Human-facing rendering of the out-of-band code (base-32, unpadded)."""
        if self.oob_code is None:
            return ""
        return base64.b32encode(self.oob_code).decode().rstrip("=")

    @staticmethod
    def parse_code(text: str) -> bytes:
        """Inverse of :meth:`code_text`; tolerates case, spaces and dashes."""
        clean = "".join(text.split()).replace("-", "").upper()
        try:
            return base64.b32decode(clean + "=" * (-len(clean) % 8))
        except ValueError as exc:
            raise DecodeError(f"not a base-32 code: {text!r}") from exc

    def __str__(self) -> str:
        parts = [self.app_id.decode(errors="replace")]
        parts += [i.decode(errors="replace") for i in self.endpoint_ids]
        if self.oob_code is not None:
            parts.append(self.code_text())
        return "/".join(parts)


@dataclass(frozen=True)
class SubmitReceipt:
    context: Context
    event: bytes
    accepted_round: int

    @property
    def publication_round(self) -> int:
        return self.accepted_round + 1


@dataclass(frozen=True)
class LedgerEvent:
    context: Context
    event: bytes
    round: int
    seq: int

    def encode(self) -> bytes:
        return self.context.encode() + self.event + u64(self.round) + u64(self.seq)

    @classmethod
    def decode(cls, data: bytes) -> LedgerEvent:
        r = Reader(data)
        ev = cls(Context.read(r), r.take(HASH_LEN), r.u64(), r.u64())
        r.finish()
        return ev

    def key(self) -> bytes:
        """Ordered-tree key: (context, round, seq)."""
        return tree_key(self.context, self.round, self.seq)


def tree_key(context: Context, round_: int, seq: int) -> bytes:
    return context.encode() + u64(round_) + u64(seq)


def context_key_range(context: Context, start: int, end: int) -> tuple[bytes, bytes]:
    """Inclusive key bounds selecting ``context`` events with start <= round <= end.

    The context encoding is self-delimiting, so no other context can fall
    between the two bounds.
    """
    return tree_key(context, start, 0), tree_key(context, end, 2**64 - 1)


@dataclass(frozen=True)
class RoundRoot:
    round: int
    tree_root: bytes
    prev_hash: bytes

    def encode(self) -> bytes:
        return u64(self.round) + self.tree_root + self.prev_hash

    @classmethod
    def decode(cls, data: bytes) -> RoundRoot:
        r = Reader(data)
        root = cls(r.u64(), r.take(HASH_LEN), r.take(HASH_LEN))
        r.finish()
        return root

    def digest(self) -> bytes:
        return H(self.encode())
