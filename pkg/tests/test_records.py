import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle import context_bytes, event_bytes, key_bytes, round_root_digest, sha
from plbkex.records import (
    ZERO_HASH,
    Context,
    DecodeError,
    LedgerEvent,
    RoundRoot,
    context_key_range,
    tree_key,
)

blobs = st.binary(max_size=12)
contexts = st.builds(
    Context,
    app_id=st.binary(min_size=1, max_size=8),
    endpoint_ids=st.lists(blobs, max_size=3).map(tuple),
    oob_code=st.one_of(st.none(), st.binary(min_size=1, max_size=6)),
)


def test_context_encoding_matches_reference():
    ctx = Context(b"app", (), bytes.fromhex("01020304"))
    # frozen from the hashlib/struct reference encoder
    assert ctx.encode().hex() == "00000003617070000000000000000401020304"
    assert ctx.encode() == context_bytes(b"app", (), bytes.fromhex("01020304"))


def test_natural_context_is_order_independent():
    a = Context.natural(b"voip", b"+1666", b"+1555")
    b = Context.natural(b"voip", b"+1555", b"+1666")
    assert a == b
    assert a.encode().hex() == (
        "00000004766f697000000002000000052b31353535000000052b3136363600000000"
    )


def test_context_needs_a_field():
    with pytest.raises(ValueError):
        Context(b"", (), None)
    with pytest.raises(ValueError):
        Context(b"", (b"",), b"")


def test_empty_code_normalised():
    assert Context(b"a", (), b"") == Context(b"a", (), None)


@settings(max_examples=300)
@given(contexts)
def test_context_roundtrip(ctx):
    assert Context.decode(ctx.encode()) == ctx


@settings(max_examples=300)
@given(contexts, contexts)
def test_context_encoding_injective(a, b):
    if a != b:
        assert a.encode() != b.encode()


@settings(max_examples=200)
@given(contexts, contexts, st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_key_range_selects_only_its_context(target, other, start, length, rnd):
    lo, hi = context_key_range(target, start, start + length)
    inside = lo <= tree_key(other, rnd, 3) <= hi
    assert inside == (other == target and start <= rnd <= start + length)


def test_truncated_context_rejected():
    data = Context(b"app", (b"x",), b"\x01").encode()
    for cut in range(len(data)):
        with pytest.raises(DecodeError):
            Context.decode(data[:cut])
    with pytest.raises(DecodeError):
        Context.decode(data + b"\x00")


def test_code_text_roundtrip():
    ctx = Context(b"a", (), bytes.fromhex("01020304"))
    assert ctx.code_text() == "AEBAGBA"
    assert Context.parse_code("aeba-gba") == ctx.oob_code
    with pytest.raises(DecodeError):
        Context.parse_code("!!")


def test_event_and_root_encodings():
    ctx = Context(b"app", (), b"\x01\x02\x03\x04")
    digest = sha(b"e")
    ev = LedgerEvent(ctx, digest, 7, 2)
    assert ev.encode() == event_bytes(ctx.encode(), digest, 7, 2)
    assert ev.key() == key_bytes(ctx.encode(), 7, 2)
    assert LedgerEvent.decode(ev.encode()) == ev

    genesis = RoundRoot(0, sha(b"\x00"), ZERO_HASH)
    assert genesis.digest().hex() == "f95b85be8c99410ba8d27cbac3d7566478103af1825899bcac56b3555226dc09"
    assert genesis.digest() == round_root_digest(0, sha(b"\x00"), ZERO_HASH)
    assert RoundRoot.decode(genesis.encode()) == genesis
