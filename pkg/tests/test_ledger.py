import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from plbkex.ledger import (
    Exhausted,
    InvalidWindow,
    Ledger,
    LedgerUnavailable,
    Pruned,
    RateLimited,
    RetentionViolation,
)
from plbkex.merkle import TreeLeaf, verify_range, verify_root_chain
from plbkex.records import ZERO_HASH, Context, context_key_range

C1 = Context(b"app", (), b"\x00\x00\x00\x01")
C2 = Context(b"app", (), b"\x00\x00\x00\x02")
E1 = oracle.sha(b"E1")
E2 = oracle.sha(b"E2")
POOL = [C1, C2, Context.natural(b"voip", b"a", b"b")]
DIGESTS = [oracle.sha(bytes([i])) for i in range(4)]


def proof_ok(ledger, ctx, start, end, res):
    lo, hi = context_key_range(ctx, start, end)
    return verify_root_chain(res.roots) and verify_range(
        res.roots[-1].tree_root, lo, hi, [TreeLeaf.for_event(e) for e in res.events], res.proof)


# -- examples ---------------------------------------------------------------


def test_submit_publishes_next_round():
    led = Ledger()
    for _ in range(5):
        led.advance_round()
    receipt = led.submit(C1, E1)
    assert receipt.accepted_round == 5 and receipt.publication_round == 6
    assert led.query(C1, 0, 5).events == []
    led.advance_round()
    (ev,) = led.query(C1, 0, 6).events
    assert (ev.context, ev.event, ev.round, ev.seq) == (C1, E1, 6, 0)


def test_duplicates_are_distinct_by_seq():
    led = Ledger()
    led.submit(C1, E1)
    led.submit(C2, E1)
    led.submit(C1, E1)
    led.advance_round()
    assert [e.seq for e in led.query(C1, 0, 1).events] == [0, 1]
    assert [e.seq for e in led.query(C2, 0, 1).events] == [0]


def test_rate_cap():
    led = Ledger(rate_cap=3)
    for _ in range(3):
        led.submit(C1, E1, principal="p")
    with pytest.raises(RateLimited):
        led.submit(C1, E1, principal="p")
    led.submit(C1, E1, principal="q")
    led.advance_round()
    led.submit(C1, E1, principal="p")


def test_injected_failure():
    led = Ledger(fail_submit_rounds=[1])
    led.submit(C1, E1)
    led.advance_round()
    with pytest.raises(LedgerUnavailable):
        led.submit(C1, E1)


def test_digest_length_checked():
    with pytest.raises(ValueError):
        Ledger().submit(C1, b"short")


def test_empty_advance_keeps_tree_root():
    led = Ledger()
    r1 = led.advance_round()
    r2 = led.advance_round()
    assert r1.tree_root == r2.tree_root == oracle.sha(b"\x00")
    assert r2.prev_hash == r1.digest()
    led.submit(C1, E1)
    r3 = led.advance_round()
    assert r3.tree_root != r2.tree_root and r3.prev_hash == r2.digest()


def test_three_advances_chain_by_hand():
    led = Ledger()
    for _ in range(3):
        led.advance_round()
    roots = led.roots
    assert len(roots) == 4 and verify_root_chain(roots)
    prev = ZERO_HASH
    for r, root in enumerate(roots):
        assert root.prev_hash == prev
        prev = oracle.round_root_digest(r, oracle.sha(b"\x00"), prev)


def test_current_time():
    led = Ledger()
    assert led.current_time() == 0
    for k in range(1, 6):
        led.advance_round()
        assert led.current_time() == k


def test_acquire_context():
    led = Ledger(rng=random.Random(1))
    a = led.acquire_context(b"app")
    b = led.acquire_context(b"app")
    assert a != b and a.app_id == b"app" and len(a.oob_code) == 4
    assert led.query(a, 0, 0).events == []


def test_acquire_exhausted_two_code_space():
    led = Ledger(rng=random.Random(0), code_bytes=1, code_space=2)
    led.submit(Context(b"app", (), b"\x00"), E1)
    led.submit(Context(b"app", (), b"\x01"), E1)
    with pytest.raises(Exhausted):
        led.acquire_context(b"app")


def test_acquire_skips_codes_used_this_period_only():
    led = Ledger(rng=random.Random(0), period=10, code_bytes=1, code_space=2)
    led.submit(Context(b"app", (), b"\x00"), E1)
    led.advance_round()
    assert led.acquire_context(b"app").oob_code == b"\x01"
    for _ in range(10):
        led.advance_round()
    led.acquire_context(b"app")  # new period: old codes are free again


def test_query_isolated_and_tamper_evident():
    led = Ledger()
    led.submit(C1, E1)
    led.submit(C2, E2)
    led.submit(C1, E2)
    led.advance_round()
    res = led.query(C1, 0, 1)
    assert [e.context for e in res.events] == [C1, C1]
    assert proof_ok(led, C1, 0, 1, res)
    lo, hi = context_key_range(C1, 0, 1)
    for i in range(2):
        rest = [TreeLeaf.for_event(e) for j, e in enumerate(res.events) if j != i]
        proofs = tuple(p for j, p in enumerate(res.proof.member_proofs) if j != i)
        forged = type(res.proof)(proofs, res.proof.left_boundary, res.proof.right_boundary)
        assert not verify_range(res.roots[-1].tree_root, lo, hi, rest, forged)


def test_query_windows():
    led = Ledger()
    led.advance_round()
    with pytest.raises(InvalidWindow):
        led.query(C1, 1, 0)
    with pytest.raises(InvalidWindow):
        led.query(C1, 0, 2)
    res = led.query(C1, 1, 1)
    assert [r.round for r in res.roots] == [1]


def test_prune_examples():
    led = Ledger(period=10, retention=20)
    assert led.prune(0) == 0
    for _ in range(3):
        led.submit(C1, E1)
        led.advance_round()
    for _ in range(30):
        led.advance_round()
    chain = led.roots
    with pytest.raises(RetentionViolation):
        led.prune(led.current_time() - 20)
    assert led.prune(5) == 3
    assert led.roots == chain
    with pytest.raises(Pruned):
        led.query(C1, 0, 10)
    res = led.query(C1, 5, led.current_time())
    assert res.events == [] and proof_ok(led, C1, 5, led.current_time(), res)
    led.advance_round()
    res = led.query(C1, 5, led.current_time())
    assert proof_ok(led, C1, 5, led.current_time(), res)


# -- properties ---------------------------------------------------------------

ops = st.lists(
    st.one_of(
        st.tuples(st.just("submit"), st.integers(0, 2), st.integers(0, 3), st.integers(0, 1)),
        st.tuples(st.just("advance")),
    ),
    max_size=40,
)


def replay(seq, rate_cap=3):
    """Run ``seq`` against a ledger and a plain-list model of what must be published."""
    led = Ledger(rate_cap=rate_cap)
    model, queued, counts = [], [], {}
    for op in seq:
        if op[0] == "advance":
            rnd = led.current_time() + 1
            seen = {}
            for c, d in queued:
                model.append((c, d, rnd, seen.get(c, 0)))
                seen[c] = seen.get(c, 0) + 1
            queued, counts = [], {}
            led.advance_round()
        else:
            _, ci, di, pi = op
            who = f"p{pi}"
            try:
                led.submit(POOL[ci], DIGESTS[di], principal=who)
            except RateLimited:
                assert counts.get(who, 0) == rate_cap
                continue
            counts[who] = counts.get(who, 0) + 1
            queued.append((POOL[ci], DIGESTS[di]))
    return led, model, queued


def as_tuples(events):
    return [(e.context, e.event, e.round, e.seq) for e in events]


@settings(max_examples=250)
@given(ops)
def test_inclusiveness_and_publication_delay(seq):
    led, model, queued = replay(seq)
    now = led.current_time()
    for ctx in POOL:
        res = led.query(ctx, 0, now)
        assert as_tuples(res.events) == sorted((t for t in model if t[0] == ctx), key=lambda t: (t[2], t[3]))
        assert proof_ok(led, ctx, 0, now, res)
    # queued submissions are invisible until the next round
    assert all(t[2] <= now for t in model)
    assert sum(len(led.query(c, 0, now).events) for c in POOL) == len(model)
    assert all(e.round >= 1 for e in led.published)
    for e in led.published:
        assert as_tuples(led.query(e.context, e.round, e.round).events).count(
            (e.context, e.event, e.round, e.seq)) == 1


@settings(max_examples=250)
@given(ops)
def test_publication_delay(seq):
    led = Ledger(rate_cap=100)
    pending = []
    for op in seq:
        now = led.current_time()
        if op[0] == "advance":
            led.advance_round()
            for ctx, d in pending:
                got = [e for e in led.query(ctx, now + 1, now + 1).events if e.event == d]
                assert got and all(e.round == now + 1 for e in got)
            pending = []
        else:
            ctx, d = POOL[op[1]], DIGESTS[op[2]]
            visible = len(led.query(ctx, 0, now).events)
            led.submit(ctx, d, principal="p")
            pending.append((ctx, d))
            # nothing submitted this round shows up before the next round
            assert len(led.query(ctx, 0, now).events) == visible
            assert led.current_time() == now


@settings(max_examples=250)
@given(ops, ops)
def test_immutability(first, second):
    led, _, _ = replay(first)
    before = as_tuples(led.published)
    roots_before = led.roots
    for op in second:
        if op[0] == "advance":
            led.advance_round()
        else:
            try:
                led.submit(POOL[op[1]], DIGESTS[op[2]], principal=f"p{op[3]}")
            except RateLimited:
                pass
    assert as_tuples(led.published)[:len(before)] == before
    assert led.roots[:len(roots_before)] == roots_before


@settings(max_examples=250)
@given(ops, st.lists(st.tuples(st.integers(0, 40), st.integers(0, 3)), max_size=10))
def test_per_context_isolation(seq, noise):
    only_c1 = [op for op in seq if op[0] == "advance" or op[1] == 0]
    led_a, _, _ = replay(only_c1, rate_cap=100)
    # same history plus unrelated C2 events submitted by someone else
    led_b = Ledger(rate_cap=100)
    noise_at = {}
    for pos, d in noise:
        noise_at.setdefault(pos, []).append(d)
    for i, op in enumerate(only_c1):
        for d in noise_at.get(i, []):
            led_b.submit(C2, DIGESTS[d], principal="other")
        if op[0] == "advance":
            led_b.advance_round()
        else:
            led_b.submit(POOL[op[1]], DIGESTS[op[2]], principal=f"p{op[3]}")
    now = led_a.current_time()
    a, b = led_a.query(C1, 0, now), led_b.query(C1, 0, now)
    assert [e.encode() for e in a.events] == [e.encode() for e in b.events]
    assert [r.round for r in a.roots] == [r.round for r in b.roots]
    assert all(e.context == C1 for e in b.events)
    assert proof_ok(led_b, C1, 0, now, b)


@settings(max_examples=250)
@given(ops)
def test_root_chain_recomputed_independently(seq):
    led, model, _ = replay(seq)
    roots = led.roots
    assert verify_root_chain(roots)
    prev = ZERO_HASH
    for r, root in enumerate(roots):
        upto = [t for t in model if t[2] <= r]
        leaves = []
        for c, d, rnd, s in sorted(upto, key=lambda t: oracle.key_bytes(t[0].encode(), t[2], t[3])):
            key = oracle.key_bytes(c.encode(), rnd, s)
            leaves.append(oracle.leaf_hash(key, oracle.sha(oracle.event_bytes(c.encode(), d, rnd, s))))
        assert root.tree_root == oracle.root(leaves)
        assert root.prev_hash == prev
        prev = oracle.round_root_digest(r, root.tree_root, prev)
    if len(roots) > 2:
        bad = list(roots)
        mid = len(bad) // 2
        bad[mid] = type(bad[mid])(bad[mid].round, oracle.sha(b"x"), bad[mid].prev_hash)
        assert not verify_root_chain(bad)


@settings(max_examples=250)
@given(ops)
def test_global_consistency_and_round_monotonicity(seq):
    led, _, _ = replay(seq)
    advances = sum(op[0] == "advance" for op in seq)
    assert led.current_time() == advances
    now = led.current_time()
    for ctx in POOL:
        a, b = led.query(ctx, 0, now), led.query(ctx, 0, now)
        assert a.events == b.events and a.proof == b.proof and a.roots == b.roots


@settings(max_examples=250)
@given(st.integers(0, 60), st.integers(0, 80), st.integers(1, 3))
def test_prune_retention(rounds, before, per_round):
    led = Ledger(period=10, retention=20)
    for r in range(rounds):
        for i in range(per_round):
            led.submit(POOL[i % 3], DIGESTS[i], principal="p")
        led.advance_round()
    now = led.current_time()
    chain = led.roots
    allowed = before == 0 or before < now - 20
    expected = sum(1 for e in led.published if e.round < before)
    if not allowed:
        with pytest.raises(RetentionViolation):
            led.prune(before)
        return
    assert led.prune(before) == expected
    assert led.roots == chain
    assert all(e.round >= before for e in led.published)
    if before > 0:
        with pytest.raises(Pruned):
            led.query(C1, before - 1, now)
    for ctx in POOL:
        res = led.query(ctx, before, now)
        assert proof_ok(led, ctx, before, now, res)
        assert all(e.round >= before for e in res.events)
    led.advance_round()
    for ctx in POOL:
        res = led.query(ctx, before, led.current_time())
        assert proof_ok(led, ctx, before, led.current_time(), res)
