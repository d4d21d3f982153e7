"""Ledger-assisted key exchange: the out-of-band and natural-context variants.

Each party runs as a generator. It talks to the ledger and the channel
directly and yields one of :class:`Recv`, :class:`Until`,
:class:`StartPress` or :class:`Confirm` whenever it has to wait; whatever
drives it (the simulator or the interactive pairing demo) resumes it with
the awaited value. The generator's return value is the party's outcome.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey

from .ledger import LedgerError, LedgerUnavailable, RateLimited
from .merkle import TreeLeaf, verify_range, verify_root_chain
from .records import Context, DecodeError, H, Reader, context_key_range, enc, u64
from .wire import (
    MSG_ABORT,
    MSG_COMMIT_OK,
    MSG_CONTEXT,
    MSG_KEY_EXCHANGE,
    ChannelError,
    SecureChannel,
    frame,
    parse_frame,
)

EVENT_TAG = b"PLB-E"
SECRET_TAG = b"PLB-SK"
PUBLIC_KEY_LEN = 32
EMPTY_QUERY_RETRIES = 2


class Role(str, enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"

    @property
    def peer(self) -> Role:
        return Role.RESPONDER if self is Role.INITIATOR else Role.INITIATOR


class Variant(str, enum.Enum):
    OOB = "oob"
    NATURAL = "natural"


class Phase(str, enum.Enum):
    KEY_EXCHANGE = "KeyExchange"
    CONTEXT_ACQUIRE = "ContextAcquire"
    CONTEXT_COMPARE = "ContextCompare"
    COMMIT = "Commit"
    VERIFY = "Verify"
    CONFIRM = "Confirm"
    DONE = "Done"


class AbortReason(str, enum.Enum):
    PROOF_INVALID = "ProofInvalid"
    MULTIPLE_EVENTS = "MultipleEvents"
    EVENT_MISMATCH = "EventMismatch"
    COMMIT_FAILED = "CommitFailed"
    TIMEOUT = "Timeout"
    TIMING_GATE = "TimingGate"
    USER_REJECTED = "UserRejected"
    PEER_ABORTED = "PeerAborted"


class InvalidPeerKey(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    """Period length ``w``, timeout ``alpha`` and clock slack ``delta``, in rounds.

    ``anchor_initiator_window`` widens the out-of-band initiator's query
    window back to the round its context was issued. Off by default.
    """

    w: int = 100
    alpha: int = 10
    delta: int = 2
    variant: Variant = Variant.OOB
    anchor_initiator_window: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0 < 2 * self.alpha < self.w:
            raise ValueError("need 0 < 2*alpha < w")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


# -- key agreement ----------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    private: X25519PrivateKey
    public: bytes


def ka_keygen(rng) -> KeyPair:
    """X25519 key pair drawn from ``rng`` (deterministic under a seeded RNG)."""
    private = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    public = private.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return KeyPair(private, public)


def ka_derive(private: X25519PrivateKey, peer_public: bytes) -> bytes:
    if not isinstance(peer_public, (bytes, bytearray)) or len(peer_public) != PUBLIC_KEY_LEN:
        raise InvalidPeerKey("peer key must be 32 bytes")
    try:
        raw = private.exchange(X25519PublicKey.from_public_bytes(bytes(peer_public)))
    except ValueError as exc:
        # low-order point: all-zero shared value
        raise InvalidPeerKey(str(exc)) from exc
    return H(SECRET_TAG, raw)


@dataclass(frozen=True)
class Transcript:
    initiator_pub: bytes
    responder_pub: bytes
    shared: bytes


def derive_event_digest(t: Transcript) -> bytes:
    """Digest committed to the ledger; binds both public keys, never the secret."""
    return H(EVENT_TAG, enc(t.initiator_pub), enc(t.responder_pub))


def fingerprint(shared: bytes) -> str:
    h = H(b"PLB-FP", shared).hex()[:16]
    return " ".join(h[i:i + 4] for i in range(0, 16, 4))


# -- timing -------------------------------------------------------------------


def may_start(t: int, params: ProtocolParams) -> bool:
    """False when ``t`` is within ``alpha`` of either end of its period."""
    offset = t - params.w * (t // params.w)
    return params.alpha < offset < params.w - params.alpha


# -- verification -------------------------------------------------------------


def verify_commitment(expected: bytes, context: Context, window, events, proof, roots) -> AbortReason | None:
    """Check a query response; ``None`` means accept."""
    start, end = window
    roots = list(roots)
    if not verify_root_chain(roots) or roots[0].round != start or roots[-1].round < end:
        return AbortReason.PROOF_INVALID
    events = list(events)
    if any(e.context != context or not start <= e.round <= end for e in events):
        return AbortReason.PROOF_INVALID
    lo, hi = context_key_range(context, start, end)
    if not verify_range(roots[-1].tree_root, lo, hi, [TreeLeaf.for_event(e) for e in events], proof):
        return AbortReason.PROOF_INVALID
    if len(events) >= 2:
        return AbortReason.MULTIPLE_EVENTS
    if not events or events[0].event != expected:
        return AbortReason.EVENT_MISMATCH
    return None


# -- party state --------------------------------------------------------------


@dataclass(frozen=True)
class Accepted:
    shared: bytes

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.shared)


@dataclass(frozen=True)
class Aborted:
    reason: AbortReason


@dataclass(frozen=True)
class Recv:
    """Wait for the next frame; resumed with ``None`` once local time passes ``deadline``."""

    deadline: int | None


@dataclass(frozen=True)
class Until:
    """Wait until the ledger reaches ``round``."""

    round: int


@dataclass(frozen=True)
class StartPress:
    """Wait for the user's start press; resumed with ``False`` past ``deadline``."""

    deadline: int | None


@dataclass(frozen=True)
class Confirm:
    """Ask the user whether the exchange succeeded on both devices."""


@dataclass
class PartyState:
    role: Role
    params: ProtocolParams
    rng: object
    app_id: bytes = b"plb"
    principal: str = ""
    clock_offset: int = 0
    phase: Phase = Phase.KEY_EXCHANGE
    context: Context | None = None
    transcript: Transcript | None = None
    start_time: int | None = None
    acquired_round: int | None = None
    outcome: Accepted | Aborted | None = None
    keypair: KeyPair | None = None
    secure: SecureChannel | None = None
    publication_round: int | None = None
    query_window: tuple[int, int] | None = None
    events_seen: int | None = None
    abort_phase: Phase | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.role = Role(self.role)
        if not self.principal:
            self.principal = self.role.value

    @property
    def is_initiator(self) -> bool:
        return self.role is Role.INITIATOR

    def local_time(self, ledger) -> int:
        return ledger.current_time() + self.clock_offset

    @property
    def expected_digest(self) -> bytes | None:
        return derive_event_digest(self.transcript) if self.transcript else None


class _Abort(Exception):
    def __init__(self, reason: AbortReason, notify: bool = False):
        super().__init__(reason.value)
        self.reason = reason
        self.notify = notify


def _await(party: PartyState, kind: int, deadline: int | None):
    """Wait for a frame of ``kind``; junk and forgeries are dropped."""
    while True:
        data = yield Recv(deadline)
        if data is None:
            raise _Abort(AbortReason.TIMEOUT, notify=True)
        try:
            got, body = parse_frame(data)
        except ChannelError:
            continue
        if got == MSG_KEY_EXCHANGE:
            if kind == MSG_KEY_EXCHANGE:
                return body
            continue
        if party.secure is None:
            continue
        try:
            plain = party.secure.open(got, body)
        except ChannelError:
            continue
        if got == MSG_ABORT:
            raise _Abort(AbortReason.PEER_ABORTED)
        if got == kind:
            return plain


def _key_exchange(party: PartyState, ledger, channel, gate=None):
    party.phase = Phase.KEY_EXCHANGE
    params = party.params
    if party.is_initiator:
        kp = ka_keygen(party.rng)
        party.keypair = kp
        channel.send(frame(MSG_KEY_EXCHANGE, kp.public))
        deadline = party.local_time(ledger) + params.alpha
        if party.start_time is not None:
            deadline = party.start_time + params.alpha
        while True:
            peer = yield from _await(party, MSG_KEY_EXCHANGE, deadline)
            try:
                shared = ka_derive(kp.private, peer)
                break
            except InvalidPeerKey:
                continue
        party.transcript = Transcript(kp.public, peer, shared)
    else:
        while True:
            peer = yield from _await(party, MSG_KEY_EXCHANGE, party.local_time(ledger) + params.w)
            kp = ka_keygen(party.rng)
            try:
                shared = ka_derive(kp.private, peer)
                break
            except InvalidPeerKey:
                continue
        if gate is not None:
            gate()
        party.keypair = kp
        channel.send(frame(MSG_KEY_EXCHANGE, kp.public))
        party.transcript = Transcript(peer, kp.public, shared)
    party.secure = SecureChannel.for_role(shared, party.is_initiator)


def _commit_and_verify(party: PartyState, ledger, channel, window_start, deadline):
    """Commitment and commitment verification, shared by both variants."""
    context = party.context
    expected = party.expected_digest
    party.phase = Phase.COMMIT
    if party.is_initiator:
        try:
            receipt = ledger.submit(context, expected, principal=party.principal)
        except (LedgerUnavailable, RateLimited) as exc:
            party.notes.append(f"submit failed: {exc}")
            raise _Abort(AbortReason.COMMIT_FAILED, notify=True) from exc
        channel.send(party.secure.seal(MSG_COMMIT_OK, u64(receipt.accepted_round)))
        publication = receipt.publication_round
    else:
        plain = yield from _await(party, MSG_COMMIT_OK, deadline)
        try:
            r = Reader(plain)
            publication = r.u64() + 1
            r.finish()
        except DecodeError as exc:
            raise _Abort(AbortReason.PEER_ABORTED) from exc
    party.publication_round = publication

    party.phase = Phase.VERIFY
    if ledger.current_time() < publication:
        yield Until(publication)
    for attempt in range(EMPTY_QUERY_RETRIES + 1):
        if deadline is not None and party.local_time(ledger) > deadline:
            raise _Abort(AbortReason.TIMEOUT)
        q = ledger.current_time()
        start = min(window_start, q)
        try:
            events, proof, roots = ledger.query(context, start, q)
        except LedgerError as exc:
            party.notes.append(f"query failed: {exc}")
            raise _Abort(AbortReason.PROOF_INVALID) from exc
        party.query_window = (start, q)
        party.events_seen = len(events)
        verdict = verify_commitment(expected, context, (start, q), events, proof, roots)
        if verdict is AbortReason.EVENT_MISMATCH and not events and attempt < EMPTY_QUERY_RETRIES:
            yield Until(q + 1)
            continue
        if verdict is not None:
            raise _Abort(verdict)
        return


def _finish(party: PartyState, outcome, ledger=None, channel=None, notify=False):
    if isinstance(outcome, Aborted):
        party.abort_phase = party.phase
        if notify and party.secure is not None and channel is not None:
            channel.send(party.secure.seal(MSG_ABORT, bytes([list(AbortReason).index(outcome.reason)])))
    party.phase = Phase.DONE
    party.outcome = outcome
    return outcome


def run_protocol1(party: PartyState, ledger, channel, user):
    """Out-of-band context: six phases ending in the user's confirmation.

    ``channel.send(frame)`` delivers to the peer; ``user.display_context``
    shows the code. Message waits time out after ``alpha`` rounds, the
    start press after ``w`` rounds.
    """
    params = party.params
    try:
        yield from _key_exchange(party, ledger, channel)

        party.phase = Phase.CONTEXT_ACQUIRE
        if party.is_initiator:
            try:
                context = ledger.acquire_context(party.app_id)
                party.acquired_round = ledger.current_time()
            except LedgerError as exc:
                party.notes.append(f"acquire failed: {exc}")
                raise _Abort(AbortReason.COMMIT_FAILED, notify=True) from exc
            channel.send(party.secure.seal(MSG_CONTEXT, context.encode()))
        else:
            while True:
                plain = yield from _await(party, MSG_CONTEXT, party.local_time(ledger) + params.alpha)
                try:
                    context = Context.decode(plain)
                    break
                except (DecodeError, ValueError):
                    continue
        party.context = context

        party.phase = Phase.CONTEXT_COMPARE
        user.display_context(party.role, context)
        pressed = yield StartPress(ledger.current_time() + params.w)
        if not pressed:
            raise _Abort(AbortReason.TIMEOUT, notify=True)
        party.start_time = ledger.current_time()
        window_start = max(0, party.start_time - params.delta)
        if params.anchor_initiator_window and party.acquired_round is not None:
            window_start = min(window_start, party.acquired_round)

        yield from _commit_and_verify(
            party, ledger, channel,
            window_start=window_start,
            deadline=None if party.is_initiator else party.local_time(ledger) + params.alpha,
        )

        party.phase = Phase.CONFIRM
        confirmed = yield Confirm()
        if not confirmed:
            raise _Abort(AbortReason.USER_REJECTED)
        return _finish(party, Accepted(party.transcript.shared))
    except _Abort as a:
        return _finish(party, Aborted(a.reason), ledger, channel, a.notify)


def run_protocol2(party: PartyState, ledger, channel):
    """Natural context: key exchange, commitment, verification within ``alpha``.

    ``party.context`` must already hold the pre-agreed context.
    """
    params = party.params
    if party.context is None:
        raise ValueError("natural-context run needs party.context")

    def gate():
        party.start_time = party.local_time(ledger)
        if not may_start(party.start_time, params):
            raise _Abort(AbortReason.TIMING_GATE)

    try:
        if party.is_initiator:
            gate()
            yield from _key_exchange(party, ledger, channel)
        else:
            yield from _key_exchange(party, ledger, channel, gate=gate)
        deadline = party.start_time + params.alpha
        if party.local_time(ledger) > deadline:
            raise _Abort(AbortReason.TIMEOUT, notify=True)
        period_start = params.w * (party.start_time // params.w)
        yield from _commit_and_verify(party, ledger, channel, window_start=period_start, deadline=deadline)
        return _finish(party, Accepted(party.transcript.shared))
    except _Abort as a:
        return _finish(party, Aborted(a.reason), ledger, channel, a.notify)
