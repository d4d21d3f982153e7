"""In-process public ledger with round-based publication.

Events submitted during round ``r`` become visible at round ``r + 1``. Every
round closes with a :class:`RoundRoot` chained to its predecessor; the tree
root covers every event published so far that has not been pruned.
"""

from __future__ import annotations

import random
from bisect import insort
from collections import defaultdict
from typing import NamedTuple

from .merkle import CompletenessProof, TreeLeaf, prove_range_from_levels, root_of, tree_levels
from .records import (
    ZERO_HASH,
    Context,
    LedgerEvent,
    RoundRoot,
    SubmitReceipt,
    check_digest,
    context_key_range,
)

DEFAULT_RATE_CAP = 8
DEFAULT_CODE_BYTES = 4
MAX_CODE_RETRIES = 16


class LedgerError(Exception):
    pass


class RateLimited(LedgerError):
    pass


class LedgerUnavailable(LedgerError):
    pass


class Exhausted(LedgerError):
    pass


class InvalidWindow(LedgerError, ValueError):
    pass


class Pruned(LedgerError):
    pass


class RetentionViolation(LedgerError, ValueError):
    pass


class QueryResult(NamedTuple):
    events: list[LedgerEvent]
    proof: CompletenessProof
    roots: list[RoundRoot]


class Ledger:
    """Honest, single-writer public ledger.

    ``fail_submit_rounds`` injects :class:`LedgerUnavailable` on submissions
    made in those rounds. ``code_space`` caps the number of distinct
    out-of-band codes (default ``256 ** code_bytes``).
    """

    def __init__(
        self,
        *,
        rng: random.Random | None = None,
        period: int = 100,
        rate_cap: int = DEFAULT_RATE_CAP,
        code_bytes: int = DEFAULT_CODE_BYTES,
        code_space: int | None = None,
        retention: int | None = None,
        fail_submit_rounds=(),
    ):
        if period <= 0:
            raise ValueError("period must be positive")
        if code_space is None:
            code_space = 256 ** code_bytes
        if not 0 < code_space <= 256 ** code_bytes:
            raise ValueError("code_space does not fit in code_bytes")
        self.rng = rng if rng is not None else random.Random(0)
        self.period = period
        self.rate_cap = rate_cap
        self.code_bytes = code_bytes
        self.code_space = code_space
        self.retention = 2 * period if retention is None else retention
        self.fail_submit_rounds = frozenset(fail_submit_rounds)

        self._round = 0
        self._queue: list[tuple[Context, bytes]] = []
        self._submissions: dict[str, int] = defaultdict(int)
        self._published: list[LedgerEvent] = []
        self._by_key: dict[bytes, LedgerEvent] = {}
        self._leaves: list[TreeLeaf] = []
        self._levels = tree_levels([])
        # Prune drops leaves from the tree at the next round boundary so
        # the current round's root keeps matching served proofs.
        self._tree_stale = False
        self._stale_leaves: list[TreeLeaf] = []
        self._pruned_before = 0
        self._issued: dict[int, set[Context]] = defaultdict(set)
        self._roots = [RoundRoot(0, root_of(self._levels), ZERO_HASH)]

    # -- time ---------------------------------------------------------------

    def current_time(self) -> int:
        return self._round

    def period_start(self, t: int | None = None) -> int:
        t = self._round if t is None else t
        return self.period * (t // self.period)

    # -- writes -------------------------------------------------------------

    def submit(self, context: Context, event: bytes, principal: str = "anonymous") -> SubmitReceipt:
        event = check_digest(event, "event digest")
        if self._round in self.fail_submit_rounds:
            raise LedgerUnavailable(f"ledger unavailable in round {self._round}")
        if self._submissions[principal] >= self.rate_cap:
            raise RateLimited(f"{principal} exceeded {self.rate_cap} submissions in round {self._round}")
        self._submissions[principal] += 1
        self._queue.append((context, event))
        return SubmitReceipt(context, event, self._round)

    def advance_round(self) -> RoundRoot:
        self._round += 1
        # seq counts arrivals per context, so one context's keys never
        # depend on traffic under another
        seqs: dict[Context, int] = defaultdict(int)
        for context, event in self._queue:
            ev = LedgerEvent(context, event, self._round, seqs[context])
            seqs[context] += 1
            self._published.append(ev)
            key = ev.key()
            self._by_key[key] = ev
            insort(self._leaves, TreeLeaf.for_event(ev), key=lambda leaf: leaf.key)
        if self._queue or self._tree_stale:
            self._levels = tree_levels(self._leaves)
            self._tree_stale = False
            self._stale_leaves = []
        self._queue.clear()
        self._submissions.clear()
        self._issued.pop(self.period_start(self._round) - self.period, None)
        root = RoundRoot(self._round, root_of(self._levels), self._roots[-1].digest())
        self._roots.append(root)
        return root

    def acquire_context(self, app_id: bytes) -> Context:
        """Issue a context carrying a fresh out-of-band code for this period."""
        start = self.period_start()
        in_use = {c for c, _ in self._queue}
        in_use.update(e.context for e in self._published if e.round >= start)
        in_use.update(self._issued[start])
        for _ in range(MAX_CODE_RETRIES):
            code = self.rng.randrange(self.code_space).to_bytes(self.code_bytes, "big")
            ctx = Context(app_id, (), code)
            if ctx not in in_use:
                self._issued[start].add(ctx)
                return ctx
        raise Exhausted(f"no unused code after {MAX_CODE_RETRIES} draws")

    def prune(self, before: int) -> int:
        """Erase events published before round ``before``; returns how many."""
        if before > 0 and before >= self._round - self.retention:
            raise RetentionViolation(
                f"cannot prune before round {before}: retention is {self.retention} rounds"
            )
        if before <= self._pruned_before:
            return 0
        keep = [e for e in self._published if e.round >= before]
        erased = len(self._published) - len(keep)
        self._published = keep
        self._by_key = {e.key(): e for e in keep}
        if not self._tree_stale:
            self._stale_leaves = self._leaves
        self._leaves = [TreeLeaf.for_event(e) for e in sorted(keep, key=LedgerEvent.key)]
        self._tree_stale = True
        self._pruned_before = before
        return erased

    # -- reads --------------------------------------------------------------

    def query(self, context: Context, start: int, end: int) -> QueryResult:
        """Events under ``context`` published in rounds ``start..end``.

        The proof is against the tree root of the current round, which is the
        last element of ``roots`` (the chain from ``start`` to now).
        """
        if not 0 <= start <= end <= self._round:
            raise InvalidWindow(f"bad window [{start}, {end}] at round {self._round}")
        if start < self._pruned_before:
            raise Pruned(f"rounds before {self._pruned_before} have been erased")
        lo, hi = context_key_range(context, start, end)
        leaves = self._tree_leaves()
        members, proof = prove_range_from_levels(leaves, self._levels, lo, hi)
        events = [self._event_for(leaf) for leaf in members]
        return QueryResult(events, proof, self._roots[start:])

    def _tree_leaves(self) -> list[TreeLeaf]:
        if not self._tree_stale:
            return self._leaves
        # Leaves as of the last round boundary; only used until the next advance.
        return self._stale_leaves

    def _event_for(self, leaf: TreeLeaf) -> LedgerEvent:
        ev = self._by_key.get(leaf.key)
        if ev is None:
            raise Pruned("event has been erased")
        return ev

    @property
    def roots(self) -> list[RoundRoot]:
        return list(self._roots)

    @property
    def published(self) -> tuple[LedgerEvent, ...]:
        return tuple(self._published)

    @property
    def pruned_before(self) -> int:
        return self._pruned_before

    def events_for(self, context: Context, start: int = 0, end: int | None = None) -> list[LedgerEvent]:
        """Ground-truth lookup used by the simulator; no proof."""
        end = self._round if end is None else end
        return [e for e in self._published if e.context == context and start <= e.round <= end]
