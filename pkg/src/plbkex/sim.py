"""Deterministic round-based simulator for adversarial key-exchange runs.

One round is one message hop: a frame sent in round ``r`` is delivered at
the start of round ``r + 1``, and the ledger advances once at the end of
every round. Each run owns its ledger, parties and RNG streams, all derived
from ``H(seed || run index)``, so a run is a pure function of its config.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field

from .config import ConfigInvalid, ScenarioConfig
from .ledger import Ledger, LedgerError
from .protocol import (
    Accepted,
    Aborted,
    Confirm,
    PartyState,
    Phase,
    Recv,
    Role,
    StartPress,
    Transcript,
    Until,
    Variant,
    derive_event_digest,
    ka_derive,
    ka_keygen,
    may_start,
    run_protocol1,
    run_protocol2,
)
from .records import Context, H, u64
from .wire import (
    MSG_COMMIT_OK,
    MSG_CONTEXT,
    MSG_KEY_EXCHANGE,
    ChannelError,
    SecureChannel,
    frame,
    parse_frame,
)

ADVERSARY_PRINCIPAL = "adversary"
SPAMMER_PRINCIPAL = "spammer"


def run_seed(seed: int, index: int) -> int:
    return int.from_bytes(H(u64(seed), u64(index))[:8], "big")


def _stream(seed: int, label: str) -> random.Random:
    return random.Random(int.from_bytes(H(u64(seed), label.encode()), "big"))


# -- reports ----------------------------------------------------------------

REPORT_FIELDS = (
    "variant", "seed", "run", "outcome_initiator", "outcome_responder",
    "abort_reason_initiator", "abort_reason_responder", "phase_initiator", "phase_responder",
    "keys_equal", "events_in_window", "impersonation_undetected", "user_failure",
    "accepted_with_attacker", "window_ok", "rounds_elapsed", "adversary", "adversary_log",
)


@dataclass
class RunReport:
    variant: str
    seed: int
    run: int
    outcome_initiator: str
    outcome_responder: str
    abort_reason_initiator: str | None
    abort_reason_responder: str | None
    phase_initiator: str | None
    phase_responder: str | None
    keys_equal: bool | None
    events_in_window: int | None
    impersonation_undetected: bool
    user_failure: bool
    accepted_with_attacker: list[str]
    window_ok: bool | None
    rounds_elapsed: int
    adversary: str
    adversary_log: list[dict] = field(default_factory=list)

    @property
    def both_accepted(self) -> bool:
        return self.outcome_initiator == "Accepted" and self.outcome_responder == "Accepted"

    @property
    def soundness_violation(self) -> bool:
        return self.both_accepted and self.keys_equal is False

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in REPORT_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


# -- simulated user ---------------------------------------------------------


class SimUser:
    """Presses start and confirms on the two devices the user holds.

    Presses land on the round the last device shows its code (plus up to
    ``reaction`` rounds), the two presses at most ``delta`` rounds apart.
    An inattentive user confirms with probability ``error_rate`` whatever
    the devices show.
    """

    def __init__(self, rng: random.Random, delta: int, behavior: str = "honest",
                 error_rate: float = 1.0, reaction: int = 0):
        self.rng = rng
        self.delta = delta
        self.behavior = behavior
        self.error_rate = error_rate
        self.reaction = reaction
        self.displayed: dict[Role, tuple[int, Context]] = {}
        self.press_at: dict[Role, int] = {}
        self.scheduled = False
        self.confirmed: bool | None = None
        self.failure = False
        self.on_display = None
        self._clock = None

    def display_context(self, role: Role, context: Context) -> None:
        self.displayed[role] = (self._clock(), context)
        if self.on_display is not None:
            self.on_display(role, context)

    def _careless(self) -> bool:
        return self.behavior == "inattentive" and self.rng.random() < self.error_rate

    def schedule(self, live: list[Role]) -> None:
        if self.scheduled or not live or any(r not in self.displayed for r in live):
            return
        self.scheduled = True
        contexts = {self.displayed[r][1] for r in live}
        if len(contexts) > 1 and not self._careless():
            return
        base = max(self.displayed[r][0] for r in live) + self.rng.randint(0, self.reaction)
        order = list(live)
        self.rng.shuffle(order)
        self.press_at[order[0]] = base
        if len(order) > 1:
            self.press_at[order[1]] = base + self.rng.randint(0, self.delta)

    def confirm_both_sides(self, ready: dict[Role, bool]) -> bool:
        """``ready`` maps each device to whether it reports success."""
        truth = all(ready.get(r, False) for r in Role)
        verdict = truth or self._careless()
        self.confirmed = verdict
        self.failure = verdict and not truth
        return verdict


class _NullUser:
    def display_context(self, role, context):
        pass


# -- adversaries ------------------------------------------------------------


class Adversary:
    label = "none"

    def __init__(self, world: Exchange, cfg, rng: random.Random):
        self.world = world
        self.cfg = cfg
        self.rng = rng
        self.log: list[dict] = []

    def intercept(self, src: Role, data: bytes) -> list[tuple[Role, bytes]]:
        return [(src.peer, data)]

    def on_round(self) -> None:
        pass

    def on_display(self, role: Role, context: Context) -> None:
        pass

    def shared_secrets(self) -> set[bytes]:
        return set()

    def record(self, action: str, **fields) -> None:
        self.log.append({"round": self.world.ledger.current_time(), "action": action, **fields})

    def submit(self, context: Context, digest: bytes, principal: str, what: str) -> bool:
        try:
            self.world.ledger.submit(context, digest, principal=principal)
        except LedgerError as exc:
            self.record("submit", event=what, result=type(exc).__name__)
            return False
        self.record("submit", event=what, result="ok")
        return True


class MitM(Adversary):
    """Runs one key exchange with each honest party and relays between them.

    ``relay`` timing commits when the initiator's commit notice passes
    through; ``early`` commits as soon as the context is known and forges a
    commit notice to the responder right away.
    """

    def __init__(self, world, cfg, rng):
        super().__init__(world, cfg, rng)
        self.label = cfg.label
        self.initiator_pub = None
        self.toward_responder = None  # key pair M uses with the responder
        self.toward_initiator = None
        self.side_i: SecureChannel | None = None
        self.side_r: SecureChannel | None = None
        self.transcript_i: Transcript | None = None
        self.transcript_r: Transcript | None = None
        self.context = world.natural_context
        self.committed = False

    def shared_secrets(self):
        return {t.shared for t in (self.transcript_i, self.transcript_r) if t}

    def _commit(self, trigger: str) -> None:
        if self.committed or self.context is None or self.transcript_r is None:
            return
        self.committed = True
        self.record("commit", strategy=self.cfg.strategy, trigger=trigger)
        if self.cfg.strategy == "commit-both":
            self.submit(self.context, derive_event_digest(self.transcript_i), ADVERSARY_PRINCIPAL, "E(initiator<->M)")
        if self.cfg.strategy in ("commit-both", "commit-one"):
            self.submit(self.context, derive_event_digest(self.transcript_r), ADVERSARY_PRINCIPAL, "E(M<->responder)")

    def _early(self) -> list[tuple[Role, bytes]]:
        if self.cfg.timing != "early" or self.committed or self.context is None or self.side_r is None:
            return []
        self._commit("early")
        if not self.committed:
            return []
        accepted = self.world.ledger.current_time()
        self.record("forge_commit_ok", toward="responder")
        return [(Role.RESPONDER, self.side_r.seal(MSG_COMMIT_OK, u64(accepted)))]

    def intercept(self, src, data):
        try:
            kind, body = parse_frame(data)
        except ChannelError:
            return []
        if kind == MSG_KEY_EXCHANGE:
            if src is Role.INITIATOR:
                self.initiator_pub = body
                self.toward_responder = ka_keygen(self.rng)
                self.record("substitute_key", toward="responder")
                return [(Role.RESPONDER, frame(MSG_KEY_EXCHANGE, self.toward_responder.public))]
            if self.initiator_pub is None:
                return []
            self.toward_initiator = ka_keygen(self.rng)
            try:
                sk_i = ka_derive(self.toward_initiator.private, self.initiator_pub)
                sk_r = ka_derive(self.toward_responder.private, body)
            except ValueError:
                return []
            self.transcript_i = Transcript(self.initiator_pub, self.toward_initiator.public, sk_i)
            self.transcript_r = Transcript(self.toward_responder.public, body, sk_r)
            self.side_i = SecureChannel.for_role(sk_i, initiator=False)
            self.side_r = SecureChannel.for_role(sk_r, initiator=True)
            self.record("substitute_key", toward="initiator")
            out = [(Role.INITIATOR, frame(MSG_KEY_EXCHANGE, self.toward_initiator.public))]
            return out + self._early()
        if self.side_i is None:
            return []
        src_side, dst_side = (self.side_i, self.side_r) if src is Role.INITIATOR else (self.side_r, self.side_i)
        try:
            plain = src_side.open(kind, body)
        except ChannelError:
            return []
        out = []
        if src is Role.INITIATOR and kind == MSG_CONTEXT:
            self.context = Context.decode(plain)
            self.record("read_context")
            out.append((Role.RESPONDER, dst_side.seal(kind, plain)))
            return out + self._early()
        if src is Role.INITIATOR and kind == MSG_COMMIT_OK:
            self._commit("relay")
            if self.cfg.timing == "early":
                return []
        return [(src.peer, dst_side.seal(kind, plain))]


class Impersonator(Adversary):
    """Suppresses the real target device and runs the protocol in its place."""

    def __init__(self, world, cfg, rng):
        super().__init__(world, cfg, rng)
        self.label = cfg.label
        self.party: PartyState | None = None

    def shared_secrets(self):
        if self.party is not None and self.party.transcript is not None:
            return {self.party.transcript.shared}
        return set()


class Spammer(Adversary):
    """Floods the ledger with fake events under a known or guessed context."""

    def __init__(self, world, cfg, rng):
        super().__init__(world, cfg, rng)
        self.label = cfg.label
        self.fired = False
        self.hits = 0

    def _fake(self) -> bytes:
        return self.rng.randbytes(32)

    def _known(self, context: Context) -> None:
        self.fired = True
        for i in range(self.cfg.count):
            self.submit(context, self._fake(), SPAMMER_PRINCIPAL, f"fake#{i}")

    def _guess(self, target: Context) -> None:
        self.fired = True
        ledger = self.world.ledger
        accepted = limited = 0
        for _ in range(self.cfg.count):
            code = self.rng.randrange(ledger.code_space).to_bytes(ledger.code_bytes, "big")
            if code == target.oob_code:
                self.hits += 1
            try:
                ledger.submit(Context(target.app_id, (), code), self._fake(), principal=SPAMMER_PRINCIPAL)
                accepted += 1
            except LedgerError:
                limited += 1
        self.record("guess", guesses=self.cfg.count, hits=self.hits, accepted=accepted, rate_limited=limited,
                    code_space=ledger.code_space)

    def on_round(self):
        if not self.fired and self.world.natural_context is not None:
            self._known(self.world.natural_context)

    def on_display(self, role, context):
        if self.fired:
            return
        if self.cfg.strategy == "guess":
            self._guess(context)
        else:
            self._known(context)


ADVERSARIES = {"none": Adversary, "mitm": MitM, "impersonate": Impersonator, "spam": Spammer}


# -- driver -----------------------------------------------------------------


@dataclass
class _Runner:
    party: PartyState
    gen: object
    attacker: bool = False
    wait: object = None
    done: bool = False
    inbox: deque = field(default_factory=deque)

    def resume(self, value) -> None:
        try:
            self.wait = self.gen.send(value)
        except StopIteration:
            self.wait = None
            self.done = True


class _Port:
    def __init__(self, exchange: Exchange, role: Role):
        self.exchange = exchange
        self.role = role

    def send(self, data: bytes) -> None:
        self.exchange.transmit(self.role, data)


class Simulation:
    """One simulated world: a ledger shared by one or more successive exchanges."""

    def __init__(self, config: ScenarioConfig, index: int = 0):
        self.config = config
        self.index = index
        self.seed = run_seed(config.seed, index)
        p = config.params
        self.ledger = Ledger(
            rng=_stream(self.seed, "ledger"),
            period=p.w,
            rate_cap=config.rate_cap,
            code_bytes=config.code_bytes,
        )
        self.rngs = {label: _stream(self.seed, label)
                     for label in ("initiator", "responder", "user", "adversary", "schedule")}
        self.exchanges = 0

    def advance_to(self, target: int) -> None:
        while self.ledger.current_time() < target:
            self.ledger.advance_round()

    def pick_start(self) -> int:
        """First-come start round for a natural-context exchange that both gates accept."""
        cfg = self.config
        p = cfg.params
        now = self.ledger.current_time()
        base = p.w * (now // p.w)
        for t0 in (base, base + p.w):
            valid = [r for r in range(max(t0, now), t0 + p.w)
                     if may_start(r + cfg.clock_offset_initiator, p)
                     and may_start(r + 1 + cfg.clock_offset_responder, p)]
            if valid:
                return self.rngs["schedule"].choice(valid)
        raise ConfigInvalid("no start round satisfies both timing gates")

    def exchange(self, start_round: int | None = None) -> RunReport:
        cfg = self.config
        if start_round is None:
            start_round = self.pick_start() if cfg.variant is Variant.NATURAL else self.ledger.current_time()
        self.advance_to(start_round)
        ex = Exchange(self, start_round)
        report = ex.run()
        self.exchanges += 1
        return report


class Exchange:
    """A single key exchange between two devices, possibly under attack."""

    def __init__(self, sim: Simulation, start_round: int):
        self.sim = sim
        cfg = self.cfg = sim.config
        self.ledger = sim.ledger
        self.start_round = start_round
        self.ledger.fail_submit_rounds = frozenset(start_round + r for r in cfg.fail_submit_rounds)
        self.natural_context = (
            Context.natural(cfg.app_id, *cfg.endpoint_ids) if cfg.variant is Variant.NATURAL else None
        )
        self.in_flight: list[tuple[int, Role, bytes]] = []
        self.user = SimUser(sim.rngs["user"], cfg.params.delta, cfg.user_behavior,
                            cfg.user_error_rate, cfg.user_reaction)
        self.user._clock = self.ledger.current_time
        self.adversary = ADVERSARIES[cfg.adversary.kind](self, cfg.adversary, sim.rngs["adversary"])
        self.user.on_display = self.adversary.on_display
        self.runners: dict[Role, _Runner] = {}
        self.honest: dict[Role, PartyState] = {}
        for role in Role:
            attacker = isinstance(self.adversary, Impersonator) and role is cfg.adversary.target
            rng = sim.rngs["adversary"] if attacker else sim.rngs[role.value]
            offset = 0
            if cfg.variant is Variant.NATURAL and not attacker:
                offset = cfg.clock_offset_initiator if role is Role.INITIATOR else cfg.clock_offset_responder
            party = PartyState(role=role, params=cfg.params, rng=rng, app_id=cfg.app_id,
                               principal=ADVERSARY_PRINCIPAL if attacker else role.value,
                               clock_offset=offset, context=self.natural_context)
            port = _Port(self, role)
            if cfg.variant is Variant.OOB:
                gen = run_protocol1(party, self.ledger, port, _NullUser() if attacker else self.user)
            else:
                gen = run_protocol2(party, self.ledger, port)
            self.runners[role] = _Runner(party, gen, attacker=attacker)
            if attacker:
                self.adversary.party = party
                self.adversary.record("impersonate", target=role.value)
            else:
                self.honest[role] = party

    # network
    def transmit(self, src: Role, data: bytes) -> None:
        due = self.ledger.current_time() + 1
        for dst, out in self.adversary.intercept(src, data):
            self.in_flight.append((due, dst, out))

    def _deliver(self, now: int) -> None:
        keep = []
        for due, dst, data in self.in_flight:
            if due <= now:
                self.runners[dst].inbox.append(data)
            else:
                keep.append((due, dst, data))
        self.in_flight = keep

    def _ready(self, runner: _Runner):
        """Value to resume ``runner`` with, or ``_BLOCKED``."""
        w = runner.wait
        now = self.ledger.current_time()
        if isinstance(w, Recv):
            if runner.inbox:
                return runner.inbox.popleft()
            if w.deadline is not None and now + runner.party.clock_offset > w.deadline:
                return None
        elif isinstance(w, Until):
            if now >= w.round:
                return None
        elif isinstance(w, StartPress):
            if runner.attacker:
                return True
            at = self.user.press_at.get(runner.party.role)
            if at is not None and at <= now:
                return True
            if w.deadline is not None and now > w.deadline:
                return False
        elif isinstance(w, Confirm):
            if runner.attacker:
                return True
        return _BLOCKED

    def _step(self) -> None:
        progress = True
        while progress:
            progress = False
            for runner in self.runners.values():
                while not runner.done:
                    value = self._ready(runner)
                    if value is _BLOCKED:
                        break
                    runner.resume(value)
                    progress = True
            live = [r for r, run in self.runners.items() if not run.attacker]
            self.user.schedule(live)
            if self.cfg.variant is Variant.OOB and self._confirm_pending():
                progress = True

    def _confirm_pending(self) -> bool:
        honest = [run for run in self.runners.values() if not run.attacker]
        if not any(isinstance(run.wait, Confirm) for run in honest):
            return False
        if not all(run.done or isinstance(run.wait, Confirm) for run in honest):
            return False
        ready = {run.party.role: isinstance(run.wait, Confirm) for run in honest}
        verdict = self.user.confirm_both_sides(ready)
        for run in honest:
            if isinstance(run.wait, Confirm):
                run.resume(verdict)
        return True

    def run(self) -> RunReport:
        limit = self.start_round + 3 * self.cfg.params.w
        for runner in self.runners.values():
            runner.resume(None)
        while True:
            now = self.ledger.current_time()
            self._deliver(now)
            self.adversary.on_round()
            self._step()
            if all(r.done for r in self.runners.values()) or now >= limit:
                break
            self.ledger.advance_round()
        return self._report()

    # reporting
    def _report(self) -> RunReport:
        cfg = self.cfg
        outcomes, reasons, phases = {}, {}, {}
        for role in Role:
            party = self.honest.get(role)
            if party is None:
                outcomes[role], reasons[role], phases[role] = "NotRun", None, None
                continue
            out = party.outcome
            if isinstance(out, Accepted):
                outcomes[role], reasons[role] = "Accepted", None
            elif isinstance(out, Aborted):
                outcomes[role], reasons[role] = "Aborted", out.reason.value
            else:
                outcomes[role], reasons[role] = "Unfinished", None
            phases[role] = (party.abort_phase or party.phase).value

        accepted = {r: p.outcome.shared for r, p in self.honest.items() if isinstance(p.outcome, Accepted)}
        keys_equal = None
        if len(accepted) == 2:
            keys_equal = accepted[Role.INITIATOR] == accepted[Role.RESPONDER]
        attacker_keys = self.adversary.shared_secrets()
        with_attacker = [r.value for r, k in accepted.items() if k in attacker_keys]

        queried = [p for p in self.honest.values() if p.query_window is not None]
        events_in_window = None
        if queried:
            last = max(queried, key=lambda p: (p.query_window[1], p.role is Role.RESPONDER))
            events_in_window = len(self.ledger.events_for(last.context, *last.query_window))

        window_ok = None
        init = self.honest.get(Role.INITIATOR)
        if init is not None and init.publication_round is not None and queried:
            pub = init.publication_round
            window_ok = all(p.query_window[0] <= pub <= p.query_window[1] for p in queried)

        impersonation = isinstance(self.adversary, Impersonator)
        return RunReport(
            variant=cfg.variant.value,
            seed=cfg.seed,
            run=self.sim.index,
            outcome_initiator=outcomes[Role.INITIATOR],
            outcome_responder=outcomes[Role.RESPONDER],
            abort_reason_initiator=reasons[Role.INITIATOR],
            abort_reason_responder=reasons[Role.RESPONDER],
            phase_initiator=phases[Role.INITIATOR],
            phase_responder=phases[Role.RESPONDER],
            keys_equal=keys_equal,
            events_in_window=events_in_window,
            impersonation_undetected=impersonation and bool(with_attacker),
            user_failure=self.user.failure,
            accepted_with_attacker=with_attacker,
            window_ok=window_ok,
            rounds_elapsed=self.ledger.current_time() - self.start_round,
            adversary=self.adversary.label,
            adversary_log=list(self.adversary.log),
        )


_BLOCKED = object()


def simulate_run(config: ScenarioConfig, index: int) -> RunReport:
    return Simulation(config, index).exchange()


def run_scenario(config: ScenarioConfig) -> list[RunReport]:
    if not isinstance(config, ScenarioConfig):
        raise ConfigInvalid("expected a ScenarioConfig")
    return [simulate_run(config, i) for i in range(config.runs)]


def summarize(reports) -> dict:
    """Tallies used by the CLI summary."""
    out = {"runs": 0, "both_accepted": 0, "soundness_violations": 0,
           "impersonation_undetected": 0, "user_failures": 0, "aborts": {}}
    for r in reports:
        out["runs"] += 1
        out["both_accepted"] += r.both_accepted
        out["soundness_violations"] += r.soundness_violation
        out["impersonation_undetected"] += r.impersonation_undetected
        out["user_failures"] += r.user_failure
        for role, reason in (("initiator", r.abort_reason_initiator), ("responder", r.abort_reason_responder)):
            if reason:
                key = f"{role}:{reason}"
                out["aborts"][key] = out["aborts"].get(key, 0) + 1
    out["aborts"] = dict(sorted(out["aborts"].items()))
    return out
