"""Two-terminal pairing demo over a ledger reachable through a Unix socket.

The initiator's process hosts the ledger, a round timer and a tiny message
relay on ``--ledger PATH``; the responder (and optionally a spammer) connect
to the same path. Requests are JSON lines with hex-encoded bytes, served one
at a time under a lock, so both terminals see one consistent ledger.
"""

from __future__ import annotations

import json
import os
import queue
import random
import socket
import socketserver
import sys
import threading
import time
from collections import deque

from . import ledger as ledger_mod
from .ledger import Ledger, LedgerError
from .merkle import CompletenessProof
from .protocol import (
    Accepted,
    Confirm,
    PartyState,
    ProtocolParams,
    Recv,
    Role,
    StartPress,
    Until,
    run_protocol1,
)
from .records import Context, LedgerEvent, RoundRoot, SubmitReceipt

DEMO_APP_ID = b"plb-pair"
# Demo timing in rounds: generous so that humans can keep up.
DEMO_PARAMS = ProtocolParams(w=240, alpha=40, delta=20)
JOIN_TIMEOUT_S = 120.0


class SetupError(Exception):
    pass


# -- server ---------------------------------------------------------------


class _Hub:
    """Ledger plus per-role mailboxes; every method runs under ``lock``."""

    def __init__(self, ledger: Ledger):
        self.ledger = ledger
        self.lock = threading.Lock()
        self.mail = {role.value: deque() for role in Role}
        self.joined = threading.Event()
        self.finished = threading.Event()

    def handle(self, req: dict) -> dict:
        op = req.get("op")
        with self.lock:
            try:
                return self._dispatch(op, req)
            except LedgerError as exc:
                return {"error": type(exc).__name__, "message": str(exc)}
            except (KeyError, ValueError) as exc:
                return {"error": "BadRequest", "message": str(exc)}

    def _dispatch(self, op, req) -> dict:
        led = self.ledger
        if op == "time":
            return {"round": led.current_time()}
        if op == "join":
            self.joined.set()
            return {"round": led.current_time()}
        if op == "done":
            self.finished.set()
            return {}
        if op == "submit":
            receipt = led.submit(Context.decode(bytes.fromhex(req["context"])),
                                 bytes.fromhex(req["event"]), principal=req.get("principal", "anonymous"))
            return {"accepted_round": receipt.accepted_round}
        if op == "acquire":
            return {"context": led.acquire_context(bytes.fromhex(req["app_id"])).encode().hex()}
        if op == "query":
            res = led.query(Context.decode(bytes.fromhex(req["context"])), int(req["start"]), int(req["end"]))
            return {
                "events": [e.encode().hex() for e in res.events],
                "proof": res.proof.encode().hex(),
                "roots": [r.encode().hex() for r in res.roots],
            }
        if op == "send":
            self.mail[Role(req["to"]).value].append(req["data"])
            return {}
        if op == "recv":
            box = self.mail[Role(req["role"]).value]
            return {"data": box.popleft() if box else None}
        raise ValueError(f"unknown op {op!r}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            try:
                req = json.loads(line)
            except json.JSONDecodeError:
                reply = {"error": "BadRequest", "message": "not JSON"}
            else:
                reply = self.server.hub.handle(req)
            self.wfile.write(json.dumps(reply).encode() + b"\n")
            self.wfile.flush()


class _Server(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True


class LedgerHost:
    """Serves a fresh ledger on ``path`` and advances it every ``round_s`` seconds."""

    def __init__(self, path: str, round_s: float, seed: int | None = None):
        if os.path.exists(path):
            raise SetupError(f"{path} already exists; remove it or pick another --ledger path")
        rng = random.Random(seed) if seed is not None else random.SystemRandom()
        self.hub = _Hub(Ledger(rng=rng, period=DEMO_PARAMS.w))
        self.path = path
        self.round_s = round_s
        try:
            self.server = _Server(path, _Handler)
        except OSError as exc:
            raise SetupError(f"cannot listen on {path}: {exc}") from exc
        self.server.hub = self.hub
        self._stop = threading.Event()
        self._threads = [
            threading.Thread(target=self.server.serve_forever, daemon=True),
            threading.Thread(target=self._tick, daemon=True),
        ]

    def _tick(self):
        while not self._stop.wait(self.round_s):
            with self.hub.lock:
                self.hub.ledger.advance_round()

    def start(self) -> LedgerHost:
        for t in self._threads:
            t.start()
        return self

    def close(self):
        self._stop.set()
        self.server.shutdown()
        self.server.server_close()
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


# -- clients --------------------------------------------------------------


_ERRORS = {name: getattr(ledger_mod, name) for name in (
    "RateLimited", "LedgerUnavailable", "Exhausted", "InvalidWindow", "Pruned", "RetentionViolation")}


class RemoteLedger:
    """Ledger facade over the socket; duck-types the methods the protocols use."""

    def __init__(self, path: str):
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            self._sock.connect(path)
        except OSError as exc:
            raise SetupError(f"cannot reach ledger at {path}: {exc}") from exc
        self._file = self._sock.makefile("rwb")

    def call(self, op: str, **fields) -> dict:
        self._file.write(json.dumps({"op": op, **fields}).encode() + b"\n")
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise SetupError("ledger host went away")
        reply = json.loads(line)
        if "error" in reply:
            raise _ERRORS.get(reply["error"], LedgerError)(reply.get("message", reply["error"]))
        return reply

    def current_time(self) -> int:
        return self.call("time")["round"]

    def submit(self, context: Context, event: bytes, principal: str = "anonymous") -> SubmitReceipt:
        r = self.call("submit", context=context.encode().hex(), event=event.hex(), principal=principal)
        return SubmitReceipt(context, event, r["accepted_round"])

    def acquire_context(self, app_id: bytes) -> Context:
        return Context.decode(bytes.fromhex(self.call("acquire", app_id=app_id.hex())["context"]))

    def query(self, context: Context, start: int, end: int):
        r = self.call("query", context=context.encode().hex(), start=start, end=end)
        return ledger_mod.QueryResult(
            [LedgerEvent.decode(bytes.fromhex(e)) for e in r["events"]],
            CompletenessProof.decode(bytes.fromhex(r["proof"])),
            [RoundRoot.decode(bytes.fromhex(x)) for x in r["roots"]],
        )

    def close(self):
        self._file.close()
        self._sock.close()


class RelayPort:
    def __init__(self, remote: RemoteLedger, role: Role):
        self.remote = remote
        self.role = role

    def send(self, data: bytes) -> None:
        self.remote.call("send", to=self.role.peer.value, data=data.hex())

    def poll(self) -> bytes | None:
        data = self.remote.call("recv", role=self.role.value)["data"]
        return None if data is None else bytes.fromhex(data)


# -- terminal user ----------------------------------------------------------


class TerminalUser:
    def __init__(self, out, lines: queue.Queue):
        self.out = out
        self.lines = lines

    def say(self, text: str) -> None:
        print(text, file=self.out, flush=True)

    def display_context(self, role: Role, context: Context) -> None:
        code = context.code_text()
        self.say(f"context code: {code[:4]}-{code[4:]}")
        self.say("compare the code on both devices, then press Enter on each to start")

    def line(self, timeout: float | None) -> str | None:
        try:
            return self.lines.get(timeout=timeout)
        except queue.Empty:
            return None


def _stdin_lines(stream) -> queue.Queue:
    q: queue.Queue = queue.Queue()

    def pump():
        for line in stream:
            q.put(line.rstrip("\n"))
        q.put(None)

    threading.Thread(target=pump, daemon=True).start()
    return q


def drive(gen, remote: RemoteLedger, port: RelayPort, user: TerminalUser, round_s: float):
    """Run a party generator in real time against the remote ledger."""
    tick = max(round_s / 5, 0.01)
    value = None
    while True:
        try:
            wait = gen.send(value)
        except StopIteration as stop:
            return stop.value
        if isinstance(wait, Recv):
            while True:
                value = port.poll()
                if value is not None or (wait.deadline is not None and remote.current_time() > wait.deadline):
                    break
                time.sleep(tick)
        elif isinstance(wait, Until):
            while remote.current_time() < wait.round:
                time.sleep(tick)
            value = None
        elif isinstance(wait, StartPress):
            remaining = (wait.deadline - remote.current_time() + 1) * round_s if wait.deadline is not None else None
            value = user.line(remaining) is not None
        elif isinstance(wait, Confirm):
            user.say("did BOTH devices print ACCEPTED with the same fingerprint? [y/N]")
            answer = user.line(None)
            value = (answer or "").strip().lower() in ("y", "yes")
        else:
            raise TypeError(f"unexpected wait {wait!r}")


def run_pair(role: str, ledger_path: str, round_s: float = 0.25, stdin=None, out=None, seed: int | None = None) -> int:
    """Exit status: 0 accepted, 1 aborted, 2 setup error."""
    out = out or sys.stdout
    stdin = stdin or sys.stdin
    role = Role(role)
    host = None
    try:
        if role is Role.INITIATOR:
            host = LedgerHost(ledger_path, round_s, seed).start()
            print(f"ledger listening on {ledger_path}; waiting for the responder", file=out, flush=True)
        remote = RemoteLedger(ledger_path)
    except SetupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if host:
            host.close()
        return 2
    try:
        if role is Role.INITIATOR:
            if not host.hub.joined.wait(JOIN_TIMEOUT_S):
                print("error: no responder joined", file=sys.stderr)
                return 2
        else:
            remote.call("join")
        rng = random.Random(seed) if seed is not None else random.SystemRandom()
        party = PartyState(role=role, params=DEMO_PARAMS, rng=rng, app_id=DEMO_APP_ID)
        port = RelayPort(remote, role)
        user = TerminalUser(out, _stdin_lines(stdin))
        gen = run_protocol1(party, remote, port, user)
        # First the exchange up to the confirmation prompt, then the prompt itself.
        outcome = drive(_announce(gen, party, user), remote, port, user, round_s)
        if isinstance(outcome, Accepted):
            user.say("pairing confirmed")
            code = 0
        else:
            user.say(f"ABORTED({outcome.reason.value})")
            code = 1
        if role is Role.INITIATOR:
            # Keep hosting until the responder is done with its queries.
            host.hub.finished.wait(DEMO_PARAMS.alpha * round_s * 4)
        else:
            remote.call("done")
        return code
    except SetupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        remote.close()
        if host:
            host.close()


def _announce(gen, party: PartyState, user: TerminalUser):
    """Pass-through generator that prints the verdict before the confirmation prompt."""
    value = None
    while True:
        try:
            wait = gen.send(value)
        except StopIteration as stop:
            return stop.value
        if isinstance(wait, Confirm):
            user.say(f"ACCEPTED  fingerprint {_fp(party)}")
        value = yield wait


def _fp(party: PartyState) -> str:
    return Accepted(party.transcript.shared).fingerprint


def run_spammer(ledger_path: str, code: str, count: int = 1, out=None) -> int:
    """Submit ``count`` fake events under the demo app's context for ``code``."""
    out = out or sys.stdout
    try:
        ctx = Context(DEMO_APP_ID, (), Context.parse_code(code))
        remote = RemoteLedger(ledger_path)
    except (SetupError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        sent = 0
        for _ in range(count):
            try:
                remote.submit(ctx, os.urandom(32), principal="spammer")
                sent += 1
            except LedgerError as exc:
                print(f"submit refused: {exc}", file=out)
        print(f"submitted {sent} fake event(s) under code {ctx.code_text()}", file=out, flush=True)
        return 0
    finally:
        remote.close()
