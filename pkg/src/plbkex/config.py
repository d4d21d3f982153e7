"""Scenario configuration and its flat ``key = value`` file format.

A scenario file is INI-style text::

    [scenario]
    variant = oob            ; oob | natural
    seed = 7
    runs = 100

    [params]
    w = 100
    alpha = 10
    delta = 2
    anchor_initiator_window = false

    [adversary]
    kind = mitm              ; none | mitm | impersonate | spam
    strategy = commit-both   ; mitm: commit-both | commit-one | commit-none
                             ; spam: known-context | guess
    timing = relay           ; mitm only: relay | early
    target = responder       ; impersonate only
    count = 1                ; spam only

    [clocks]
    offset_initiator = 0
    offset_responder = 0

    [user]
    behavior = honest        ; honest | inattentive
    error_rate = 1.0         ; probability an inattentive user confirms anyway
    reaction = 0             ; max extra rounds before the first start press

    [ledger]
    rate_cap = 8
    code_bytes = 4
    fail_submit_rounds = 3, 4   ; relative to the exchange's start round

    [context]
    app_id = plb-demo
    endpoints = alice, bob

Every section and key is optional.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from .protocol import ProtocolParams, Role, Variant

ADVERSARY_KINDS = ("none", "mitm", "impersonate", "spam")
MITM_STRATEGIES = ("commit-both", "commit-one", "commit-none")
MITM_TIMINGS = ("relay", "early")
SPAM_STRATEGIES = ("known-context", "guess")
USER_BEHAVIORS = ("honest", "inattentive")


class ConfigInvalid(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str = "none"
    strategy: str | None = None
    timing: str = "relay"
    target: Role = Role.RESPONDER
    count: int = 1

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ConfigInvalid(f"unknown adversary kind {self.kind!r}")
        strategy = self.strategy
        if self.kind == "mitm":
            strategy = strategy or "commit-both"
            if strategy not in MITM_STRATEGIES:
                raise ConfigInvalid(f"unknown mitm strategy {strategy!r}")
            if self.timing not in MITM_TIMINGS:
                raise ConfigInvalid(f"unknown mitm timing {self.timing!r}")
        elif self.kind == "spam":
            strategy = strategy or "known-context"
            if strategy not in SPAM_STRATEGIES:
                raise ConfigInvalid(f"unknown spam strategy {strategy!r}")
            if self.count < 0:
                raise ConfigInvalid("spam count must be >= 0")
        try:
            object.__setattr__(self, "target", Role(self.target))
        except ValueError as exc:
            raise ConfigInvalid(f"unknown target role {self.target!r}") from exc
        object.__setattr__(self, "strategy", strategy)

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "impersonate":
            return f"impersonate({self.target.value})"
        if self.kind == "spam":
            return f"spam({self.strategy},{self.count})"
        return f"mitm({self.strategy},{self.timing})"


@dataclass(frozen=True)
class ScenarioConfig:
    params: ProtocolParams = field(default_factory=ProtocolParams)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    seed: int = 0
    runs: int = 1
    clock_offset_initiator: int = 0
    clock_offset_responder: int = 0
    fail_submit_rounds: tuple[int, ...] = ()
    user_behavior: str = "honest"
    user_error_rate: float = 1.0
    user_reaction: int = 0
    rate_cap: int = 8
    code_bytes: int = 4
    app_id: bytes = b"plb-demo"
    endpoint_ids: tuple[bytes, bytes] = (b"alice", b"bob")

    def __post_init__(self):
        d = self.params.delta
        if self.runs < 1:
            raise ConfigInvalid("runs must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed must be an unsigned 64-bit integer")
        for name in ("clock_offset_initiator", "clock_offset_responder"):
            if abs(getattr(self, name)) > d:
                raise ConfigInvalid(f"{name} must lie within [-delta, +delta]")
        if self.user_behavior not in USER_BEHAVIORS:
            raise ConfigInvalid(f"unknown user behavior {self.user_behavior!r}")
        if not 0.0 <= self.user_error_rate <= 1.0:
            raise ConfigInvalid("user error_rate must be in [0, 1]")
        if self.user_reaction < 0 or self.rate_cap < 1 or not 1 <= self.code_bytes <= 16:
            raise ConfigInvalid("reaction, rate_cap or code_bytes out of range")
        if len(self.endpoint_ids) != 2:
            raise ConfigInvalid("exactly two endpoint identifiers are required")
        if self.variant is Variant.NATURAL and self.adversary.kind == "spam" and self.adversary.strategy == "guess":
            raise ConfigInvalid("guess spam only applies to out-of-band codes")

    @property
    def variant(self) -> Variant:
        return self.params.variant

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)


# section -> key -> (ScenarioConfig path, converter)
def _int(v: str) -> int:
    return int(v, 0)


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x, 0) for x in re.split(r"[,\s]+", v.strip()) if x)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


def _bytes(v: str) -> bytes:
    return v.strip().encode()


def _pair(v: str) -> tuple[bytes, ...]:
    return tuple(x.strip().encode() for x in v.split(",") if x.strip())


_SCHEMA = {
    "scenario": {"variant": ("variant", str), "seed": ("seed", _int), "runs": ("runs", _int)},
    "params": {
        "w": ("w", _int),
        "alpha": ("alpha", _int),
        "delta": ("delta", _int),
        "anchor_initiator_window": ("anchor_initiator_window", _bool),
    },
    "adversary": {
        "kind": ("adv.kind", str),
        "strategy": ("adv.strategy", str),
        "timing": ("adv.timing", str),
        "target": ("adv.target", str),
        "count": ("adv.count", _int),
    },
    "clocks": {
        "offset_initiator": ("clock_offset_initiator", _int),
        "offset_responder": ("clock_offset_responder", _int),
    },
    "user": {
        "behavior": ("user_behavior", str),
        "error_rate": ("user_error_rate", float),
        "reaction": ("user_reaction", _int),
    },
    "ledger": {
        "rate_cap": ("rate_cap", _int),
        "code_bytes": ("code_bytes", _int),
        "fail_submit_rounds": ("fail_submit_rounds", _ints),
    },
    "context": {"app_id": ("app_id", _bytes), "endpoints": ("endpoint_ids", _pair)},
}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return n
    return None


def parse_scenario(text: str, overrides: dict | None = None) -> ScenarioConfig:
    """Parse scenario text; ``overrides`` maps ``seed``/``runs`` to replacement values."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigInvalid(f"cannot parse {exc.errors[0][1].strip()!r}", line) from exc
    except configparser.Error as exc:
        raise ConfigInvalid(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc

    values: dict[str, object] = {}
    for section in cp.sections():
        sec = section.lower()
        if sec not in _SCHEMA:
            line = next((n for n, t in enumerate(text.splitlines(), 1) if t.strip() == f"[{section}]"), None)
            raise ConfigInvalid(f"unknown section [{section}]", line)
        for key, raw in cp.items(section):
            entry = _SCHEMA[sec].get(key)
            line = _line_of(text, sec, key)
            if entry is None:
                raise ConfigInvalid(f"unknown key {key!r} in [{section}]", line)
            name, conv = entry
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigInvalid(f"bad value for {key!r}: {raw!r}", line) from exc
    values.update(overrides or {})

    def locate(message: str) -> int | None:
        for sec, keys in _SCHEMA.items():
            for key, (name, _) in keys.items():
                if name.split(".")[-1] in message or key in message:
                    n = _line_of(text, sec, key)
                    if n:
                        return n
        return None

    try:
        params = ProtocolParams(
            w=values.pop("w", 100),
            alpha=values.pop("alpha", 10),
            delta=values.pop("delta", 2),
            variant=values.pop("variant", "oob"),
            anchor_initiator_window=values.pop("anchor_initiator_window", False),
        )
    except ValueError as exc:
        msg = str(exc)
        key = "delta" if "delta" in msg else "alpha"
        raise ConfigInvalid(msg, _line_of(text, "params", key) or _line_of(text, "params", "w")) from exc
    adv = {k.split(".", 1)[1]: values.pop(k) for k in list(values) if k.startswith("adv.")}
    try:
        return ScenarioConfig(params=params, adversary=AdversaryConfig(**adv), **values)
    except ConfigInvalid as exc:
        if exc.line is None:
            raise ConfigInvalid(str(exc), locate(str(exc))) from exc
        raise


def load_scenario(path, overrides: dict | None = None) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), overrides)
