"""Scenario documents: validation and the in-memory :class:`Scenario`."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .ambiguity_model import AmbiguityError, WorldModel, world_from_json
from .lease_core import DEFAULT_POOL_CAPACITY
from .media_sim import (DEFAULT_LAPSE_THRESHOLD, MediumSchemaError, MediumSpec,
                        PresenceSchedule, builtin_media, override_media)
from .policy_engine import Condition, ConditionSchemaError, conditions_from_json

DEFAULT_TICK = 60
MAX_SEED = 2**64 - 1

EVENT_ARGS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    # kind: (required, optional)
    "ProposeLease": (("lease", "proposer"), ()),
    "AcceptLease": (("lease", "accepter"), ()),
    "Send": (("from", "to", "channel"), ("payload", "duration")),
    "ProximityPing": (("from", "to"), ()),
    "RmDecide": (("lease", "decision"), ("by", "new_rc", "new_lease")),
    "RcConfirmRenewal": (("lease",), ("by",)),
    "PresenceChange": (("principal", "present"), ()),
}
DECISIONS = ("Renew", "Reallocate", "LeaveUnassigned")

TOP_LEVEL = {"name", "description", "seed", "tick_seconds", "until", "principals", "pools",
             "media", "channels", "leases", "presence", "fact_model", "timeline", "transcript"}


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True)
class LeaseSpec:
    id: str
    rm: str
    rc: str
    renewal: tuple[Condition, ...] = ()
    expiration: tuple[Condition, ...] = ()
    channel: str | None = None


@dataclass(frozen=True)
class ChannelSpec:
    id: str
    medium: str
    parties: tuple[str, str]


@dataclass(frozen=True)
class ScriptedEvent:
    t: int
    kind: str
    args: dict[str, Any]


@dataclass(frozen=True)
class Transcript:
    medium: str
    threshold: float
    turns: tuple[tuple, ...]


@dataclass
class Scenario:
    name: str
    seed: int
    tick_seconds: int = DEFAULT_TICK
    until: int | None = None
    principals: tuple[str, ...] = ()
    pools: dict[str, int] = field(default_factory=dict)
    media: dict[str, MediumSpec] = field(default_factory=builtin_media)
    channels: dict[str, ChannelSpec] = field(default_factory=dict)
    leases: dict[str, LeaseSpec] = field(default_factory=dict)
    presence: dict[str, PresenceSchedule] = field(default_factory=dict)
    fact_model: WorldModel | None = None
    timeline: tuple[ScriptedEvent, ...] = ()
    transcript: Transcript | None = None
    document: dict[str, Any] = field(default_factory=dict)

    @property
    def end_time(self) -> int:
        if self.until is not None:
            return self.until
        last = self.timeline[-1].t if self.timeline else 0
        return last + self.tick_seconds


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise SchemaError(path, message)


def _known(value: Any, names) -> bool:
    """Membership test that tolerates unhashable junk."""
    return isinstance(value, str) and value in names


def _only_keys(doc: dict, allowed: set[str], path: str) -> None:
    for key in doc:
        _require(key in allowed, f"{path}.{key}", "unknown field")


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _str(doc: dict, key: str, path: str) -> str:
    v = doc.get(key)
    _require(isinstance(v, str) and bool(v), f"{path}.{key}", "must be a non-empty string")
    return v


def load_scenario(document: Any) -> Scenario:
    """Validate a parsed scenario document; the first violation raises :class:`SchemaError`."""
    _require(isinstance(document, dict), "$", "scenario must be a JSON object")
    for key in document:
        _require(key in TOP_LEVEL, f"$.{key}", "unknown field")
    name = _str(document, "name", "$")
    if "description" in document:
        _require(isinstance(document["description"], str), "$.description", "must be a string")

    seed = document.get("seed")
    _require(_is_int(seed) and 0 <= seed <= MAX_SEED, "$.seed", "must be an unsigned 64-bit integer")
    tick = document.get("tick_seconds", DEFAULT_TICK)
    _require(_is_int(tick) and tick > 0, "$.tick_seconds", "must be a positive integer")
    until = document.get("until")
    _require(until is None or (_is_int(until) and until >= 0), "$.until",
             "must be a non-negative integer")

    principals = document.get("principals")
    _require(isinstance(principals, list) and bool(principals), "$.principals",
             "must be a non-empty list")
    for i, p in enumerate(principals):
        _require(isinstance(p, str) and bool(p), f"$.principals[{i}]", "must be a non-empty string")
    _require(len(set(principals)) == len(principals), "$.principals", "ids must be unique")
    known = set(principals)

    def principal(value: Any, path: str) -> str:
        _require(isinstance(value, str) and value in known, path, f"undeclared principal {value!r}")
        return value

    pools: dict[str, int] = {}
    pools_doc = document.get("pools", [])
    _require(isinstance(pools_doc, list), "$.pools", "must be a list")
    for i, p in enumerate(pools_doc):
        path = f"$.pools[{i}]"
        _require(isinstance(p, dict), path, "must be an object")
        _only_keys(p, {"owner", "capacity"}, path)
        owner = principal(p.get("owner"), f"{path}.owner")
        _require(owner not in pools, f"{path}.owner", "pool declared twice")
        cap = p.get("capacity", DEFAULT_POOL_CAPACITY)
        _require(_is_int(cap) and cap >= 1, f"{path}.capacity", "must be a positive integer")
        pools[owner] = cap

    try:
        media = override_media(builtin_media(), document.get("media", []))
    except MediumSchemaError as exc:
        path, _, msg = str(exc).partition(": ")
        raise SchemaError(path, msg) from None

    channels: dict[str, ChannelSpec] = {}
    ch_doc = document.get("channels", [])
    _require(isinstance(ch_doc, list), "$.channels", "must be a list")
    for i, c in enumerate(ch_doc):
        path = f"$.channels[{i}]"
        _require(isinstance(c, dict), path, "must be an object")
        _only_keys(c, {"id", "medium", "parties"}, path)
        cid = _str(c, "id", path)
        _require(cid not in channels, f"{path}.id", "duplicate channel id")
        medium = c.get("medium")
        _require(_known(medium, media), f"{path}.medium", f"unknown medium {medium!r}")
        parties = c.get("parties")
        _require(isinstance(parties, list) and len(parties) == 2, f"{path}.parties",
                 "must list exactly two principals")
        a = principal(parties[0], f"{path}.parties[0]")
        b = principal(parties[1], f"{path}.parties[1]")
        _require(a != b, f"{path}.parties", "parties must differ")
        channels[cid] = ChannelSpec(cid, medium, (a, b))

    leases: dict[str, LeaseSpec] = {}
    leases_doc = document.get("leases", [])
    _require(isinstance(leases_doc, list), "$.leases", "must be a list")
    for i, spec in enumerate(leases_doc):
        path = f"$.leases[{i}]"
        _require(isinstance(spec, dict), path, "must be an object")
        _only_keys(spec, {"id", "rm", "rc", "channel", "renewal", "expiration"}, path)
        lid = _str(spec, "id", path)
        _require(lid not in leases, f"{path}.id", "duplicate lease id")
        rm = principal(spec.get("rm"), f"{path}.rm")
        rc = principal(spec.get("rc"), f"{path}.rc")
        _require(rm != rc, f"{path}.rc", "rm and rc must differ")
        try:
            renewal = conditions_from_json(spec.get("renewal", []), f"{path}.renewal")
            expiration = conditions_from_json(spec.get("expiration", []), f"{path}.expiration")
        except ConditionSchemaError as exc:
            p, _, msg = str(exc).partition(": ")
            raise SchemaError(p, msg) from None
        channel = spec.get("channel")
        if channel is not None:
            _require(_known(channel, channels), f"{path}.channel", f"unknown channel {channel!r}")
            _require(set(channels[channel].parties) == {rm, rc}, f"{path}.channel",
                     "channel parties must be the lease's rm and rc")
        leases[lid] = LeaseSpec(lid, rm, rc, renewal, expiration, channel)

    timeline = _load_timeline(document.get("timeline"), principal, leases, channels)
    presence = _load_presence(document.get("presence", {}), principal, timeline)

    fact_model = None
    if "fact_model" in document:
        try:
            fact_model = world_from_json(document["fact_model"], "$.fact_model")
        except AmbiguityError as exc:
            p, _, msg = str(exc).partition(": ")
            raise SchemaError(p if p.startswith("$") else "$.fact_model", msg or str(exc)) from None

    transcript = None
    if "transcript" in document:
        transcript = _load_transcript(document["transcript"], media, principal)

    return Scenario(name=name, seed=seed, tick_seconds=tick, until=until,
                    principals=tuple(principals), pools=pools, media=media, channels=channels,
                    leases=leases, presence=presence, fact_model=fact_model,
                    timeline=timeline, transcript=transcript, document=document)


def _load_timeline(doc: Any, principal, leases: dict[str, LeaseSpec],
                   channels: dict[str, ChannelSpec]) -> tuple[ScriptedEvent, ...]:
    _require(isinstance(doc, list), "$.timeline", "must be a list")
    events = []
    last_t = None
    lease_ids = set(leases)
    for i, ev in enumerate(doc):
        path = f"$.timeline[{i}]"
        _require(isinstance(ev, dict), path, "must be an object")
        t = ev.get("t")
        _require(_is_int(t) and t >= 0, f"{path}.t", "must be a non-negative integer")
        _require(last_t is None or t >= last_t, f"{path}.t", "timeline is not time-ordered")
        last_t = t
        kind = ev.get("kind")
        _require(_known(kind, EVENT_ARGS), f"{path}.kind", f"unknown event kind {kind!r}")
        required, optional = EVENT_ARGS[kind]
        for key in ev:
            _require(key in ("t", "kind") or key in required or key in optional,
                     f"{path}.{key}", f"unexpected field for {kind}")
        for key in required:
            _require(key in ev, f"{path}.{key}", "required")
        args = {k: v for k, v in ev.items() if k not in ("t", "kind")}
        if "lease" in args:
            _require(_known(args["lease"], lease_ids), f"{path}.lease", f"unknown lease {args['lease']!r}")
        for key in ("proposer", "accepter", "from", "to", "by", "new_rc", "principal"):
            if key in args:
                principal(args[key], f"{path}.{key}")
        if kind == "Send":
            ch = channels.get(args["channel"]) if _known(args["channel"], channels) else None
            _require(ch is not None, f"{path}.channel", f"unknown channel {args['channel']!r}")
            _require({args["from"], args["to"]} == set(ch.parties), f"{path}.to",
                     "sender and recipient must be the channel's parties")
            if "duration" in args:
                _require(_is_int(args["duration"]) and args["duration"] >= 0,
                         f"{path}.duration", "must be a non-negative integer")
        if kind == "ProximityPing":
            _require(args["from"] != args["to"], f"{path}.to", "must differ from 'from'")
        if kind == "PresenceChange":
            _require(isinstance(args["present"], bool), f"{path}.present", "must be a boolean")
        if kind == "RmDecide":
            _require(args["decision"] in DECISIONS, f"{path}.decision",
                     f"must be one of {list(DECISIONS)}")
            if args["decision"] == "Reallocate":
                _require("new_rc" in args, f"{path}.new_rc", "required for Reallocate")
                new_id = args.get("new_lease")
                if new_id is not None:
                    _require(isinstance(new_id, str) and new_id
                             and new_id not in lease_ids, f"{path}.new_lease",
                             "must be a fresh lease id")
                    lease_ids.add(new_id)
            else:
                for key in ("new_rc", "new_lease"):
                    _require(key not in args, f"{path}.{key}", "only valid for Reallocate")
        events.append(ScriptedEvent(t, kind, args))
    return tuple(events)


def _load_presence(doc: Any, principal, timeline) -> dict[str, PresenceSchedule]:
    _require(isinstance(doc, dict), "$.presence", "must be an object")
    out: dict[str, PresenceSchedule] = {}
    for who, intervals in doc.items():
        path = f"$.presence.{who}"
        principal(who, path)
        _require(isinstance(intervals, list), path, "must be a list of [start, end] pairs")
        pairs = []
        for j, iv in enumerate(intervals):
            _require(isinstance(iv, list) and len(iv) == 2 and _is_int(iv[0])
                     and (iv[1] is None or _is_int(iv[1])), f"{path}[{j}]",
                     "must be [start, end] with integer start and integer or null end")
            end = float("inf") if iv[1] is None else iv[1]
            _require(end > iv[0], f"{path}[{j}]", "end must be after start")
            pairs.append((iv[0], end))
        try:
            out[who] = PresenceSchedule(pairs)
        except ValueError as exc:
            raise SchemaError(path, str(exc)) from None
    changes: dict[str, list[ScriptedEvent]] = {}
    for ev in timeline:
        if ev.kind == "PresenceChange":
            changes.setdefault(ev.args["principal"], []).append(ev)
    for who, evs in changes.items():
        _require(who not in out, f"$.presence.{who}",
                 "give either a presence schedule or PresenceChange events, not both")
        # Present until told otherwise.
        pairs, start = [], float("-inf")
        for ev in evs:
            if ev.args["present"] and start is None:
                start = ev.t
            elif not ev.args["present"] and start is not None:
                if ev.t > start:
                    pairs.append((start, ev.t))
                start = None
        if start is not None:
            pairs.append((start, float("inf")))
        out[who] = PresenceSchedule(pairs)
    return out


def _load_transcript(doc: Any, media: dict[str, MediumSpec], principal) -> Transcript:
    path = "$.transcript"
    _require(isinstance(doc, dict), path, "must be an object")
    medium = doc.get("medium")
    _require(_known(medium, media), f"{path}.medium", f"unknown medium {medium!r}")
    threshold = doc.get("threshold", DEFAULT_LAPSE_THRESHOLD)
    _require(isinstance(threshold, (int, float)) and not isinstance(threshold, bool)
             and threshold >= 0, f"{path}.threshold", "must be a non-negative number")
    turns_doc = doc.get("turns")
    _require(isinstance(turns_doc, list), f"{path}.turns", "must be a list")
    turns, last = [], None
    for i, turn in enumerate(turns_doc):
        p = f"{path}.turns[{i}]"
        _require(isinstance(turn, dict), p, "must be an object")
        t = turn.get("t")
        _require(isinstance(t, (int, float)) and not isinstance(t, bool), f"{p}.t",
                 "must be a number")
        _require(last is None or t >= last, f"{p}.t", "turns are not time-ordered")
        last = t
        principal(turn.get("speaker"), f"{p}.speaker")
        text = turn.get("text", "")
        _require(isinstance(text, str), f"{p}.text", "must be a string")
        turns.append((t, turn["speaker"], text))
    return Transcript(medium, float(threshold), tuple(turns))


def load_scenario_file(path: str | Path) -> Scenario:
    """Read and validate a scenario file. Unreadable or malformed JSON is a :class:`SchemaError`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise SchemaError("$", f"cannot read {path}: {exc}") from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return load_scenario(document)


def bundled_path(name: str) -> Path:
    """Path of a bundled fixture such as ``excerpt2.json``."""
    return Path(str(resources.files("leaseway") / "scenarios" / name))


def bundled(name: str) -> Scenario:
    return load_scenario_file(bundled_path(name))
