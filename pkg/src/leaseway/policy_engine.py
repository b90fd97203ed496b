"""Renewal and expiration conditions evaluated over an interaction log.

Every windowed predicate counts events in the half-open window
``(now - w, now]``, clipped so nothing before the lease's grant time counts.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Union

from .lease_core import Lease, LeaseState, NotActive, Principal


class PolicyError(Exception):
    pass


class ClockSkew(PolicyError):
    pass


class OutOfOrder(PolicyError):
    pass


class ConditionSchemaError(PolicyError, ValueError):
    pass


class ContactKind(str, enum.Enum):
    MESSAGE_SENT = "MessageSent"
    MESSAGE_DELIVERED = "MessageDelivered"
    CALL_RETURNED = "CallReturned"
    PROXIMITY_PING = "ProximityPing"


@dataclass(frozen=True)
class ContactEvent:
    t: int
    kind: ContactKind
    sender: Principal
    recipient: Principal
    lease_id: str | None = None

    def __post_init__(self):
        if self.sender == self.recipient:
            raise ValueError("contact event needs two distinct principals")


class InteractionLog:
    """Append-only, time-ordered contact history.

    Values are immutable: :func:`record_event` returns a new log.
    """

    __slots__ = ("_events", "_times")

    def __init__(self, events: Iterable[ContactEvent] = ()):
        self._events: tuple[ContactEvent, ...] = ()
        self._times: tuple[int, ...] = ()
        evs = tuple(events)
        for prev, cur in zip(evs, evs[1:]):
            if cur.t < prev.t:
                raise OutOfOrder(f"event at t={cur.t} follows t={prev.t}")
        self._events = evs
        self._times = tuple(e.t for e in evs)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[ContactEvent]:
        return iter(self._events)

    def __getitem__(self, i):
        return self._events[i]

    def between(self, lo: int, hi: int) -> tuple[ContactEvent, ...]:
        """Events with ``lo < t <= hi``."""
        start = bisect.bisect_right(self._times, lo)
        stop = bisect.bisect_right(self._times, hi)
        return self._events[start:stop]


def record_event(log: InteractionLog, e: ContactEvent) -> InteractionLog:
    if len(log) and e.t < log[-1].t:
        raise OutOfOrder(f"event at t={e.t} precedes last event at t={log[-1].t}")
    new = InteractionLog.__new__(InteractionLog)
    new._events = log._events + (e,)
    new._times = log._times + (e.t,)
    return new


def window_count(log: InteractionLog, kind: ContactKind | Iterable[ContactKind],
                 from_p: Principal, to_p: Principal, window: int, now: int,
                 since: int | None = None, either_direction: bool = False) -> int:
    """Count matching events with ``t`` in ``(now - window, now]`` and ``t >= since``."""
    if window <= 0:
        raise ValueError("window must be positive")
    kinds = {kind} if isinstance(kind, ContactKind) else set(kind)
    lo = now - window
    if since is not None and since - 1 > lo:
        lo = since - 1
    pairs = {(from_p, to_p)}
    if either_direction:
        pairs.add((to_p, from_p))
    return sum(1 for e in log.between(lo, now)
               if e.kind in kinds and (e.sender, e.recipient) in pairs)


class _Condition:
    def to_json(self) -> dict[str, Any]:
        return condition_to_json(self)


@dataclass(frozen=True)
class FixedTerm(_Condition):
    seconds: int
    id: str = "FixedTerm"


@dataclass(frozen=True)
class UnusedFor(_Condition):
    seconds: int
    id: str = "UnusedFor"


@dataclass(frozen=True)
class OverusedAbove(_Condition):
    count: int
    window: int
    id: str = "OverusedAbove"


@dataclass(frozen=True)
class UnreciprocatedCalls(_Condition):
    count: int
    window: int
    id: str = "UnreciprocatedCalls"


@dataclass(frozen=True)
class NoProximityFor(_Condition):
    seconds: int
    id: str = "NoProximityFor"


@dataclass(frozen=True)
class MutualContactAtLeast(_Condition):
    count: int
    window: int
    id: str = "MutualContactAtLeast"


@dataclass(frozen=True)
class AllOf(_Condition):
    conditions: tuple
    id: str = "All"


@dataclass(frozen=True)
class AnyOf(_Condition):
    conditions: tuple
    id: str = "Any"


Condition = Union[FixedTerm, UnusedFor, OverusedAbove, UnreciprocatedCalls,
                  NoProximityFor, MutualContactAtLeast, AllOf, AnyOf]

# Conditions that can only flip from false to true while the log stays silent.
SILENCE_MONOTONE = (FixedTerm, UnusedFor, NoProximityFor)

# Conditions whose truth depends on what the RC does (or fails to do).
RC_SENSITIVE = (UnusedFor, OverusedAbove, UnreciprocatedCalls, NoProximityFor,
                MutualContactAtLeast)

CONTACT_KINDS = (ContactKind.MESSAGE_SENT, ContactKind.CALL_RETURNED)
RETURN_KINDS = (ContactKind.MESSAGE_SENT, ContactKind.CALL_RETURNED)

_TYPE_NAMES = {
    FixedTerm: "FixedTerm",
    UnusedFor: "UnusedFor",
    OverusedAbove: "OverusedAbove",
    UnreciprocatedCalls: "UnreciprocatedCalls",
    NoProximityFor: "NoProximityFor",
    MutualContactAtLeast: "MutualContactAtLeast",
    AllOf: "All",
    AnyOf: "Any",
}
_BY_NAME = {v: k for k, v in _TYPE_NAMES.items()}


def _validate(c: Condition) -> None:
    match c:
        case FixedTerm(seconds=d) | UnusedFor(seconds=d) | NoProximityFor(seconds=d):
            if not isinstance(d, int) or d <= 0:
                raise ConditionSchemaError(f"{c.id}: seconds must be a positive integer")
        case OverusedAbove(count=n, window=w) | UnreciprocatedCalls(count=n, window=w) \
                | MutualContactAtLeast(count=n, window=w):
            if not isinstance(n, int) or n < 1:
                raise ConditionSchemaError(f"{c.id}: count must be >= 1")
            if not isinstance(w, int) or w <= 0:
                raise ConditionSchemaError(f"{c.id}: window must be a positive integer")
        case AllOf(conditions=cs) | AnyOf(conditions=cs):
            if not cs:
                raise ConditionSchemaError(f"{c.id}: combinator needs at least one condition")
            for sub in cs:
                _validate(sub)
        case _:
            raise ConditionSchemaError(f"not a condition: {c!r}")


def condition_to_json(c: Condition) -> dict[str, Any]:
    out: dict[str, Any] = {"type": _TYPE_NAMES[type(c)]}
    match c:
        case FixedTerm() | UnusedFor() | NoProximityFor():
            out["seconds"] = c.seconds
        case AllOf() | AnyOf():
            out["conditions"] = [condition_to_json(s) for s in c.conditions]
        case _:
            out["count"] = c.count
            out["window"] = c.window
    if c.id != out["type"]:
        out["id"] = c.id
    return out


def condition_from_json(doc: Any, path: str = "$") -> Condition:
    if not isinstance(doc, dict):
        raise ConditionSchemaError(f"{path}: condition must be an object")
    name = doc.get("type")
    cls = _BY_NAME.get(name) if isinstance(name, str) else None
    if cls is None:
        raise ConditionSchemaError(f"{path}.type: unknown condition type {name!r}")
    cid = doc.get("id", name)
    if not isinstance(cid, str) or not cid:
        raise ConditionSchemaError(f"{path}.id: must be a non-empty string")
    if cls in (FixedTerm, UnusedFor, NoProximityFor):
        cond = cls(_int_field(doc, "seconds", path), id=cid)
    elif cls in (AllOf, AnyOf):
        subs = doc.get("conditions")
        if not isinstance(subs, list) or not subs:
            raise ConditionSchemaError(f"{path}.conditions: must be a non-empty list")
        cond = cls(tuple(condition_from_json(s, f"{path}.conditions[{i}]")
                         for i, s in enumerate(subs)), id=cid)
    else:
        cond = cls(_int_field(doc, "count", path), _int_field(doc, "window", path), id=cid)
    try:
        _validate(cond)
    except ConditionSchemaError as exc:
        raise ConditionSchemaError(f"{path}: {exc}") from None
    return cond


def _int_field(doc: dict, key: str, path: str) -> int:
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConditionSchemaError(f"{path}.{key}: must be an integer")
    return value


def conditions_from_json(docs: Any, path: str = "$") -> tuple[Condition, ...]:
    if not isinstance(docs, list):
        raise ConditionSchemaError(f"{path}: must be a list of conditions")
    conds = tuple(condition_from_json(d, f"{path}[{i}]") for i, d in enumerate(docs))
    ids = [c.id for c in conds]
    if len(set(ids)) != len(ids):
        raise ConditionSchemaError(f"{path}: condition ids must be unique, got {ids}")
    return conds


def condition_ids(c: Condition) -> list[str]:
    """Every id in a condition tree, outermost first."""
    if isinstance(c, (AllOf, AnyOf)):
        return [c.id] + [i for s in c.conditions for i in condition_ids(s)]
    return [c.id]


def evaluate(c: Condition, log: InteractionLog, lease: Lease, now: int) -> bool:
    if lease.granted_at is None:
        raise NotActive(f"{lease.id} has never been granted")
    start = lease.granted_at
    if now < start:
        raise ClockSkew(f"now={now} is before grant time {start}")
    rm, rc = lease.rm, lease.rc
    elapsed = now - start
    match c:
        case FixedTerm(seconds=d):
            return elapsed >= d
        case UnusedFor(seconds=d):
            return elapsed >= d and window_count(
                log, ContactKind.MESSAGE_SENT, rc, rm, d, now, since=start) == 0
        case NoProximityFor(seconds=d):
            return elapsed >= d and window_count(
                log, ContactKind.PROXIMITY_PING, rc, rm, d, now, since=start,
                either_direction=True) == 0
        case OverusedAbove(count=n, window=w):
            return window_count(log, ContactKind.MESSAGE_SENT, rc, rm, w, now, since=start) > n
        case UnreciprocatedCalls(count=k, window=w):
            calls = window_count(log, ContactKind.MESSAGE_SENT, rc, rm, w, now, since=start)
            returns = window_count(log, RETURN_KINDS, rm, rc, w, now, since=start)
            return calls >= k and returns == 0
        case MutualContactAtLeast(count=n, window=w):
            return (window_count(log, CONTACT_KINDS, rc, rm, w, now, since=start) >= n
                    and window_count(log, CONTACT_KINDS, rm, rc, w, now, since=start) >= n)
        case AllOf(conditions=cs):
            return all(evaluate(s, log, lease, now) for s in cs)
        case AnyOf(conditions=cs):
            return any(evaluate(s, log, lease, now) for s in cs)
    raise ConditionSchemaError(f"not a condition: {c!r}")


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class Expire:
    cause: str


CONTINUE = Continue()
CheckOutcome = Union[Continue, Expire]


def check_lease(lease: Lease, log: InteractionLog, now: int) -> CheckOutcome:
    """Decide an Active lease's fate: any met renewal condition wins outright."""
    if lease.state is not LeaseState.ACTIVE:
        raise NotActive(f"{lease.id} is {lease.state.value}")
    if any(evaluate(c, log, lease, now) for c in lease.renewal_conditions):
        return CONTINUE
    for c in lease.expiration_conditions:
        if evaluate(c, log, lease, now):
            return Expire(c.id)
    return CONTINUE
