"""Communication media: affordance registry, floor control and delivery.

Push-to-talk channels are half duplex: one holder of the floor at a time.
Non-reviewable media lose whatever arrives while the recipient is away;
reviewable media hold it until the recipient is next present.
"""

from __future__ import annotations

import bisect
import enum
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .lease_core import PERMIT, CapabilityToken, LeaseLedger, Principal

DEFAULT_DROP_PROB = 0.02
DEFAULT_LAPSE_THRESHOLD = 4.0


class MediaError(Exception):
    pass


class NotHalfDuplex(MediaError):
    pass


class NoFloor(MediaError):
    pass


class NotAChannelParty(MediaError):
    pass


class MediumSchemaError(MediaError, ValueError):
    pass


@dataclass(frozen=True)
class MediumSpec:
    name: str
    modality: str
    duplex: str
    leak_through: bool
    reviewable: bool
    mobile: bool
    reliable: bool = True
    drop_prob: float = 0.0
    network_delay: int = 0

    def __post_init__(self):
        if self.modality not in ("audio", "text"):
            raise MediumSchemaError(f"{self.name}: modality must be audio or text")
        if self.duplex not in ("full", "half"):
            raise MediumSchemaError(f"{self.name}: duplex must be full or half")
        if not 0.0 <= self.drop_prob < 1.0:
            raise MediumSchemaError(f"{self.name}: drop_prob must be in [0, 1)")
        if self.reliable and self.drop_prob:
            raise MediumSchemaError(f"{self.name}: reliable media cannot drop")
        if self.network_delay < 0:
            raise MediumSchemaError(f"{self.name}: network_delay must be >= 0")

    @property
    def half_duplex(self) -> bool:
        return self.duplex == "half"

    @property
    def low_pressure(self) -> bool:
        """True when a sender cannot read much into a lapse on this medium.

        Nothing leaks through to the sender, and the medium is not both
        persistent and always carried (a stored message on a handset the
        sender knows is in your pocket still demands an answer).
        """
        return not self.leak_through and not (self.reviewable and self.mobile)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "modality": self.modality,
            "duplex": self.duplex,
            "leak_through": self.leak_through,
            "reviewable": self.reviewable,
            "mobile": self.mobile,
            "reliable": self.reliable,
            "drop_prob": self.drop_prob,
            "network_delay": self.network_delay,
        }


def medium_from_json(doc: Any, path: str = "$", base: MediumSpec | None = None) -> MediumSpec:
    if not isinstance(doc, dict):
        raise MediumSchemaError(f"{path}: medium must be an object")
    known = set(MediumSpec.__dataclass_fields__)
    for key in doc:
        if key not in known:
            raise MediumSchemaError(f"{path}.{key}: unknown medium field")
    values = base.to_json() if base is not None else {}
    values.update(doc)
    if not isinstance(values.get("name"), str) or not values["name"]:
        raise MediumSchemaError(f"{path}.name: must be a non-empty string")
    for flag in ("leak_through", "reviewable", "mobile", "reliable"):
        if flag in values and not isinstance(values[flag], bool):
            raise MediumSchemaError(f"{path}.{flag}: must be a boolean")
    if "reliable" in doc and doc["reliable"] is False and "drop_prob" not in doc:
        values["drop_prob"] = DEFAULT_DROP_PROB
    if "reliable" in doc and doc["reliable"] is True:
        values["drop_prob"] = 0.0
    for key in ("drop_prob", "network_delay"):
        if key in values and (isinstance(values[key], bool)
                              or not isinstance(values[key], (int, float))):
            raise MediumSchemaError(f"{path}.{key}: must be a number")
    missing = [k for k in ("modality", "duplex", "leak_through", "reviewable", "mobile")
               if k not in values]
    if missing:
        raise MediumSchemaError(f"{path}.{missing[0]}: required")
    try:
        return MediumSpec(**values)
    except MediumSchemaError as exc:
        raise MediumSchemaError(f"{path}: {exc}") from None


def builtin_media() -> dict[str, MediumSpec]:
    """The four media compared in the responsiveness-factors table, in column order."""
    return {
        "m. phone": MediumSpec("m. phone", "audio", "full", leak_through=True,
                               reviewable=False, mobile=True),
        "SMS": MediumSpec("SMS", "text", "full", leak_through=False,
                          reviewable=True, mobile=True),
        "IM": MediumSpec("IM", "text", "full", leak_through=False,
                         reviewable=True, mobile=False),
        "c. radio": MediumSpec("c. radio", "audio", "half", leak_through=False,
                               reviewable=False, mobile=True, reliable=False,
                               drop_prob=DEFAULT_DROP_PROB),
    }


def media_row(m: MediumSpec) -> str:
    marks = [m.modality]
    if m.leak_through:
        marks.append("leak-through")
    if not m.reviewable:
        marks.append("not-reviewable")
    if m.mobile:
        marks.append("mobile")
    return f"{m.name}: {', '.join(marks)}"


class PresenceSchedule:
    """Sorted, disjoint ``[start, end)`` intervals during which a principal is within reach.

    A principal with no schedule is always present.
    """

    def __init__(self, intervals: Iterable[tuple[float, float]] = ()):
        ivs = sorted((a, b) for a, b in intervals)
        for a, b in ivs:
            if b <= a:
                raise ValueError(f"empty presence interval [{a}, {b})")
        for (a1, b1), (a2, _) in zip(ivs, ivs[1:]):
            if a2 < b1:
                raise ValueError(f"presence intervals overlap at {a2}")
        self.intervals = ivs
        self._starts = [a for a, _ in ivs]

    def present(self, t: float) -> bool:
        i = bisect.bisect_right(self._starts, t) - 1
        return i >= 0 and t < self.intervals[i][1]

    def next_start(self, t: float) -> float | None:
        """Earliest time >= t at which the principal is present."""
        if self.present(t):
            return t
        i = bisect.bisect_right(self._starts, t)
        return self.intervals[i][0] if i < len(self.intervals) else None

    def absent_intervals(self, horizon: float) -> list[tuple[float, float]]:
        out, cursor = [], float("-inf")
        for a, b in self.intervals:
            if a > cursor:
                out.append((cursor, a))
            cursor = b
        if cursor < horizon:
            out.append((cursor, float("inf")))
        return out


@dataclass(frozen=True)
class Free:
    pass


@dataclass(frozen=True)
class Held:
    by: Principal
    since: float


FloorState = Free | Held


class FloorGrant(enum.Enum):
    GRANTED = "Granted"
    FLOOR_BUSY = "FloorBusy"


@dataclass
class Channel:
    medium: MediumSpec
    parties: tuple[Principal, Principal]
    floor: FloorState = field(default_factory=Free)
    gated: frozenset[tuple[Principal, Principal]] = frozenset()
    live: bool = False
    ambient: dict[Principal, str] = field(default_factory=dict)
    id: str = ""

    def other(self, p: Principal) -> Principal:
        if p not in self.parties:
            raise NotAChannelParty(f"{p} is not on channel {self.id or self.parties}")
        return self.parties[1] if p == self.parties[0] else self.parties[0]


def request_floor(ch: Channel, sender: Principal, t: float) -> FloorGrant:
    if not ch.medium.half_duplex:
        raise NotHalfDuplex(f"{ch.medium.name} has no floor")
    ch.other(sender)
    if isinstance(ch.floor, Held):
        return FloorGrant.FLOOR_BUSY
    ch.floor = Held(sender, t)
    return FloorGrant.GRANTED


def release_floor(ch: Channel, sender: Principal, t: float) -> None:
    if isinstance(ch.floor, Held) and ch.floor.by == sender:
        ch.floor = Free()


@dataclass(frozen=True)
class Delivered:
    at: float


@dataclass(frozen=True)
class Queued:
    """Held for pickup on a reviewable medium; the recipient never returns in the schedule."""


@dataclass(frozen=True)
class DroppedByNetwork:
    pass


@dataclass(frozen=True)
class LostNotPresent:
    pass


@dataclass(frozen=True)
class DeniedNoAccess:
    pass


@dataclass(frozen=True)
class FloorBusy:
    pass


DeliveryOutcome = Delivered | Queued | DroppedByNetwork | LostNotPresent | DeniedNoAccess | FloorBusy


def transmit(ch: Channel, sender: Principal, payload: Any, t: float,
             token: CapabilityToken | None, rng: random.Random,
             ledger: LeaseLedger | None = None,
             presence: PresenceSchedule | None = None) -> DeliveryOutcome:
    """Push one payload through the channel.

    Gated directions check the token first; a denied payload is never
    enqueued. Randomness is drawn from ``rng`` only on unreliable media.
    """
    recipient = ch.other(sender)
    if ch.medium.half_duplex and not (isinstance(ch.floor, Held) and ch.floor.by == sender):
        raise NoFloor(f"{sender} does not hold the floor")
    if (sender, recipient) in ch.gated:
        if ledger is None or ledger.validate(token, t) is not PERMIT:
            return DeniedNoAccess()
    if ch.medium.drop_prob > 0 and rng.random() < ch.medium.drop_prob:
        return DroppedByNetwork()
    arrival = t + ch.medium.network_delay
    if presence is None or presence.present(arrival):
        return Delivered(arrival)
    if not ch.medium.reviewable:
        return LostNotPresent()
    pickup = presence.next_start(arrival)
    return Queued() if pickup is None else Delivered(pickup)


@dataclass(frozen=True)
class AmbientInfo:
    t: float
    activities: dict[Principal, str]


def leak_signal(ch: Channel, t: float) -> AmbientInfo | None:
    """What each end can overhear of the other's surroundings, if anything."""
    if not (ch.medium.leak_through and ch.live):
        return None
    return AmbientInfo(t, {p: ch.ambient.get(p, "background audible") for p in ch.parties})


@dataclass(frozen=True)
class LapseEvent:
    index: int
    start: float
    end: float
    gap: float
    before: Principal
    after: Principal
    low_pressure: bool


def lapse_monitor(transcript: Sequence[tuple], medium: MediumSpec,
                  threshold: float = DEFAULT_LAPSE_THRESHOLD) -> list[LapseEvent]:
    """Flag inter-turn gaps longer than ``threshold`` seconds.

    Transcript rows are ``(t, speaker, utterance)`` or ``(t, speaker, utterance, end)``;
    without an end time a turn is treated as instantaneous.
    """
    lapses = []
    for i, (prev, cur) in enumerate(zip(transcript, transcript[1:])):
        prev_end = prev[3] if len(prev) > 3 and prev[3] is not None else prev[0]
        if cur[0] < prev[0]:
            raise ValueError(f"transcript out of order at turn {i + 1}")
        gap = round(cur[0] - prev_end, 6)
        if gap > threshold:
            lapses.append(LapseEvent(i, prev_end, cur[0], gap, prev[1], cur[1],
                                     medium.low_pressure))
    return lapses


def override_media(registry: dict[str, MediumSpec], docs: Any,
                   path: str = "$.media") -> dict[str, MediumSpec]:
    if not isinstance(docs, list):
        raise MediumSchemaError(f"{path}: must be a list")
    out = dict(registry)
    for i, doc in enumerate(docs):
        name = doc.get("name") if isinstance(doc, dict) else None
        out[name] = medium_from_json(doc, f"{path}[{i}]", base=out.get(name))
    return out

