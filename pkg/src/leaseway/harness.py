"""Deterministic discrete-event loop over leases, policies and media.

The loop owns all state. Scripted events, floor releases, queued
deliveries and policy ticks are merged in ``(t, phase, order)`` order, and
every observable step is appended to an :class:`EventLog`.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from . import __version__
from .ambiguity_model import (DENIED, AmbiguityDegree, LeaseDesign, ObserverKnowledge,
                              StaticRevocable, StaticUnrevocable, ambiguity_degree,
                              compare_designs, report_row, world_from_json)
from .lease_core import (LeaseError, LeaseLedger, LeaveUnassigned,
                         Reallocate, Renew)
from .media_sim import (Channel, Delivered, DeniedNoAccess, DroppedByNetwork,
                        FloorGrant, LostNotPresent, MediaError, Queued, lapse_monitor,
                        release_floor, request_floor, transmit)
from .policy_engine import (ContactEvent, ContactKind, Expire, InteractionLog, PolicyError,
                            check_lease, conditions_from_json, record_event)
from .scenario import LeaseSpec, Scenario, ScriptedEvent

LOG_VERSION = f"leaseway-log/1 ({__version__})"

# Phases at a single instant: floors free up and queued messages land before
# scripted actions, and policy checks see everything that happened at t.
_RELEASE, _DELIVER, _SCRIPT, _TICK = range(4)

DEFAULT_AUDIO_DURATION = 1

# Kinds an RC never sees in their own projection.
RC_HIDDEN_KINDS = frozenset({"RmDecide", "RmNotified", "LeaseExpired", "ProximityPing",
                             "Dropped", "Lost", "Queued", "FloorBusy", "Lapse"})


class NoObservation(Exception):
    pass


@dataclass
class EventLog:
    header: dict[str, Any]
    events: list[dict[str, Any]] = field(default_factory=list)

    def append(self, t: int, kind: str, **args: Any) -> dict[str, Any]:
        ev = {"t": t, "seq": len(self.events), "kind": kind, **args}
        self.events.append(ev)
        return ev

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, *kinds: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["kind"] in kinds]

    def dumps(self) -> str:
        lines = [json.dumps({"header": self.header}, ensure_ascii=False, separators=(",", ":"))]
        lines += [json.dumps(e, ensure_ascii=False, separators=(",", ":")) for e in self.events]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> EventLog:
        lines = [ln for ln in text.split("\n") if ln.strip()]
        if not lines:
            raise ValueError("empty event log")
        first = json.loads(lines[0])
        if not isinstance(first, dict) or "header" not in first:
            raise ValueError("event log must start with a header line")
        return cls(first["header"], [json.loads(ln) for ln in lines[1:]])

    @classmethod
    def read(cls, path: str | Path) -> EventLog:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _lease_spec_json(spec: LeaseSpec) -> dict[str, Any]:
    return {"id": spec.id, "rm": spec.rm, "rc": spec.rc,
            "renewal": [c.to_json() for c in spec.renewal],
            "expiration": [c.to_json() for c in spec.expiration],
            "channel": spec.channel}


class Simulation:
    def __init__(self, scenario: Scenario, key: bytes | None = None, seed: int | None = None):
        self.s = scenario
        self.seed = scenario.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.ledger = LeaseLedger() if key is None else LeaseLedger(key=key)
        for owner, cap in scenario.pools.items():
            self.ledger.add_pool(owner, cap)
        self.contacts = InteractionLog()
        self.wallet: dict[tuple[str, str], Any] = {}
        self.channels: dict[str, Channel] = {}
        gates: dict[str, set] = {cid: set() for cid in scenario.channels}
        for spec in scenario.leases.values():
            if spec.channel is not None:
                gates[spec.channel].add((spec.rc, spec.rm))
        for cid, cs in scenario.channels.items():
            self.channels[cid] = Channel(scenario.media[cs.medium], cs.parties,
                                         gated=frozenset(gates[cid]), id=cid)
        self.log = EventLog({
            "scenario": scenario.name,
            "seed": self.seed,
            "version": LOG_VERSION,
            "tick_seconds": scenario.tick_seconds,
            "pools": dict(scenario.pools),
            "leases": [_lease_spec_json(s) for s in scenario.leases.values()],
            "fact_model": scenario.document.get("fact_model"),
        })
        self._queue: list[tuple] = []
        self._order = 0
        self.now = 0

    def _push(self, t: float, phase: int, kind: str, args: dict) -> None:
        self._order += 1
        heapq.heappush(self._queue, (t, phase, self._order, kind, args))

    def run(self, until: int | None = None) -> EventLog:
        end = self.s.end_time if until is None else until
        for ev in self.s.timeline:
            self._push(ev.t, _SCRIPT, ev.kind, ev.args)
        if self.s.transcript is not None:
            self._replay_transcript()
        tick = self.s.tick_seconds
        self._push(0, _TICK, "Tick", {})
        while self._queue and self._queue[0][0] <= end:
            t, phase, _, kind, args = heapq.heappop(self._queue)
            self.now = t
            if phase == _TICK:
                self._tick(t)
                if t + tick <= end:
                    self._push(t + tick, _TICK, "Tick", {})
            elif phase == _RELEASE:
                release_floor(self.channels[args["channel"]], args["by"], t)
            elif phase == _DELIVER:
                self._deliver(t, args)
            else:
                self._script(ScriptedEvent(t, kind, args))
        return self.log

    # -- scripted events --------------------------------------------------

    def _script(self, ev: ScriptedEvent) -> None:
        handler = getattr(self, f"_on_{ev.kind}")
        try:
            handler(ev.t, ev.args)
        except (LeaseError, MediaError, PolicyError) as exc:
            by = ev.args.get("by") or ev.args.get("proposer") or ev.args.get("accepter") \
                or ev.args.get("from")
            self.log.append(ev.t, "Error", op=ev.kind, by=by, lease=ev.args.get("lease"),
                            error=type(exc).__name__, message=str(exc))

    def _on_ProposeLease(self, t: int, args: dict) -> None:
        spec = self.s.leases.get(args["lease"])
        if spec is None:
            raise LeaseError(f"lease {args['lease']} is not declared in the scenario")
        lease = self.ledger.propose_lease(args["proposer"], spec.rm, spec.rc,
                                          spec.renewal, spec.expiration, t, lease_id=spec.id)
        self.log.append(t, "ProposeLease", lease=lease.id, proposer=args["proposer"],
                        rm=lease.rm, rc=lease.rc,
                        renewal=[c.to_json() for c in lease.renewal_conditions],
                        expiration=[c.to_json() for c in lease.expiration_conditions])

    def _on_AcceptLease(self, t: int, args: dict) -> None:
        lease, token = self.ledger.accept_lease(args["lease"], args["accepter"], t)
        self.log.append(t, "AcceptLease", lease=lease.id, accepter=args["accepter"])
        if token is not None:
            self.wallet[(lease.rc, lease.rm)] = token

    def _on_RmDecide(self, t: int, args: dict) -> None:
        lease = self.ledger.get(args["lease"])
        by = args.get("by", lease.rm)
        name = args["decision"]
        if name == "Renew":
            decision = Renew()
        elif name == "Reallocate":
            decision = Reallocate(args["new_rc"], args.get("new_lease"))
        else:
            decision = LeaveUnassigned()
        outcome = self.ledger.rm_decide(lease.id, by, decision, t)
        extra = {}
        if outcome.new_lease is not None:
            extra = {"new_rc": outcome.new_lease.rc, "new_lease": outcome.new_lease.id}
        self.log.append(t, "RmDecide", lease=lease.id, by=by, decision=name, **extra)
        if name == "Renew":
            self.log.append(t, "RenewalOffered", lease=lease.id, rc=lease.rc)

    def _on_RcConfirmRenewal(self, t: int, args: dict) -> None:
        lease = self.ledger.get(args["lease"])
        by = args.get("by", lease.rc)
        lease, token = self.ledger.rc_confirm_renewal(lease.id, by, t)
        self.wallet[(lease.rc, lease.rm)] = token
        self.log.append(t, "RcConfirmRenewal", lease=lease.id, by=by, epoch=lease.epoch)

    def _on_ProximityPing(self, t: int, args: dict) -> None:
        self.contacts = record_event(self.contacts, ContactEvent(
            t, ContactKind.PROXIMITY_PING, args["from"], args["to"]))
        self.log.append(t, "ProximityPing", **{"from": args["from"], "to": args["to"]})

    def _on_PresenceChange(self, t: int, args: dict) -> None:
        # Schedules were folded in at load time; this only records the change.
        self.log.append(t, "PresenceChange", principal=args["principal"], present=args["present"])

    def _on_Send(self, t: int, args: dict) -> None:
        ch = self.channels[args["channel"]]
        sender, recipient = args["from"], args["to"]
        default = DEFAULT_AUDIO_DURATION if ch.medium.modality == "audio" else 0
        duration = args.get("duration", default)
        send = self.log.append(t, "Send", **{"from": sender, "to": recipient,
                                             "channel": ch.id, "payload": args.get("payload"),
                                             "duration": duration})
        ref = {"send": send["seq"], "from": sender, "to": recipient, "channel": ch.id}
        if ch.medium.half_duplex:
            if request_floor(ch, sender, t) is FloorGrant.FLOOR_BUSY:
                self.log.append(t, "FloorBusy", **ref)
                return
            self._push(t + duration, _RELEASE, "Release", {"channel": ch.id, "by": sender})
        token = self.wallet.get((sender, recipient))
        outcome = transmit(ch, sender, args.get("payload"), t, token, self.rng,
                           ledger=self.ledger, presence=self.s.presence.get(recipient))
        if isinstance(outcome, DeniedNoAccess):
            self.log.append(t, "Denied", **ref)
            return
        self.contacts = record_event(self.contacts, ContactEvent(
            t, ContactKind.MESSAGE_SENT, sender, recipient))
        if isinstance(outcome, DroppedByNetwork):
            self.log.append(t, "Dropped", **ref)
        elif isinstance(outcome, LostNotPresent):
            self.log.append(t, "Lost", **ref)
        elif isinstance(outcome, Queued):
            self.log.append(t, "Queued", **ref)
        elif isinstance(outcome, Delivered):
            if outcome.at > t:
                self.log.append(t, "Queued", **ref)
            self._push(outcome.at, _DELIVER, "Delivered",
                       {**ref, "sent_at": t, "payload": args.get("payload")})

    def _deliver(self, t: float, args: dict) -> None:
        self.log.append(t, "Delivered", **args)
        self.contacts = record_event(self.contacts, ContactEvent(
            t, ContactKind.MESSAGE_DELIVERED, args["from"], args["to"]))

    # -- policy ticks -------------------------------------------------------

    def _tick(self, t: int) -> None:
        for lease in self.ledger.active():
            outcome = check_lease(lease, self.contacts, t)
            if isinstance(outcome, Expire):
                lease, notice = self.ledger.expire_lease(lease.id, outcome.cause, t)
                self.log.append(t, "LeaseExpired", lease=lease.id, cause=outcome.cause)
                self.log.append(t, "RmNotified", lease=lease.id, rm=lease.rm, cause=notice.cause)

    def _replay_transcript(self) -> None:
        tr = self.s.transcript
        medium = self.s.media[tr.medium]
        for lapse in lapse_monitor(tr.turns, medium, tr.threshold):
            self._push(math.ceil(lapse.end), _SCRIPT, "Lapse", {
                "index": lapse.index, "start": lapse.start, "end": lapse.end,
                "gap": lapse.gap, "before": lapse.before, "after": lapse.after,
                "medium": medium.name, "low_pressure": lapse.low_pressure})

    def _on_Lapse(self, t: int, args: dict) -> None:
        self.log.append(t, "Lapse", **args)


def run(s: Scenario, key: bytes | None = None, seed: int | None = None,
        until: int | None = None) -> EventLog:
    """Run a scenario to completion. The same scenario and seed give the same log."""
    return Simulation(s, key=key, seed=seed).run(until)


# -- projections and replay ----------------------------------------------------

def rc_view(log: EventLog, rc: str) -> EventLog:
    """What ``rc`` could have observed: their own acts, deliveries to them, generic denials.

    Condition ids, RM decisions and RM notices never appear.
    """
    parties: dict[str, tuple[str, str]] = {}
    for spec in log.header.get("leases", []):
        parties[spec["id"]] = (spec["rm"], spec["rc"])
    out = EventLog({k: log.header[k] for k in ("scenario", "seed", "version") if k in log.header})
    for ev in log.events:
        kind = ev["kind"]
        if kind in RC_HIDDEN_KINDS:
            continue
        base = {"t": ev["t"], "seq": ev["seq"], "kind": kind}
        if kind == "ProposeLease":
            parties[ev["lease"]] = (ev["rm"], ev["rc"])
            if rc in (ev["rm"], ev["rc"]):
                out.events.append({**base, "lease": ev["lease"], "proposer": ev["proposer"],
                                   "rm": ev["rm"], "rc": ev["rc"]})
        elif kind == "AcceptLease":
            if rc in parties.get(ev["lease"], ()):
                out.events.append({**base, "lease": ev["lease"], "accepter": ev["accepter"]})
        elif kind == "Send":
            if ev["from"] == rc:
                out.events.append({**base, **{k: ev[k] for k in
                                              ("from", "to", "channel", "payload", "duration")}})
        elif kind == "Denied":
            if ev["from"] == rc:
                out.events.append({**base, "send": ev["send"], "to": ev["to"],
                                   "channel": ev["channel"]})
        elif kind == "Delivered":
            if ev["to"] == rc:
                out.events.append({**base, "from": ev["from"], "channel": ev["channel"],
                                   "payload": ev.get("payload")})
        elif kind == "RenewalOffered":
            if ev["rc"] == rc:
                out.events.append({**base, "lease": ev["lease"]})
        elif kind == "RcConfirmRenewal":
            if ev["by"] == rc:
                out.events.append({**base, "lease": ev["lease"], "by": rc})
        elif kind == "PresenceChange":
            if ev["principal"] == rc:
                out.events.append({**base, "principal": rc, "present": ev["present"]})
        elif kind == "Error":
            if ev.get("by") == rc:
                out.events.append({**base, "op": ev["op"]})
    return out


def replay(log: EventLog, key: bytes | None = None) -> LeaseLedger:
    """Rebuild the final lease ledger from a log's lease events alone."""
    ledger = LeaseLedger() if key is None else LeaseLedger(key=key)
    for owner, cap in log.header.get("pools", {}).items():
        ledger.add_pool(owner, cap)
    for ev in log.events:
        kind, t = ev["kind"], ev["t"]
        if kind == "ProposeLease":
            ledger.propose_lease(ev["proposer"], ev["rm"], ev["rc"],
                                 conditions_from_json(ev["renewal"]),
                                 conditions_from_json(ev["expiration"]), t, lease_id=ev["lease"])
        elif kind == "AcceptLease":
            ledger.accept_lease(ev["lease"], ev["accepter"], t)
        elif kind == "LeaseExpired":
            ledger.expire_lease(ev["lease"], ev["cause"], t)
        elif kind == "RmDecide":
            decision = {"Renew": Renew(), "LeaveUnassigned": LeaveUnassigned()}.get(ev["decision"])
            if decision is None:
                decision = Reallocate(ev["new_rc"], ev["new_lease"])
            ledger.rm_decide(ev["lease"], ev["by"], decision, t)
        elif kind == "RcConfirmRenewal":
            ledger.rc_confirm_renewal(ev["lease"], ev["by"], t)
    return ledger


def final_ledger(s: Scenario, seed: int | None = None, until: int | None = None,
                 key: bytes | None = None) -> tuple[EventLog, LeaseLedger]:
    sim = Simulation(s, key=key, seed=seed)
    log = sim.run(until)
    return log, sim.ledger


# -- ambiguity reports -----------------------------------------------------------

def _lease_design(log: EventLog, observer: str, rm: str) -> LeaseDesign:
    expiration: list = []
    renewal: list = []
    for ev in log.of_kind("ProposeLease"):
        if ev["rc"] == observer and ev["rm"] == rm:
            expiration = ev["expiration"]
            renewal = ev["renewal"]
    return LeaseDesign(conditions_from_json(expiration), conditions_from_json(renewal),
                       pooled=rm in log.header.get("pools", {}))


def report(log: EventLog, observer: str, at: float | None = None) -> dict[str, Any]:
    """Ambiguity report for the observer's most recent denial at or before ``at``."""
    view = rc_view(log, observer)
    denials = [e for e in view.of_kind("Denied") if at is None or e["t"] <= at]
    if not denials:
        raise NoObservation(f"{observer} observed no loss of access"
                            + ("" if at is None else f" by t={at}"))
    denial = denials[-1]
    fact_doc = log.header.get("fact_model")
    if fact_doc is None:
        raise NoObservation("log carries no fact model to explain the observation")
    world = world_from_json(fact_doc, "$.header.fact_model")
    design = _lease_design(log, observer, denial["to"])
    knowledge = ObserverKnowledge.derive(world, observer)
    degree = ambiguity_degree(DENIED, knowledge, design, world)
    row = report_row(design, DENIED, degree, observer)
    row["at"] = denial["t"]
    row["rm"] = denial["to"]
    return row


def scenario_designs(s: Scenario, rc: str) -> list:
    spec = next(sp for sp in s.leases.values() if sp.rc == rc)
    return [LeaseDesign(spec.expiration, spec.renewal, pooled=spec.rm in s.pools),
            StaticRevocable(), StaticUnrevocable()]


def scenario_observers(s: Scenario) -> list[str]:
    rcs = list(dict.fromkeys(sp.rc for sp in s.leases.values()))
    if s.fact_model is not None:
        authors = {f.author for f in s.fact_model.facts}
        with_facts = [r for r in rcs if r in authors]
        if with_facts:
            return with_facts
    return rcs


def compare_scenario(s: Scenario, observers: Iterable[str] | None = None) -> list[dict[str, Any]]:
    """Lease versus static designs for every observing RC, on the scenario's fact model."""
    rows = []
    for rc in (observers or scenario_observers(s)):
        k = (ObserverKnowledge.derive(s.fact_model, rc) if s.fact_model is not None
             else ObserverKnowledge(rc))
        rows += compare_designs(s.fact_model, scenario_designs(s, rc), [k])
    return rows


def degree_for(s: Scenario, rc: str, design) -> AmbiguityDegree:
    k = ObserverKnowledge.derive(s.fact_model, rc)
    return ambiguity_degree(DENIED, k, design, s.fact_model)

