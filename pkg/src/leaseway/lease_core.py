"""Lease lifecycle, capability tokens and fixed-capacity lease pools.

A lease grants one principal (the RC) access to contact another (the RM).
Leases are one-directional; two people who want to reach each other hold
two leases. All mutation goes through :class:`LeaseLedger`, which keeps
immutable :class:`Lease` values and replaces them on every transition.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import secrets
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

DEFAULT_POOL_CAPACITY = 5
TAG_BYTES = 16

Principal = str


class LeaseError(Exception):
    """Base class for rejected lease operations."""


class SelfLease(LeaseError):
    pass


class PoolExhausted(LeaseError):
    pass


class PoolViolation(LeaseError):
    pass


class NotAParty(LeaseError):
    pass


class AlreadyAccepted(LeaseError):
    pass


class NotProposed(LeaseError):
    pass


class NotActive(LeaseError):
    pass


class NotExpired(LeaseError):
    pass


class NotPending(LeaseError):
    pass


class NotRm(LeaseError):
    pass


class NotRc(LeaseError):
    pass


class UnknownLease(LeaseError):
    pass


class DuplicateLease(LeaseError):
    pass


class LeaseState(str, enum.Enum):
    PROPOSED = "Proposed"
    ACTIVE = "Active"
    EXPIRED = "Expired"
    RENEWAL_PENDING = "RenewalPending"
    REALLOCATED = "Reallocated"
    UNASSIGNED = "Unassigned"

    @property
    def holds_slot(self) -> bool:
        return self not in (LeaseState.REALLOCATED, LeaseState.UNASSIGNED)

    @property
    def terminal(self) -> bool:
        return self in (LeaseState.REALLOCATED, LeaseState.UNASSIGNED)


@dataclass(frozen=True)
class Lease:
    id: str
    rm: Principal
    rc: Principal
    state: LeaseState = LeaseState.PROPOSED
    cause: str | None = None
    epoch: int = 0
    granted_at: int | None = None
    renewal_conditions: tuple = ()
    expiration_conditions: tuple = ()
    rm_accepted: bool = False
    rc_accepted: bool = False
    slotted: bool = False

    @property
    def pool(self) -> Principal:
        return self.rm

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "rm": self.rm,
            "rc": self.rc,
            "pool": self.rm,
            "state": self.state.value,
            "cause": self.cause,
            "epoch": self.epoch,
            "granted_at": self.granted_at,
            "renewal_conditions": [c.to_json() for c in self.renewal_conditions],
            "expiration_conditions": [c.to_json() for c in self.expiration_conditions],
            "rm_accepted": self.rm_accepted,
            "rc_accepted": self.rc_accepted,
        }


@dataclass(frozen=True)
class LeasePool:
    owner: Principal
    capacity: int = DEFAULT_POOL_CAPACITY
    slots: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"pool capacity must be positive, got {self.capacity}")
        if len(self.slots) > self.capacity:
            raise PoolExhausted(f"{self.owner}: {len(self.slots)} slots > capacity {self.capacity}")

    def to_json(self) -> dict[str, Any]:
        return {"owner": self.owner, "capacity": self.capacity, "slots": sorted(self.slots)}


def pool_free(pool: LeasePool) -> int:
    return pool.capacity - len(pool.slots)


@dataclass(frozen=True)
class CapabilityToken:
    lease_id: str
    epoch: int
    tag: bytes


@dataclass(frozen=True)
class RmNotice:
    """Delivered to the RM only. Nothing RC-facing is ever derived from it."""

    lease_id: str
    rm: Principal
    cause: str
    issued_at: int


class AccessDecision(enum.Enum):
    PERMIT = "permit"
    DENY = "deny"

    @property
    def payload(self) -> bytes:
        # Deny carries no cause: expired, forged and stale tokens look the same.
        return b"PERMIT" if self is AccessDecision.PERMIT else b"DENY"


PERMIT = AccessDecision.PERMIT
DENY = AccessDecision.DENY


@dataclass(frozen=True)
class Renew:
    pass


@dataclass(frozen=True)
class Reallocate:
    new_rc: Principal
    new_lease_id: str | None = None


@dataclass(frozen=True)
class LeaveUnassigned:
    pass


RmDecision = Renew | Reallocate | LeaveUnassigned


@dataclass(frozen=True)
class DecisionOutcome:
    lease: Lease
    new_lease: Lease | None = None


def compute_tag(key: bytes, lease_id: str, rm: Principal, rc: Principal, epoch: int) -> bytes:
    message = json.dumps([lease_id, rm, rc, epoch], separators=(",", ":")).encode("utf-8")
    return hmac.new(key, message, hashlib.sha256).digest()[:TAG_BYTES]


def validate_token(token: CapabilityToken | None, leases: dict[str, Lease], key: bytes,
                   now: int | None = None) -> AccessDecision:
    """Permit iff the tag verifies and names the current epoch of an Active lease."""
    if token is None:
        return DENY
    lease = leases.get(token.lease_id)
    if lease is None:
        return DENY
    expected = compute_tag(key, lease.id, lease.rm, lease.rc, token.epoch)
    if not hmac.compare_digest(expected, token.tag):
        return DENY
    if lease.state is not LeaseState.ACTIVE or lease.epoch != token.epoch:
        return DENY
    return PERMIT


def _check_principal(p: Principal) -> None:
    if not isinstance(p, str) or not p:
        raise ValueError(f"principal id must be a non-empty string, got {p!r}")


@dataclass
class LeaseLedger:
    """Single-writer store of every lease, pool and RM notice in a simulation."""

    key: bytes = field(default_factory=lambda: secrets.token_bytes(32))
    default_capacity: int = DEFAULT_POOL_CAPACITY
    leases: dict[str, Lease] = field(default_factory=dict)
    pools: dict[Principal, LeasePool] = field(default_factory=dict)
    notices: list[RmNotice] = field(default_factory=list)
    _counter: int = 0

    def copy(self) -> LeaseLedger:
        return LeaseLedger(self.key, self.default_capacity, dict(self.leases),
                           dict(self.pools), list(self.notices), self._counter)

    def add_pool(self, owner: Principal, capacity: int = DEFAULT_POOL_CAPACITY) -> LeasePool:
        _check_principal(owner)
        pool = LeasePool(owner, capacity, self.pools[owner].slots if owner in self.pools else frozenset())
        self.pools[owner] = pool
        return pool

    def pool(self, owner: Principal) -> LeasePool:
        if owner not in self.pools:
            self.pools[owner] = LeasePool(owner, self.default_capacity)
        return self.pools[owner]

    def get(self, lease_id: str) -> Lease:
        try:
            return self.leases[lease_id]
        except KeyError:
            raise UnknownLease(lease_id) from None

    def mint(self, lease: Lease) -> CapabilityToken:
        return CapabilityToken(lease.id, lease.epoch,
                               compute_tag(self.key, lease.id, lease.rm, lease.rc, lease.epoch))

    def validate(self, token: CapabilityToken | None, now: int | None = None) -> AccessDecision:
        return validate_token(token, self.leases, self.key, now)

    def _new_id(self) -> str:
        self._counter += 1
        lease_id = f"L{self._counter}"
        while lease_id in self.leases:
            self._counter += 1
            lease_id = f"L{self._counter}"
        return lease_id

    def _take_slot(self, lease: Lease) -> None:
        pool = self.pool(lease.rm)
        if pool_free(pool) < 1:
            raise PoolExhausted(f"{lease.rm} has no free lease (capacity {pool.capacity})")
        self.pools[lease.rm] = replace(pool, slots=pool.slots | {lease.id})

    def _release_slot(self, lease: Lease) -> None:
        pool = self.pool(lease.rm)
        self.pools[lease.rm] = replace(pool, slots=pool.slots - {lease.id})

    def propose_lease(self, proposer: Principal, rm: Principal, rc: Principal,
                      renewal: Iterable = (), expiration: Iterable = (), now: int = 0,
                      lease_id: str | None = None) -> Lease:
        for p in (proposer, rm, rc):
            _check_principal(p)
        if rm == rc:
            raise SelfLease(f"{rm} cannot lease access to themselves")
        if proposer not in (rm, rc):
            raise NotAParty(f"{proposer} is neither RM nor RC")
        if lease_id is None:
            lease_id = self._new_id()
        elif lease_id in self.leases:
            raise DuplicateLease(lease_id)
        lease = Lease(lease_id, rm, rc, renewal_conditions=tuple(renewal),
                      expiration_conditions=tuple(expiration),
                      rm_accepted=proposer == rm, rc_accepted=proposer == rc)
        if lease.rm_accepted:
            self._take_slot(lease)
            lease = replace(lease, slotted=True)
        self.leases[lease.id] = lease
        return lease

    def accept_lease(self, lease_id: str, accepter: Principal,
                     now: int = 0) -> tuple[Lease, CapabilityToken | None]:
        """Record one party's acceptance; the token is minted once both have agreed."""
        lease = self.get(lease_id)
        if accepter not in (lease.rm, lease.rc):
            raise NotAParty(f"{accepter} is not a party to {lease_id}")
        if lease.state is not LeaseState.PROPOSED:
            if lease.state is LeaseState.ACTIVE:
                raise AlreadyAccepted(lease_id)
            raise NotProposed(f"{lease_id} is {lease.state.value}")
        if (lease.rm_accepted and accepter == lease.rm) or (lease.rc_accepted and accepter == lease.rc):
            raise AlreadyAccepted(f"{accepter} already accepted {lease_id}")
        if accepter == lease.rm:
            if not lease.slotted:
                self._take_slot(lease)
            lease = replace(lease, rm_accepted=True, slotted=True)
        else:
            lease = replace(lease, rc_accepted=True)
        token = None
        if lease.rm_accepted and lease.rc_accepted:
            lease = replace(lease, state=LeaseState.ACTIVE, epoch=0, granted_at=now)
            token = self.mint(lease)
        self.leases[lease.id] = lease
        return lease, token

    def expire_lease(self, lease_id: str, cause: str, now: int) -> tuple[Lease, RmNotice]:
        lease = self.get(lease_id)
        if lease.state is not LeaseState.ACTIVE:
            raise NotActive(f"{lease_id} is {lease.state.value}")
        lease = replace(lease, state=LeaseState.EXPIRED, cause=cause)
        notice = RmNotice(lease.id, lease.rm, cause, now)
        self.leases[lease.id] = lease
        self.notices.append(notice)
        return lease, notice

    def rm_decide(self, lease_id: str, caller: Principal, decision: RmDecision,
                  now: int = 0) -> DecisionOutcome:
        lease = self.get(lease_id)
        if caller != lease.rm:
            raise NotRm(f"{caller} is not the RM of {lease_id}")
        if lease.state is not LeaseState.EXPIRED:
            raise NotExpired(f"{lease_id} is {lease.state.value}")
        if isinstance(decision, Renew):
            lease = replace(lease, state=LeaseState.RENEWAL_PENDING)
            self.leases[lease.id] = lease
            return DecisionOutcome(lease)
        if isinstance(decision, Reallocate):
            _check_principal(decision.new_rc)
            if decision.new_rc == lease.rm:
                raise PoolViolation(f"{lease.rm} cannot reallocate a lease to themselves")
            new_id = decision.new_lease_id or self._new_id()
            if new_id in self.leases:
                raise DuplicateLease(new_id)
            # The new proposal inherits the slot, so pool occupancy is unchanged.
            new_lease = Lease(new_id, lease.rm, decision.new_rc,
                              renewal_conditions=lease.renewal_conditions,
                              expiration_conditions=lease.expiration_conditions,
                              rm_accepted=True, slotted=True)
            lease = replace(lease, state=LeaseState.REALLOCATED, slotted=False)
            pool = self.pool(lease.rm)
            self.pools[lease.rm] = replace(pool, slots=(pool.slots - {lease.id}) | {new_id})
            self.leases[lease.id] = lease
            self.leases[new_id] = new_lease
            return DecisionOutcome(lease, new_lease)
        if isinstance(decision, LeaveUnassigned):
            self._release_slot(lease)
            lease = replace(lease, state=LeaseState.UNASSIGNED, slotted=False)
            self.leases[lease.id] = lease
            return DecisionOutcome(lease)
        raise TypeError(f"unknown RM decision {decision!r}")

    def rc_confirm_renewal(self, lease_id: str, caller: Principal,
                           now: int) -> tuple[Lease, CapabilityToken]:
        lease = self.get(lease_id)
        if caller != lease.rc:
            raise NotRc(f"{caller} is not the RC of {lease_id}")
        if lease.state is not LeaseState.RENEWAL_PENDING:
            raise NotPending(f"{lease_id} is {lease.state.value}")
        # Renewal restarts every condition window from the new grant time.
        lease = replace(lease, state=LeaseState.ACTIVE, cause=None,
                        epoch=lease.epoch + 1, granted_at=now)
        self.leases[lease.id] = lease
        return lease, self.mint(lease)

    def active(self) -> list[Lease]:
        return [lease for lease in self.leases.values() if lease.state is LeaseState.ACTIVE]

    def to_json(self) -> dict[str, Any]:
        return {
            "leases": [self.leases[k].to_json() for k in sorted(self.leases)],
            "pools": [self.pools[k].to_json() for k in sorted(self.pools)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, indent=2) + "\n"
