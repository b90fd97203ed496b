import json
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DAY, KEY
from leaseway.lease_core import (DENY, PERMIT, AccessDecision, AlreadyAccepted, CapabilityToken,
                                 DuplicateLease, LeaseError, LeaseLedger, LeasePool, LeaseState,
                                 LeaveUnassigned, NotAParty, NotExpired, NotPending, NotProposed,
                                 NotRc, NotRm, PoolExhausted, PoolViolation, Reallocate, Renew,
                                 SelfLease, UnknownLease, compute_tag, pool_free, validate_token)
from leaseway.policy_engine import UnusedFor

import model_check


# -- lifecycle -------------------------------------------------------------------

def test_proposal_needs_both_parties(ledger):
    lease = ledger.propose_lease("rm", "rm", "rc", now=0, lease_id="L")
    assert lease.state is LeaseState.PROPOSED
    assert lease.rm_accepted and not lease.rc_accepted
    lease, token = ledger.accept_lease("L", "rc", 5)
    assert lease.state is LeaseState.ACTIVE
    assert lease.epoch == 0 and lease.granted_at == 5
    assert ledger.validate(token) is PERMIT


def test_one_acceptance_mints_nothing(ledger):
    ledger.propose_lease("rc", "rm", "rc", now=0, lease_id="L")
    assert ledger.leases["L"].state is LeaseState.PROPOSED
    assert ledger.pool("rm").slots == frozenset()  # RC interest alone holds no slot


def test_self_lease_and_outsiders_rejected(ledger):
    with pytest.raises(SelfLease):
        ledger.propose_lease("rm", "rm", "rm")
    with pytest.raises(NotAParty):
        ledger.propose_lease("eve", "rm", "rc")
    ledger.propose_lease("rm", "rm", "rc", lease_id="L")
    with pytest.raises(NotAParty):
        ledger.accept_lease("L", "eve")
    with pytest.raises(AlreadyAccepted):
        ledger.accept_lease("L", "rm")


def test_duplicate_and_unknown_ids(ledger):
    ledger.propose_lease("rm", "rm", "rc", lease_id="L")
    with pytest.raises(DuplicateLease):
        ledger.propose_lease("rm", "rm", "x", lease_id="L")
    with pytest.raises(UnknownLease):
        ledger.accept_lease("nope", "rm")


def test_accept_after_activation(active, ledger):
    with pytest.raises(AlreadyAccepted):
        ledger.accept_lease("L", "rc")


def test_expiry_notifies_rm_only(active, ledger):
    lease, notice = ledger.expire_lease("L", "UnusedFor", DAY)
    assert lease.state is LeaseState.EXPIRED and lease.cause == "UnusedFor"
    assert notice.rm == "rm" and notice.cause == "UnusedFor" and notice.issued_at == DAY
    assert ledger.notices == [notice]


def test_expired_token_denied(active, ledger):
    _, token = active
    ledger.expire_lease("L", "UnusedFor", DAY)
    assert ledger.validate(token) is DENY


def test_renewal_takes_both_parties(active, ledger):
    _, old = active
    ledger.expire_lease("L", "UnusedFor", DAY)
    with pytest.raises(NotRm):
        ledger.rm_decide("L", "rc", Renew())
    with pytest.raises(NotPending):
        ledger.rc_confirm_renewal("L", "rc", DAY)
    out = ledger.rm_decide("L", "rm", Renew(), DAY)
    assert out.lease.state is LeaseState.RENEWAL_PENDING
    with pytest.raises(NotRc):
        ledger.rc_confirm_renewal("L", "rm", DAY)
    lease, new = ledger.rc_confirm_renewal("L", "rc", DAY + 10)
    assert lease.state is LeaseState.ACTIVE
    assert lease.epoch == 1 and lease.granted_at == DAY + 10 and lease.cause is None
    assert ledger.validate(new) is PERMIT
    assert ledger.validate(old) is DENY  # stale epoch


def test_decisions_need_expired_lease(active, ledger):
    with pytest.raises(NotExpired):
        ledger.rm_decide("L", "rm", Renew())
    with pytest.raises(NotExpired):
        ledger.rm_decide("L", "rm", LeaveUnassigned())


def test_reallocate_hands_slot_to_new_rc(active, ledger):
    ledger.expire_lease("L", "UnusedFor", DAY)
    out = ledger.rm_decide("L", "rm", Reallocate("other", "L2"), DAY)
    assert out.lease.state is LeaseState.REALLOCATED
    assert out.new_lease.id == "L2" and out.new_lease.rc == "other"
    assert out.new_lease.state is LeaseState.PROPOSED and out.new_lease.rm_accepted
    assert ledger.pool("rm").slots == frozenset({"L2"})
    lease, token = ledger.accept_lease("L2", "other", DAY + 1)
    assert lease.state is LeaseState.ACTIVE and ledger.validate(token) is PERMIT
    with pytest.raises(NotProposed):
        ledger.accept_lease("L", "rc")


def test_reallocate_to_self_rejected(active, ledger):
    ledger.expire_lease("L", "UnusedFor", DAY)
    with pytest.raises(PoolViolation):
        ledger.rm_decide("L", "rm", Reallocate("rm"))


def test_leave_unassigned_frees_slot(active, ledger):
    ledger.expire_lease("L", "UnusedFor", DAY)
    assert pool_free(ledger.pool("rm")) == 1
    ledger.rm_decide("L", "rm", LeaveUnassigned(), DAY)
    assert ledger.leases["L"].state is LeaseState.UNASSIGNED
    assert pool_free(ledger.pool("rm")) == 2


def test_pool_capacity(ledger):
    ledger.propose_lease("rm", "rm", "a", lease_id="A")
    ledger.propose_lease("rm", "rm", "b", lease_id="B")
    with pytest.raises(PoolExhausted):
        ledger.propose_lease("rm", "rm", "c", lease_id="C")
    # RC proposals wait without a slot and fail only when the RM accepts.
    ledger.propose_lease("c", "rm", "c", lease_id="C")
    with pytest.raises(PoolExhausted):
        ledger.accept_lease("C", "rm")
    assert ledger.leases["C"].state is LeaseState.PROPOSED


def test_pool_rejects_overfull_construction():
    with pytest.raises(PoolExhausted):
        LeasePool("rm", 1, frozenset({"a", "b"}))
    with pytest.raises(ValueError):
        LeasePool("rm", 0)


def test_default_pool_capacity_is_five():
    led = LeaseLedger(key=KEY)
    for i in range(5):
        led.propose_lease("rm", "rm", f"p{i}")
    with pytest.raises(PoolExhausted):
        led.propose_lease("rm", "rm", "p5")


# -- tokens ------------------------------------------------------------------------

def test_tag_shape_and_binding():
    tag = compute_tag(KEY, "L", "rm", "rc", 0)
    assert len(tag) == 16
    assert tag != compute_tag(KEY, "L", "rm", "rc", 1)
    assert tag != compute_tag(KEY, "L", "rc", "rm", 0)
    assert tag != compute_tag(bytes(32), "L", "rm", "rc", 0)


def test_deny_is_generic(active, ledger):
    _, token = active
    forged = CapabilityToken("L", 0, bytes(16))
    unknown = CapabilityToken("nope", 0, token.tag)
    verdicts = {validate_token(t, ledger.leases, KEY) for t in (forged, unknown, None)}
    assert verdicts == {DENY}
    assert DENY.payload == b"DENY"
    assert set(AccessDecision) == {PERMIT, DENY}


def test_token_for_other_key_denied(active, ledger):
    _, token = active
    other = LeaseLedger(key=os.urandom(32), leases=dict(ledger.leases))
    assert other.validate(token) is DENY


def test_random_forgeries_never_permit(active, ledger):
    rng = random.Random(7)
    for _ in range(20_000):
        tok = CapabilityToken("L", rng.randrange(3), rng.randbytes(16))
        assert ledger.validate(tok) is DENY


# -- serialization -------------------------------------------------------------------

def test_ledger_json_is_sorted_and_stable(ledger):
    ledger.propose_lease("rm", "rm", "b", lease_id="B")
    ledger.propose_lease("rm", "rm", "a", (), (UnusedFor(DAY),), lease_id="A")
    doc = json.loads(ledger.dumps())
    assert [d["id"] for d in doc["leases"]] == ["A", "B"]
    assert list(doc["leases"][0]) == ["id", "rm", "rc", "pool", "state", "cause", "epoch",
                                      "granted_at", "renewal_conditions",
                                      "expiration_conditions", "rm_accepted", "rc_accepted"]
    assert doc["leases"][0]["expiration_conditions"] == [{"type": "UnusedFor", "seconds": DAY}]
    assert doc["pools"] == [{"owner": "rm", "capacity": 2, "slots": ["A", "B"]}]
    assert ledger.dumps() == ledger.copy().dumps()


# -- properties --------------------------------------------------------------------------

ops = st.lists(st.tuples(st.sampled_from(["propose-rm", "propose-rc", "accept", "expire",
                                          "renew", "confirm", "realloc", "leave"]),
                         st.integers(0, 5), st.sampled_from(["a", "b", "c"])),
               max_size=40)


@settings(max_examples=200, deadline=None)
@given(ops)
def test_random_histories_keep_invariants(script):
    led = LeaseLedger(key=KEY)
    led.add_pool("rm", 2)
    tokens = []
    for i, (op, n, who) in enumerate(script):
        ids = sorted(led.leases)
        lid = ids[n % len(ids)] if ids else "none"
        lease = led.leases.get(lid)
        try:
            if op == "propose-rm":
                led.propose_lease("rm", "rm", who, now=i)
            elif op == "propose-rc":
                led.propose_lease(who, "rm", who, now=i)
            elif op == "accept" and lease:
                _, tok = led.accept_lease(lid, lease.rc if lease.rm_accepted else "rm", i)
                if tok:
                    tokens.append(tok)
            elif op == "expire":
                led.expire_lease(lid, "UnusedFor", i)
            elif op == "renew":
                led.rm_decide(lid, "rm", Renew(), i)
            elif op == "confirm" and lease:
                tokens.append(led.rc_confirm_renewal(lid, lease.rc, i)[1])
            elif op == "realloc":
                led.rm_decide(lid, "rm", Reallocate(who), i)
            elif op == "leave":
                led.rm_decide(lid, "rm", LeaveUnassigned(), i)
        except Exception as exc:
            assert isinstance(exc, LeaseError), exc
        pool = led.pool("rm")
        assert len(pool.slots) <= pool.capacity
        assert pool.slots == {k for k, v in led.leases.items() if v.slotted}
        for tok in tokens:
            cur = led.leases[tok.lease_id]
            ok = cur.state is LeaseState.ACTIVE and cur.epoch == tok.epoch
            assert (led.validate(tok) is PERMIT) == ok


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=16, max_size=16), st.integers(0, 10))
def test_arbitrary_tags_denied(tag, epoch):
    led = LeaseLedger(key=KEY)
    led.propose_lease("rm", "rm", "rc", lease_id="L")
    led.accept_lease("L", "rc")
    real = led.mint(led.leases["L"])
    tok = CapabilityToken("L", epoch, tag)
    assert (led.validate(tok) is PERMIT) == (tok == real)


def test_small_model_check_is_clean():
    rep = model_check.explore(depth=5)
    assert rep.violations == []
    assert rep.expiry_without_rm
    assert rep.sequences == 10_024
