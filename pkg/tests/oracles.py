"""Independent reference implementations used to cross-check the package.

Nothing here imports the code path it checks: windows are linear scans,
world enumeration uses itertools over dicts, and overlap/loss checks read
only the serialized event log.
"""

from __future__ import annotations

import itertools
import json


# -- windowed predicates -------------------------------------------------------

def scan_count(events, kinds, pairs, lo, hi, since):
    n = 0
    for e in events:
        if e.kind.value not in kinds:
            continue
        if (e.sender, e.recipient) not in pairs:
            continue
        if lo < e.t <= hi and e.t >= since:
            n += 1
    return n


def oracle_evaluate(cond: dict, events, rm, rc, granted_at, now) -> bool:
    """Condition given as its JSON form; events as a plain list."""
    kind = cond["type"]
    fwd, back, both = {(rc, rm)}, {(rm, rc)}, {(rc, rm), (rm, rc)}
    if kind == "FixedTerm":
        return now - granted_at >= cond["seconds"]
    if kind == "UnusedFor":
        d = cond["seconds"]
        return now - granted_at >= d and scan_count(
            events, {"MessageSent"}, fwd, now - d, now, granted_at) == 0
    if kind == "NoProximityFor":
        d = cond["seconds"]
        return now - granted_at >= d and scan_count(
            events, {"ProximityPing"}, both, now - d, now, granted_at) == 0
    if kind == "OverusedAbove":
        w = cond["window"]
        return scan_count(events, {"MessageSent"}, fwd, now - w, now, granted_at) > cond["count"]
    if kind == "UnreciprocatedCalls":
        w = cond["window"]
        calls = scan_count(events, {"MessageSent"}, fwd, now - w, now, granted_at)
        returns = scan_count(events, {"MessageSent", "CallReturned"}, back, now - w, now, granted_at)
        return calls >= cond["count"] and returns == 0
    if kind == "MutualContactAtLeast":
        w, n = cond["window"], cond["count"]
        contact = {"MessageSent", "CallReturned"}
        return (scan_count(events, contact, fwd, now - w, now, granted_at) >= n
                and scan_count(events, contact, back, now - w, now, granted_at) >= n)
    if kind == "All":
        return all(oracle_evaluate(c, events, rm, rc, granted_at, now) for c in cond["conditions"])
    if kind == "Any":
        return any(oracle_evaluate(c, events, rm, rc, granted_at, now) for c in cond["conditions"])
    raise ValueError(kind)


# -- explanation enumeration ------------------------------------------------------

def eval_expr(expr, world: dict) -> bool:
    if expr is True or expr is False:
        return expr
    if isinstance(expr, str):
        return world[expr]
    op, arg = next(iter(expr.items()))
    if op == "not":
        return not eval_expr(arg, world)
    results = [eval_expr(a, world) for a in arg]
    return all(results) if op == "all" else any(results)


def _cause_label(rule: dict) -> tuple[str, str]:
    action = rule["action"]
    if action == "ConditionFired" and "condition" in rule:
        action = f"ConditionFired({rule['condition']})"
    return rule["actor"], action


def brute_force_explanations(fact_model: dict, known: dict, observation: str) -> set:
    """Every (actor, action) label of a world that agrees with ``known`` and shows ``observation``."""
    names = [f if isinstance(f, str) else f["name"] for f in fact_model["facts"]]
    found = set()
    for values in itertools.product([False, True], repeat=len(names)):
        world = dict(zip(names, values))
        if any(world[k] != v for k, v in known.items()):
            continue
        seen = "access-ok"
        for rule in fact_model["outcomes"]:
            if eval_expr(rule["when"], world):
                seen = rule["observation"]
                break
        if seen != observation:
            continue
        for rule in fact_model["causes"]:
            if eval_expr(rule["when"], world):
                found.add(_cause_label(rule))
                break
    return found


# -- event-log checks ----------------------------------------------------------------

def read_jsonl(text: str):
    lines = text.strip().split("\n")
    return json.loads(lines[0])["header"], [json.loads(ln) for ln in lines[1:]]


def transmission_intervals(events, channel):
    """Floor-holding intervals on one channel: every Send that did not bounce off a busy floor."""
    busy = {e["send"] for e in events if e["kind"] == "FloorBusy"}
    return sorted((e["t"], e["t"] + e["duration"]) for e in events
                  if e["kind"] == "Send" and e["channel"] == channel and e["seq"] not in busy)


def overlapping_pairs(intervals):
    bad = []
    for (a1, b1), (a2, b2) in itertools.combinations(intervals, 2):
        if a1 < b2 and a2 < b1 and a1 < b1 and a2 < b2:
            bad.append(((a1, b1), (a2, b2)))
    return bad


def lease_states_at(events, seq_limit):
    """Lease state and RC by replaying lease events strictly before ``seq_limit``."""
    state, rc = {}, {}
    for e in events:
        if e["seq"] >= seq_limit:
            break
        k = e["kind"]
        if k == "ProposeLease":
            state[e["lease"]] = "Proposed"
            rc[e["lease"]] = (e["rc"], e["rm"])
            accepted = {e["proposer"]}
            state[e["lease"] + "#acc"] = accepted
        elif k == "AcceptLease":
            acc = state[e["lease"] + "#acc"]
            acc.add(e["accepter"])
            if len(acc) == 2:
                state[e["lease"]] = "Active"
        elif k == "LeaseExpired":
            state[e["lease"]] = "Expired"
        elif k == "RmDecide":
            if e["decision"] == "Renew":
                state[e["lease"]] = "RenewalPending"
            elif e["decision"] == "Reallocate":
                state[e["lease"]] = "Reallocated"
                state[e["new_lease"]] = "Proposed"
                rc[e["new_lease"]] = (e["new_rc"], rc[e["lease"]][1])
                state[e["new_lease"] + "#acc"] = {rc[e["lease"]][1]}
            else:
                state[e["lease"]] = "Unassigned"
        elif k == "RcConfirmRenewal":
            state[e["lease"]] = "Active"
    return {k: v for k, v in state.items() if not k.endswith("#acc")}, rc
