import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KEY
from leaseway.lease_core import LeaseLedger
from leaseway.media_sim import (Channel, Delivered, DeniedNoAccess, DroppedByNetwork, FloorGrant,
                                Free, Held, LostNotPresent, MediumSchemaError, MediumSpec,
                                NoFloor, NotAChannelParty, NotHalfDuplex, PresenceSchedule,
                                Queued, builtin_media, lapse_monitor, leak_signal, media_row,
                                medium_from_json, override_media, release_floor, request_floor,
                                transmit)

MEDIA = builtin_media()
TURNS = [(0, "Julie", "q"), (3, "Todd", "repair"), (3.2, "Julie", "q again"),
         (196.2, "Todd", "answer"), (197.6, "Julie", "next")]


def channel(name, gated=()):
    return Channel(MEDIA[name], ("a", "b"), gated=frozenset(gated), id="ch")


# -- registry ---------------------------------------------------------------------

def test_registry_marks():
    assert list(MEDIA) == ["m. phone", "SMS", "IM", "c. radio"]
    assert {n for n, m in MEDIA.items() if m.leak_through} == {"m. phone"}
    assert {n for n, m in MEDIA.items() if not m.reviewable} == {"m. phone", "c. radio"}
    assert {n for n, m in MEDIA.items() if m.mobile} == {"m. phone", "SMS", "c. radio"}
    assert {n for n, m in MEDIA.items() if m.half_duplex} == {"c. radio"}
    assert {n for n, m in MEDIA.items() if m.modality == "audio"} == {"m. phone", "c. radio"}


def test_rows():
    assert [media_row(m) for m in MEDIA.values()] == [
        "m. phone: audio, leak-through, not-reviewable, mobile",
        "SMS: text, mobile",
        "IM: text",
        "c. radio: audio, not-reviewable, mobile",
    ]


def test_low_pressure_matches_reported_deniability():
    assert {n for n, m in MEDIA.items() if m.low_pressure} == {"IM", "c. radio"}


def test_only_radio_is_lossy():
    assert [n for n, m in MEDIA.items() if not m.reliable] == ["c. radio"]
    assert MEDIA["c. radio"].drop_prob == pytest.approx(0.02)


def test_medium_validation():
    with pytest.raises(MediumSchemaError):
        MediumSpec("x", "video", "full", False, True, True)
    with pytest.raises(MediumSchemaError):
        MediumSpec("x", "text", "simplex", False, True, True)
    with pytest.raises(MediumSchemaError):
        MediumSpec("x", "text", "full", False, True, True, reliable=True, drop_prob=0.1)
    with pytest.raises(MediumSchemaError) as err:
        medium_from_json({"name": "x", "modality": "text"}, "$.media[0]")
    assert str(err.value).startswith("$.media[0].duplex")
    with pytest.raises(MediumSchemaError):
        medium_from_json({"name": "x", "colour": "red"})


def test_override_keeps_unmentioned_fields():
    out = override_media(MEDIA, [{"name": "c. radio", "reliable": True}])
    assert out["c. radio"].drop_prob == 0 and out["c. radio"].half_duplex
    out = override_media(MEDIA, [{"name": "pager", "modality": "text", "duplex": "full",
                                  "leak_through": False, "reviewable": True, "mobile": True}])
    assert out["pager"].low_pressure is False and len(out) == 5


# -- presence -------------------------------------------------------------------------

def test_presence_schedule():
    p = PresenceSchedule([(10, 20), (30, float("inf"))])
    assert not p.present(9) and p.present(10) and not p.present(20) and p.present(10**9)
    assert p.next_start(15) == 15 and p.next_start(25) == 30
    assert p.absent_intervals(100) == [(float("-inf"), 10), (20, 30)]
    assert PresenceSchedule([(0, 5)]).next_start(6) is None
    with pytest.raises(ValueError):
        PresenceSchedule([(0, 10), (5, 20)])
    with pytest.raises(ValueError):
        PresenceSchedule([(5, 5)])


# -- floor -------------------------------------------------------------------------

def test_floor_is_exclusive():
    ch = channel("c. radio")
    assert request_floor(ch, "a", 0) is FloorGrant.GRANTED
    assert ch.floor == Held("a", 0)
    assert request_floor(ch, "b", 0.5) is FloorGrant.FLOOR_BUSY
    assert request_floor(ch, "a", 0.5) is FloorGrant.FLOOR_BUSY
    release_floor(ch, "b", 1)  # not the holder: no effect
    assert isinstance(ch.floor, Held)
    release_floor(ch, "a", 1)
    assert ch.floor == Free()
    assert request_floor(ch, "b", 1) is FloorGrant.GRANTED


def test_full_duplex_has_no_floor():
    with pytest.raises(NotHalfDuplex):
        request_floor(channel("m. phone"), "a", 0)


def test_floor_needs_party():
    with pytest.raises(NotAChannelParty):
        request_floor(channel("c. radio"), "eve", 0)


# -- transmit ----------------------------------------------------------------------

def test_half_duplex_send_requires_floor():
    with pytest.raises(NoFloor):
        transmit(channel("c. radio"), "a", "hi", 0, None, random.Random(0))


def test_ungated_direction_delivers():
    assert transmit(channel("SMS"), "a", "hi", 7, None, random.Random(0)) == Delivered(7)


def test_gate_denies_without_valid_token():
    led = LeaseLedger(key=KEY)
    led.propose_lease("b", "b", "a", lease_id="L")
    _, token = led.accept_lease("L", "a")
    ch = channel("SMS", gated={("a", "b")})
    rng = random.Random(0)
    assert transmit(ch, "a", "hi", 0, None, rng, ledger=led) == DeniedNoAccess()
    assert transmit(ch, "a", "hi", 0, token, rng) == DeniedNoAccess()  # no ledger to check
    assert transmit(ch, "a", "hi", 0, token, rng, ledger=led) == Delivered(0)
    led.expire_lease("L", "x", 1)
    assert transmit(ch, "a", "hi", 1, token, rng, ledger=led) == DeniedNoAccess()
    # the other direction is not gated by this lease
    assert transmit(ch, "b", "hi", 1, None, rng, ledger=led) == Delivered(1)


def test_reviewable_media_wait_for_recipient():
    away = PresenceSchedule([(600, float("inf"))])
    assert transmit(channel("SMS"), "a", "hi", 0, None, random.Random(0),
                    presence=away) == Delivered(600)
    gone = PresenceSchedule([(-10, -5)])
    assert transmit(channel("IM"), "a", "hi", 0, None, random.Random(0),
                    presence=gone) == Queued()


def test_non_reviewable_media_lose_messages():
    away = PresenceSchedule([(600, float("inf"))])
    assert transmit(channel("m. phone"), "a", "hi", 0, None, random.Random(0),
                    presence=away) == LostNotPresent()


def test_network_delay_shifts_arrival():
    m = MediumSpec("slow", "text", "full", False, False, True, network_delay=5)
    ch = Channel(m, ("a", "b"))
    assert transmit(ch, "a", "x", 0, None, random.Random(0)) == Delivered(5)
    # present at send, gone on arrival
    assert transmit(ch, "a", "x", 0, None, random.Random(0),
                    presence=PresenceSchedule([(0, 3)])) == LostNotPresent()


def test_radio_drop_rate_is_seeded():
    def drops(seed):
        rng = random.Random(seed)
        out = []
        for _ in range(5000):
            ch = channel("c. radio")
            request_floor(ch, "a", 0)
            out.append(transmit(ch, "a", "x", 0, None, rng) == DroppedByNetwork())
        return out
    first = drops(1)
    assert first == drops(1)
    assert 0.01 < sum(first) / len(first) < 0.03


def test_reliable_media_draw_no_randomness():
    rng = random.Random(5)
    state = rng.getstate()
    transmit(channel("SMS"), "a", "x", 0, None, rng)
    assert rng.getstate() == state


# -- leak-through -----------------------------------------------------------------------

def test_leak_only_on_live_phone():
    ch = channel("m. phone")
    assert leak_signal(ch, 0) is None
    ch.live = True
    ch.ambient["b"] = "driving"
    info = leak_signal(ch, 3)
    assert info.t == 3 and info.activities["b"] == "driving"
    for name in ("SMS", "IM", "c. radio"):
        ch = channel(name)
        ch.live = True
        assert leak_signal(ch, 0) is None


# -- lapses -----------------------------------------------------------------------------

def test_excerpt_gaps():
    gaps = [round(b[0] - a[0], 6) for a, b in zip(TURNS, TURNS[1:])]
    assert gaps == [3, 0.2, 193, 1.4]


def test_one_lapse_at_default_threshold():
    lapses = lapse_monitor(TURNS, MEDIA["c. radio"], 4)
    assert len(lapses) == 1
    lap = lapses[0]
    assert lap.gap == 193 and lap.start == 3.2 and lap.end == 196.2
    assert (lap.before, lap.after, lap.index) == ("Julie", "Todd", 2)
    assert lap.low_pressure


def test_lapse_thresholds():
    assert [lap.gap for lap in lapse_monitor(TURNS, MEDIA["c. radio"], 1)] == [3, 193, 1.4]
    assert lapse_monitor(TURNS, MEDIA["c. radio"], 193) == []
    assert lapse_monitor(TURNS, MEDIA["c. radio"], 1000) == []
    assert not lapse_monitor(TURNS, MEDIA["m. phone"], 4)[0].low_pressure


def test_lapse_uses_turn_end_when_given():
    turns = [(0, "a", "x", 2.5), (8, "b", "y")]
    assert lapse_monitor(turns, MEDIA["IM"], 4)[0].gap == 5.5
    with pytest.raises(ValueError):
        lapse_monitor([(5, "a", "x"), (1, "b", "y")], MEDIA["IM"])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=2, max_size=20),
       st.floats(0.1, 100))
def test_lapses_are_exactly_the_long_gaps(times, threshold):
    times = sorted(times)
    turns = [(t, "ab"[i % 2], "") for i, t in enumerate(times)]
    want = [i for i, (a, b) in enumerate(zip(times, times[1:])) if round(b - a, 6) > threshold]
    assert [lap.index for lap in lapse_monitor(turns, MEDIA["IM"], threshold)] == want
