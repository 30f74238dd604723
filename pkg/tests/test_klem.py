import itertools

import pytest
from hypothesis import given, settings, strategies as st

from railtraj.candidates import CandidateRecord, CandidateSet, CandidateTrain
from railtraj.domain import AfcRecord, TravelRecord, TripSegment
from railtraj.inference import TrainPosterior
from railtraj.klem import (
    KlemConfig,
    enumerate_combinations,
    greedy_repair,
    is_feasible,
    klem_infer,
    make_combination,
    total_kl,
    transfer_time,
)
from railtraj.prob import NormalParams

from conftest import ts


def two_by_three():
    # segment 1 arrivals 100/220/340, segment 2 departures 300/420/540; min transfer 40
    s1 = CandidateSet(1, tuple(CandidateTrain(f"a{i}", 0 + 120 * i, 100 + 120 * i) for i in range(3)))
    s2 = CandidateSet(2, tuple(CandidateTrain(f"b{i}", 300 + 120 * i, 500 + 120 * i) for i in range(3)))
    return s1, s2


def test_singleton_sets_give_one_combination():
    s1 = CandidateSet(1, (CandidateTrain("a", 0, 100),))
    s2 = CandidateSet(2, (CandidateTrain("b", 200, 300),))
    combos = enumerate_combinations([s1, s2], (40,))
    assert len(combos) == 1 and combos[0].ranks == (0, 0)


def test_one_infeasible_pair_leaves_eight():
    s1, s2 = two_by_three()
    # only a2 (arrives 340) -> b0 (departs 300) breaks the connection
    brute = [(a, b) for a in s1.trains for b in s2.trains if b.dt >= a.at + 40]
    assert len(brute) == 8
    combos = enumerate_combinations([s1, s2], (40,), topk=3)
    assert len(combos) == 8
    assert {(c.trains[0].train_id, c.trains[1].train_id) for c in combos} == \
        {(a.train_id, b.train_id) for a, b in brute}


def test_topk_one_is_the_argmax():
    s1, s2 = two_by_three()
    posts = [
        TrainPosterior(1, ("a0", "a1", "a2"), (0.2, 0.7, 0.1), (0, 120, 240)),
        TrainPosterior(2, ("b0", "b1", "b2"), (0.1, 0.3, 0.6), (300, 420, 540)),
    ]
    combos = enumerate_combinations([s1, s2], (40,), topk=1, posteriors=posts)
    assert [tuple(t.train_id for t in c.trains) for c in combos] == [("a1", "b2")]
    full = enumerate_combinations([s1, s2], (40,), topk=3, posteriors=posts)
    assert full[0].ranks == (0, 0)  # argmax pattern is listed first


def test_transfer_interval_between_logged_times():
    a = CandidateTrain("L1", ts("07:13:48"), ts("07:37:49"))
    b = CandidateTrain("L2", ts("07:44:51"), ts("07:48:04"))
    assert transfer_time(make_combination([a, b], (40,))) == (422,)


def test_transfer_at_exact_minimum_is_feasible():
    a, b = CandidateTrain("a", 0, 100), CandidateTrain("b", 140, 300)
    c = make_combination([a, b], (40,))
    assert c.feasible and c.transfers == (40,)
    assert not is_feasible([a, CandidateTrain("b", 139, 300)], (40,))


def test_greedy_repair_advances_later_segments():
    s1, s2 = two_by_three()
    c = greedy_repair([s1, s2], (40,), [2, 0])
    assert [t.train_id for t in c.trains] == ["a2", "b1"] and c.feasible


@st.composite
def random_sets(draw):
    n1, n2 = draw(st.integers(1, 5)), draw(st.integers(1, 5))
    d1 = sorted(draw(st.lists(st.integers(0, 1000), min_size=n1, max_size=n1, unique=True)))
    d2 = sorted(draw(st.lists(st.integers(0, 1600), min_size=n2, max_size=n2, unique=True)))
    s1 = CandidateSet(1, tuple(CandidateTrain(f"a{i}", d, d + 300) for i, d in enumerate(d1)))
    s2 = CandidateSet(2, tuple(CandidateTrain(f"b{i}", d, d + 200) for i, d in enumerate(d2)))
    return s1, s2, draw(st.integers(0, 120)), draw(st.integers(1, 5))


@given(random_sets())
def test_enumeration_matches_brute_force(case):
    s1, s2, mt, k = case
    got = {tuple(t.train_id for t in c.trains) for c in enumerate_combinations([s1, s2], (mt,), topk=k)}
    want = {(a.train_id, b.train_id) for a, b in itertools.product(s1.trains[:k], s2.trains[:k])
            if b.dt >= a.at + mt}
    assert got == want
    assert all(c.feasible for c in enumerate_combinations([s1, s2], (mt,), topk=k))


@given(st.lists(st.builds(NormalParams, st.floats(-5, 5), st.floats(0.1, 10)), min_size=1, max_size=5))
def test_total_kl_nonnegative(ds):
    assert total_kl(ds) >= 0.0


def _group(n=40):
    """A tiny transfer population where each record has one train per segment."""
    out = []
    for i in range(n):
        t0 = i * 120
        rec = TravelRecord(AfcRecord(f"p{i:03d}", "CY", t0, "BXQ", t0 + 60 + 600 + 90 + 400 + 100 + i % 7),
                           (TripSegment(1, "CY", "DS", "L1", "up"), TripSegment(2, "DS", "BXQ", "L2", "up")))
        s1 = CandidateSet(1, (CandidateTrain(f"A{i}", t0 + 60, t0 + 660),))
        s2 = CandidateSet(2, (CandidateTrain(f"B{i}", t0 + 750, t0 + 1150),))
        out.append(CandidateRecord(rec, (s1, s2), (40,)))
    return out


def test_singleton_population_is_forced():
    g = _group()
    res = klem_infer(g, [NormalParams(90, 100), NormalParams(100, 100)], NormalParams(60, 100))
    assert res.rounds == 1 and res.converged
    assert all(r.chosen.ranks == (0, 0) and not r.fallback for r in res.records)
    assert [r.chosen.transfers for r in res.records] == [(90,)] * len(g)


def test_klem_deterministic(default_run):
    group = [c for c in default_run.out.candidate_records if c.rec.segment_count == 2][:300]
    g = next(x for x in default_run.out.groups if x.key == ("CY", "BXQ"))
    args = ([g.segment_models[0], g.segment_models[1]], default_run.out.access_prior.global_)
    a = klem_infer(group, *args, KlemConfig())
    b = klem_infer(group, *args, KlemConfig())
    assert [r.chosen for r in a.records] == [r.chosen for r in b.records]
    assert a.diagnostics == b.diagnostics


def test_default_transfer_population(default_run):
    g = next(x for x in default_run.out.groups if x.key == ("CY", "BXQ"))
    assert g.klem.converged and g.klem.rounds == 1
    assert all(r.chosen.feasible for r in g.klem.records)
    truth = {}
    for t in default_run.sim.truth:
        truth.setdefault(t.passenger_id, {})[t.segment] = t
    hits, within = 0, 0
    for it in g.itineraries:
        tt = truth[it.passenger_id]
        if all(leg.train_id == tt[leg.segment].train_id for leg in it.legs):
            hits += 1
            within += abs(it.transfer_s[0] - tt[1].transfer_s) <= 120
    assert hits / len(g.itineraries) >= 0.90
    assert within / hits >= 0.90
