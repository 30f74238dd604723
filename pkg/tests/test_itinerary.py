import pytest
from hypothesis import given, strategies as st

from railtraj.candidates import CandidateSet, CandidateTrain
from railtraj.domain import AfcRecord, TravelRecord, TripSegment
from railtraj.inference import TrainPosterior
from railtraj.itinerary import (
    Itinerary,
    ItineraryError,
    build_itinerary,
    read_itineraries_csv,
    read_itineraries_jsonl,
    write_itineraries_csv,
    write_itineraries_jsonl,
)
from railtraj.klem import make_combination

from conftest import ts


def transfer_rec(t_in, t_out):
    return TravelRecord(AfcRecord("v1", "CY", t_in, "BXQ", t_out),
                        (TripSegment(1, "CY", "DS", "L1", "up"), TripSegment(2, "DS", "BXQ", "L2", "up")))


def certain(m, trains):
    return TrainPosterior(m, tuple(t.train_id for t in trains), (1.0,) + (0.0,) * (len(trains) - 1),
                          tuple(t.dt for t in trains))


def test_transfer_trajectory_components():
    a = CandidateTrain("L1-17", ts("07:13:48"), ts("07:37:49"))
    b = CandidateTrain("L2-09", ts("07:44:51"), ts("07:48:04"))
    rec = transfer_rec(ts("07:12:00"), ts("07:50:00"))
    sets = [CandidateSet(1, (a,)), CandidateSet(2, (b,))]
    it = build_itinerary(rec, make_combination([a, b], (40,)), [certain(1, [a]), certain(2, [b])], sets)
    assert it.running_s == (1441, 193)
    assert it.transfer_s == (422,)
    assert it.decomposition_total() == rec.afc.span


def test_direct_trajectory_components():
    rec = TravelRecord(AfcRecord("p", "CY", ts("07:00:00"), "S6", ts("07:23:00")),
                       (TripSegment(1, "CY", "S6", "L1", "up"),))
    t = CandidateTrain("T", ts("07:02:00"), ts("07:20:00"))
    it = build_itinerary(rec, make_combination([t], ()), [certain(1, [t])], [CandidateSet(1, (t,))])
    assert (it.access_s, it.running_s, it.egress_s) == (120, (1080,), 180)
    assert it.decomposition_total() == 1380 == rec.afc.span
    assert it.left_behind == (0,)
    assert it.confidence == 1.0


def test_left_behind_is_departure_rank():
    rec = TravelRecord(AfcRecord("p", "CY", 0, "S6", 2000), (TripSegment(1, "CY", "S6", "L1", "up"),))
    trains = tuple(CandidateTrain(f"t{i}", 100 + 120 * i, 1000 + 120 * i) for i in range(3))
    post = TrainPosterior(1, tuple(t.train_id for t in trains), (0.2, 0.3, 0.5), tuple(t.dt for t in trains))
    it = build_itinerary(rec, make_combination([trains[2]], ()), [post], [CandidateSet(1, trains)])
    assert it.left_behind == (2,) and it.confidence == 0.5


def test_negative_component_is_an_internal_error():
    rec = TravelRecord(AfcRecord("p", "CY", 500, "S6", 2000), (TripSegment(1, "CY", "S6", "L1", "up"),))
    t = CandidateTrain("early", 100, 900)
    with pytest.raises(ItineraryError):
        build_itinerary(rec, make_combination([t], ()), [certain(1, [t])], [CandidateSet(1, (t,))])


@given(st.integers(0, 600), st.integers(1, 2000), st.integers(0, 900), st.integers(1, 2000), st.integers(0, 600),
       st.floats(0, 1), st.lists(st.sampled_from(["fallback", "klem_not_converged"]), max_size=2, unique=True))
def test_identity_and_roundtrip(tmp_path_factory, acc, r1, tr, r2, eg, conf, flags):
    t_in = ts("07:00:00")
    a = CandidateTrain("A", t_in + acc, t_in + acc + r1)
    b = CandidateTrain("B", a.at + tr, a.at + tr + r2)
    rec = transfer_rec(t_in, b.at + eg)
    it = build_itinerary(rec, make_combination([a, b], (0,)), [certain(1, [a]), certain(2, [b])],
                         [CandidateSet(1, (a,)), CandidateSet(2, (b,))], flags)
    it = Itinerary(it.passenger_id, it.legs, it.access_s, it.egress_s, it.transfer_s, it.left_behind, conf, it.flags)
    assert it.decomposition_total() == rec.afc.span
    d = tmp_path_factory.mktemp("it")
    write_itineraries_csv([it], d / "i.csv")
    write_itineraries_jsonl([it], d / "i.jsonl")
    assert read_itineraries_csv(d / "i.csv") == [it]
    assert read_itineraries_jsonl(d / "i.jsonl") == [it]


def test_csv_layout(tmp_path):
    a = CandidateTrain("A", ts("07:13:48"), ts("07:37:49"))
    b = CandidateTrain("B", ts("07:44:51"), ts("07:48:04"))
    rec = transfer_rec(ts("07:12:00"), ts("07:50:00"))
    it = build_itinerary(rec, make_combination([a, b], (40,)), [certain(1, [a]), certain(2, [b])],
                         [CandidateSet(1, (a,)), CandidateSet(2, (b,))])
    write_itineraries_csv([it], tmp_path / "i.csv")
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == ("passenger_id,segment,train_id,board_station,board_time,alight_station,"
                        "alight_time,access_s,egress_s,transfer_s,left_behind,confidence,flags")
    assert lines[1] == "v1,1,A,CY,2023-05-10T07:13:48,DS,2023-05-10T07:37:49,108,,422,0,1.0,"
    assert lines[2] == "v1,2,B,DS,2023-05-10T07:44:51,BXQ,2023-05-10T07:48:04,,116,,0,1.0,"
