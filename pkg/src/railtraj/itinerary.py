"""Reconstructed travel chains and their CSV / JSON-lines forms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .candidates import CandidateSet
from .domain import TravelRecord, format_time, parse_time
from .inference import TrainPosterior
from .klem import TrainCombination

ITINERARY_HEADER = [
    "passenger_id", "segment", "train_id", "board_station", "board_time", "alight_station",
    "alight_time", "access_s", "egress_s", "transfer_s", "left_behind", "confidence", "flags",
]
REJECT_HEADER = ["passenger_id", "entry_station", "entry_time", "exit_station", "exit_time", "reason"]


class ItineraryError(RuntimeError):
    """A reconstructed time component came out negative."""


@dataclass(frozen=True)
class Leg:
    segment: int
    train_id: str
    board_station: str
    board_time: int
    alight_station: str
    alight_time: int

    @property
    def running_s(self) -> int:
        return self.alight_time - self.board_time


@dataclass(frozen=True)
class Itinerary:
    passenger_id: str
    legs: tuple[Leg, ...]
    access_s: int
    egress_s: int
    transfer_s: tuple[int, ...]
    left_behind: tuple[int, ...]
    confidence: float
    flags: tuple[str, ...] = ()

    @property
    def entry_time(self) -> int:
        return self.legs[0].board_time - self.access_s

    @property
    def exit_time(self) -> int:
        return self.legs[-1].alight_time + self.egress_s

    @property
    def running_s(self) -> tuple[int, ...]:
        return tuple(l.running_s for l in self.legs)

    def decomposition_total(self) -> int:
        return self.access_s + sum(self.running_s) + sum(self.transfer_s) + self.egress_s


def build_itinerary(
    rec: TravelRecord,
    chosen: TrainCombination,
    posteriors: Sequence[TrainPosterior],
    sets: Sequence[CandidateSet],
    flags: Iterable[str] = (),
) -> Itinerary:
    """Assemble the travel chain for one record.

    ``sets`` are the candidate sets the left-behind ranks are counted in
    (for segments after a transfer, the trains reachable from the chosen
    previous train).
    """
    afc = rec.afc
    trains = chosen.trains
    if len(trains) != rec.segment_count:
        raise ItineraryError(f"{afc.passenger_id}: {len(trains)} trains for {rec.segment_count} segments")
    legs = tuple(
        Leg(seg.index, t.train_id, seg.board_station, t.dt, seg.alight_station, t.at)
        for seg, t in zip(rec.segments, trains)
    )
    access = trains[0].dt - afc.entry_time
    egress = afc.exit_time - trains[-1].at
    transfers = tuple(b.dt - a.at for a, b in zip(trains, trains[1:]))
    parts = [access, egress, *transfers, *(l.running_s for l in legs)]
    if min(parts) < 0:
        raise ItineraryError(f"{afc.passenger_id}: negative time component {parts}")
    ks = tuple(cs.rank_of(t.train_id) for cs, t in zip(sets, trains))
    conf = 1.0
    for p, t in zip(posteriors, trains):
        conf *= p.prob_of(t.train_id)
    return Itinerary(afc.passenger_id, legs, access, egress, transfers, ks, conf, tuple(flags))


# ---------------------------------------------------------------------------
# serialisation


def _rows(it: Itinerary) -> list[dict]:
    rows = []
    last = len(it.legs)
    for i, leg in enumerate(it.legs):
        rows.append({
            "passenger_id": it.passenger_id,
            "segment": leg.segment,
            "train_id": leg.train_id,
            "board_station": leg.board_station,
            "board_time": format_time(leg.board_time),
            "alight_station": leg.alight_station,
            "alight_time": format_time(leg.alight_time),
            "access_s": it.access_s if i == 0 else None,
            "egress_s": it.egress_s if i + 1 == last else None,
            "transfer_s": it.transfer_s[i] if i + 1 < last else None,
            "left_behind": it.left_behind[i],
            "confidence": it.confidence,
            "flags": "|".join(it.flags),
        })
    return rows


def _from_rows(rows: list[dict]) -> Itinerary:
    rows = sorted(rows, key=lambda r: int(r["segment"]))
    legs = tuple(
        Leg(int(r["segment"]), r["train_id"], r["board_station"], parse_time(r["board_time"]),
            r["alight_station"], parse_time(r["alight_time"]))
        for r in rows
    )
    flags = rows[0]["flags"]
    return Itinerary(
        rows[0]["passenger_id"],
        legs,
        int(rows[0]["access_s"]),
        int(rows[-1]["egress_s"]),
        tuple(int(r["transfer_s"]) for r in rows[:-1]),
        tuple(int(r["left_behind"]) for r in rows),
        float(rows[0]["confidence"]),
        tuple(flags.split("|")) if flags else (),
    )


def write_itineraries_csv(its: Iterable[Itinerary], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITINERARY_HEADER)
        for it in its:
            for r in _rows(it):
                w.writerow(["" if r[k] is None else (repr(r[k]) if k == "confidence" else r[k])
                            for k in ITINERARY_HEADER])


def write_itineraries_jsonl(its: Iterable[Itinerary], path) -> None:
    with Path(path).open("w") as fh:
        for it in its:
            for r in _rows(it):
                fh.write(json.dumps(r) + "\n")


def _group(rows: Iterable[dict]) -> list[Itinerary]:
    by_pid: dict[str, list[dict]] = {}
    for r in rows:
        by_pid.setdefault(r["passenger_id"], []).append(r)
    return [_from_rows(v) for v in by_pid.values()]


def read_itineraries_csv(path) -> list[Itinerary]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ITINERARY_HEADER:
            raise ValueError(f"{path}: unexpected itinerary header")
        return _group(reader)


def read_itineraries_jsonl(path) -> list[Itinerary]:
    with Path(path).open() as fh:
        return _group(json.loads(line) for line in fh if line.strip())


def write_rejects(rejects: Iterable[tuple], path) -> None:
    """Rows of (AfcRecord, reason)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REJECT_HEADER)
        for afc, reason in rejects:
            w.writerow([afc.passenger_id, afc.entry_station, format_time(afc.entry_time),
                        afc.exit_station, format_time(afc.exit_time), reason])
