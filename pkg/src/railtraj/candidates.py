"""Train alternative sets per trip segment and the observable/unknown split."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .domain import NetworkTopology, TrainRun, TravelRecord


class EmptyCandidateSet(Exception):
    def __init__(self, segment: int, passenger_id: str = ""):
        super().__init__(f"no feasible train for segment {segment} of passenger {passenger_id!r}")
        self.segment = segment
        self.passenger_id = passenger_id


@dataclass(frozen=True)
class CandidateTrain:
    train_id: str
    dt: int  # departure at the segment's boarding station
    at: int  # arrival at the segment's alighting station

    def __post_init__(self):
        if self.at <= self.dt:
            raise ValueError(f"train {self.train_id}: arrival {self.at} not after departure {self.dt}")


@dataclass(frozen=True)
class CandidateSet:
    segment: int
    trains: tuple[CandidateTrain, ...]

    def __post_init__(self):
        dts = [t.dt for t in self.trains]
        if any(b <= a for a, b in zip(dts, dts[1:])):
            raise ValueError(f"segment {self.segment}: candidates not strictly ordered by DT")
        if len({t.train_id for t in self.trains}) != len(self.trains):
            raise ValueError(f"segment {self.segment}: duplicate train ids")

    @property
    def K(self) -> int:
        return len(self.trains) - 1

    def __len__(self) -> int:
        return len(self.trains)

    def rank_of(self, train_id: str) -> int:
        for i, t in enumerate(self.trains):
            if t.train_id == train_id:
                return i
        raise KeyError(train_id)


@dataclass
class ConstraintConfig:
    min_access_seconds: int = 0
    min_egress_seconds: int = 0
    access_by_station: dict[str, int] = field(default_factory=dict)
    egress_by_station: dict[str, int] = field(default_factory=dict)
    # station -> seconds; overrides the topology's transfer link value
    transfer_by_station: dict[str, int] = field(default_factory=dict)
    max_journey_slack_seconds: int | None = None

    def __post_init__(self):
        vals = [self.min_access_seconds, self.min_egress_seconds,
                *self.access_by_station.values(), *self.egress_by_station.values(),
                *self.transfer_by_station.values()]
        if any(v < 0 for v in vals):
            raise ValueError("constraint minimums must be non-negative")
        if self.max_journey_slack_seconds is not None and self.max_journey_slack_seconds < 0:
            raise ValueError("max_journey_slack_seconds must be non-negative")

    def access_min(self, station: str) -> int:
        return self.access_by_station.get(station, self.min_access_seconds)

    def egress_min(self, station: str) -> int:
        return self.egress_by_station.get(station, self.min_egress_seconds)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ConstraintConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class CandidateRecord:
    """A travel record together with its per-segment candidate sets."""

    rec: TravelRecord
    sets: tuple[CandidateSet, ...]
    min_transfer: tuple[int, ...]  # one per segment junction

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.sets]

    @property
    def observable(self) -> bool:
        return all(len(s) == 1 for s in self.sets)


class TrainIndex:
    """Per (line, direction, board, alight) sorted (DT, AT, train) arrays."""

    def __init__(self, runs: Iterable[TrainRun]):
        self._by_line: dict[tuple[str, str], list[TrainRun]] = {}
        for r in runs:
            self._by_line.setdefault((r.line, r.direction), []).append(r)
        self._cache: dict[tuple[str, str, str, str], tuple[list[int], list[CandidateTrain]]] = {}

    def trains(self, line: str, direction: str, board: str, alight: str):
        key = (line, direction, board, alight)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        rows = []
        for run in self._by_line.get((line, direction), ()):
            i, j = run.stop_index(board), run.stop_index(alight)
            if i < 0 or j < 0 or i >= j:
                continue
            rows.append(CandidateTrain(run.train_id, run.stops[i].departure, run.stops[j].arrival))
        rows.sort(key=lambda c: (c.dt, c.train_id))
        # Two runs departing the same second would break the strict ordering.
        dedup: list[CandidateTrain] = []
        for c in rows:
            if dedup and dedup[-1].dt == c.dt:
                continue
            dedup.append(c)
        hit = ([c.dt for c in dedup], dedup)
        self._cache[key] = hit
        return hit


def junction_minimums(rec: TravelRecord, topo: NetworkTopology, cfg: ConstraintConfig) -> tuple[int, ...]:
    out = []
    for a, b in zip(rec.segments, rec.segments[1:]):
        st = a.alight_station
        if st in cfg.transfer_by_station:
            out.append(cfg.transfer_by_station[st])
        else:
            out.append(topo.min_transfer(st, a.line, b.line))
    return tuple(out)


def build_candidates(
    rec: TravelRecord,
    runs: TrainIndex | Sequence[TrainRun],
    cfg: ConstraintConfig,
    topo: NetworkTopology | None = None,
) -> CandidateRecord:
    """Feasible trains per segment under the spatial and temporal constraints.

    Raises EmptyCandidateSet when any segment has no surviving train.
    """
    index = runs if isinstance(runs, TrainIndex) else TrainIndex(runs)
    afc = rec.afc
    mins = junction_minimums(rec, topo, cfg) if topo is not None else (0,) * (rec.segment_count - 1)
    earliest = afc.entry_time + cfg.access_min(afc.entry_station)
    latest = afc.exit_time - cfg.egress_min(afc.exit_station)
    slack = cfg.max_journey_slack_seconds

    per_seg: list[list[CandidateTrain]] = []
    for seg in rec.segments:
        dts, trains = index.trains(seg.line, seg.direction, seg.board_station, seg.alight_station)
        # AT > DT, so any train with DT beyond the exit bound is already out
        lo = bisect.bisect_left(dts, earliest)
        hi = bisect.bisect_right(dts, latest)
        per_seg.append([c for c in trains[lo:hi] if c.at <= latest])

    if slack is not None:
        per_seg[0] = [c for c in per_seg[0] if c.dt - afc.entry_time <= slack]
        per_seg[-1] = [c for c in per_seg[-1] if afc.exit_time - c.at <= slack]

    # forward: a train needs some feasible predecessor
    for m in range(1, len(per_seg)):
        if not per_seg[m - 1]:
            break
        first_arrival = min(c.at for c in per_seg[m - 1]) + mins[m - 1]
        per_seg[m] = [c for c in per_seg[m] if c.dt >= first_arrival]
    # backward: and some feasible successor
    for m in range(len(per_seg) - 2, -1, -1):
        if not per_seg[m + 1]:
            break
        last_departure = max(c.dt for c in per_seg[m + 1]) - mins[m]
        per_seg[m] = [c for c in per_seg[m] if c.at <= last_departure]

    for m, kept in enumerate(per_seg, start=1):
        if not kept:
            raise EmptyCandidateSet(m, afc.passenger_id)
    sets = tuple(CandidateSet(m, tuple(kept)) for m, kept in enumerate(per_seg, start=1))
    return CandidateRecord(rec, sets, mins)


def build_all(records, runs, cfg, topo):
    """Candidates for many records. Returns (assignable, [(record, reason)])."""
    index = runs if isinstance(runs, TrainIndex) else TrainIndex(runs)
    ok, bad = [], []
    for rec in records:
        try:
            ok.append(build_candidates(rec, index, cfg, topo))
        except EmptyCandidateSet as exc:
            bad.append((rec, f"empty_candidate_set_segment_{exc.segment}"))
    return ok, bad


def slice_datasets(cands: Iterable[CandidateRecord]) -> tuple[list[CandidateRecord], list[CandidateRecord]]:
    """Split into (observable, unknown): observable iff every set is a singleton."""
    observable, unknown = [], []
    for c in cands:
        (observable if c.observable else unknown).append(c)
    return observable, unknown
