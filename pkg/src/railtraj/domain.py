"""Core domain types and file I/O for AFC, AVL and network topology inputs.

Timestamps are integer seconds since the epoch. ISO-8601 strings are read
as naive local times in a single zone, so the epoch offset never matters
for differences.
"""

from __future__ import annotations

import calendar
import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

_EPOCH = datetime(1970, 1, 1)

AFC_HEADER = ["passenger_id", "entry_station", "entry_time", "exit_station", "exit_time"]
AVL_HEADER = ["train_id", "line", "direction", "station", "arrival_time", "departure_time"]


class InputFileError(Exception):
    """Raised when an input file cannot be read at all (missing, bad header)."""


class TopologyError(ValueError):
    """The topology violates a structural invariant."""


class UnroutableOD(KeyError):
    def __init__(self, origin: str, destination: str):
        super().__init__(f"no route defined for OD ({origin}, {destination})")
        self.origin = origin
        self.destination = destination


@dataclass(frozen=True)
class RowError:
    line: int
    reason: str
    raw: str = ""


def parse_time(text: str) -> int:
    """ISO-8601 local time -> integer seconds. Sub-second parts are truncated."""
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is not None:
        dt = dt.replace(tzinfo=None)
    return calendar.timegm(dt.replace(microsecond=0).timetuple())


def format_time(ts: int) -> str:
    return (_EPOCH + timedelta(seconds=int(ts))).strftime("%Y-%m-%dT%H:%M:%S")


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class Station:
    id: str
    name: str = ""
    transfer: bool = False


@dataclass(frozen=True)
class TransferLink:
    station: str
    line_a: str
    line_b: str
    min_transfer_seconds: int = 0


@dataclass(frozen=True)
class RouteLeg:
    line: str
    direction: str
    board: str
    alight: str


@dataclass(frozen=True)
class NetworkTopology:
    stations: dict[str, Station]
    lines: dict[tuple[str, str], tuple[str, ...]]
    transfer_links: tuple[TransferLink, ...] = ()
    routes: dict[tuple[str, str], tuple[RouteLeg, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for (line, direction), seq in self.lines.items():
            if len(set(seq)) != len(seq):
                raise TopologyError(f"line {line}/{direction} visits a station twice")
            for s in seq:
                if s not in self.stations:
                    raise TopologyError(f"line {line}/{direction}: unknown station {s!r}")
        for link in self.transfer_links:
            if link.station not in self.stations:
                raise TopologyError(f"transfer link at unknown station {link.station!r}")
            if link.min_transfer_seconds < 0:
                raise TopologyError(f"negative min_transfer_seconds at {link.station!r}")
        for (o, d), legs in self.routes.items():
            if not legs:
                raise TopologyError(f"route {o}->{d} has no legs")
            if legs[0].board != o or legs[-1].alight != d:
                raise TopologyError(f"route {o}->{d} does not start at {o} and end at {d}")
            for leg in legs:
                seq = self.lines.get((leg.line, leg.direction))
                if seq is None:
                    raise TopologyError(f"route {o}->{d}: unknown line {leg.line}/{leg.direction}")
                if leg.board not in seq or leg.alight not in seq:
                    raise TopologyError(f"route {o}->{d}: leg stations not on {leg.line}")
                if seq.index(leg.board) >= seq.index(leg.alight):
                    raise TopologyError(f"route {o}->{d}: leg runs against {leg.line}/{leg.direction}")
            for a, b in zip(legs, legs[1:]):
                if a.alight != b.board:
                    raise TopologyError(f"route {o}->{d}: legs do not chain at {a.alight}")
                if self.find_link(a.alight, a.line, b.line) is None:
                    raise TopologyError(
                        f"route {o}->{d}: no transfer link at {a.alight} between {a.line} and {b.line}"
                    )

    def find_link(self, station: str, line_a: str, line_b: str) -> TransferLink | None:
        for link in self.transfer_links:
            if link.station == station and {link.line_a, link.line_b} == {line_a, line_b}:
                return link
        return None

    def min_transfer(self, station: str, line_a: str, line_b: str) -> int:
        link = self.find_link(station, line_a, line_b)
        return 0 if link is None else link.min_transfer_seconds

    def route(self, origin: str, destination: str) -> tuple[RouteLeg, ...]:
        try:
            return self.routes[(origin, destination)]
        except KeyError:
            raise UnroutableOD(origin, destination) from None

    def to_json(self) -> dict:
        lines: dict[str, dict[str, list[str]]] = {}
        for (line, direction), seq in self.lines.items():
            lines.setdefault(line, {})[direction] = list(seq)
        return {
            "stations": [
                {"id": s.id, "name": s.name, "transfer": s.transfer} for s in self.stations.values()
            ],
            "lines": lines,
            "transfer_links": [
                {
                    "station": t.station,
                    "line_a": t.line_a,
                    "line_b": t.line_b,
                    "min_transfer_seconds": t.min_transfer_seconds,
                }
                for t in self.transfer_links
            ],
            "routes": [
                {
                    "origin": o,
                    "destination": d,
                    "legs": [
                        {"line": l.line, "direction": l.direction, "board": l.board, "alight": l.alight}
                        for l in legs
                    ],
                }
                for (o, d), legs in self.routes.items()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkTopology":
        stations = {}
        for s in obj["stations"]:
            sid = str(s["id"])
            if sid in stations:
                raise TopologyError(f"duplicate station id {sid!r}")
            stations[sid] = Station(sid, s.get("name", ""), bool(s.get("transfer", False)))
        lines = {
            (str(line), str(direction)): tuple(str(x) for x in seq)
            for line, dirs in obj["lines"].items()
            for direction, seq in dirs.items()
        }
        links = tuple(
            TransferLink(
                str(t["station"]), str(t["line_a"]), str(t["line_b"]), int(t.get("min_transfer_seconds", 0))
            )
            for t in obj.get("transfer_links", [])
        )
        routes: dict[tuple[str, str], tuple[RouteLeg, ...]] = {}
        for r in obj.get("routes", []):
            key = (str(r["origin"]), str(r["destination"]))
            if key in routes:
                raise TopologyError(f"route {key[0]}->{key[1]} defined twice")
            routes[key] = tuple(
                RouteLeg(str(l["line"]), str(l["direction"]), str(l["board"]), str(l["alight"]))
                for l in r["legs"]
            )
        return cls(stations, lines, links, routes)


def load_topology(path) -> NetworkTopology:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFileError(f"cannot read topology {path}: {exc}") from exc
    return NetworkTopology.from_json(obj)


def write_topology(topo: NetworkTopology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_json(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# AFC


@dataclass(frozen=True)
class AfcRecord:
    passenger_id: str
    entry_station: str
    entry_time: int
    exit_station: str
    exit_time: int

    @property
    def span(self) -> int:
        return self.exit_time - self.entry_time

    @property
    def od(self) -> tuple[str, str]:
        return (self.entry_station, self.exit_station)


def _open_csv(path, header: list[str]):
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(fh)
    first = next(reader, None)
    if first is None or [h.strip() for h in first] != header:
        fh.close()
        raise InputFileError(f"{path}: expected header {','.join(header)}")
    return fh, reader


def load_afc(path, stations: Iterable[str] | None = None) -> tuple[list[AfcRecord], list[RowError]]:
    """Parse an AFC CSV. Bad rows are collected, not raised."""
    known = set(stations) if stations is not None else None
    records: list[AfcRecord] = []
    errors: list[RowError] = []
    fh, reader = _open_csv(path, AFC_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            raw = ",".join(row)
            if len(row) != len(AFC_HEADER):
                errors.append(RowError(lineno, "wrong field count", raw))
                continue
            pid, o, tin, d, tout = (x.strip() for x in row)
            try:
                t_in, t_out = parse_time(tin), parse_time(tout)
            except ValueError:
                errors.append(RowError(lineno, "malformed timestamp", raw))
                continue
            if known is not None and (o not in known or d not in known):
                errors.append(RowError(lineno, "unknown station id", raw))
                continue
            if o == d:
                errors.append(RowError(lineno, "entry station equals exit station", raw))
                continue
            if t_out <= t_in:
                errors.append(RowError(lineno, "non-positive journey span", raw))
                continue
            records.append(AfcRecord(pid, o, t_in, d, t_out))
    for e in errors:
        log.warning("AFC %s line %d rejected: %s", path, e.line, e.reason)
    return records, errors


def write_afc(records: Iterable[AfcRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AFC_HEADER)
        for r in records:
            w.writerow([r.passenger_id, r.entry_station, format_time(r.entry_time),
                        r.exit_station, format_time(r.exit_time)])


# ---------------------------------------------------------------------------
# AVL


@dataclass(frozen=True)
class Stop:
    station: str
    arrival: int
    departure: int


@dataclass(frozen=True)
class TrainRun:
    train_id: str
    line: str
    direction: str
    stops: tuple[Stop, ...]

    def __post_init__(self):
        prev_dep = None
        for s in self.stops:
            if s.departure < s.arrival:
                raise ValueError(f"train {self.train_id}: departure before arrival at {s.station}")
            if prev_dep is not None and s.arrival <= prev_dep:
                raise ValueError(f"train {self.train_id}: stop times not increasing at {s.station}")
            prev_dep = s.departure

    def stop_at(self, station: str) -> Stop | None:
        for s in self.stops:
            if s.station == station:
                return s
        return None

    def stop_index(self, station: str) -> int:
        for i, s in enumerate(self.stops):
            if s.station == station:
                return i
        return -1


def load_avl(path, stations: Iterable[str] | None = None) -> tuple[list[TrainRun], list[RowError]]:
    """Parse an AVL CSV into runs. Stops keep file order within each train.

    A train with any inconsistent stop is dropped whole; individual bad rows
    are dropped on their own.
    """
    known = set(stations) if stations is not None else None
    errors: list[RowError] = []
    grouped: dict[str, list] = {}
    header_of: dict[str, tuple[str, str]] = {}
    first_line: dict[str, int] = {}
    fh, reader = _open_csv(path, AVL_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            raw = ",".join(row)
            if len(row) != len(AVL_HEADER):
                errors.append(RowError(lineno, "wrong field count", raw))
                continue
            tid, line, direction, station, at, dt = (x.strip() for x in row)
            try:
                a, d = parse_time(at), parse_time(dt)
            except ValueError:
                errors.append(RowError(lineno, "malformed timestamp", raw))
                continue
            if known is not None and station not in known:
                errors.append(RowError(lineno, "unknown station id", raw))
                continue
            if tid in header_of and header_of[tid] != (line, direction):
                errors.append(RowError(lineno, "train changes line/direction", raw))
                continue
            header_of.setdefault(tid, (line, direction))
            first_line.setdefault(tid, lineno)
            grouped.setdefault(tid, []).append(Stop(station, a, d))
    runs: list[TrainRun] = []
    for tid, stops in grouped.items():
        line, direction = header_of[tid]
        try:
            runs.append(TrainRun(tid, line, direction, tuple(stops)))
        except ValueError as exc:
            errors.append(RowError(first_line[tid], str(exc)))
    for e in errors:
        log.warning("AVL %s line %d rejected: %s", path, e.line, e.reason)
    return runs, errors


def write_avl(runs: Iterable[TrainRun], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AVL_HEADER)
        for run in runs:
            for s in run.stops:
                w.writerow([run.train_id, run.line, run.direction, s.station,
                            format_time(s.arrival), format_time(s.departure)])


# ---------------------------------------------------------------------------
# travel records


@dataclass(frozen=True)
class TripSegment:
    index: int
    board_station: str
    alight_station: str
    line: str
    direction: str


@dataclass(frozen=True)
class TravelRecord:
    afc: AfcRecord
    segments: tuple[TripSegment, ...]

    @property
    def segment_count(self) -> int:
        return len(self.segments)

    @property
    def od(self) -> tuple[str, str]:
        return self.afc.od


def segment_record(afc: AfcRecord, topo: NetworkTopology) -> TravelRecord:
    """Cut a journey into per-train segments at the route's transfer stations."""
    legs = topo.route(afc.entry_station, afc.exit_station)
    segs = tuple(
        TripSegment(m, leg.board, leg.alight, leg.line, leg.direction)
        for m, leg in enumerate(legs, start=1)
    )
    return TravelRecord(afc, segs)


def chaining_ok(rec: TravelRecord) -> bool:
    s = rec.segments
    if not s or s[0].board_station != rec.afc.entry_station or s[-1].alight_station != rec.afc.exit_station:
        return False
    return all(a.alight_station == b.board_station for a, b in zip(s, s[1:]))


def segment_records(
    afcs: Sequence[AfcRecord], topo: NetworkTopology
) -> tuple[list[TravelRecord], list[tuple[AfcRecord, str]]]:
    out, bad = [], []
    for a in afcs:
        try:
            out.append(segment_record(a, topo))
        except UnroutableOD as exc:
            bad.append((a, "unroutable_od"))
            log.debug("%s", exc)
    return out, bad
