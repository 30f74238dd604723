"""Discrete-event ground-truth generator.

Trains follow a jittered timetable; passengers walk gate -> platform, queue
FIFO, board the first departing train with spare room (each full train they
watch leave adds one to their left-behind count), ride, walk to the next
platform at transfers, and finally walk out. Only gate times reach the AFC
file; the full chain is written as ground truth.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .domain import (
    AfcRecord,
    NetworkTopology,
    Stop,
    TrainRun,
    format_time,
    parse_time,
    write_afc,
    write_avl,
    write_topology,
)

log = logging.getLogger(__name__)

TRUTH_HEADER = [
    "passenger_id", "segment", "train_id", "platform_arrival", "board_time",
    "alight_time", "access_s", "transfer_s", "egress_s", "left_behind",
]


@dataclass
class WalkDist:
    mean: float
    sd: float
    floor: float = 0.0
    kind: str = "normal"  # "normal" or "lognormal", both re-drawn below the floor

    def __post_init__(self):
        if self.mean <= 0 or self.sd < 0:
            raise ValueError("walk distribution needs mean > 0 and sd >= 0")
        if self.kind not in ("normal", "lognormal"):
            raise ValueError(f"unknown walk distribution {self.kind!r}")
        if self.floor > self.mean + 4 * self.sd:
            raise ValueError("walk floor is unreachable")

    def draw(self, rng: np.random.Generator) -> int:
        while True:
            if self.kind == "normal":
                x = rng.normal(self.mean, self.sd)
            else:
                s2 = math.log1p((self.sd / self.mean) ** 2)
                x = rng.lognormal(math.log(self.mean) - s2 / 2, math.sqrt(s2))
            v = int(round(x))
            if v >= self.floor:
                return v


@dataclass
class LineService:
    line: str
    direction: str
    headway: int
    n_runs: int
    first_departure: int = 0  # seconds after the scenario start
    run_seconds: float | list[float] = 120.0
    dwell_seconds: float = 30.0
    jitter_sd: float = 0.0
    capacity: int | None = None  # None means unlimited
    # station -> (mean, sd) of non-simulated load already on board at departure
    background: dict[str, list[float]] = field(default_factory=dict)
    capacity_overrides: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.headway <= 0 or self.n_runs < 1:
            raise ValueError("headway must be > 0 and n_runs >= 1")
        if self.capacity is not None and self.capacity <= 0:
            raise ValueError("capacity must be > 0 (use capacity_overrides for a closed train)")


@dataclass
class Demand:
    origin: str
    destination: str
    count: int
    start: int  # seconds after the scenario start
    end: int


@dataclass
class ScenarioConfig:
    topology: dict
    services: list[LineService]
    demand: list[Demand]
    access: WalkDist
    egress: WalkDist
    transfer: WalkDist
    access_by_station: dict[str, WalkDist] = field(default_factory=dict)
    egress_by_station: dict[str, WalkDist] = field(default_factory=dict)
    transfer_by_station: dict[str, WalkDist] = field(default_factory=dict)
    start: str = "2023-05-10T07:00:00"
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioConfig":
        walk = lambda d: WalkDist(**d)
        return cls(
            topology=obj["topology"],
            services=[LineService(**s) for s in obj["services"]],
            demand=[Demand(**d) for d in obj["demand"]],
            access=walk(obj["access"]),
            egress=walk(obj["egress"]),
            transfer=walk(obj["transfer"]),
            access_by_station={k: walk(v) for k, v in obj.get("access_by_station", {}).items()},
            egress_by_station={k: walk(v) for k, v in obj.get("egress_by_station", {}).items()},
            transfer_by_station={k: walk(v) for k, v in obj.get("transfer_by_station", {}).items()},
            start=obj.get("start", "2023-05-10T07:00:00"),
            seed=int(obj.get("seed", 0)),
        )

    def access_walk(self, station: str) -> WalkDist:
        return self.access_by_station.get(station, self.access)

    def egress_walk(self, station: str) -> WalkDist:
        return self.egress_by_station.get(station, self.egress)

    def transfer_walk(self, station: str) -> WalkDist:
        return self.transfer_by_station.get(station, self.transfer)

    def constraint_floors(self) -> dict:
        """Constraint block whose minimums equal this scenario's walk floors."""
        stations = list(self.topology_obj().stations)
        return {
            "min_access_seconds": int(self.access.floor),
            "min_egress_seconds": int(self.egress.floor),
            "access_by_station": {s: int(self.access_walk(s).floor) for s in stations
                                  if s in self.access_by_station},
            "egress_by_station": {s: int(self.egress_walk(s).floor) for s in stations
                                  if s in self.egress_by_station},
        }

    def topology_obj(self) -> NetworkTopology:
        return NetworkTopology.from_json(self.topology)


@dataclass(frozen=True)
class TruthSegment:
    passenger_id: str
    segment: int
    train_id: str
    platform_arrival: int
    board_time: int
    alight_time: int
    access_s: int | None
    transfer_s: int | None
    egress_s: int | None
    left_behind: int


@dataclass
class SimulationResult:
    topology: NetworkTopology
    afc: list[AfcRecord]
    runs: list[TrainRun]
    truth: list[TruthSegment]
    dropped: int
    # (train_id, station, on-board load after departure incl. background, capacity or None)
    link_loads: list[tuple[str, str, int, int | None]]

    def left_behind_incidence(self) -> float:
        by_pax: dict[str, int] = {}
        for t in self.truth:
            by_pax[t.passenger_id] = max(by_pax.get(t.passenger_id, 0), t.left_behind)
        return sum(1 for k in by_pax.values() if k > 0) / max(len(by_pax), 1)


# ---------------------------------------------------------------------------


def _build_runs(cfg: ScenarioConfig, topo: NetworkTopology, t0: int, rng):
    runs: list[TrainRun] = []
    caps: dict[str, int | None] = {}
    bg: dict[tuple[str, str], int] = {}
    for svc in cfg.services:
        seq = topo.lines[(svc.line, svc.direction)]
        links = len(seq) - 1
        run_s = svc.run_seconds if isinstance(svc.run_seconds, list) else [svc.run_seconds] * links
        if len(run_s) != links:
            raise ValueError(f"{svc.line}/{svc.direction}: need {links} run times")
        for i in range(svc.n_runs):
            tid = f"{svc.line}{svc.direction[:1].upper()}{i + 1:03d}"
            dep = t0 + svc.first_departure + i * svc.headway + int(round(rng.normal(0, svc.jitter_sd)))
            arr = dep - int(round(svc.dwell_seconds))
            stops = [Stop(seq[0], arr, dep)]
            for k in range(links):
                arr = dep + max(30, int(round(run_s[k] + rng.normal(0, svc.jitter_sd))))
                dep = arr + max(10, int(round(svc.dwell_seconds + rng.normal(0, svc.jitter_sd / 2))))
                stops.append(Stop(seq[k + 1], arr, dep))
            runs.append(TrainRun(tid, svc.line, svc.direction, tuple(stops)))
            cap = svc.capacity_overrides.get(tid, svc.capacity)
            caps[tid] = cap
            for st in seq:
                mean_sd = svc.background.get(st)
                load = 0
                if mean_sd is not None and cap is not None:
                    load = int(min(max(round(rng.normal(mean_sd[0], mean_sd[1])), 0), cap))
                bg[(tid, st)] = load
    return runs, caps, bg


def generate(cfg: ScenarioConfig) -> SimulationResult:
    """Simulate one scenario. Deterministic in ``cfg`` (including its seed)."""
    topo = cfg.topology_obj()
    rng = np.random.default_rng(cfg.seed)
    t0 = parse_time(cfg.start)
    runs, caps, bg = _build_runs(cfg, topo, t0, rng)

    # passengers, drawn in id order
    pax = []
    specs = []
    for d in cfg.demand:
        legs = topo.route(d.origin, d.destination)
        for _ in range(d.count):
            specs.append((int(rng.integers(d.start, d.end)), d, legs))
    specs.sort(key=lambda s: s[0])
    for n, (t_in_off, d, legs) in enumerate(specs, start=1):
        walks = [cfg.access_walk(d.origin).draw(rng)]
        for leg in legs[:-1]:
            walks.append(cfg.transfer_walk(leg.alight).draw(rng))
        egress = cfg.egress_walk(d.destination).draw(rng)
        pax.append({
            "id": f"p{n:06d}", "od": (d.origin, d.destination), "legs": legs,
            "t_in": t0 + t_in_off, "walks": walks, "egress": egress,
            "leg": 0, "k": 0, "segs": [], "platform": None, "t_out": None,
        })

    events: list = []
    seq = 0

    def push(t, prio, kind, payload):
        nonlocal seq
        heapq.heappush(events, (t, prio, seq, kind, payload))
        seq += 1

    ALIGHT, PLATFORM, DEPART = 0, 1, 2
    for run in runs:
        for idx, st in enumerate(run.stops):
            push(st.arrival, ALIGHT, "alight", (run, idx))
            push(st.departure, DEPART, "depart", (run, idx))
    for p in pax:
        push(p["t_in"] + p["walks"][0], PLATFORM, "platform", p)

    queues: dict[tuple[str, str, str], deque] = {}
    riders: dict[str, list] = {}
    link_loads = []

    while events:
        t, _, _, kind, payload = heapq.heappop(events)
        if kind == "platform":
            p = payload
            leg = p["legs"][p["leg"]]
            p["platform"] = t
            p["k"] = 0
            queues.setdefault((leg.board, leg.line, leg.direction), deque()).append(p)
        elif kind == "alight":
            run, idx = payload
            st = run.stops[idx].station
            staying = []
            for p in riders.get(run.train_id, []):
                leg = p["legs"][p["leg"]]
                if leg.alight != st:
                    staying.append(p)
                    continue
                p["segs"][-1]["alight_time"] = t
                if p["leg"] + 1 == len(p["legs"]):
                    p["t_out"] = t + p["egress"]
                else:
                    p["leg"] += 1
                    push(t + p["walks"][p["leg"]], PLATFORM, "platform", p)
            riders[run.train_id] = staying
        else:
            run, idx = payload
            st = run.stops[idx].station
            q = queues.get((st, run.line, run.direction))
            on = riders.setdefault(run.train_id, [])
            cap = caps[run.train_id]
            load_bg = bg[(run.train_id, st)]
            room = math.inf if cap is None else cap - load_bg - len(on)
            if q:
                while q and room > 0:
                    p = q.popleft()
                    p["segs"].append({
                        "train_id": run.train_id, "platform_arrival": p["platform"],
                        "board_time": t, "left_behind": p["k"],
                    })
                    on.append(p)
                    room -= 1
                for p in q:
                    p["k"] += 1
            if idx < len(run.stops) - 1:
                link_loads.append((run.train_id, st, load_bg + len(on), cap))

    afc, truth = [], []
    dropped = 0
    for p in pax:
        if p["t_out"] is None:
            dropped += 1
            continue
        o, d = p["od"]
        afc.append(AfcRecord(p["id"], o, p["t_in"], d, p["t_out"]))
        segs = p["segs"]
        for m, s in enumerate(segs, start=1):
            last = m == len(segs)
            truth.append(TruthSegment(
                p["id"], m, s["train_id"], s["platform_arrival"], s["board_time"], s["alight_time"],
                s["board_time"] - p["t_in"] if m == 1 else None,
                None if last else segs[m]["board_time"] - s["alight_time"],
                p["t_out"] - s["alight_time"] if last else None,
                s["left_behind"],
            ))
    if dropped:
        log.warning("%d passengers stranded past the last run were dropped", dropped)
    return SimulationResult(topo, afc, runs, truth, dropped, link_loads)


# ---------------------------------------------------------------------------
# files


def _opt(v):
    return "" if v is None else str(v)


def write_truth(truth, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for t in truth:
            w.writerow([
                t.passenger_id, t.segment, t.train_id, format_time(t.platform_arrival),
                format_time(t.board_time), format_time(t.alight_time),
                _opt(t.access_s), _opt(t.transfer_s), _opt(t.egress_s), t.left_behind,
            ])


def load_truth(path) -> list[TruthSegment]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRUTH_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRUTH_HEADER)}")
        for r in reader:
            opt = lambda s: int(s) if s != "" else None
            out.append(TruthSegment(
                r["passenger_id"], int(r["segment"]), r["train_id"],
                parse_time(r["platform_arrival"]), parse_time(r["board_time"]),
                parse_time(r["alight_time"]), opt(r["access_s"]), opt(r["transfer_s"]),
                opt(r["egress_s"]), int(r["left_behind"]),
            ))
    return out


def write_outputs(res: SimulationResult, outdir) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "afc": outdir / "afc.csv",
        "avl": outdir / "avl.csv",
        "topology": outdir / "topology.json",
        "truth": outdir / "truth.csv",
    }
    write_afc(res.afc, paths["afc"])
    write_avl(res.runs, paths["avl"])
    write_topology(res.topology, paths["topology"])
    write_truth(res.truth, paths["truth"])
    return paths


# ---------------------------------------------------------------------------
# default desk-scale scenario


def default_topology() -> dict:
    l1 = ["CY", "S2", "S3", "S4", "DS", "S6"]
    l2 = ["S7", "DS", "S8", "S9", "BXQ"]
    stations = [{"id": s, "name": s, "transfer": s == "DS"} for s in dict.fromkeys(l1 + l2)]
    return {
        "stations": stations,
        "lines": {"L1": {"up": l1}, "L2": {"up": l2}},
        "transfer_links": [{"station": "DS", "line_a": "L1", "line_b": "L2", "min_transfer_seconds": 40}],
        "routes": [
            {"origin": "CY", "destination": "BXQ", "legs": [
                {"line": "L1", "direction": "up", "board": "CY", "alight": "DS"},
                {"line": "L2", "direction": "up", "board": "DS", "alight": "BXQ"},
            ]},
            {"origin": "CY", "destination": "S6", "legs": [
                {"line": "L1", "direction": "up", "board": "CY", "alight": "S6"},
            ]},
        ],
    }


def default_scenario(seed: int = 20230510, walk_kind: str = "normal",
                     n_transfer: int = 2000, n_direct: int = 2000) -> ScenarioConfig:
    """2 lines, 10 stations, 120 s headway, 2 h of entries, congestion at CY."""
    window = 7200
    demand = []
    # off-peak shoulders around a 45-minute peak
    for od, n in ((("CY", "BXQ"), n_transfer), (("CY", "S6"), n_direct)):
        shoulder = n * 3 // 10
        demand.append(Demand(od[0], od[1], shoulder, 0, 2700))
        demand.append(Demand(od[0], od[1], n - 2 * shoulder, 2700, 5400))
        demand.append(Demand(od[0], od[1], shoulder, 5400, window))
    return ScenarioConfig(
        topology=default_topology(),
        services=[
            LineService("L1", "up", 120, 85, first_departure=-300, run_seconds=150, dwell_seconds=30,
                        jitter_sd=6, capacity=100, background={"CY": [24, 12]}),
            LineService("L2", "up", 120, 85, first_departure=-245, run_seconds=120, dwell_seconds=30,
                        jitter_sd=6, capacity=100, background={"DS": [20, 8]}),
        ],
        demand=demand,
        access=WalkDist(45, 6, 35, walk_kind),
        egress=WalkDist(120, 30, 30, walk_kind),
        transfer=WalkDist(55, 6, 40, walk_kind),
        seed=seed,
    )


def recovery_scenario(seed: int, n_passengers: int = 20000) -> ScenarioConfig:
    """Single direct OD, uncapacitated trains: a clean testbed for egress recovery."""
    sc = default_scenario(seed=seed, n_transfer=0, n_direct=n_passengers)
    for s in sc.services:
        s.capacity = None
        s.background = {}
    return sc
