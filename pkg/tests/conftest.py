import time
from types import SimpleNamespace

import pytest

from railtraj.candidates import ConstraintConfig
from railtraj.domain import AfcRecord, NetworkTopology, Stop, TrainRun, parse_time
from railtraj.evaluate import score
from railtraj.pipeline import InferenceConfig, run_inference
from railtraj.synth import default_scenario, default_topology, generate

DAY = "2023-05-10T"


def ts(hms: str) -> int:
    return parse_time(DAY + hms)


def afc(pid, o, t_in, d, t_out) -> AfcRecord:
    return AfcRecord(pid, o, ts(t_in) if isinstance(t_in, str) else t_in,
                     d, ts(t_out) if isinstance(t_out, str) else t_out)


def run(train_id, line, stops, direction="up") -> TrainRun:
    """stops: [(station, arrival, departure)] with times as hh:mm:ss or ints."""
    conv = lambda t: ts(t) if isinstance(t, str) else t
    return TrainRun(train_id, line, direction, tuple(Stop(s, conv(a), conv(d)) for s, a, d in stops))


@pytest.fixture(scope="session")
def topo() -> NetworkTopology:
    return NetworkTopology.from_json(default_topology())


@pytest.fixture(scope="session")
def default_run():
    """The default seeded scenario pushed through the full pipeline once."""
    sc = default_scenario()
    t0 = time.perf_counter()
    sim = generate(sc)
    cfg = InferenceConfig(constraints=ConstraintConfig.from_dict(sc.constraint_floors()))
    out = run_inference(sim.afc, sim.runs, sim.topology, cfg)
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(scenario=sc, sim=sim, cfg=cfg, out=out, elapsed=elapsed,
                           report=score(out.itineraries, sim.truth))


# acceptance lines, printed once at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
