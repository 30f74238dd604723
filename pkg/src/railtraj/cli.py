"""Command line entry point: ``railtraj {simulate,infer,evaluate,report}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .candidates import EmptyCandidateSet, TrainIndex, build_all
from .domain import InputFileError, TopologyError, load_afc, load_avl, load_topology, segment_records
from .evaluate import EmptyEvaluation, score, ssmt_baseline, write_report
from .itinerary import (
    ItineraryError,
    read_itineraries_csv,
    write_itineraries_csv,
    write_itineraries_jsonl,
    write_rejects,
)
from .pipeline import InferenceConfig, run_inference
from .prob import NoObservableData, save_models
from .synth import ScenarioConfig, default_scenario, generate, load_truth, write_outputs

log = logging.getLogger("railtraj")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config


def load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
        base = p.parent
        for k, v in list((cfg.get("inputs") or {}).items()):
            if v is not None and not Path(v).is_absolute():
                cfg["inputs"][k] = str(base / v)
        if isinstance(cfg.get("scenario"), str) and cfg["scenario"] != "default":
            cfg["scenario"] = str(base / cfg["scenario"])
        if cfg.get("output_dir") and not Path(cfg["output_dir"]).is_absolute():
            cfg["output_dir"] = str(base / cfg["output_dir"])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["output_dir"] = args.out
    if args.threads is not None:
        cfg["threads"] = args.threads
    if "output_dir" not in cfg:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    return cfg


def scenario_from(cfg: dict) -> ScenarioConfig | None:
    sc = cfg.get("scenario")
    if sc is None:
        return None
    if sc == "default":
        sc = {"preset": "default"}
    if isinstance(sc, str):
        p = Path(sc)
        if not p.is_file():
            raise ConfigError(f"scenario file not found: {p}")
        sc = json.loads(p.read_text())
    if "preset" in sc:
        if sc["preset"] != "default":
            raise ConfigError(f"unknown scenario preset {sc['preset']!r}")
        kw = {k: sc[k] for k in ("walk_kind", "n_transfer", "n_direct") if k in sc}
        scen = default_scenario(**kw)
    else:
        scen = ScenarioConfig.from_json(sc)
    if cfg.get("seed") is not None:
        scen.seed = int(cfg["seed"])
    return scen


def inference_config(cfg: dict) -> InferenceConfig:
    try:
        return InferenceConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad inference settings: {exc}") from exc


def input_paths(cfg: dict, need_truth: bool = False) -> dict[str, Path]:
    out = Path(cfg["output_dir"])
    given = cfg.get("inputs") or {}
    names = ["afc", "avl", "topology"] + (["truth"] if need_truth else [])
    defaults = {"afc": "afc.csv", "avl": "avl.csv", "topology": "topology.json", "truth": "truth.csv"}
    paths = {}
    for n in names:
        p = Path(given[n]) if given.get(n) else out / defaults[n]
        if not p.is_file():
            raise ConfigError(f"{n} input not found: {p}")
        paths[n] = p
    return paths


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, inputs: dict, outputs: list[Path]) -> None:
    # output location and thread count do not affect results
    hashed = {k: v for k, v in cfg.items() if k not in ("output_dir", "threads")}
    canon = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": cfg.get("seed"),
        "inputs": {k: {"path": Path(v).name, "sha256": sha256_file(v)} for k, v in sorted(inputs.items())},
        "outputs": {str(p.relative_to(out)): sha256_file(p) for p in sorted(outputs)},
        "versions": {
            "railtraj": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_inputs(paths):
    topo = load_topology(paths["topology"])
    afc, afc_err = load_afc(paths["afc"], topo.stations)
    runs, avl_err = load_avl(paths["avl"], topo.stations)
    if not afc:
        raise DataError(f"no usable AFC rows in {paths['afc']}")
    if not runs:
        raise DataError(f"no usable AVL runs in {paths['avl']}")
    return topo, afc, runs, afc_err, avl_err


def _group_label(key) -> str:
    return "_".join(str(k) for k in key)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict) -> int:
    scen = scenario_from(cfg)
    if scen is None:
        raise ConfigError("simulate needs a 'scenario' entry in the config")
    out = Path(cfg["output_dir"])
    res = generate(scen)
    paths = write_outputs(res, out)
    (out / "scenario.json").write_text(json.dumps(scen.to_json(), indent=2, sort_keys=True) + "\n")
    log.info("simulated %d passengers (%d dropped), left-behind incidence %.3f",
             len(res.afc), res.dropped, res.left_behind_incidence())
    write_manifest(out, "simulate", cfg, {}, [*paths.values(), out / "scenario.json"])
    return EXIT_OK


def cmd_infer(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    icfg = inference_config(cfg)
    if not cfg.get("inputs") and scenario_from(cfg) is not None and not (out / "afc.csv").is_file():
        cmd_simulate(cfg)
    paths = input_paths(cfg)
    topo, afc, runs, afc_err, avl_err = _load_inputs(paths)
    try:
        res = run_inference(afc, runs, topo, icfg)
    except NoObservableData as exc:
        raise DataError(str(exc)) from exc

    out.mkdir(parents=True, exist_ok=True)
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    written = [out / "itineraries.csv", out / "itineraries.jsonl", out / "rejects.csv", out / "models.json"]
    its = res.itineraries
    write_itineraries_csv(its, written[0])
    write_itineraries_jsonl(its, written[1])
    write_rejects(res.rejects, written[2])
    eg, ac, junctions = res.fitted_models()
    from .prob import GroupedNormal
    save_models(written[3], egress=eg, access=ac,
                egress_init=res.egress_init, access_prior=res.access_prior,
                junction=GroupedNormal({k: v for k, v in junctions.items()}))
    for g in res.groups:
        lab = _group_label(g.key)
        for m, tr in enumerate(g.traces, start=1):
            p = traces / f"em_{lab}_seg{m}.csv"
            tr.write_csv(p)
            written.append(p)
        if g.klem is not None:
            p = traces / f"klem_{lab}.csv"
            g.klem.write_diagnostics(p)
            written.append(p)
    log.info("inferred %d itineraries (%d rejects; %d AFC and %d AVL rows dropped on parse)",
             len(its), len(res.rejects), len(afc_err), len(avl_err))
    write_manifest(out, "infer", cfg, paths, written)
    return EXIT_OK


def _ssmt_rows(cfg, paths, icfg):
    topo, afc, runs, _, _ = _load_inputs(paths)
    records, _ = segment_records(afc, topo)
    cands, _ = build_all(records, TrainIndex(runs), icfg.constraints, topo)
    rows = []
    for c in cands:
        for m, t in enumerate(ssmt_baseline(c), start=1):
            rows.append((c.rec.afc.passenger_id, m, t.train_id, None))
    routes = {c.rec.afc.passenger_id: f"{c.rec.afc.entry_station}>{c.rec.afc.exit_station}" for c in cands}
    return rows, routes


def cmd_evaluate(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    icfg = inference_config(cfg)
    paths = input_paths(cfg, need_truth=True)
    it_path = out / "itineraries.csv"
    if not it_path.is_file():
        raise ConfigError(f"itineraries not found: {it_path} (run 'infer' first)")
    truth = load_truth(paths["truth"])
    its = read_itineraries_csv(it_path)
    try:
        rep = score(its, truth)
        rows, routes = _ssmt_rows(cfg, paths, icfg)
        base = score(rows, truth, routes)
    except EmptyEvaluation as exc:
        raise DataError(str(exc)) from exc
    conf = out / "confusion"
    conf.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.json"]
    for name, r in (("klem", rep), ("ssmt", base)):
        for lab, cm in r.confusion.items():
            p = conf / f"{name}_{lab.replace('>', '-').replace('#', '_seg')}.csv"
            cm.write_csv(p)
            written.append(p)
    (out / "metrics.json").write_text(json.dumps(
        {"inferred": rep.to_json(), "ssmt_baseline": base.to_json()}, indent=2, sort_keys=True) + "\n")
    write_report(rep, out / "metrics_inferred.json")
    written.append(out / "metrics_inferred.json")
    log.info("accuracy %.4f (combination %.4f) vs nearest-train baseline %.4f",
             rep.overall.accuracy, rep.combination_accuracy, base.overall.accuracy)
    write_manifest(out, "evaluate", cfg, {**paths, "itineraries": it_path}, written)
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    rep_dir = out / "report"
    rep_dir.mkdir(parents=True, exist_ok=True)
    it_path = out / "itineraries.csv"
    if not it_path.is_file():
        raise ConfigError(f"itineraries not found: {it_path} (run 'infer' first)")
    its = {it.passenger_id: it for it in read_itineraries_csv(it_path)}
    written = []

    # EM traces merged into one long table
    p = rep_dir / "em_trace.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trace", "iteration", "loglik", "mu", "sigma2", "delta"])
        for tp in sorted((out / "traces").glob("em_*.csv")):
            with tp.open(newline="") as src:
                for row in csv.DictReader(src):
                    w.writerow([tp.stem, row["iteration"], row["loglik"], row["mu"], row["sigma2"], row["delta"]])
    written.append(p)

    truth_path = (cfg.get("inputs") or {}).get("truth") or out / "truth.csv"
    truth = load_truth(truth_path) if Path(truth_path).is_file() else []
    true_tr = {(t.passenger_id, t.segment): t for t in truth}

    p = rep_dir / "transfer_times.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["passenger_id", "junction", "inferred_s", "actual_s"])
        for pid in sorted(its):
            for m, v in enumerate(its[pid].transfer_s, start=1):
                t = true_tr.get((pid, m))
                w.writerow([pid, m, v, "" if t is None or t.transfer_s is None else t.transfer_s])
    written.append(p)

    p = rep_dir / "left_behind.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["passenger_id", "segment", "inferred_k", "actual_k", "train_match"])
        for pid in sorted(its):
            it = its[pid]
            for leg, k in zip(it.legs, it.left_behind):
                t = true_tr.get((pid, leg.segment))
                w.writerow([pid, leg.segment, k, "" if t is None else t.left_behind,
                            "" if t is None else int(t.train_id == leg.train_id)])
    written.append(p)

    p = rep_dir / "access_egress.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["passenger_id", "inferred_access_s", "actual_access_s", "inferred_egress_s", "actual_egress_s"])
        for pid in sorted(its):
            it = its[pid]
            first = true_tr.get((pid, 1))
            last = true_tr.get((pid, len(it.legs)))
            w.writerow([pid, it.access_s, "" if first is None else first.access_s,
                        it.egress_s, "" if last is None else last.egress_s])
    written.append(p)
    write_manifest(out, "report", cfg, {"itineraries": it_path}, written)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "infer": cmd_infer, "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="railtraj", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="pipeline JSON config")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--threads", type=int, help="worker threads for per-route inference")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("railtraj: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("railtraj: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"railtraj: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InputFileError, TopologyError, EmptyCandidateSet, ValueError) as exc:
        print(f"railtraj: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ItineraryError, AssertionError) as exc:
        print(f"railtraj: internal invariant failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
