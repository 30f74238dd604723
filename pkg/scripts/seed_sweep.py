"""Accuracy of the default scenario across seeds, with the nearest-train baseline."""

import argparse
import time

from railtraj.candidates import ConstraintConfig
from railtraj.evaluate import score, ssmt_baseline
from railtraj.pipeline import InferenceConfig, run_inference
from railtraj.synth import default_scenario, generate


def evaluate(sc, **overrides):
    t0 = time.perf_counter()
    sim = generate(sc)
    cfg = InferenceConfig(constraints=ConstraintConfig.from_dict(sc.constraint_floors()))
    for k, v in overrides.items():
        if hasattr(cfg.em, k):
            setattr(cfg.em, k, v)
        else:
            setattr(cfg, k, v)
    out = run_inference(sim.afc, sim.runs, sim.topology, cfg)
    rep = score(out.itineraries, sim.truth)
    rows, routes = [], {}
    for c in out.candidate_records:
        routes[c.rec.afc.passenger_id] = f"{c.rec.afc.entry_station}>{c.rec.afc.exit_station}"
        rows += [(c.rec.afc.passenger_id, m, t.train_id, None) for m, t in enumerate(ssmt_baseline(c), 1)]
    base = score(rows, sim.truth, routes)
    return sim, out, rep, base, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--walk-kind", default="normal", choices=["normal", "lognormal"])
    ap.add_argument("--frozen-access", action="store_true", help="keep the access prior fixed during EM")
    ap.add_argument("--unknown-only", action="store_true", help="run direct-route EM on unknown records only")
    args = ap.parse_args()
    kw = {}
    if args.frozen_access:
        kw["refit_access"] = False
    if args.unknown_only:
        kw["em_include_observable"] = False
    print("seed incidence  " + "  ".join(f"{k:>10s}" for k in ("BXQ#1", "BXQ#2", "S6#1", "comb", "lb_agree", "ssmt", "secs")))
    for seed in range(20230510, 20230510 + args.seeds):
        sim, out, rep, base, secs = evaluate(default_scenario(seed=seed, walk_kind=args.walk_kind), **kw)
        seg = rep.segments
        print(f"{seed} {sim.left_behind_incidence():9.3f}  "
              + "  ".join(f"{v:10.4f}" for v in (seg["CY>BXQ#1"].accuracy, seg["CY>BXQ#2"].accuracy,
                                                 seg["CY>S6#1"].accuracy, rep.combination_accuracy,
                                                 rep.left_behind_agreement, base.overall.accuracy, secs)))


if __name__ == "__main__":
    main()
