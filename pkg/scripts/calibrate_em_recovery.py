"""Spread of the EM egress estimate across seeds at n=5000 unknown records.

Prints per-seed estimates and the empirical standard deviation, which is
the basis for the +-6 s recovery tolerance used in the acceptance suite.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from test_acceptance import recovery_run  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--first-seed", type=int, default=1)
    args = ap.parse_args()
    est = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        out, n_u = recovery_run(seed)
        p = out.groups[0].segment_models[-1]
        est.append((p.mu, p.sigma))
        print(f"seed={seed:3d} n_unknown={n_u} n_observable={out.observable} mu={p.mu:8.3f} sigma={p.sigma:7.3f}")
    a = np.array(est)
    sd = a.std(axis=0, ddof=1)
    bias = a.mean(axis=0) - np.array([120.0, 30.0])
    print(f"mean mu={a[:, 0].mean():.3f} sigma={a[:, 1].mean():.3f}  bias mu={bias[0]:+.3f} sigma={bias[1]:+.3f}")
    print(f"sd   mu={sd[0]:.3f} sigma={sd[1]:.3f}  3*sd mu={3 * sd[0]:.3f} sigma={3 * sd[1]:.3f}")
    print(f"worst |error| mu={np.abs(a[:, 0] - 120).max():.3f} sigma={np.abs(a[:, 1] - 30).max():.3f}")


if __name__ == "__main__":
    main()
