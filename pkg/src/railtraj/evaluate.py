"""Scoring inferred trains against ground truth, plus the nearest-train baseline."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .candidates import CandidateRecord, CandidateTrain


class EmptyEvaluation(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray  # counts[actual, inferred]

    @classmethod
    def from_pairs(cls, actual: Sequence[str], inferred: Sequence[str]) -> "ConfusionMatrix":
        labels = sorted(set(actual) | set(inferred))
        pos = {l: i for i, l in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for a, p in zip(actual, inferred):
            counts[pos[a], pos[p]] += 1
        return cls(labels, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["actual\\inferred", *self.labels])
            for lab, row in zip(self.labels, self.counts):
                w.writerow([lab, *(int(x) for x in row)])


@dataclass
class Metrics:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    n: int


def metrics(cm: ConfusionMatrix, actual_labels: Iterable[str] | None = None) -> Metrics:
    """Micro and macro precision/recall/F1 and accuracy from a confusion matrix.

    Macro averages run over labels present among the actual trains; a label
    that is never predicted has precision 0.
    """
    C = cm.counts.astype(float)
    n = C.sum()
    if n == 0:
        raise EmptyEvaluation("confusion matrix is empty")
    diag = np.trace(C)
    micro_p = diag / C.sum()  # every sample has exactly one inferred label
    micro_r = diag / C.sum()
    # harmonic mean of two equal numbers is that number; avoids 2pr/(p+r) rounding
    if micro_p == micro_r:
        micro_f1 = micro_p
    else:
        micro_f1 = 0.0 if micro_p + micro_r == 0 else 2 * micro_p * micro_r / (micro_p + micro_r)
    row = C.sum(axis=1)
    col = C.sum(axis=0)
    if actual_labels is None:
        idx = np.flatnonzero(row > 0)
    else:
        pos = {l: i for i, l in enumerate(cm.labels)}
        idx = np.array(sorted(pos[l] for l in set(actual_labels)), dtype=int)
    d = np.diag(C)[idx]
    prec = np.divide(d, col[idx], out=np.zeros_like(d), where=col[idx] > 0)
    rec = np.divide(d, row[idx], out=np.zeros_like(d), where=row[idx] > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros_like(d), where=denom > 0)
    return Metrics(float(micro_p), float(micro_r), float(micro_f1),
                   float(prec.mean()), float(rec.mean()), float(f1.mean()),
                   float(diag / n), int(n))


def accuracy(actual: Sequence, inferred: Sequence) -> float:
    if len(actual) == 0:
        raise EmptyEvaluation("no samples")
    return sum(1 for a, b in zip(actual, inferred) if a == b) / len(actual)


@dataclass
class MetricReport:
    overall: Metrics
    segments: dict[str, Metrics]
    combination_accuracy: float
    left_behind_agreement: float | None
    n_passengers: int
    n_segments: int
    confusion: dict[str, ConfusionMatrix] = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "overall": asdict(self.overall),
            "segments": {k: asdict(v) for k, v in self.segments.items()},
            "combination_accuracy": self.combination_accuracy,
            "left_behind_agreement": self.left_behind_agreement,
            "n_passengers": self.n_passengers,
            "n_segments": self.n_segments,
        }


def _segment_label(route: str, m: int) -> str:
    return f"{route}#{m}"


def score(inferred: Iterable, truth: Iterable, routes: dict[str, str] | None = None) -> MetricReport:
    """Score itineraries (or (pid, segment, train, left_behind) tuples) against truth.

    Per-segment keys are ``route#m`` where the route is taken from ``routes``
    (passenger id -> label) or, by default, from the itinerary's stations.
    """
    inf_rows: dict[tuple[str, int], tuple[str, int | None]] = {}
    route_of: dict[str, str] = dict(routes or {})
    for it in inferred:
        if hasattr(it, "legs"):
            if it.passenger_id not in route_of:
                route_of[it.passenger_id] = f"{it.legs[0].board_station}>{it.legs[-1].alight_station}"
            for leg, k in zip(it.legs, it.left_behind):
                inf_rows[(it.passenger_id, leg.segment)] = (leg.train_id, k)
        else:
            pid, m, train, k = it
            inf_rows[(pid, m)] = (train, k)
    joined = []
    for t in truth:
        hit = inf_rows.get((t.passenger_id, t.segment))
        if hit is not None:
            joined.append((t.passenger_id, t.segment, t.train_id, hit[0], t.left_behind, hit[1]))
    if not joined:
        raise EmptyEvaluation("no (passenger_id, segment) pairs in common")
    joined.sort()

    by_seg: dict[str, tuple[list, list]] = {}
    for pid, m, a, p, _, _ in joined:
        lab = _segment_label(route_of.get(pid, "?"), m)
        by_seg.setdefault(lab, ([], []))
        by_seg[lab][0].append(a)
        by_seg[lab][1].append(p)
    seg_metrics, cms = {}, {}
    for lab in sorted(by_seg):
        a, p = by_seg[lab]
        cm = ConfusionMatrix.from_pairs(a, p)
        cms[lab] = cm
        seg_metrics[lab] = metrics(cm, a)
    all_a = [r[2] for r in joined]
    all_p = [r[3] for r in joined]
    overall = metrics(ConfusionMatrix.from_pairs(all_a, all_p), all_a)

    per_pax: dict[str, bool] = {}
    for pid, _, a, p, _, _ in joined:
        per_pax[pid] = per_pax.get(pid, True) and a == p
    comb_acc = sum(per_pax.values()) / len(per_pax)

    lb = [(tk, ik) for _, _, a, p, tk, ik in joined if a == p and ik is not None]
    lb_agree = (sum(1 for tk, ik in lb if tk == ik) / len(lb)) if lb else None
    return MetricReport(overall, seg_metrics, comb_acc, lb_agree, len(per_pax), len(joined), cms)


def write_report(report: MetricReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# nearest-train baseline


def ssmt_baseline(c: CandidateRecord) -> list[CandidateTrain]:
    """Nearest train arriving before the exit time, then greedily backwards.

    Each earlier segment takes the latest train that still connects to the
    train chosen after it.
    """
    t_out = c.rec.afc.exit_time
    last = [t for t in c.sets[-1].trains if t.at <= t_out] or list(c.sets[-1].trains)
    chosen = [max(last, key=lambda t: (t.at, t.dt))]
    for m in range(len(c.sets) - 2, -1, -1):
        nxt = chosen[0]
        ok = [t for t in c.sets[m].trains if t.at + c.min_transfer[m] <= nxt.dt]
        pick = max(ok, key=lambda t: (t.at, t.dt)) if ok else c.sets[m].trains[0]
        chosen.insert(0, pick)
    return chosen
