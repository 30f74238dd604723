"""Per-segment train posteriors, left-behind distributions and EM for egress time.

Weights are handled in log space throughout; a record's posterior is the
softmax of its candidates' log weights, where each weight is the egress
density of the implied egress interval times the access density of the
implied access interval.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .candidates import CandidateRecord, CandidateSet
from .domain import TravelRecord
from .prob import NormalParams, fit_weighted, normal_logpdf

NEG_INF = -np.inf


@dataclass(frozen=True)
class TrainPosterior:
    segment: int
    train_ids: tuple[str, ...]
    probs: tuple[float, ...]
    dts: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.train_ids) != len(self.probs) or not self.probs:
            raise ValueError("posterior needs one probability per train")
        if abs(math.fsum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"posterior sums to {math.fsum(self.probs)}")

    @property
    def chosen_index(self) -> int:
        # candidates are DT-ordered, so the first maximum is the earliest train
        return int(np.argmax(self.probs))

    @property
    def chosen(self) -> str:
        return self.train_ids[self.chosen_index]

    def prob_of(self, train_id: str) -> float:
        return self.probs[self.train_ids.index(train_id)]

    def ranking(self) -> list[int]:
        """Indices by descending probability, earliest DT first among ties."""
        return sorted(range(len(self.probs)), key=lambda i: (-self.probs[i], i))


@dataclass(frozen=True)
class LeftBehindDist:
    probs: tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.probs) - 1

    @property
    def mode(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class EmConfig:
    epsilon: float = 1e-3
    max_iter: int = 200
    sigma2_floor: float = 1.0
    # refit the access prior in the M-step as well (see README)
    refit_access: bool = True

    def __post_init__(self):
        if self.epsilon <= 0 or self.max_iter < 1:
            raise ValueError("epsilon must be > 0 and max_iter >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "EmConfig":
        return cls(**(d or {}))


@dataclass
class EmTrace:
    iteration: list[int] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    mu: list[float] = field(default_factory=list)
    sigma2: list[float] = field(default_factory=list)
    delta: list[float] = field(default_factory=list)

    def append(self, it, ll, mu, s2, d):
        self.iteration.append(it)
        self.loglik.append(ll)
        self.mu.append(mu)
        self.sigma2.append(s2)
        self.delta.append(d)

    def __len__(self):
        return len(self.iteration)

    def monotone(self, slack: float = 1e-9) -> bool:
        return all(b >= a - slack for a, b in zip(self.loglik, self.loglik[1:]))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loglik", "mu", "sigma2", "delta"])
            for row in zip(self.iteration, self.loglik, self.mu, self.sigma2, self.delta):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


@dataclass
class EmResult:
    egress: NormalParams
    access: NormalParams | None
    trace: EmTrace
    converged: bool


# ---------------------------------------------------------------------------
# single-record posterior


def log_weights(
    egress_x: np.ndarray,
    egress: NormalParams,
    access_x: np.ndarray | None = None,
    access: NormalParams | None = None,
) -> np.ndarray:
    lw = normal_logpdf(egress_x, egress.mu, egress.sigma2)
    if access is not None and access_x is not None:
        lw = lw + normal_logpdf(access_x, access.mu, access.sigma2)
    return lw


def softmax(lw: np.ndarray) -> np.ndarray:
    lw = np.asarray(lw, dtype=float)
    top = lw.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.exp(lw - top)
    return w / w.sum(axis=-1, keepdims=True)


def segment_intervals(
    rec: TravelRecord,
    cands: CandidateSet,
    next_dt: int | None = None,
):
    """(egress-like interval, access interval or None) arrays for one segment.

    The last segment's interval ends at the exit gate; earlier segments end at
    the boarding of the next segment's train. Only the first segment carries
    an access interval.
    """
    dts = np.array([t.dt for t in cands.trains], dtype=float)
    ats = np.array([t.at for t in cands.trains], dtype=float)
    m, last = cands.segment, rec.segment_count
    end = rec.afc.exit_time if m == last or next_dt is None else next_dt
    e = end - ats
    a = dts - rec.afc.entry_time if m == 1 else None
    return e, a


def posterior(
    rec: TravelRecord,
    cands: CandidateSet,
    egress: NormalParams,
    access: NormalParams | None,
    next_dt: int | None = None,
    min_transfer: int = 0,
) -> TrainPosterior:
    """Posterior over one segment's candidate trains.

    For an interior segment pass ``next_dt`` (departure of the chosen train
    on the following segment); candidates that cannot make that connection
    get probability zero.
    """
    e, a = segment_intervals(rec, cands, next_dt)
    lw = log_weights(e, egress, a, access)
    if next_dt is not None and cands.segment < rec.segment_count:
        ok = np.array([t.at + min_transfer <= next_dt for t in cands.trains])
        if ok.any():
            lw = np.where(ok, lw, NEG_INF)
    p = softmax(lw)
    return TrainPosterior(
        cands.segment,
        tuple(t.train_id for t in cands.trains),
        tuple(float(x) for x in p),
        tuple(t.dt for t in cands.trains),
    )


def left_behind(post: TrainPosterior) -> LeftBehindDist:
    """P(k) is the probability of the (k+1)-th train in departure order."""
    order = np.argsort(post.dts, kind="stable") if post.dts else np.arange(len(post.probs))
    return LeftBehindDist(tuple(post.probs[i] for i in order))


# ---------------------------------------------------------------------------
# batched EM


@dataclass
class SegmentBatch:
    """Padded candidate intervals for many records on one segment position."""

    egress: np.ndarray  # (n, K)
    mask: np.ndarray  # (n, K) bool, True where a candidate exists
    access: np.ndarray | None = None  # (n, K)

    def __post_init__(self):
        if not self.mask.any(axis=1).all():
            raise ValueError("every record needs at least one candidate")

    def __len__(self):
        return self.egress.shape[0]

    @classmethod
    def from_rows(cls, egress_rows: Sequence[Sequence[float]], access_rows=None, mask_rows=None):
        n = len(egress_rows)
        k = max((len(r) for r in egress_rows), default=0)
        E = np.zeros((n, k))
        M = np.zeros((n, k), dtype=bool)
        A = np.zeros((n, k)) if access_rows is not None else None
        for i, row in enumerate(egress_rows):
            E[i, : len(row)] = row
            M[i, : len(row)] = True if mask_rows is None else mask_rows[i]
            if A is not None:
                A[i, : len(row)] = access_rows[i]
        return cls(E, M, A)


def batch_for_segment(
    records: Sequence[CandidateRecord],
    m: int,
    next_dts: Sequence[int] | None = None,
    with_access: bool | None = None,
) -> SegmentBatch:
    """Build a batch for segment ``m`` (1-based) over a group of records."""
    e_rows, a_rows, masks = [], [], []
    use_access = (m == 1) if with_access is None else with_access
    for i, c in enumerate(records):
        cs = c.sets[m - 1]
        nd = None if next_dts is None else next_dts[i]
        e, a = segment_intervals(c.rec, cs, nd)
        e_rows.append(e)
        if use_access:
            a_rows.append(a if a is not None else np.zeros_like(e))
        if nd is not None and m < c.rec.segment_count:
            mt = c.min_transfer[m - 1]
            ok = [t.at + mt <= nd for t in cs.trains]
            masks.append(ok if any(ok) else [True] * len(ok))
        else:
            masks.append([True] * len(e))
    return SegmentBatch.from_rows(e_rows, a_rows if use_access else None, masks)


def batch_log_weights(batch: SegmentBatch, egress: NormalParams, access: NormalParams | None):
    lw = normal_logpdf(batch.egress, egress.mu, egress.sigma2)
    if access is not None and batch.access is not None:
        lw = lw + normal_logpdf(batch.access, access.mu, access.sigma2)
    return np.where(batch.mask, lw, NEG_INF)


def _row_logsumexp(lw: np.ndarray) -> np.ndarray:
    top = lw.max(axis=1)
    return top + np.log(np.exp(lw - top[:, None]).sum(axis=1))


def batch_posteriors(batch: SegmentBatch, egress: NormalParams, access: NormalParams | None):
    lw = batch_log_weights(batch, egress, access)
    lse = _row_logsumexp(lw)
    return np.exp(lw - lse[:, None]), float(lse.sum())


def observed_loglik(batch: SegmentBatch, egress: NormalParams, access: NormalParams | None) -> float:
    """Sum over records of log sum over candidates of the unnormalised weights."""
    return float(_row_logsumexp(batch_log_weights(batch, egress, access)).sum())


def em_fit(
    batch: SegmentBatch,
    egress0: NormalParams,
    access: NormalParams | None,
    cfg: EmConfig | None = None,
) -> EmResult:
    """EM for the egress normal (and optionally the access prior).

    Each iteration records the observed-data log-likelihood at the current
    parameters, then the updated mean/variance and the update amplitude
    max(|d mu|, |d sigma|). Stops once the amplitude drops below epsilon.
    """
    cfg = cfg or EmConfig()
    if len(batch) == 0:
        raise ValueError("EM needs at least one record")
    cur, acc = egress0, access
    use_acc = access is not None and batch.access is not None
    trace = EmTrace()
    converged = False
    X = np.where(batch.mask, batch.egress, 0.0)
    XA = np.where(batch.mask, batch.access, 0.0) if use_acc else None
    for it in range(1, cfg.max_iter + 1):
        gamma, ll = batch_posteriors(batch, cur, acc if use_acc else None)
        new = fit_weighted(X, gamma, cfg.sigma2_floor)
        delta = max(abs(new.mu - cur.mu), abs(new.sigma - cur.sigma))
        if use_acc and cfg.refit_access:
            new_acc = fit_weighted(XA, gamma, cfg.sigma2_floor)
            delta = max(delta, abs(new_acc.mu - acc.mu), abs(new_acc.sigma - acc.sigma))
            acc = NormalParams(new_acc.mu, new_acc.sigma2, len(batch))
        cur = NormalParams(new.mu, new.sigma2, len(batch))
        trace.append(it, ll, cur.mu, cur.sigma2, delta)
        if delta < cfg.epsilon:
            converged = True
            break
    return EmResult(cur, acc, trace, converged)
