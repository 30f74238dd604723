"""Train-combination inference for transfer trips with a KL consistency check.

One call handles the population of records sharing a route. Each round runs
EM per segment (last segment first, so earlier segments can condition on the
chosen next train), enumerates the top-K train combinations of every record,
and fits, for every combination rank pattern, the posterior-weighted
distribution of each segment's interval. Those fits are expressed in the
standard units of the segment's EM model, so adjacent segments become
comparable, and the rank pattern with the least total adjacent KL divergence
wins. If that is the all-argmax pattern the round is consistent and we stop;
otherwise the winner's statistics seed the next round's EM.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .candidates import CandidateRecord, CandidateSet, CandidateTrain
from .inference import (
    EmConfig,
    EmTrace,
    TrainPosterior,
    batch_for_segment,
    batch_posteriors,
    em_fit,
    posterior,
)
from .prob import NormalParams, fit_normal, fit_weighted, kl_normal


@dataclass
class KlemConfig:
    topk: int = 3
    max_rounds: int = 10
    # rank patterns seen in fewer records than this are not scored
    min_group_records: int = 20

    def __post_init__(self):
        if self.topk < 1 or self.max_rounds < 1 or self.min_group_records < 1:
            raise ValueError("topk, max_rounds and min_group_records must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "KlemConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class TrainCombination:
    trains: tuple[CandidateTrain, ...]
    ranks: tuple[int, ...] = ()
    feasible: bool = True
    transfers: tuple[int, ...] = ()


def is_feasible(trains: Sequence[CandidateTrain], min_transfer: Sequence[int]) -> bool:
    return all(b.dt >= a.at + mt for a, b, mt in zip(trains, trains[1:], min_transfer))


def transfer_time(comb: TrainCombination) -> tuple[int, ...]:
    """Alight-to-next-boarding interval at every junction."""
    return tuple(b.dt - a.at for a, b in zip(comb.trains, comb.trains[1:]))


def make_combination(trains, min_transfer, ranks=()) -> TrainCombination:
    trains = tuple(trains)
    c = TrainCombination(trains, tuple(ranks), is_feasible(trains, min_transfer))
    return TrainCombination(c.trains, c.ranks, c.feasible, transfer_time(c))


def enumerate_combinations(
    sets: Sequence[CandidateSet],
    min_transfer: Sequence[int],
    topk: int = 3,
    posteriors: Sequence[TrainPosterior] | None = None,
) -> list[TrainCombination]:
    """Feasible products of each segment's top-K trains, argmax pattern first.

    Without posteriors the trains are ranked in departure order.
    """
    orders = []
    for m, cs in enumerate(sets):
        if posteriors is None:
            order = list(range(len(cs.trains)))
        else:
            p = posteriors[m]
            order = [i for i in p.ranking() if p.probs[i] > 0.0] or p.ranking()[:1]
        orders.append(order[:topk])
    out = []
    for ranks in itertools.product(*(range(len(o)) for o in orders)):
        trains = [sets[m].trains[orders[m][r]] for m, r in enumerate(ranks)]
        c = make_combination(trains, min_transfer, ranks)
        if c.feasible:
            out.append(c)
    return out


def greedy_repair(sets: Sequence[CandidateSet], min_transfer, preferred: Sequence[int]) -> TrainCombination:
    """Keep the first segment's preferred train and advance later segments to
    the first feasible train when the preferred one cannot be reached."""
    chosen = [sets[0].trains[preferred[0]]]
    for m in range(1, len(sets)):
        want = sets[m].trains[preferred[m]]
        ready = chosen[-1].at + min_transfer[m - 1]
        if want.dt < ready:
            later = [t for t in sets[m].trains if t.dt >= ready]
            want = later[0] if later else sets[m].trains[-1]
        chosen.append(want)
    return make_combination(chosen, min_transfer)


def segment_intervals_for(c: CandidateRecord, comb: TrainCombination) -> list[int]:
    """Per-segment interval under a combination: next boarding (or exit) minus arrival."""
    ends = [t.dt for t in comb.trains[1:]] + [c.rec.afc.exit_time]
    return [e - t.at for e, t in zip(ends, comb.trains)]


def standardized(fit: NormalParams, model: NormalParams) -> NormalParams:
    return NormalParams((fit.mu - model.mu) / model.sigma, fit.sigma2 / model.sigma2, fit.count)


def total_kl(dists: Sequence[NormalParams]) -> float:
    return math.fsum(kl_normal(p, q) for p, q in zip(dists, dists[1:]))


@dataclass
class KlemRecord:
    chosen: TrainCombination
    posteriors: tuple[TrainPosterior, ...]
    combination_kl: dict[tuple[int, ...], float]
    consistent: bool
    fallback: bool = False


@dataclass
class KlemResult:
    records: list[KlemRecord]
    rounds: int
    converged: bool
    segment_models: list[NormalParams]
    access: NormalParams | None
    traces: list[list[EmTrace]] = field(default_factory=list)  # [round][segment]
    diagnostics: list[tuple[int, str, float, bool]] = field(default_factory=list)

    def write_diagnostics(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "combination", "total_kl", "consistent"])
            for rnd, comb, kl, ok in self.diagnostics:
                w.writerow([rnd, comb, repr(kl), str(ok).lower()])


def _pattern(r: tuple[int, ...]) -> str:
    return "-".join(str(x) for x in r)


def _posts_from_gamma(group, m, gamma) -> list[TrainPosterior]:
    out = []
    for i, c in enumerate(group):
        cs = c.sets[m - 1]
        n = len(cs.trains)
        row = gamma[i, :n]
        row = row / row.sum()
        out.append(TrainPosterior(m, tuple(t.train_id for t in cs.trains),
                                  tuple(float(x) for x in row), tuple(t.dt for t in cs.trains)))
    return out


def initial_interval_models(group: Sequence[CandidateRecord], egress0: NormalParams,
                            sigma2_floor: float = 1.0, min_samples: int = 5) -> list[NormalParams]:
    """Starting point per segment: observable records where possible, otherwise
    every feasible (train, next train) pairing pooled without weights."""
    M = group[0].rec.segment_count
    models = []
    for m in range(1, M):
        obs = [c.sets[m].trains[0].dt - c.sets[m - 1].trains[0].at for c in group if c.observable]
        if len(obs) >= min_samples:
            models.append(fit_normal(obs, sigma2_floor))
            continue
        pooled = []
        for c in group:
            mt = c.min_transfer[m - 1]
            for a in c.sets[m - 1].trains:
                for b in c.sets[m].trains:
                    if b.dt >= a.at + mt:
                        pooled.append(b.dt - a.at)
        models.append(fit_normal(pooled, sigma2_floor))
    models.append(egress0)
    return models


def conditional_posterior(
    c: CandidateRecord, m: int, chosen: Sequence[CandidateTrain],
    model: NormalParams, access: NormalParams | None,
) -> tuple[TrainPosterior, CandidateSet]:
    """Segment posterior given the chosen trains on its neighbours.

    Trains that leave before the previous chosen train could be reached are
    dropped from the set, so left-behind ranks count only trains the
    passenger could have seen on the platform.
    """
    cs = c.sets[m - 1]
    if m > 1:
        ready = chosen[m - 2].at + c.min_transfer[m - 2]
        sub = tuple(t for t in cs.trains if t.dt >= ready) or cs.trains
        cs = CandidateSet(m, sub)
    nxt = chosen[m].dt if m < c.rec.segment_count else None
    mt = c.min_transfer[m - 1] if nxt is not None else 0
    post = posterior(c.rec, cs, model, access if m == 1 else None, next_dt=nxt, min_transfer=mt)
    return post, cs


def klem_infer(
    group: Sequence[CandidateRecord],
    start_models: Sequence[NormalParams],
    access: NormalParams | None,
    cfg: KlemConfig | None = None,
    em_cfg: EmConfig | None = None,
) -> KlemResult:
    """Infer train combinations for records that share one multi-segment route.

    ``start_models`` holds one starting model per segment: the junction interval
    models for segments 1..M-1 and the exit egress model for segment M.
    """
    cfg = cfg or KlemConfig()
    em_cfg = em_cfg or EmConfig()
    if not group:
        raise ValueError("empty record group")
    M = group[0].rec.segment_count
    if M < 2 or any(c.rec.segment_count != M for c in group):
        raise ValueError("klem_infer expects records with the same number (>= 2) of segments")
    if len(start_models) != M:
        raise ValueError(f"need {M} starting models, got {len(start_models)}")

    init = list(start_models)
    diagnostics: list[tuple[int, str, float, bool]] = []
    traces: list[list[EmTrace]] = []
    n = len(group)
    zero = (0,) * M
    consistent = False
    acc = access
    for rnd in range(1, cfg.max_rounds + 1):
        models: list[NormalParams] = [None] * M  # type: ignore[list-item]
        posts: list[list[TrainPosterior]] = [None] * M  # type: ignore[list-item]
        round_traces: list[EmTrace] = [None] * M  # type: ignore[list-item]
        next_dts = None
        acc = access
        for m in range(M, 0, -1):
            batch = batch_for_segment(group, m, next_dts, with_access=(m == 1 and access is not None))
            res = em_fit(batch, init[m - 1], access if m == 1 else None, em_cfg)
            if m == 1:
                acc = res.access
            models[m - 1] = res.egress
            round_traces[m - 1] = res.trace
            gamma, _ = batch_posteriors(batch, res.egress, res.access if m == 1 else None)
            posts[m - 1] = _posts_from_gamma(group, m, gamma)
            next_dts = [c.sets[m - 1].trains[p.chosen_index].dt for c, p in zip(group, posts[m - 1])]
        traces.append(round_traces)

        # combinations and per-pattern interval samples
        combos: list[list[TrainCombination]] = []
        samples: dict[tuple[int, ...], tuple[list[list[float]], list[float]]] = {}
        for i, c in enumerate(group):
            rec_posts = [posts[m][i] for m in range(M)]
            cl = enumerate_combinations(c.sets, c.min_transfer, cfg.topk, rec_posts)
            combos.append(cl)
            for comb in cl:
                w = math.prod(rec_posts[m].prob_of(t.train_id) for m, t in enumerate(comb.trains))
                vals, ws = samples.setdefault(comb.ranks, ([[] for _ in range(M)], []))
                for m, v in enumerate(segment_intervals_for(c, comb)):
                    vals[m].append(v)
                ws.append(w)

        pattern_kl: dict[tuple[int, ...], float] = {}
        pattern_fit: dict[tuple[int, ...], list[NormalParams]] = {}
        for ranks in sorted(samples):
            vals, ws = samples[ranks]
            if len(ws) < cfg.min_group_records or not sum(ws) > 0:
                continue
            raw = [fit_weighted(vals[m], ws, em_cfg.sigma2_floor) for m in range(M)]
            std = [standardized(raw[m], models[m]) for m in range(M)]
            pattern_fit[ranks] = raw
            pattern_kl[ranks] = total_kl(std)
        best = min(pattern_kl, key=lambda r: (pattern_kl[r], r)) if pattern_kl else zero
        consistent = best == zero
        for ranks, kl in pattern_kl.items():
            diagnostics.append((rnd, _pattern(ranks), kl, ranks == best and consistent))
        if consistent or rnd == cfg.max_rounds:
            break
        init = list(pattern_fit[best])

    records: list[KlemRecord] = []
    for i, c in enumerate(group):
        cl = combos[i]
        kls = {comb.ranks: pattern_kl.get(comb.ranks, math.inf) for comb in cl}
        if cl:
            chosen = min(cl, key=lambda comb: (kls[comb.ranks], comb.ranks))
            fallback = False
        else:
            chosen = greedy_repair(c.sets, c.min_transfer, [posts[m][i].chosen_index for m in range(M)])
            fallback = True
        final_posts = []
        for m in range(1, M + 1):
            post, _ = conditional_posterior(c, m, chosen.trains, models[m - 1], acc)
            final_posts.append(post)
        records.append(KlemRecord(chosen, tuple(final_posts), kls, consistent, fallback))
    return KlemResult(records, rnd, consistent, models, acc, traces, diagnostics)
