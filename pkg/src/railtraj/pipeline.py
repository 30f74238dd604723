"""End-to-end inference: segment -> candidates -> slice -> priors -> EM/KLEM -> itineraries."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .candidates import CandidateRecord, ConstraintConfig, TrainIndex, build_all, slice_datasets
from .domain import AfcRecord, NetworkTopology, TrainRun, segment_records
from .inference import EmConfig, EmTrace, batch_for_segment, batch_posteriors, em_fit
from .itinerary import Itinerary, build_itinerary
from .klem import (
    KlemConfig,
    KlemResult,
    conditional_posterior,
    initial_interval_models,
    klem_infer,
    make_combination,
)
from .prob import (
    AccessModel,
    EgressModel,
    NormalParams,
    ProbConfig,
    access_key,
    egress_key,
    fit_access,
    init_egress,
)
from .inference import TrainPosterior

log = logging.getLogger(__name__)


@dataclass
class InferenceConfig:
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    em: EmConfig = field(default_factory=EmConfig)
    klem: KlemConfig = field(default_factory=KlemConfig)
    prob: ProbConfig = field(default_factory=ProbConfig)
    # fit EM over observable plus unknown records (observable ones carry weight 1)
    em_include_observable: bool = True
    threads: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceConfig":
        em = dict(d.get("em") or {})
        em.setdefault("sigma2_floor", (d.get("prob") or {}).get("sigma2_floor", 1.0))
        return cls(
            constraints=ConstraintConfig.from_dict(d.get("constraints")),
            em=EmConfig.from_dict(em),
            klem=KlemConfig.from_dict(d.get("klem")),
            prob=ProbConfig.from_dict(d.get("prob")),
            em_include_observable=bool(d.get("em_include_observable", True)),
            threads=int(d.get("threads", 1)),
        )


@dataclass
class GroupResult:
    key: tuple[str, str]
    records: list[CandidateRecord]
    itineraries: list[Itinerary]
    posteriors: list[tuple[TrainPosterior, ...]]
    segment_models: list[NormalParams]
    access: NormalParams | None
    traces: list[EmTrace]
    klem: KlemResult | None = None
    rejects: list[tuple[AfcRecord, str]] = field(default_factory=list)


@dataclass
class InferenceOutput:
    groups: list[GroupResult]
    access_prior: AccessModel
    egress_init: EgressModel
    observable: int
    unknown: int
    rejects: list[tuple[AfcRecord, str]]

    @property
    def itineraries(self) -> list[Itinerary]:
        out = [it for g in self.groups for it in g.itineraries]
        out.sort(key=lambda it: it.passenger_id)
        return out

    @property
    def candidate_records(self) -> list[CandidateRecord]:
        return [c for g in self.groups for c in g.records]

    def fitted_models(self) -> tuple[EgressModel, AccessModel, dict]:
        """Final per-group egress and access models plus junction interval models."""
        eg, ac, junctions = EgressModel(), AccessModel(), {}
        for g in self.groups:
            eg.groups[g.key] = g.segment_models[-1]
            if g.access is not None:
                ac.groups[g.key] = g.access
            for m, p in enumerate(g.segment_models[:-1], start=1):
                junctions[(*g.key, f"junction{m}")] = p
        return eg, ac, junctions


def _single_segment_group(key, group, egress0, access0, cfg: InferenceConfig) -> GroupResult:
    em_records = group if cfg.em_include_observable else [c for c in group if not c.observable]
    if not em_records:
        em_records = group
    res = em_fit(batch_for_segment(em_records, 1, with_access=True), egress0, access0, cfg.em)
    batch = batch_for_segment(group, 1, with_access=True)
    gamma, _ = batch_posteriors(batch, res.egress, res.access)
    its, posts = [], []
    for i, c in enumerate(group):
        cs = c.sets[0]
        row = gamma[i, : len(cs.trains)]
        post = TrainPosterior(1, tuple(t.train_id for t in cs.trains),
                              tuple(float(x) for x in row / row.sum()), tuple(t.dt for t in cs.trains))
        comb = make_combination([cs.trains[post.chosen_index]], ())
        flags = () if res.converged else ("em_not_converged",)
        its.append(build_itinerary(c.rec, comb, [post], [cs], flags))
        posts.append((post,))
    return GroupResult(key, list(group), its, posts, [res.egress], res.access, [res.trace])


def _transfer_group(key, group, egress0, access0, cfg: InferenceConfig) -> GroupResult:
    models0 = initial_interval_models(group, egress0, cfg.prob.sigma2_floor, cfg.prob.min_samples)
    kr = klem_infer(group, models0, access0, cfg.klem, cfg.em)
    its, posts, rejects = [], [], []
    for c, r in zip(group, kr.records):
        sets = []
        for m in range(1, c.rec.segment_count + 1):
            _, cs = conditional_posterior(c, m, r.chosen.trains, kr.segment_models[m - 1], kr.access)
            sets.append(cs)
        flags = []
        if not kr.converged:
            flags.append("klem_not_converged")
        if r.fallback:
            flags.append("fallback")
        it = build_itinerary(c.rec, r.chosen, r.posteriors, sets, flags)
        if r.fallback:
            rejects.append((c.rec.afc, "fallback_greedy_repair"))
        else:
            its.append(it)
        posts.append(r.posteriors)
    return GroupResult(key, list(group), its, posts, kr.segment_models, kr.access,
                       kr.traces[-1], kr, rejects)


def run_inference(
    afc: Sequence[AfcRecord],
    runs: Sequence[TrainRun] | TrainIndex,
    topo: NetworkTopology,
    cfg: InferenceConfig | None = None,
) -> InferenceOutput:
    cfg = cfg or InferenceConfig()
    records, unroutable = segment_records(afc, topo)
    cands, empty = build_all(records, runs, cfg.constraints, topo)
    rejects: list[tuple[AfcRecord, str]] = list(unroutable) + [(r.afc, why) for r, why in empty]
    observable, unknown = slice_datasets(cands)
    access_prior = fit_access(observable, cfg.prob)
    egress_init = init_egress(observable, cfg.prob)
    log.info("records: %d observable, %d unknown, %d rejected", len(observable), len(unknown), len(rejects))

    groups: dict[tuple[str, str], list[CandidateRecord]] = {}
    for c in cands:
        groups.setdefault(c.rec.od, []).append(c)

    def work(key):
        group = groups[key]
        egress0 = egress_init.params(egress_key(group[0], cfg.prob.grouping))
        access0 = access_prior.params(access_key(group[0], cfg.prob.grouping))
        if group[0].rec.segment_count == 1:
            return _single_segment_group(key, group, egress0, access0, cfg)
        return _transfer_group(key, group, egress0, access0, cfg)

    keys = sorted(groups)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(work, keys))
    else:
        results = [work(k) for k in keys]
    for g in results:
        rejects.extend(g.rejects)
    rejects.sort(key=lambda r: r[0].passenger_id)
    return InferenceOutput(results, access_prior, egress_init, len(observable), len(unknown), rejects)
