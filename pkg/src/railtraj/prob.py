"""Normal densities, access/egress model fitting and Gaussian KL divergence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable

import numpy as np

from .candidates import CandidateRecord

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
GLOBAL = "*"


class NoObservableData(RuntimeError):
    pass


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma2: float
    count: int = 0

    def __post_init__(self):
        if not (self.sigma2 > 0.0) or not math.isfinite(self.mu):
            raise ValueError(f"invalid normal parameters mu={self.mu} sigma2={self.sigma2}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass
class ProbConfig:
    grouping: str = "od"  # "od" | "station"
    sigma2_floor: float = 1.0
    min_samples: int = 5

    def __post_init__(self):
        if self.grouping not in ("od", "station"):
            raise ValueError(f"unknown grouping {self.grouping!r}")
        if self.sigma2_floor <= 0 or self.min_samples < 1:
            raise ValueError("sigma2_floor must be > 0 and min_samples >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "ProbConfig":
        return cls(**(d or {}))


def normal_pdf(x, p: NormalParams):
    x = np.asarray(x, dtype=float)
    out = np.exp(-((x - p.mu) ** 2) / (2.0 * p.sigma2)) / math.sqrt(2.0 * math.pi * p.sigma2)
    return out if out.ndim else float(out)


def normal_logpdf(x, mu: float, sigma2: float):
    x = np.asarray(x, dtype=float)
    return -((x - mu) ** 2) / (2.0 * sigma2) - 0.5 * math.log(sigma2) - LOG_SQRT_2PI


def fit_normal(samples, sigma2_floor: float = 1.0) -> NormalParams:
    """Sample mean and unbiased (n-1) variance, floored."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("cannot fit a normal to zero samples")
    mu = float(x.mean())
    var = float(((x - mu) ** 2).sum() / (n - 1)) if n > 1 else 0.0
    return NormalParams(mu, max(var, sigma2_floor), n)


def fit_weighted(samples, weights, sigma2_floor: float = 1.0) -> NormalParams:
    """Weighted maximum-likelihood fit (denominator is the total weight)."""
    x = np.asarray(samples, dtype=float)
    w = np.asarray(weights, dtype=float)
    tot = float(w.sum())
    if not tot > 0:
        raise ValueError("weights sum to zero")
    mu = float((w * x).sum() / tot)
    var = float((w * (x - mu) ** 2).sum() / tot)
    return NormalParams(mu, max(var, sigma2_floor), int(np.count_nonzero(w)))


def kl_normal(p: NormalParams, q: NormalParams) -> float:
    """KL(p || q) in nats for two univariate normals."""
    val = (
        0.5 * math.log(q.sigma2 / p.sigma2)
        + (p.sigma2 + (p.mu - q.mu) ** 2) / (2.0 * q.sigma2)
        - 0.5
    )
    return max(val, 0.0)


@dataclass
class GroupedNormal:
    """Normal parameters per fitting group with a pooled global fallback."""

    groups: dict[Hashable, NormalParams] = field(default_factory=dict)
    global_: NormalParams | None = None

    def params(self, key) -> NormalParams:
        p = self.groups.get(key)
        if p is not None:
            return p
        if self.global_ is None:
            raise KeyError(key)
        return self.global_

    def pdf(self, x, key):
        return normal_pdf(x, self.params(key))

    def to_json(self) -> dict:
        out = {_key_str(k): _p_json(v) for k, v in sorted(self.groups.items(), key=lambda kv: _key_str(kv[0]))}
        if self.global_ is not None:
            out[GLOBAL] = _p_json(self.global_)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GroupedNormal":
        groups, glob = {}, None
        for k, v in obj.items():
            p = NormalParams(float(v["mu"]), float(v["sigma2"]), int(v.get("count", 0)))
            if k == GLOBAL:
                glob = p
            else:
                groups[_key_parse(k)] = p
        return cls(groups, glob)


class AccessModel(GroupedNormal):
    pass


class EgressModel(GroupedNormal):
    pass


def _p_json(p: NormalParams) -> dict:
    return {"mu": p.mu, "sigma2": p.sigma2, "count": p.count}


def _key_str(k) -> str:
    return ">".join(k) if isinstance(k, tuple) else str(k)


def _key_parse(s: str):
    return tuple(s.split(">")) if ">" in s else s


def access_key(c: CandidateRecord, grouping: str):
    return c.rec.od if grouping == "od" else c.rec.afc.entry_station


def egress_key(c: CandidateRecord, grouping: str):
    return c.rec.od if grouping == "od" else c.rec.afc.exit_station


def access_sample(c: CandidateRecord) -> int:
    return c.sets[0].trains[0].dt - c.rec.afc.entry_time


def egress_sample(c: CandidateRecord) -> int:
    return c.rec.afc.exit_time - c.sets[-1].trains[0].at


def _fit_grouped(
    observable: Iterable[CandidateRecord],
    sample: Callable[[CandidateRecord], int],
    key: Callable[[CandidateRecord], Hashable],
    cfg: ProbConfig,
    cls,
):
    buckets: dict[Hashable, list[int]] = {}
    pooled: list[int] = []
    for c in observable:
        if not c.observable:
            raise ValueError("fitting requires observable records (singleton candidate sets)")
        s = sample(c)
        buckets.setdefault(key(c), []).append(s)
        pooled.append(s)
    if not pooled:
        raise NoObservableData(
            "observable dataset is empty; loosen the constraint minimums or widen the time window"
        )
    glob = fit_normal(pooled, cfg.sigma2_floor)
    groups = {
        k: fit_normal(v, cfg.sigma2_floor)
        for k, v in buckets.items()
        if len(v) >= cfg.min_samples
    }
    return cls(groups, glob)


def fit_access(observable: Iterable[CandidateRecord], cfg: ProbConfig | None = None) -> AccessModel:
    cfg = cfg or ProbConfig()
    return _fit_grouped(observable, access_sample, lambda c: access_key(c, cfg.grouping), cfg, AccessModel)


def init_egress(observable: Iterable[CandidateRecord], cfg: ProbConfig | None = None) -> EgressModel:
    cfg = cfg or ProbConfig()
    return _fit_grouped(observable, egress_sample, lambda c: egress_key(c, cfg.grouping), cfg, EgressModel)


def save_models(path, **models: GroupedNormal) -> None:
    Path(path).write_text(json.dumps({k: m.to_json() for k, m in models.items()}, indent=2, sort_keys=True) + "\n")


def load_models(path) -> dict[str, GroupedNormal]:
    obj = json.loads(Path(path).read_text())
    return {k: GroupedNormal.from_json(v) for k, v in obj.items()}
