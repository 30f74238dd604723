import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from railtraj.candidates import CandidateRecord, CandidateSet, CandidateTrain
from railtraj.domain import AfcRecord, TravelRecord, TripSegment
from railtraj.prob import (
    GroupedNormal,
    NoObservableData,
    NormalParams,
    ProbConfig,
    fit_access,
    fit_normal,
    fit_weighted,
    init_egress,
    kl_normal,
    load_models,
    normal_pdf,
    save_models,
)

# 1 / (60 sqrt(2 pi)), frozen from the closed form
PEAK_SIGMA_60 = 0.006649038006690545


def quad_kl(p: NormalParams, q: NormalParams) -> float:
    """Integrate p log(p/q) directly; an oracle independent of the closed form."""
    lo, hi = min(p.mu, q.mu) - 12 * max(p.sigma, q.sigma), max(p.mu, q.mu) + 12 * max(p.sigma, q.sigma)

    def f(x):
        lp = -((x - p.mu) ** 2) / (2 * p.sigma2) - 0.5 * math.log(2 * math.pi * p.sigma2)
        lq = -((x - q.mu) ** 2) / (2 * q.sigma2) - 0.5 * math.log(2 * math.pi * q.sigma2)
        return math.exp(lp) * (lp - lq)

    val, _ = integrate.quad(f, lo, hi, points=[p.mu, q.mu], limit=200, epsabs=1e-12, epsrel=1e-12)
    return val


def naive_fit(xs):
    n = len(xs)
    mu = 0.0
    for x in xs:
        mu += x
    mu /= n
    ss = 0.0
    for x in xs:
        ss += (x - mu) * (x - mu)
    return mu, ss / (n - 1)


def obs_record(pid, o, d, access, egress, ride=600):
    rec = TravelRecord(AfcRecord(pid, o, 0, d, access + ride + egress), (TripSegment(1, o, d, "L1", "up"),))
    return CandidateRecord(rec, (CandidateSet(1, (CandidateTrain("t", access, access + ride),)),), ())


def test_pdf_peak_and_shape():
    p = NormalParams(300.0, 3600.0)
    assert normal_pdf(300.0, p) == pytest.approx(PEAK_SIGMA_60, rel=1e-12)
    assert normal_pdf(360.0, p) == pytest.approx(PEAK_SIGMA_60 * math.exp(-0.5), rel=1e-12)


def test_pdf_integrates_to_one():
    p = NormalParams(120.0, 900.0)
    val, _ = integrate.quad(lambda x: normal_pdf(x, p), p.mu - 8 * p.sigma, p.mu + 8 * p.sigma)
    assert abs(val - 1.0) < 1e-6


@given(st.floats(-1e4, 1e4), st.floats(1.0, 1e6), st.floats(0, 1e3))
def test_pdf_symmetric(mu, s2, d):
    p = NormalParams(mu, s2)
    assert normal_pdf(mu - d, p) == pytest.approx(normal_pdf(mu + d, p), rel=1e-12)


def test_access_fit_uses_unbiased_variance():
    recs = [obs_record(f"p{i}", "CY", "S6", a, 100) for i, a in enumerate([60, 90, 120])]
    m = fit_access(recs, ProbConfig(min_samples=1))
    p = m.params(("CY", "S6"))
    assert (p.mu, p.sigma2, p.count) == (90.0, 900.0, 3)


def test_egress_init_two_samples():
    recs = [obs_record("a", "CY", "S6", 60, 100), obs_record("b", "CY", "S6", 60, 140)]
    p = init_egress(recs, ProbConfig(min_samples=1)).params(("CY", "S6"))
    assert (p.mu, p.sigma2) == (120.0, 800.0)


def test_degenerate_fits_are_floored():
    assert fit_normal([42.0]).sigma2 == 1.0
    p = fit_normal([7.0] * 5, sigma2_floor=2.5)
    assert (p.mu, p.sigma2) == (7.0, 2.5)


def test_small_group_falls_back_to_global():
    recs = [obs_record(f"a{i}", "CY", "S6", 60 + i, 100) for i in range(6)]
    recs.append(obs_record("b", "CY", "BXQ", 500, 100))
    m = fit_access(recs, ProbConfig(min_samples=5))
    assert ("CY", "BXQ") not in m.groups
    assert m.params(("CY", "BXQ")) == m.global_
    assert m.global_.count == 7
    assert m.params(("CY", "S6")).count == 6


def test_station_grouping():
    recs = [obs_record(f"a{i}", "CY", "S6", 60 + i, 100) for i in range(5)]
    m = fit_access(recs, ProbConfig(grouping="station"))
    assert set(m.groups) == {"CY"}


def test_empty_observable_set_raises():
    with pytest.raises(NoObservableData):
        fit_access([])


@given(st.lists(st.integers(0, 3600), min_size=2, max_size=60))
def test_fit_matches_two_pass_oracle(xs):
    mu, var = naive_fit(xs)
    p = fit_normal(xs, sigma2_floor=1e-12) if var > 0 else None
    if p is not None:
        assert p.mu == pytest.approx(mu, rel=1e-9, abs=1e-9)
        assert p.sigma2 == pytest.approx(var, rel=1e-9)


def test_weighted_fit_with_unit_weights_is_ml():
    x = [10.0, 20.0, 30.0, 40.0]
    p = fit_weighted(x, [1, 1, 1, 1])
    assert p.mu == 25.0 and p.sigma2 == pytest.approx(125.0)


def test_kl_reference_values():
    assert kl_normal(NormalParams(0, 1), NormalParams(1, 1)) == pytest.approx(0.5, abs=1e-12)
    assert quad_kl(NormalParams(0, 1), NormalParams(1, 1)) == pytest.approx(0.5, abs=1e-9)
    p = NormalParams(120, 900)
    assert kl_normal(p, p) == 0.0


def test_kl_is_asymmetric():
    p, q = NormalParams(0, 1), NormalParams(2, 4)
    assert kl_normal(p, q) != pytest.approx(kl_normal(q, p))


params = st.builds(NormalParams, st.floats(-500, 500), st.floats(0.5, 1e4))


@given(params, params)
def test_kl_nonnegative(p, q):
    assert kl_normal(p, q) >= 0.0


@given(params, params)
def test_kl_matches_quadrature(p, q):
    if abs(p.mu - q.mu) / q.sigma > 30 or p.sigma2 / q.sigma2 > 200:
        return  # integrand too peaked for quad to be a fair oracle
    assert kl_normal(p, q) == pytest.approx(quad_kl(p, q), abs=1e-6)


def test_models_json_roundtrip(tmp_path):
    m = GroupedNormal({("CY", "BXQ"): NormalParams(1.5, 2.5, 3)}, NormalParams(4.0, 5.0, 6))
    save_models(tmp_path / "m.json", egress=m)
    back = load_models(tmp_path / "m.json")["egress"]
    assert back.groups == m.groups and back.global_ == m.global_
