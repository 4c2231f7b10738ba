import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from manetbuf import (
    ConvergenceError,
    DelayRegime,
    NetworkParams,
    ParameterError,
    Regime,
    SchedProbs,
    analyze,
    expected_delay,
    limiting_delay,
    limiting_throughput,
    ls_mac_probs,
    overflow_fixed_point,
    relay_osd,
    relay_substate_dist,
    relay_transition_probs,
    service_rate,
    source_osd,
    stationary_oracle,
    throughput,
    throughput_capacity,
)
from manetbuf.analytic import overflow_map, source_empty_probability, source_mean_length
from manetbuf.oracle import birth_death_matrix, source_chain_matrix

BASELINE = NetworkParams(n=72, m=6, Bs=5, Br=5, lambda_s=0.05)
DESK = NetworkParams(n=20, m=4, Bs=3, Br=3, lambda_s=0.02)

rates = st.floats(0.001, 0.999)


# --- service rate ----------------------------------------------------------

def test_service_rate_examples():
    p = SchedProbs(0.2, 0.3, 0.3)
    assert service_rate(p, False) == pytest.approx(0.5)
    assert service_rate(p, False, 0.9) == pytest.approx(0.5)
    assert service_rate(p, True, 1.0) == pytest.approx(0.2)
    assert service_rate(p, True, 0.5) == pytest.approx(0.35)
    with pytest.raises(ParameterError):
        service_rate(p, True, 1.5)


# --- source buffer ---------------------------------------------------------

def test_source_osd_small_chain():
    osd = source_osd(0.2, 0.5, 3)
    np.testing.assert_allclose(osd.pi_s, [0.603774, 0.301887, 0.075472, 0.018868], atol=5e-7)
    assert osd.tau == pytest.approx(0.25)


def test_source_osd_at_tau_one():
    osd = source_osd(0.4, 0.4, 2)
    np.testing.assert_allclose(osd.pi_s, [0.6 / 2.6, 1 / 2.6, 1 / 2.6], atol=1e-12)
    assert osd.tau == 1.0


def test_source_osd_continuous_through_tau_one():
    at = source_osd(0.3, 0.3, 6).pi_s
    for eps in (1e-11, 1e-8, 1e-6):
        for lam in (0.3 + eps, 0.3 - eps):
            np.testing.assert_allclose(source_osd(lam, 0.3, 6).pi_s, at, atol=10 * eps + 1e-12)


def test_source_osd_without_arrivals():
    osd = source_osd(1e-14, 0.5, 3)
    assert osd.pi_s[0] == pytest.approx(1.0)
    assert osd.pi_s[1:].sum() < 1e-12


def test_source_osd_rejects_degenerate_rates():
    with pytest.raises(ParameterError):
        source_osd(1.0, 1.0, 3)
    with pytest.raises(ParameterError):
        source_osd(0.5, 0.0, 3)


@given(lam=rates, mu=rates, Bs=st.integers(1, 6))
@settings(max_examples=150, deadline=None)
def test_source_osd_matches_chain(lam, mu, Bs):
    oracle = stationary_oracle(source_chain_matrix(lam, mu, Bs))
    osd = source_osd(lam, mu, Bs)
    np.testing.assert_allclose(osd.pi_s, oracle, atol=1e-10, rtol=0)
    assert osd.pi_s.sum() == pytest.approx(1.0, abs=1e-12)
    assert source_empty_probability(lam, mu, Bs) == pytest.approx(osd.empty, abs=1e-12)


@given(lam=rates, mu=rates, Bs=st.integers(1, 60))
@settings(max_examples=150, deadline=None)
def test_mean_length_is_conditional_mean(lam, mu, Bs):
    # Ls is the mean occupancy beyond the head-of-line packet, given non-empty
    osd = source_osd(lam, mu, Bs)
    assume(osd.empty < 1 - 1e-9)
    i = np.arange(Bs + 1)
    direct = ((i[1:] - 1) * osd.pi_s[1:]).sum() / osd.pi_s[1:].sum()
    assert source_mean_length(osd.tau, Bs) == pytest.approx(direct, rel=1e-9, abs=1e-12)


def test_mean_length_limits():
    assert source_mean_length(0.3, 1) == 0.0
    assert source_mean_length(1.0, 5) == pytest.approx(2.0)
    assert source_mean_length(0.5, math.inf) == pytest.approx(1.0)


# --- relay buffer ----------------------------------------------------------

def test_relay_transition_examples():
    up, down = relay_transition_probs(SchedProbs(0.1, 0.1, 0.1), 1.0, 10, 4)
    assert np.all(up == 0)
    _, down = relay_transition_probs(SchedProbs(0.1, 0.2, 0.2), 0.5, 4, 2)
    assert down[1] == pytest.approx(0.1)
    _, down = relay_transition_probs(SchedProbs(0.1, 0.2, 0.2), 0.5, 5, 3)
    assert down[3] == pytest.approx(0.12)


def test_relay_osd_examples():
    np.testing.assert_allclose(relay_osd(4, 2, 0.5).pi_r, [4 / 11, 4 / 11, 3 / 11], atol=1e-12)
    assert relay_osd(72, 5, 0.744597).pi_r[5] == pytest.approx(0.750949, abs=1e-6)
    np.testing.assert_array_equal(relay_osd(30, 4, 1.0).pi_r, [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(relay_osd(30, 0, 0.3).pi_r, [1.0])


def test_relay_osd_handles_huge_binomials():
    pi = relay_osd(800, 600, 0.01).pi_r
    assert np.isfinite(pi).all()
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)


@given(n=st.integers(4, 10), Br=st.integers(1, 6), p0=st.floats(0.0, 0.999),
       psr=st.floats(0.01, 0.45))
@settings(max_examples=150, deadline=None)
def test_relay_osd_matches_chain(n, Br, p0, psr):
    probs = SchedProbs(0.05, psr, psr)
    up, down = relay_transition_probs(probs, p0, n, Br)
    P = birth_death_matrix(up, down)
    pi = relay_osd(n, Br, p0, psr).pi_r
    np.testing.assert_allclose(pi, stationary_oracle(P), atol=1e-10, rtol=0)
    assert np.abs(pi @ P - pi).max() < 1e-10


# --- sub-state law ---------------------------------------------------------

def test_substate_examples():
    assert relay_substate_dist(30, 1, 1) == 1.0
    assert relay_substate_dist(4, 2, 1) == pytest.approx(2 / 3)
    assert relay_substate_dist(4, 2, 2) == pytest.approx(1 / 3)
    with pytest.raises(ParameterError):
        relay_substate_dist(5, 2, 3)


def test_substate_by_enumeration():
    # all multisets of i packets over n-2 destinations are equally likely
    from itertools import combinations_with_replacement

    n, i = 7, 4
    ms = list(combinations_with_replacement(range(n - 2), i))
    for l in range(1, i + 1):
        share = sum(len(set(x)) == l for x in ms) / len(ms)
        assert relay_substate_dist(n, i, l) == pytest.approx(share, abs=1e-15)


@given(n=st.integers(4, 200), i=st.integers(1, 40))
@settings(max_examples=150, deadline=None)
def test_substate_reproduces_relay_service(n, i):
    P = [relay_substate_dist(n, i, l) for l in range(1, i + 1)]
    assert sum(P) == pytest.approx(1.0, abs=1e-12)
    prd = 0.2
    served = sum(p * l * prd / (n - 2) for l, p in zip(range(1, i + 1), P))
    assert served == pytest.approx(prd * i / (n - 3 + i), abs=1e-12)


# --- fixed point -----------------------------------------------------------

def test_fixed_point_without_relay_traffic():
    p = BASELINE.replace(feedback=True)
    probs = SchedProbs(0.01, 0.0, 0.0)
    fp = overflow_fixed_point(p, probs)
    assert fp.pi_rBr == 0.0 and fp.mu_s == pytest.approx(0.01)


def test_fixed_point_default_network():
    p = BASELINE.replace(feedback=True)
    probs = ls_mac_probs(72, 6)
    fp = overflow_fixed_point(p, probs)
    assert 0 < fp.pi_rBr < 1
    assert abs(fp.pi_rBr - overflow_map(p, probs, fp.pi_rBr)) < 1e-6
    assert fp.iterations <= 10_000


@pytest.mark.parametrize("Br", [1, 5, 20])
def test_fixed_point_saturation_limit(Br):
    p = BASELINE.replace(feedback=True, lambda_s=1 - 1e-4, Br=Br)
    fp = overflow_fixed_point(p, ls_mac_probs(72, 6), tol=1e-12)
    assert fp.pi_rBr == pytest.approx(70 / (70 + Br), abs=1e-4)


def test_fixed_point_reports_failure():
    p = BASELINE.replace(feedback=True)
    with pytest.raises(ConvergenceError) as info:
        overflow_fixed_point(p, ls_mac_probs(72, 6), tol=1e-15, max_iter=2)
    assert info.value.iterations == 2 and info.value.residual > 0


def test_fixed_point_preconditions():
    with pytest.raises(ParameterError):
        overflow_fixed_point(BASELINE, ls_mac_probs(72, 6))
    with pytest.raises(ParameterError):
        overflow_fixed_point(BASELINE.replace(feedback=True, Br=0), ls_mac_probs(72, 6))


# --- metrics ---------------------------------------------------------------

def test_metric_edge_cases():
    probs = ls_mac_probs(72, 6)
    assert throughput(1.0, 0.3, probs) == 0.0
    assert throughput_capacity(probs, 72, 0) == probs.psd
    assert throughput_capacity(probs, 72, 5) == pytest.approx(0.017667, abs=5e-7)
    assert analyze(BASELINE.replace(Bs=1)).Ls == 0.0
    assert analyze(BASELINE.replace(Br=1)).Lr == 0.0
    mu = probs.psd + probs.psr
    assert expected_delay(mu, 0.0, 0.0, 0.0, probs, 72) == pytest.approx(1 / mu + 70 / mu)
    assert expected_delay(0.0, 0.0, 0.0, 0.0, probs, 72) == math.inf


def test_analyze_desk_scale_values():
    r = analyze(DESK)
    assert r.probs.psd == pytest.approx(0.0221077385, abs=1e-10)
    assert r.probs.psr == pytest.approx(0.1322245935, abs=1e-10)
    assert r.T == pytest.approx(0.015094, abs=1e-6)
    assert r.ED == pytest.approx(125.567, abs=1e-3)
    assert r.Tc == pytest.approx(0.040997, abs=1e-6)
    assert 0 <= r.T <= r.Tc <= r.probs.psd + r.probs.psr


@pytest.mark.parametrize("fb", [False, True])
def test_analyze_without_relay_buffer(fb):
    r = analyze(DESK.replace(Br=0, feedback=fb))
    assert r.Tc == r.probs.psd
    assert r.T <= r.probs.psd + 1e-15
    assert r.pi_r.tolist() == [1.0]


def test_analyze_vanishing_load():
    assert analyze(BASELINE.replace(lambda_s=1e-12)).T < 1e-11


def test_analyze_reports_consistent_feedback_state():
    r = analyze(DESK.replace(feedback=True, lambda_s=0.15))
    assert r.pi_rBr == r.pi_r[-1]
    assert r.residual < 1e-6
    assert r.mu_s == pytest.approx(r.probs.psd + r.probs.psr * (1 - r.pi_rBr), abs=1e-6)


# --- properties ------------------------------------------------------------

small_net = st.builds(
    NetworkParams,
    n=st.integers(4, 60),
    m=st.integers(1, 8),
    Bs=st.integers(1, 12),
    Br=st.integers(0, 12),
    lambda_s=st.floats(0.001, 0.999),
    feedback=st.booleans(),
)


@given(p=small_net, bump=st.floats(1e-3, 0.5))
@settings(max_examples=120, deadline=None)
def test_throughput_nondecreasing_in_load(p, bump):
    hi = min(p.lambda_s + bump, 1.0)
    assert analyze(p.replace(lambda_s=hi)).T >= analyze(p).T - 1e-9


@given(p=small_net)
@settings(max_examples=120, deadline=None)
def test_throughput_nondecreasing_in_buffers(p):
    base = analyze(p).T
    assert analyze(p.replace(Bs=p.Bs + 1)).T >= base - 1e-9
    assert analyze(p.replace(Br=p.Br + 1)).T >= base - 1e-9


@given(p=small_net)
@settings(max_examples=120, deadline=None)
def test_feedback_never_hurts(p):
    assert analyze(p.replace(feedback=True)).T >= analyze(p.replace(feedback=False)).T - 1e-9


@given(p=small_net)
@settings(max_examples=80, deadline=None)
def test_capacity_independent_of_feedback_and_source_buffer(p):
    tcs = {analyze(p.replace(feedback=fb, Bs=b)).Tc for fb in (False, True) for b in (1, 5, 20)}
    assert max(tcs) - min(tcs) < 1e-15


@given(p=small_net)
@settings(max_examples=100, deadline=None)
def test_report_invariants(p):
    r = analyze(p)
    assert 0 <= r.T <= r.Tc + 1e-12 <= r.probs.psd + r.probs.psr + 2e-12
    assert r.ED > 0 and not math.isnan(r.ED)
    assert r.pi_s.sum() == pytest.approx(1, abs=1e-12)
    assert r.pi_r.sum() == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("fb", [False, True])
@pytest.mark.parametrize("Bs,Br", [(1, 1), (5, 5), (20, 5), (5, 20)])
def test_saturation_reaches_capacity(fb, Bs, Br):
    p = BASELINE.replace(lambda_s=1 - 1e-4, feedback=fb, Bs=Bs, Br=Br)
    r = analyze(p)
    assert abs(r.T - r.Tc) < 1e-3
    assert r.pi_s0 < 1e-3
    assert r.pi_rBr == pytest.approx(70 / (70 + Br), abs=1e-3)


# --- limits ----------------------------------------------------------------

def test_limit_examples():
    probs = ls_mac_probs(72, 6)
    assert limiting_throughput(BASELINE, probs, Regime.BothInf) == 0.05
    d = limiting_delay(BASELINE, probs, DelayRegime.BothInfStable)
    total = probs.psd + probs.psr
    assert d == pytest.approx((71 - 0.05) / (total - 0.05), rel=1e-12)
    assert d == pytest.approx(685.9, abs=0.1)


@pytest.mark.parametrize("fb", [False, True])
@pytest.mark.parametrize("lam", [0.01, 0.05, 0.12])
def test_limits_match_large_buffers(fb, lam):
    p = BASELINE.replace(lambda_s=lam, feedback=fb)
    probs = ls_mac_probs(72, 6)
    big_r = analyze(p.replace(Br=500))
    assert limiting_throughput(p, probs, "BrInf") == pytest.approx(big_r.T, rel=1e-6)
    assert limiting_delay(p, probs, "BrInf") == pytest.approx(big_r.ED, rel=1e-4)
    big_s = analyze(p.replace(Bs=500))
    assert limiting_throughput(p, probs, "BsInf") == pytest.approx(big_s.T, rel=1e-4)


def test_saturated_source_limit():
    probs = ls_mac_probs(72, 6)
    p = BASELINE.replace(lambda_s=0.5)
    assert limiting_delay(p, probs, "BsInfSaturated") == math.inf
    assert limiting_throughput(p, probs, "BsInf") == pytest.approx(
        throughput_capacity(probs, 72, 5), rel=1e-12)
    with pytest.raises(ParameterError):
        limiting_delay(p, probs, "BsInfStable")
    with pytest.raises(ParameterError):
        limiting_delay(BASELINE, probs, "BsInfSaturated")
    with pytest.raises(ParameterError):
        limiting_delay(p, probs, "BothInfStable")
