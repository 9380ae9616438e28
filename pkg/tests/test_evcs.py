from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import binom

from evfdia.evcs import (
    CapacityCoefficients, Dist, EVRecord, StationConfig, capacity_coefficients, charge_time,
    charging_time_pdf, count_transition_pmf, pseudo_count, simulate_station, split_counts,
    station_capacity, trace_coefficients, transition_matrix, vr_slots,
)


def single_ev_cfg(mode="strict", **kw):
    base = dict(power_levels=(10.0,), power_probs=(1.0,), battery_levels=(40.0,), battery_probs=(1.0,),
                soc=Dist("point", (0.4,)), parking=Dist("point", (6.0,)), mode=mode)
    base.update(kw)
    return StationConfig(**base)


# --- timing -------------------------------------------------------------------

def test_charge_time_examples():
    assert charge_time(0.5, 0.9, 50, 10, 1.0) == 2
    assert charge_time(0.95, 0.9, 50, 10, 1.0) == 0
    # exact: 0.7 * 23 / 23 h = 0.7 h = 4.2 ten-minute slots
    exact = (Fraction(9, 10) - Fraction(2, 10)) * 23 / 23 / Fraction(1, 6)
    assert charge_time(0.2, 0.9, 23, 23, 1 / 6) == math.ceil(exact) == 5


def test_charge_time_vectorized():
    out = charge_time(np.array([0.5, 0.95, 0.1]), 0.9, 40.0, 20.0, 1.0)
    np.testing.assert_array_equal(out, [1, 0, 2])


@pytest.mark.parametrize("t_p,t_c,expected", [(6, 2, 2), (2, 5, 0), (7, 2, 2), (3, 3, 0)])
def test_vr_slots(t_p, t_c, expected):
    assert vr_slots(t_p, t_c) == expected


# --- count chain --------------------------------------------------------------

def test_count_pmf_empty_station():
    np.testing.assert_allclose(count_transition_pmf(0, 0.1, 0.3), [0.9, 0.1])


def test_count_pmf_all_depart():
    pmf = count_transition_pmf(1, 0.1, 0.2)
    assert pmf[0] == pytest.approx(0.9 * 0.2)


def test_count_pmf_rejects_bad_probability():
    with pytest.raises(ValueError, match="arrival"):
        count_transition_pmf(2, 1.5, 0.1)


def test_count_pmf_matches_monte_carlo():
    rng = np.random.default_rng(7)
    n, q_a, q_d, paths = 3, 0.05, 0.1, 1_000_000
    arrivals = rng.random(paths) < q_a
    departures = (rng.random((paths, n)) < q_d).sum(axis=1)
    mc = np.bincount(n + arrivals - departures, minlength=n + 2) / paths
    tv = 0.5 * np.abs(mc - count_transition_pmf(n, q_a, q_d)).sum()
    assert tv < 0.005


def _oracle_matrix(L, q_a, q_d):
    """Exact one-step kernel: Bernoulli arrival plus binomial departures."""
    P = np.zeros((L + 1, L + 1))
    for n in range(L + 1):
        dep = binom.pmf(np.arange(n + 1), n, q_d)
        for a, pa in ((0, 1 - q_a), (1, q_a)):
            for d in range(n + 1):
                P[n, min(n + a - d, L)] += pa * dep[d]
    return P


def test_transition_matrix_matches_binomial_kernel():
    cfg = StationConfig(stalls=12, arrival_rate=0.3, service_rate=0.2)
    np.testing.assert_allclose(transition_matrix(cfg, 1.0), _oracle_matrix(12, 0.3, 0.2), atol=1e-12)


def test_pseudo_count_three_slots():
    cfg = StationConfig(stalls=20, arrival_rate=0.05, service_rate=0.1)
    P = _oracle_matrix(20, 0.05, 0.1)
    start = np.zeros(21)
    start[5] = 1.0
    expected = int(np.argmax(start @ np.linalg.matrix_power(P, 3)))
    assert pseudo_count(5, cfg, 3, dt=1.0, substeps=1) == expected


def test_pseudo_count_no_arrivals_keeps_count():
    cfg = StationConfig(stalls=50, arrival_rate=0.0, service_rate=0.05)
    assert pseudo_count(17, cfg, 1, dt=1 / 6) == 17


def test_pseudo_count_empty_stays_empty():
    cfg = StationConfig(stalls=50, arrival_rate=0.06, service_rate=3.0)
    assert pseudo_count(0, cfg, 1, dt=1 / 6) == 0


def test_pseudo_count_rejects_zero_slots():
    with pytest.raises(ValueError):
        pseudo_count(3, StationConfig(), 0, dt=1 / 6)


@given(n=st.integers(0, 60), q_a=st.floats(0, 0.3), q_d=st.floats(0, 0.3))
def test_count_pmf_is_distribution(n, q_a, q_d):
    pmf = count_transition_pmf(n, q_a, q_d)
    assert pmf.shape == (n + 2,)
    assert np.all(pmf >= 0)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)


@given(rate=st.floats(0.01, 20), L=st.integers(1, 30))
def test_chain_monotone_without_departures_or_arrivals(rate, L):
    grow = transition_matrix(StationConfig(stalls=L, arrival_rate=rate, service_rate=0.0), 1 / 60)
    shrink = transition_matrix(StationConfig(stalls=L, arrival_rate=0.0, service_rate=rate), 1 / 60)
    assert np.allclose(np.tril(grow, -1), 0)
    assert np.allclose(np.triu(shrink, 1), 0)
    np.testing.assert_allclose(grow.sum(axis=1), 1)
    np.testing.assert_allclose(shrink.sum(axis=1), 1)


# --- charging-time distribution -------------------------------------------------

def test_charging_time_pdf_degenerate():
    pdf = charging_time_pdf(single_ev_cfg(), dt=1.0)
    assert pdf[2] == pytest.approx(1.0)
    assert pdf.sum() == pytest.approx(1.0)


def test_charging_time_pdf_two_powers():
    cfg = single_ev_cfg(power_levels=(10.0, 20.0), power_probs=(0.5, 0.5), parking=Dist("point", (48.0,)))
    pdf = charging_time_pdf(cfg, dt=1.0)
    assert pdf[1] == pytest.approx(0.5)
    assert pdf[2] == pytest.approx(0.5)


def test_charging_time_pdf_atom_at_departure():
    cfg = single_ev_cfg(power_levels=(10.0, 20.0), power_probs=(0.5, 0.5))
    pdf = charging_time_pdf(cfg, dt=1.0, parking=1)
    assert pdf[1] == pytest.approx(1.0)


def test_charging_time_pdf_matches_monte_carlo():
    cfg = StationConfig()
    dt, n = 1 / 6, 1_000_000
    rng = np.random.default_rng(11)
    p = rng.choice(np.arange(1, 24), n)
    b = rng.choice([24.0, 40.0, 60.0, 75.0], n)
    s = rng.uniform(0.2, 0.8, n)
    tp = np.maximum(1, np.rint(rng.lognormal(0.6848, 0.9353, n) / dt)).astype(int)
    tc = np.ceil((0.9 - s) * b / p / dt - 1e-9).astype(int)
    mc = np.bincount(np.minimum(tc, tp)) / n
    pdf = charging_time_pdf(cfg, dt)
    m = max(len(mc), len(pdf))
    tv = 0.5 * np.abs(np.pad(mc, (0, m - len(mc))) - np.pad(pdf, (0, m - len(pdf)))).sum()
    assert pdf.sum() == pytest.approx(1.0, abs=1e-6)
    assert tv < 0.01


# --- capacity coefficients ------------------------------------------------------

def test_strict_charging_coefficients_zero():
    c = capacity_coefficients(StationConfig(mode="strict"), 1 / 6)
    assert c.p_cd == 0 and c.p_cu == 0
    assert c.p_id > 0 and c.p_iu > 0


def test_flexible_single_ev_type():
    # t_C = 2 slots, t_P = 6 slots: every EV has spare parking time
    c = capacity_coefficients(single_ev_cfg("flexible"), 1.0)
    assert c.p_cu == pytest.approx(20.0)
    assert c.p_iu == pytest.approx(10.0)
    assert c.p_id == pytest.approx(10.0)  # 0.4 + 10/40 <= 0.9
    assert c.p_cd == 0


def test_down_capacity_needs_headroom():
    # 0.8 + 10/40 > 0.9: an extra slot of charging overshoots the target
    c = capacity_coefficients(single_ev_cfg(soc=Dist("point", (0.8,))), 1.0)
    assert c.p_id == 0


def test_no_vr_slots_no_up_capacity():
    # t_C = 5, t_P = 6: one idle slot, no full discharge/recharge cycle
    c = capacity_coefficients(single_ev_cfg(soc=Dist("point", (0.4,)), power_levels=(4.0,)), 1.0)
    assert c.p_iu == 0


def test_coefficients_match_trace():
    cfg = StationConfig(mode="flexible", stalls=10_000)
    dt = 1 / 6
    trace = simulate_station(cfg, 200_000, dt, seed=3, warmup=1000)
    mc = trace_coefficients(trace).as_array()
    an = capacity_coefficients(cfg, dt).as_array()
    for k in (0, 2, 3):
        assert mc[k] == pytest.approx(an[k], rel=0.03)


@given(powers=st.lists(st.integers(1, 40), min_size=1, max_size=4, unique=True),
       soc_hi=st.floats(0.3, 0.89), park_mu=st.floats(-0.5, 2.0))
def test_flexible_up_dominates_strict(powers, soc_hi, park_mu):
    kw = dict(power_levels=tuple(map(float, powers)), power_probs=tuple([1 / len(powers)] * len(powers)),
              soc=Dist("uniform", (0.1, soc_hi)), parking=Dist("lognormal", (park_mu, 0.5)))
    strict = capacity_coefficients(StationConfig(mode="strict", **kw), 1 / 6)
    flex = capacity_coefficients(StationConfig(mode="flexible", **kw), 1 / 6)
    assert flex.p_cu >= strict.p_cu == 0
    assert flex.p_iu == pytest.approx(strict.p_iu)
    assert min(flex.as_array()) >= 0


# --- station aggregation ------------------------------------------------------

def test_split_counts_examples():
    assert split_counts(0.0, 7, 12.0) == (0.0, 7)
    assert split_counts(7 * 12.0, 7, 12.0) == (7, 0)
    assert split_counts(500.0, 7, 12.0) == (7, 0)
    assert split_counts(60.0, 10, 12.0) == (5.0, 5.0)


def test_station_capacity_examples():
    coeff = CapacityCoefficients(2.0, 0.0, 3.0, 1.0)
    assert station_capacity(coeff, 4, 6) == (12.0, 22.0)
    assert station_capacity(coeff, 0, 0) == (0.0, 0.0)
    strict = capacity_coefficients(StationConfig(mode="strict"), 1 / 6)
    assert station_capacity(strict, 10, 0) == (0.0, 0.0)


@given(coeff=st.lists(st.floats(0, 50), min_size=4, max_size=4),
       load=st.floats(0, 2000), total=st.floats(0, 100))
def test_station_capacity_non_negative(coeff, load, total):
    c_c, c_i = split_counts(load, total, 12.0)
    assert 0 <= c_c <= total and c_i >= 0
    down, up = station_capacity(CapacityCoefficients(*coeff), c_c, c_i)
    assert down >= 0 and up >= 0


# --- trace simulation -----------------------------------------------------------

def test_no_arrivals_gives_empty_trace():
    tr = simulate_station(StationConfig(arrival_rate=0.0), 50, 1 / 6, seed=0)
    for arr in (tr.counts, tr.load_kw, tr.p_down_kw, tr.p_up_kw):
        assert not np.any(arr)


def test_single_ev_capacity_profile():
    ev = EVRecord(t0=0, t_p=6, s_i=0.4, e_b=40.0, p_c=10.0, t_c=2, t_v=vr_slots(6, 2))
    caps = [ev.capacity_at(t, "strict", 0.9, 1.0) for t in range(7)]
    assert caps[:2] == [(0.0, 0.0)] * 2  # charging, strict
    assert caps[2:6] == [(10.0, 10.0)] * 4  # idle with spare time and SOC headroom
    assert caps[6] == (0.0, 0.0)  # departed
    assert ev.capacity_at(0, "flexible", 0.9, 1.0) == (0.0, 20.0)


def test_trace_matches_per_ev_rules():
    cfg = StationConfig(mode="flexible", arrival_rate=20.0)
    dt = 1 / 6
    tr = simulate_station(cfg, 60, dt, seed=5, warmup=30)
    down = np.zeros(60)
    up = np.zeros(60)
    counts = np.zeros(60, dtype=int)
    for ev in tr.records():
        for t in range(60):
            d, u = ev.capacity_at(t, cfg.mode, cfg.target_soc, dt)
            down[t] += d
            up[t] += u
            counts[t] += ev.state_at(t) is not None
    np.testing.assert_allclose(tr.p_down_kw, down, atol=1e-9)
    np.testing.assert_allclose(tr.p_up_kw, up, atol=1e-9)
    np.testing.assert_array_equal(tr.counts, counts)


def test_trace_respects_stalls_and_seed():
    cfg = StationConfig(stalls=5, arrival_rate=30.0)
    a = simulate_station(cfg, 100, 1 / 6, seed=1, warmup=20)
    b = simulate_station(cfg, 100, 1 / 6, seed=1, warmup=20)
    assert a.counts.max() <= 5
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.p_up_kw, b.p_up_kw)


@pytest.mark.parametrize("kind,params", [("uniform", (0.2, 0.8)), ("beta", (2.0, 3.0)),
                                         ("lognormal", (0.5, 0.4)), ("point", (0.3,))])
def test_dist_sample_mean(kind, params):
    d = Dist(kind, params)
    x = d.sample(np.random.default_rng(0), 200_000)
    assert x.mean() == pytest.approx(d.mean(), rel=0.01)


def test_dist_validation():
    with pytest.raises(ValueError):
        Dist("gamma", (1.0, 1.0))
    with pytest.raises(ValueError):
        Dist("uniform", (1.0, 0.5))
    with pytest.raises(ValueError):
        StationConfig(power_probs=(0.5,) * 23)
