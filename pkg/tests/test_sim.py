import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mdscache.geometry import great_circle_distance, sample_uniform_point
from mdscache.model import Allocation, SystemConfig, download_fractions, weighted_rate
from mdscache.sim import (
    Fleet,
    SimReport,
    empirical_contact_stats,
    kl_to_poisson,
    merge_reports,
    range_query,
    simulate,
)
from mdscache.strict import uniform_random_placement


def point_at(angle, azimuth=0.0):
    return np.array([math.sin(angle) * math.cos(azimuth), math.sin(angle) * math.sin(azimuth), math.cos(angle)])


def test_range_query_fixture():
    rho, r = 30.0, 10.0
    pos = np.array([point_at(0.0)] + [point_at(0.2, az) for az in (0, 2, 4)]
                   + [point_at(0.5, az) for az in (1, 3)])
    assert range_query(pos, 0, r, [], rho) == 0
    assert range_query(pos, 0, r, [1, 2, 3, 4, 5], rho) == 3
    assert range_query(pos, 0, r, [0, 1, 2, 3, 4, 5], rho) == 3
    assert range_query(pos, 0, r, [0], rho) == 0
    assert range_query(pos, 0, math.pi * rho, [0, 1, 4], rho) == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_range_query_matches_distance(seed):
    rng = np.random.default_rng(seed)
    pos = sample_uniform_point(rng, 40)
    cachers = rng.choice(40, 15, replace=False)
    expected = sum(1 for c in cachers if c != 0 and great_circle_distance(pos[0], pos[c], 30.0) <= 25.0)
    assert range_query(pos, 0, 25.0, cachers, 30.0) == expected


@settings(max_examples=200)
@given(st.integers(1, 30), st.integers(0, 40))
def test_download_conservation(k, j):
    a = 1.0 / k
    bc, bnc, dc, dnc = download_fractions(a, j)
    assert bc + dc + a == pytest.approx(1.0, abs=1e-12)
    assert bnc + dnc == pytest.approx(1.0, abs=1e-12)
    assert min(bc, bnc, dc, dnc) >= -1e-12


def test_no_caching_all_from_base_station():
    cfg = SystemConfig(M=50, N=10, n=5)
    alloc = Allocation.zeros(10, 5)
    pm = uniform_random_placement(alloc, cfg, np.random.default_rng(0))
    rep = simulate(cfg, pm, alloc, duration=math.inf, rng=np.random.default_rng(1), max_requests=2000)
    assert rep.request_count == 2000
    assert rep.f_hat == cfg.total_request_rate
    assert rep.g_hat == 0.0
    assert rep.histogram.sum() == 0


def test_full_caching_single_file_is_free():
    cfg = SystemConfig(M=20, N=1, n=20, beta_d=1.0)
    alloc = Allocation.from_k([1], 20)
    pm = uniform_random_placement(alloc, cfg, np.random.default_rng(0))
    rep = simulate(cfg, pm, alloc, duration=math.inf, rng=np.random.default_rng(2), max_requests=3000)
    assert rep.f_hat == 0.0 and rep.g_hat == 0.0


def test_small_system_matches_analysis():
    cfg = SystemConfig(M=120, N=20, n=60, r=12.0, theta=0.8)
    pop = cfg.popularity()
    alloc = Allocation.from_k([2, 3, 4, 6, 10, 20, 30, 60] + [0] * 12, cfg.n)
    rng = np.random.default_rng(11)
    pm = uniform_random_placement(alloc, cfg, rng)
    rep = simulate(cfg, pm, alloc, duration=math.inf, rng=rng, max_requests=30_000)
    br = weighted_rate(cfg, pop, cfg.contact(), alloc)
    assert abs(rep.f_hat - br.f) <= 4 * rep.f_ci + 0.01 * br.f
    assert abs(rep.g_hat - br.g) <= 4 * rep.g_ci + 0.01 * br.g
    assert rep.h_hat == pytest.approx(cfg.theta * rep.f_hat + (1 - cfg.theta) * rep.g_hat)
    assert rep.kl_divergence < 0.02


def test_seed_determinism_and_report_round_trip():
    cfg = SystemConfig(M=60, N=10, n=30)
    alloc = Allocation.from_k([1, 2, 3, 0, 0, 0, 0, 0, 0, 0], cfg.n)

    def run(seed):
        rng = np.random.default_rng(seed)
        pm = uniform_random_placement(alloc, cfg, rng)
        return simulate(cfg, pm, alloc, duration=2000.0, rng=rng)

    a, b = run(7), run(7)
    assert a.dumps() == b.dumps()
    back = SimReport.loads(a.dumps())
    assert back.dumps() == a.dumps()
    assert np.array_equal(back.histogram, a.histogram)
    assert "np.float64" not in a.dumps()


def test_merge_reports_pools_batches():
    cfg = SystemConfig(M=60, N=10, n=30)
    alloc = Allocation.from_k([1, 2, 3, 0, 0, 0, 0, 0, 0, 0], cfg.n)
    reps = []
    for seed in (1, 2):
        rng = np.random.default_rng(seed)
        pm = uniform_random_placement(alloc, cfg, rng)
        reps.append(simulate(cfg, pm, alloc, duration=math.inf, rng=rng, max_requests=4000))
    m = merge_reports(reps)
    assert m.request_count == 8000
    assert m.f_hat == pytest.approx((reps[0].f_hat + reps[1].f_hat) / 2)
    assert np.array_equal(m.histogram[: len(reps[0].histogram)] - reps[0].histogram,
                          np.pad(reps[1].histogram, (0, len(m.histogram) - len(reps[1].histogram)))
                          [: len(reps[0].histogram)])
    with pytest.raises(ValueError):
        merge_reports([])


def test_inconsistent_placement_rejected():
    cfg = SystemConfig(M=20, N=3, n=5)
    alloc = Allocation.from_k([1, 0, 0], cfg.n)
    pm = uniform_random_placement(Allocation.from_k([1, 1, 0], cfg.n), cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate(cfg, pm, alloc, duration=10.0)


def test_kl_to_poisson():
    mean = 2.0
    h = np.round(stats.poisson.pmf(np.arange(30), mean) * 1e9)
    assert kl_to_poisson(h, mean) < 1e-8
    assert kl_to_poisson([0, 0, 100], 0.001) > 5
    assert math.isnan(kl_to_poisson([], 1.0))


def test_fleet_stays_area_uniform():
    rng = np.random.default_rng(3)
    fleet = Fleet(400, 30.0, 0.3, 2.5, rng)
    pts = np.concatenate([fleet.positions(t) for t in np.linspace(0.0, 3000.0, 25)])
    octant = (pts[:, 0] > 0) * 4 + (pts[:, 1] > 0) * 2 + (pts[:, 2] > 0)
    counts = np.bincount(octant, minlength=8)
    assert stats.chisquare(counts).pvalue > 1e-4
    cap = pts @ np.array([0.0, 0.6, 0.8]) >= 0.5
    # samples of one device at nearby times are correlated, hence the loose bound
    assert abs(cap.mean() - 0.25) <= 0.03


def test_fleet_legs_consistent():
    rng = np.random.default_rng(4)
    fleet = Fleet(50, 30.0, 0.3, 2.5, rng)
    fleet.advance(500.0)
    for d in range(50):
        leg = fleet.leg(d)
        arc = great_circle_distance(leg.origin, leg.target, 30.0)
        assert leg.arrive_time == pytest.approx(leg.depart_time + arc / leg.speed, rel=1e-9, abs=1e-9)
        assert 0.3 <= leg.speed <= 2.5
        assert leg.depart_time <= 500.0 <= leg.arrive_time


def test_stationary_start_speed_bias():
    # time-stationary speeds are weighted by 1/s relative to the uniform leg draw
    rng = np.random.default_rng(5)
    fleet = Fleet(20000, 30.0, 0.3, 2.5, rng)
    expected = (2.5 - 0.3) / math.log(2.5 / 0.3)
    assert fleet.speed.mean() == pytest.approx(expected, rel=0.02)


def test_contact_stats_constant_speed():
    cfg = SystemConfig(M=60, s_min=1.4, s_max=1.4)
    c = cfg.contact()
    cs = empirical_contact_stats(cfg, duration=1500.0, rng=np.random.default_rng(8), devices=40)
    assert cs.n_contacts > 500
    assert cs.mean_contact == pytest.approx(1.0 / c.mu, rel=0.05)
    assert 1.0 / cs.mean_intercontact == pytest.approx(c.pair_rate, rel=0.08)


def test_contact_stats_whole_sphere():
    cfg = SystemConfig(M=10, r=30.0 * math.pi, rho=30.0)
    cs = empirical_contact_stats(cfg, duration=50.0, rng=np.random.default_rng(0), devices=6)
    assert cs.n_intercontacts == 0 and cs.n_contacts == 0
    assert math.isnan(cs.mean_intercontact)
