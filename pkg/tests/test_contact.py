import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mdscache.contact import (
    MobilityParams,
    RangeApproximationWarning,
    contact_count_distribution,
    load_ratio,
    poisson_head_moments,
    poisson_tail_moments,
    rates,
    relative_speed,
)

# 30-digit reference values computed independently with mpmath
S_REF = 1.78253536262922776061
LAM_REF = 1.57295508650082593624
MU_REF = 0.113479725679418304017
TC_REF = 8.81214678668692733825
TI_REF = 317.237284320729384177
Q0_REF = 9.55423526899487956746e-7


def default_params(**kw):
    base = dict(s_min=0.3, s_max=2.5, r=10.0, rho=30.0, M=500, n=500)
    base.update(kw)
    return MobilityParams(**base)


def test_relative_speed():
    assert relative_speed(math.pi / 2, math.pi / 2) == pytest.approx(2.0, rel=1e-15)
    assert relative_speed(0.3, 2.5) == pytest.approx(S_REF, rel=1e-14)
    assert relative_speed(0.6, 5.0) == pytest.approx(2 * relative_speed(0.3, 2.5), rel=1e-15)
    with pytest.raises(ValueError):
        relative_speed(2.0, 1.0)


def test_rates_reference_values():
    lam, mu, tc = rates(default_params())
    assert lam == pytest.approx(LAM_REF, rel=1e-13)
    assert mu == pytest.approx(MU_REF, rel=1e-13)
    assert tc == pytest.approx(TC_REF, rel=1e-13)
    assert lam / mu == pytest.approx(499 * 100 / 3600, rel=1e-13)
    cm = contact_count_distribution(default_params())
    assert cm.mean_intercontact_time == pytest.approx(TI_REF, rel=1e-13)


def test_single_pair_rate():
    lam, _, _ = rates(default_params(M=2, n=1))
    s = relative_speed(0.3, 2.5)
    assert lam == pytest.approx(2 * 10 * s / (4 * math.pi * 900), rel=1e-14)


@given(st.floats(0.1, 5), st.floats(1, 3), st.integers(2, 5000))
def test_load_ratio_speed_free(s_min, factor, M):
    p = default_params(s_min=s_min, s_max=s_min * factor, M=M, n=1)
    lam, mu, _ = rates(p)
    assert lam / mu == pytest.approx(load_ratio(p), rel=1e-12)
    # Poisson point process cross-check: (M - 1) pi r^2 / A
    assert load_ratio(p) == pytest.approx((M - 1) * math.pi * 100 / (4 * math.pi * 900), rel=1e-12)


def test_range_warning():
    with pytest.warns(RangeApproximationWarning):
        default_params(r=20.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        default_params()


def test_q0_and_normalisation():
    cm = contact_count_distribution(default_params())
    assert cm.q[0] == pytest.approx(Q0_REF, rel=1e-12)
    assert cm.q.sum() + cm.tail_mass == pytest.approx(1.0, abs=1e-12)
    assert cm.tail_mass <= 1e-12
    j = np.arange(len(cm.q))
    assert np.allclose(cm.q, stats.poisson.pmf(j, cm.mean), rtol=1e-12, atol=1e-300)


def test_truncation_is_smallest():
    cm = contact_count_distribution(default_params(), trunc_eps=1e-9)
    assert stats.poisson.sf(cm.j_max, cm.mean) <= 1e-9
    assert stats.poisson.sf(cm.j_max - 1, cm.mean) > 1e-9


def test_vanishing_mean():
    cm = contact_count_distribution(default_params(M=100_000, n=1, r=0.01))
    assert cm.q[0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("M,n", [(500, 500), (2000, 50), (20000, 20000)])
def test_moments_with_tail(M, n):
    cm = contact_count_distribution(default_params(M=M, n=n))
    j = np.arange(len(cm.q))
    tail_mass, tail_first = cm.tail(len(cm.q))
    mean = j @ cm.q + tail_first
    assert mean == pytest.approx(cm.mean, rel=1e-9)
    var = (j**2) @ cm.q - (j @ cm.q) ** 2
    assert var == pytest.approx(cm.mean, rel=1e-8)


def test_head_moments_examples():
    assert poisson_head_moments(3.0, 0) == (0.0, 0.0)
    assert poisson_head_moments(0.0, 1) == (1.0, 0.0)
    P, S = poisson_head_moments(2.0, 3)
    assert P == pytest.approx(0.676676416183063459470, abs=1e-12)
    assert S == pytest.approx(0.812011699419676151364, abs=1e-12)


@given(st.floats(0, 60), st.integers(0, 120))
def test_head_tail_partition(mean, k):
    P, S = poisson_head_moments(mean, k)
    T, ST = poisson_tail_moments(mean, k)
    assert P + T == pytest.approx(1.0, abs=1e-12)
    assert S + ST == pytest.approx(mean, abs=1e-9 * max(1.0, mean))
    j = np.arange(k)
    q = stats.poisson.pmf(j, mean) if mean > 0 else (j == 0).astype(float)
    assert P == pytest.approx(q.sum(), abs=1e-12)
    assert S == pytest.approx(j @ q, abs=1e-12 * max(1.0, mean))


def test_trunc_eps_domain():
    with pytest.raises(ValueError):
        contact_count_distribution(default_params(), trunc_eps=1e-3)
