"""Closed-form contact statistics for random-waypoint devices on a sphere.

The number of devices caching a given file that are in range of a reference
device is modelled as Poisson with mean (lambda/mu) * (n/M), where lambda is
the aggregate contact arrival rate and mu the contact departure rate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

DEFAULT_TRUNC_EPS = 1e-12


class RangeApproximationWarning(UserWarning):
    """The communication range is not small compared to the sphere."""


@dataclass(frozen=True)
class MobilityParams:
    s_min: float
    s_max: float
    r: float
    rho: float
    M: int
    n: int
    omega: float = 0.1

    def __post_init__(self):
        if not 0 < self.s_min <= self.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got {self.s_min}, {self.s_max}")
        if not self.r > 0 or not self.rho > 0:
            raise ValueError("r and rho must be positive")
        if not 1 <= self.n <= self.M:
            raise ValueError(f"need 1 <= n <= M, got n={self.n}, M={self.M}")
        if self.r / (2 * self.rho) > 0.2:
            warnings.warn(
                f"r/(2 rho) = {self.r / (2 * self.rho):.3f}; contact model assumes r << 2 rho",
                RangeApproximationWarning,
                stacklevel=3,
            )


def relative_speed(s_min: float, s_max: float) -> float:
    """Approximate mean relative speed of two devices, 2(s_max + s_min)/pi."""
    if not 0 < s_min <= s_max:
        raise ValueError(f"need 0 < s_min <= s_max, got {s_min}, {s_max}")
    return 2.0 * (s_max + s_min) / math.pi


def rates(params: MobilityParams) -> tuple[float, float, float]:
    """Return (lambda, mu, expected contact time)."""
    s = relative_speed(params.s_min, params.s_max)
    lam = (params.M - 1) * 2.0 * params.r * s / (4.0 * math.pi * params.rho**2)
    mu = 2.0 * s / (math.pi * params.r)
    return lam, mu, 1.0 / mu


def load_ratio(params: MobilityParams) -> float:
    """lambda/mu in its speed-free form (M-1) r^2 / (4 rho^2)."""
    return (params.M - 1) * params.r**2 / (4.0 * params.rho**2)


def poisson_head_moments(mean: float, k: int) -> tuple[float, float]:
    """Partial Poisson sums over j < k.

    Returns ``(P, S)`` with ``P = Pr(J <= k-1)`` and ``S = sum_{j<k} j q_j``,
    which equals ``mean * Pr(J <= k-2)``.
    """
    if mean < 0 or k < 0:
        raise ValueError("need mean >= 0 and k >= 0")
    if k == 0:
        return 0.0, 0.0
    if mean == 0:
        return 1.0, 0.0
    p = float(special.pdtr(k - 1, mean))
    s = float(mean * special.pdtr(k - 2, mean)) if k >= 2 else 0.0
    return p, s


def poisson_tail_moments(mean: float, k: int) -> tuple[float, float]:
    """Complement of `poisson_head_moments`: mass and first moment over j >= k."""
    if k <= 0:
        return 1.0, float(mean)
    if mean == 0:
        return 0.0, 0.0
    mass = float(special.pdtrc(k - 1, mean))
    first = float(mean * special.pdtrc(k - 2, mean)) if k >= 2 else float(mean)
    return mass, first


@dataclass(frozen=True)
class ContactModel:
    s: float
    lam: float
    mu: float
    mean: float
    q: np.ndarray
    tail_mass: float
    pair_rate: float
    trunc_eps: float = DEFAULT_TRUNC_EPS

    @property
    def j_max(self) -> int:
        return len(self.q) - 1

    @property
    def expected_contact_time(self) -> float:
        return 1.0 / self.mu

    @property
    def mean_intercontact_time(self) -> float:
        """Single-pair intercontact mean, 4 pi rho^2 / (2 r s)."""
        return 1.0 / self.pair_rate

    def head(self, k: int) -> tuple[float, float]:
        return poisson_head_moments(self.mean, k)

    def tail(self, k: int) -> tuple[float, float]:
        return poisson_tail_moments(self.mean, k)


def _truncation_point(mean: float, eps: float) -> int:
    if mean == 0:
        return 0
    hi = int(math.ceil(mean + 12.0 * math.sqrt(mean) + 40))
    while special.pdtrc(hi, mean) > eps:
        hi *= 2
    js = np.arange(hi + 1)
    tails = special.pdtrc(js, mean)
    return int(np.argmax(tails <= eps))


def poisson_pmf(mean: float, j_max: int) -> np.ndarray:
    if mean == 0:
        q = np.zeros(j_max + 1)
        q[0] = 1.0
        return q
    j = np.arange(j_max + 1)
    # log space: exp(-mean) underflows for densities beyond ~M=50000
    return np.exp(j * math.log(mean) - mean - special.gammaln(j + 1))


def contact_count_distribution(params: MobilityParams, trunc_eps: float = DEFAULT_TRUNC_EPS) -> ContactModel:
    """Truncated Poisson law of the number of caching devices in range."""
    if not 0 < trunc_eps <= 1e-6:
        raise ValueError("trunc_eps must lie in (0, 1e-6]")
    lam, mu, _ = rates(params)
    mean = load_ratio(params) * params.n / params.M
    j_max = _truncation_point(mean, trunc_eps)
    q = poisson_pmf(mean, j_max)
    tail = float(special.pdtrc(j_max, mean)) if mean > 0 else 0.0
    s = relative_speed(params.s_min, params.s_max)
    pair_rate = 2.0 * params.r * s / (4.0 * math.pi * params.rho**2)
    return ContactModel(s=s, lam=lam, mu=mu, mean=mean, q=q, tail_mass=tail,
                        trunc_eps=trunc_eps, pair_rate=pair_rate)
