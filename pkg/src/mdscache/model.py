"""Model objects and the rate formulas built on them.

All rates are expressed in file-equivalents per second; the file size never
enters the numerics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .contact import (
    DEFAULT_TRUNC_EPS,
    ContactModel,
    MobilityParams,
    contact_count_distribution,
    poisson_head_moments,
)

GRID_TOL = 1e-12


class ModelInconsistency(ArithmeticError):
    """Two evaluation routes of the same quantity disagree."""


@dataclass(frozen=True)
class SystemConfig:
    rho: float = 30.0
    r: float = 10.0
    M: int = 500
    N: int = 100
    sigma: float = 0.7
    s_min: float = 0.3
    s_max: float = 2.5
    omega: float = 0.1
    theta: float = 1.0
    beta_d: float = 1.0
    n: int | None = None
    file_size_bits: float | None = None

    def __post_init__(self):
        if self.n is None:
            object.__setattr__(self, "n", self.M)
        if not 0 < self.sigma <= 1.5:
            raise ValueError(f"sigma must lie in (0, 1.5], got {self.sigma}")
        if not 0.5 <= self.theta <= 1:
            raise ValueError(f"theta must lie in [0.5, 1], got {self.theta}")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 1 <= self.n <= self.M:
            raise ValueError(f"need 1 <= n <= M, got n={self.n}, M={self.M}")
        if self.beta_d < 0:
            raise ValueError("beta_d must be non-negative")
        if not 0 < self.s_min <= self.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got {self.s_min}, {self.s_max}")
        if not (self.r > 0 and self.rho > 0 and self.omega > 0):
            raise ValueError("r, rho and omega must be positive")

    @property
    def area(self) -> float:
        return 4.0 * math.pi * self.rho**2

    @property
    def nu(self) -> float:
        """Fraction n/M of devices holding a packet of a cached file."""
        return self.n / self.M

    @property
    def beta(self) -> float:
        """Global cache budget sum(alpha) <= beta, from beta_d = beta n / M."""
        return self.beta_d * self.M / self.n

    @property
    def total_request_rate(self) -> float:
        return self.M * self.omega

    def mobility(self) -> MobilityParams:
        return MobilityParams(s_min=self.s_min, s_max=self.s_max, r=self.r, rho=self.rho,
                              M=self.M, n=self.n, omega=self.omega)

    def contact(self, trunc_eps: float = DEFAULT_TRUNC_EPS) -> ContactModel:
        return contact_count_distribution(self.mobility(), trunc_eps)

    def popularity(self) -> Popularity:
        return zipf_popularity(self.N, self.sigma)

    def with_(self, **changes) -> SystemConfig:
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Popularity:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("popularity must be a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("popularity must be a probability vector")
        if np.any(np.diff(p) > 1e-15):
            raise ValueError("popularity must be non-increasing (most popular first)")
        object.__setattr__(self, "p", p)

    def __len__(self):
        return len(self.p)


def zipf_popularity(N: int, sigma: float) -> Popularity:
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 < sigma <= 1.5:
        raise ValueError(f"sigma must lie in (0, 1.5], got {sigma}")
    w = np.arange(1, N + 1, dtype=float) ** (-sigma)
    return Popularity(w / w.sum())


@dataclass(frozen=True)
class Allocation:
    """Per-file cached fraction alpha_i, with k_i = 1/alpha_i kept exactly.

    ``k`` is an integer array (0 for uncached files) when every alpha_i lies
    on the grid {0, 1/n, ..., 1/2, 1}; otherwise it is None.
    """

    alpha: np.ndarray
    n: int
    k: np.ndarray | None = field(default=None)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 1:
            raise ValueError("alpha must be a vector")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "alpha", a)
        if self.k is not None:
            k = np.asarray(self.k, dtype=np.int64)
            if k.shape != a.shape or np.any(k < 0) or np.any(k > self.n):
                raise ValueError("k must be integers in [0, n]")
            object.__setattr__(self, "k", k)

    @classmethod
    def from_k(cls, k, n: int) -> Allocation:
        k = np.asarray(k, dtype=np.int64)
        alpha = np.where(k > 0, 1.0 / np.maximum(k, 1), 0.0)
        return cls(alpha=alpha, n=n, k=k)

    @classmethod
    def from_alpha(cls, alpha, n: int, tol: float = GRID_TOL) -> Allocation:
        """Wrap a real vector, recognising grid points up to a relative `tol`."""
        alpha = np.asarray(alpha, dtype=float)
        k = np.zeros(len(alpha), dtype=np.int64)
        on_grid = True
        for i, a in enumerate(alpha):
            if a == 0:
                continue
            kk = round(1.0 / a)
            if 1 <= kk <= n and abs(a * kk - 1.0) <= tol:
                k[i] = kk
            else:
                on_grid = False
                break
        if on_grid:
            return cls.from_k(k, n)
        return cls(alpha=alpha, n=n)

    @classmethod
    def zeros(cls, N: int, n: int) -> Allocation:
        return cls.from_k(np.zeros(N, dtype=np.int64), n)

    @property
    def grid_valid(self) -> bool:
        return self.k is not None

    @property
    def total(self) -> float:
        return float(self.alpha.sum())

    def __len__(self):
        return len(self.alpha)

    def within_budget(self, beta: float, tol: float = 1e-9) -> bool:
        return self.total <= beta + tol


def popular_allocation(N: int, beta: float, n: int = 1) -> Allocation:
    """Cache the floor(beta) most popular files whole (repetition code).

    A budget beyond the library size caches every file.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    m = min(int(math.floor(beta + 1e-12)), N)
    k = np.zeros(N, dtype=np.int64)
    k[:m] = 1
    return Allocation.from_k(k, n)


def download_fractions(alpha_i: float, j: int) -> tuple[float, float, float, float]:
    """Fractions of file i fetched from the BS and over D2D, given j sources in range.

    Returns ``(bs_cached, bs_not_cached, d2d_cached, d2d_not_cached)`` where
    "cached" means the requester itself holds a packet of the file.
    """
    if alpha_i == 0:
        return 1.0, 1.0, 0.0, 0.0
    if j < 1.0 / alpha_i:
        bs_c = max(0.0, 1.0 - alpha_i * (j + 1))
        bs_nc = max(0.0, 1.0 - j * alpha_i)
    else:
        bs_c = bs_nc = 0.0
    return bs_c, bs_nc, 1.0 - alpha_i - bs_c, 1.0 - bs_nc


def _literal_branch_count(alpha: np.ndarray) -> np.ndarray:
    """Number of integers j >= 0 with j < 1/alpha (for alpha > 0)."""
    inv = 1.0 / alpha
    near = np.round(inv)
    snapped = np.abs(inv - near) <= GRID_TOL * inv
    return np.where(snapped, near, np.ceil(inv)).astype(np.int64)


def branch_counts(alloc: Allocation) -> np.ndarray:
    """k_i used by the case formulas; 0 marks an uncached file."""
    if alloc.grid_valid:
        return alloc.k
    a = alloc.alpha
    out = np.zeros(len(a), dtype=np.int64)
    pos = a > 0
    out[pos] = _literal_branch_count(a[pos])
    return out


def _case_terms(alloc: Allocation, contact: ContactModel, nu: float):
    """Per-file BS and D2D download fractions averaged over j (exact sums)."""
    a = alloc.alpha
    k = branch_counts(alloc)
    f_t = np.ones(len(a))
    g_t = np.zeros(len(a))
    for i in np.flatnonzero(k > 0):
        P, S = poisson_head_moments(contact.mean, int(k[i]))
        ai = a[i]
        # both terms are non-negative in exact arithmetic; clip rounding residue
        f_t[i] = max(0.0, P * (1.0 - ai * nu) - ai * S)
        g_t[i] = ai * S + (1.0 - P) * (1.0 - ai * nu)
    return f_t, g_t


def _average(p: np.ndarray, x: np.ndarray) -> float:
    # normalising by the computed sum of p makes an all-ones x average to exactly 1
    return math.fsum(p * x) / math.fsum(p)


def downlink_rate(cfg: SystemConfig, pop: Popularity, contact: ContactModel, alloc: Allocation) -> float:
    f_t, _ = _case_terms(alloc, contact, cfg.nu)
    return cfg.total_request_rate * _average(pop.p, f_t)


def d2d_rate(cfg: SystemConfig, pop: Popularity, contact: ContactModel, alloc: Allocation) -> float:
    _, g_t = _case_terms(alloc, contact, cfg.nu)
    return cfg.total_request_rate * _average(pop.p, g_t)


def epigraph_cost(alpha, contact: ContactModel, nu: float, theta: float) -> np.ndarray:
    """Per-unit-popularity cost sum_j q_j max{...} of the max-form objective.

    Evaluated by explicit summation over j <= j_max plus an exact tail; the
    result is convex and piecewise linear in each alpha.
    """
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    j = np.arange(contact.j_max + 1, dtype=float)
    first = a[:, None] * ((1.0 - 2.0 * theta) * j[None, :] - theta * nu) + theta
    second = (1.0 - theta) * (1.0 - a * nu)
    head = np.maximum(first, second[:, None]) @ contact.q

    tail = np.empty(len(a))
    jt = contact.j_max + 1
    for idx, ai in enumerate(a):
        if ai == 0:
            P_t, S_t = contact.tail(jt)
            tail[idx] = theta * P_t
            continue
        # tail j lies on the first branch iff j <= 1/ai - nu
        with np.errstate(over="ignore"):
            last = 1.0 / ai - nu
        K = int(math.floor(min(last, 2.0**53))) + 1
        if K <= jt:
            P_t, _ = contact.tail(jt)
            tail[idx] = second[idx] * P_t
        else:
            P_jt, S_jt = contact.head(jt)
            P_K, S_K = contact.head(K)
            m1, s1 = P_K - P_jt, S_K - S_jt
            P_rest, _ = contact.tail(K)
            tail[idx] = (theta - ai * theta * nu) * m1 + ai * (1.0 - 2.0 * theta) * s1 + second[idx] * P_rest
    return head + tail


def epigraph_rate(cfg: SystemConfig, pop: Popularity, contact: ContactModel, alloc, theta: float | None = None) -> float:
    """Weighted rate h through the max-form (authoritative for real-valued alpha)."""
    theta = cfg.theta if theta is None else theta
    alpha = alloc.alpha if isinstance(alloc, Allocation) else alloc
    return cfg.total_request_rate * float(np.dot(pop.p, epigraph_cost(alpha, contact, cfg.nu, theta)))


@dataclass(frozen=True)
class RateBreakdown:
    f: float
    g: float
    h: float
    per_file: np.ndarray
    h_epigraph: float


def weighted_rate(cfg: SystemConfig, pop: Popularity, contact: ContactModel, alloc: Allocation,
                  theta: float | None = None, check: bool = True) -> RateBreakdown:
    """h = theta f + (1 - theta) g with its per-file split.

    For grid allocations the max-form evaluation must agree to 1e-10 relative;
    a disagreement raises `ModelInconsistency`.
    """
    theta = cfg.theta if theta is None else theta
    if not 0.5 <= theta <= 1:
        raise ValueError(f"theta must lie in [0.5, 1], got {theta}")
    f_t, g_t = _case_terms(alloc, contact, cfg.nu)
    scale = cfg.total_request_rate
    f = scale * _average(pop.p, f_t)
    g = scale * _average(pop.p, g_t)
    per_file = scale * pop.p * (theta * f_t + (1.0 - theta) * g_t)
    h = theta * f + (1.0 - theta) * g
    h_epi = epigraph_rate(cfg, pop, contact, alloc.alpha, theta)
    if check and alloc.grid_valid and abs(h - h_epi) > 1e-10 * max(abs(h), 1e-300) + 1e-12:
        raise ModelInconsistency(f"case form {h!r} != max form {h_epi!r}")
    return RateBreakdown(f=f, g=g, h=h, per_file=per_file, h_epigraph=h_epi)


def no_caching_rate(cfg: SystemConfig) -> float:
    """h of the empty allocation, M omega theta."""
    return cfg.total_request_rate * cfg.theta
