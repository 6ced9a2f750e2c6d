"""Packet placement: greedy placement under a hard per-device capacity, and
uniform random placement for the average-constraint regime.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import Allocation, SystemConfig


@dataclass
class PlacementMatrix:
    """c[i, j] is True iff device j stores one coded packet of file i."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=bool)
        if self.c.ndim != 2:
            raise ValueError("placement must be an N x M matrix")

    @property
    def shape(self):
        return self.c.shape

    def row_sums(self) -> np.ndarray:
        return self.c.sum(axis=1)

    def cachers(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.c[i])

    def loads(self, alloc: Allocation) -> np.ndarray:
        return alloc.alpha @ self.c

    def exact_loads(self, alloc: Allocation) -> list[Fraction]:
        if not alloc.grid_valid:
            raise ValueError("exact loads need a grid-valid allocation")
        out = [Fraction(0)] * self.c.shape[1]
        for i in np.flatnonzero(alloc.k):
            share = Fraction(1, int(alloc.k[i]))
            for j in np.flatnonzero(self.c[i]):
                out[j] += share
        return out

    def check_consistent(self, alloc: Allocation) -> None:
        rows = self.row_sums()
        cached = alloc.alpha > 0
        if self.c.shape[0] != len(alloc):
            raise ValueError("placement and allocation disagree on the number of files")
        if np.any(rows[cached] != alloc.n) or np.any(rows[~cached] != 0):
            raise ValueError("placement rows must hold n packets for cached files and none otherwise")

    def to_triplets(self, fh) -> None:
        """Write ``file_id device_id`` pairs, one stored packet per line."""
        N, M = self.c.shape
        fh.write(f"# placement {N} {M}\n")
        for i, j in zip(*np.nonzero(self.c)):
            fh.write(f"{i} {j}\n")

    @classmethod
    def from_triplets(cls, fh) -> PlacementMatrix:
        c = None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "placement":
                    c = np.zeros((int(parts[1]), int(parts[2])), dtype=bool)
                continue
            if c is None:
                raise ValueError("missing '# placement N M' header")
            i, j = (int(x) for x in line.split())
            c[i, j] = True
        if c is None:
            raise ValueError("missing '# placement N M' header")
        return cls(c)


@dataclass
class StrictAllocation:
    alpha_prime: Allocation
    placement: PlacementMatrix


def _as_fraction(x) -> Fraction:
    # decimal literal semantics: 0.1 -> 1/10, not the nearest binary float
    return Fraction(repr(float(x))) if not isinstance(x, (int, Fraction)) else Fraction(x)


def greedy_strict_placement(alpha: Allocation, cfg: SystemConfig, delta: float,
                            rng: np.random.Generator, order=None) -> StrictAllocation:
    """Greedy placement honouring the device capacity (1 + delta) * beta_d.

    Files are visited in `order` (default: index order, most popular first).
    For each file, batches of candidate devices are drawn without
    replacement; a device takes a packet if its load stays within capacity.
    When fewer than n devices accept, the file's row is cleared and the file
    is retried with k one larger; beyond k = n the file is dropped.

    Capacity checks are exact: loads are kept as integers over the common
    denominator lcm(1..n).
    """
    if not alpha.grid_valid:
        raise ValueError("greedy placement needs a grid-valid allocation")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    N, M, n = len(alpha), cfg.M, cfg.n
    if alpha.n != n:
        raise ValueError(f"allocation built for n={alpha.n}, config has n={n}")
    cap = (1 + _as_fraction(delta)) * _as_fraction(cfg.beta_d)
    D = math.lcm(*range(1, n + 1))
    # load_j <= cap  <=>  num_j * cap.denominator <= cap.numerator * D
    cap_scaled = cap.numerator * D
    cap_float = float(cap)

    num = np.zeros(M, dtype=object)
    num[:] = 0
    load_f = np.zeros(M)
    k = alpha.k.copy()
    c = np.zeros((N, M), dtype=bool)
    order = range(N) if order is None else order

    for i in order:
        while k[i] > 0:
            share = D // int(k[i])
            share_f = 1.0 / k[i]
            remaining = np.arange(M)
            placed = np.zeros(M, dtype=bool)
            ell = n
            while ell > 0:
                batch = rng.choice(remaining, size=ell, replace=False)
                after = load_f[batch] + share_f
                ok = after <= cap_float - 1e-9
                unsure = np.flatnonzero(np.abs(after - cap_float) <= 1e-9)
                for u in unsure:
                    j = batch[u]
                    ok[u] = (num[j] + share) * cap.denominator <= cap_scaled
                placed[batch[ok]] = True
                remaining = np.setdiff1d(remaining, batch, assume_unique=True)
                ell = n - int(placed.sum())
                if ell > len(remaining):
                    break
            if placed.sum() < n:
                k[i] = k[i] + 1
                if k[i] > n:
                    k[i] = 0
                continue
            c[i] = placed
            num[placed] += share
            load_f[placed] += share_f
            break

    return StrictAllocation(alpha_prime=Allocation.from_k(k, n), placement=PlacementMatrix(c))


def uniform_random_placement(alpha: Allocation, cfg: SystemConfig, rng: np.random.Generator,
                             allow_fractional: bool = False) -> PlacementMatrix:
    """Each cached file goes to n devices drawn uniformly without replacement.

    `allow_fractional` admits off-grid allocations (an LP solution), whose
    packets are then notional fractions alpha_i of a file; used to simulate
    the relaxed optimum directly.
    """
    if not (alpha.grid_valid or allow_fractional):
        raise ValueError("placement needs a grid-valid allocation")
    c = np.zeros((len(alpha), cfg.M), dtype=bool)
    for i in np.flatnonzero(alpha.alpha > 0):
        c[i, rng.choice(cfg.M, size=cfg.n, replace=False)] = True
    return PlacementMatrix(c)
