"""Content-allocation optimisation.

The objective is separable: h(alpha) = M omega * sum_i p_i psi(alpha_i), where
psi is convex and piecewise linear with kinks at alpha = 1/(j + n/M). The
epigraph LP introduces one variable t_ij per (file, contact count) and two
constraints per t_ij, one per affine piece. Counts beyond the truncation
point are folded into one aggregated pair per file built from the exact tail
mass and tail mean.

Two exact backends solve the same LP: the generic simplex in `lp`, and a
breakpoint-greedy solver that exploits separability (fill the cheapest
segments first until the budget runs out). The greedy backend is what makes
full-size instances (N=100, several thousand t_ij) fast.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse

from .contact import ContactModel
from .lp import LinearProgram, LpStatus, NumericalFailure, solve_lp
from .model import (
    Allocation,
    Popularity,
    SystemConfig,
    epigraph_cost,
    popular_allocation,
    weighted_rate,
)

SIMPLEX_AUTO_LIMIT = 200  # variables; above this "auto" uses the greedy backend


class InfeasibleProblem(ValueError):
    pass


@dataclass
class EpigraphProblem:
    lp: LinearProgram
    p: np.ndarray
    q: np.ndarray
    tail_mass: float
    tail_first: float
    nu: float
    theta: float
    beta: float
    scale: float
    t_index: np.ndarray
    tail_index: np.ndarray | None

    @property
    def n_files(self) -> int:
        return len(self.p)

    @property
    def j_max(self) -> int:
        return len(self.q) - 1

    def psi(self, alpha) -> np.ndarray:
        """LP objective per unit popularity (truncated head + aggregated tail)."""
        a = np.atleast_1d(np.asarray(alpha, dtype=float))
        th, nu = self.theta, self.nu
        j = np.arange(self.j_max + 1, dtype=float)
        first = a[:, None] * ((1 - 2 * th) * j - th * nu) + th
        second = (1 - th) * (1 - a * nu)
        val = np.maximum(first, second[:, None]) @ self.q
        T, S = self.tail_mass, self.tail_first
        if T > 0:
            val = val + np.maximum(th * T + a * ((1 - 2 * th) * S - th * nu * T), (1 - th) * T * (1 - a * nu))
        return val

    def breakpoints(self) -> np.ndarray:
        """Sorted kinks of psi in [0, 1], endpoints included."""
        j = np.arange(self.j_max + 1, dtype=float)
        kinks = list(1.0 / (j + self.nu))
        if self.tail_mass > 0:
            kinks.append(self.tail_mass / (self.tail_first + self.nu * self.tail_mass))
        b = np.array([0.0, 1.0] + [k for k in kinks if 0 < k < 1])
        return np.unique(b)

    def objective(self, alpha) -> float:
        return float(np.dot(self.p, self.psi(alpha)))


def build_epigraph_lp(cfg: SystemConfig, pop: Popularity, contact: ContactModel,
                      beta: float | None = None, theta: float | None = None,
                      lower=None, upper=None) -> EpigraphProblem:
    """Assemble the relaxed epigraph LP; the M*omega factor is left out.

    Variable layout: alpha_0..alpha_{N-1}, then t_ij row-major over (i, j),
    then one aggregated tail variable per file when the tail mass is nonzero.
    """
    beta = cfg.beta if beta is None else beta
    theta = cfg.theta if theta is None else theta
    p = pop.p
    N = len(p)
    q = contact.q
    J1 = len(q)
    nu = cfg.nu
    T, S = contact.tail(J1)
    has_tail = T > 0
    n_t = N * J1
    nv = N + n_t + (N if has_tail else 0)

    t_index = N + np.arange(n_t).reshape(N, J1)
    tail_index = N + n_t + np.arange(N) if has_tail else None

    rows, cols, vals, rhs = [], [], [], []
    r = 0
    jv = np.arange(J1, dtype=float)
    for i in range(N):
        pq = p[i] * q
        for jj in range(J1):
            # t_ij + p_i q_j ((2 theta - 1) j + theta nu) alpha_i >= theta p_i q_j
            rows += [r, r]
            cols += [t_index[i, jj], i]
            vals += [1.0, pq[jj] * ((2 * theta - 1) * jv[jj] + theta * nu)]
            rhs.append(theta * pq[jj])
            r += 1
            # t_ij + (1 - theta) nu p_i q_j alpha_i >= (1 - theta) p_i q_j
            rows += [r, r]
            cols += [t_index[i, jj], i]
            vals += [1.0, (1 - theta) * nu * pq[jj]]
            rhs.append((1 - theta) * pq[jj])
            r += 1
        if has_tail:
            rows += [r, r]
            cols += [tail_index[i], i]
            vals += [1.0, p[i] * ((2 * theta - 1) * S + theta * nu * T)]
            rhs.append(theta * p[i] * T)
            r += 1
            rows += [r, r]
            cols += [tail_index[i], i]
            vals += [1.0, (1 - theta) * nu * p[i] * T]
            rhs.append((1 - theta) * p[i] * T)
            r += 1
    # budget: -sum alpha >= -beta
    for i in range(N):
        rows.append(r)
        cols.append(i)
        vals.append(-1.0)
    rhs.append(-beta)
    r += 1

    G = sparse.csr_matrix((vals, (rows, cols)), shape=(r, nv))
    c = np.zeros(nv)
    c[N:] = 1.0
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    lb[:N] = 0.0 if lower is None else lower
    ub[:N] = 1.0 if upper is None else upper
    lp = LinearProgram(c=c, G=G, h=np.array(rhs), lb=lb, ub=ub)
    return EpigraphProblem(lp=lp, p=p, q=q, tail_mass=T, tail_first=S, nu=nu, theta=theta,
                           beta=beta, scale=cfg.total_request_rate, t_index=t_index,
                           tail_index=tail_index)


def _greedy(prob: EpigraphProblem, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact minimiser of sum_i p_i psi(alpha_i) over lo <= alpha <= hi, sum <= beta."""
    budget = prob.beta - float(lo.sum())
    if budget < -1e-12:
        raise InfeasibleProblem("lower bounds exceed the budget")
    budget = max(budget, 0.0)
    B = prob.breakpoints()
    psiB = prob.psi(B)
    seg_slope = np.diff(psiB) / np.diff(B)
    left, right = B[:-1], B[1:]
    length = np.clip(np.minimum(hi[:, None], right[None, :]) - np.maximum(lo[:, None], left[None, :]), 0.0, None)
    slope = prob.p[:, None] * seg_slope[None, :]
    file_idx, seg_idx = np.nonzero((length > 0) & (slope < 0))
    alpha = lo.astype(float).copy()
    if len(file_idx):
        s = slope[file_idx, seg_idx]
        order = np.lexsort((seg_idx, file_idx, s))
        lens = length[file_idx, seg_idx][order]
        cum = np.cumsum(lens)
        full = cum <= budget
        take = np.where(full, lens, 0.0)
        n_full = int(full.sum())
        if n_full < len(order):
            prev = cum[n_full - 1] if n_full else 0.0
            take[n_full] = max(0.0, budget - prev)
        np.add.at(alpha, file_idx[order], take)
        alpha = np.minimum(alpha, hi)
    return alpha, prob.objective(alpha)


def _simplex(prob: EpigraphProblem, lo, hi) -> tuple[np.ndarray, float]:
    lp = prob.lp
    lb, ub = lp.lb.copy(), lp.ub.copy()
    N = prob.n_files
    lb[:N], ub[:N] = lo, hi
    sol = solve_lp(LinearProgram(c=lp.c, G=lp.G, h=lp.h, lb=lb, ub=ub))
    if sol.status is LpStatus.INFEASIBLE:
        raise InfeasibleProblem("node LP infeasible")
    if sol.status is not LpStatus.OPTIMAL:
        raise NumericalFailure(f"LP ended with status {sol.status.value}")
    return np.clip(sol.x[:N], lo, hi), sol.objective


def solve_epigraph(prob: EpigraphProblem, lower=None, upper=None, backend: str = "auto"):
    """Return (alpha, LP objective without the M*omega factor)."""
    N = prob.n_files
    lo = np.zeros(N) if lower is None else np.asarray(lower, dtype=float)
    hi = np.ones(N) if upper is None else np.asarray(upper, dtype=float)
    if backend == "auto":
        backend = "simplex" if prob.lp.n_vars <= SIMPLEX_AUTO_LIMIT else "greedy"
    if backend == "greedy":
        return _greedy(prob, lo, hi)
    if backend == "simplex":
        return _simplex(prob, lo, hi)
    raise ValueError(f"unknown backend {backend!r}")


@dataclass
class RelaxedResult:
    allocation: Allocation
    h_lower: float
    lp_objective: float


def solve_relaxed(cfg: SystemConfig, pop: Popularity, contact: ContactModel,
                  backend: str = "auto", beta: float | None = None) -> RelaxedResult:
    """Integer-relaxed optimum; h_lower is h of the relaxed allocation (max form)."""
    prob = build_epigraph_lp(cfg, pop, contact, beta=beta)
    alpha, obj = solve_epigraph(prob, backend=backend)
    alloc = Allocation.from_alpha(alpha, cfg.n)
    br = weighted_rate(cfg, pop, contact, alloc, check=False)
    return RelaxedResult(allocation=alloc, h_lower=br.h_epigraph, lp_objective=obj * prob.scale)


def allocation_grid(n: int) -> list[Fraction]:
    """The admissible values {0, 1/n, 1/(n-1), ..., 1} in increasing order."""
    return [Fraction(0)] + [Fraction(1, k) for k in range(n, 0, -1)]


def _round_k(a: float, n: int) -> int:
    if a <= 0:
        return 0
    inv = 1.0 / a
    near = round(inv)
    k = near if abs(inv - near) <= 1e-9 * inv else math.ceil(inv)
    return k if k <= n else 0


def round_to_integer(alpha, n: int) -> Allocation:
    """Project onto the grid by alpha -> 1/ceil(1/alpha), dropping values below 1/n.

    1/alpha within 1e-9 relative of an integer is taken as that integer, so
    LP solutions sitting on a grid point up to rounding are kept in place.
    """
    a = alpha.alpha if isinstance(alpha, Allocation) else np.asarray(alpha, dtype=float)
    return Allocation.from_k([_round_k(float(x), n) for x in a], n)


def theta_half_optimal(pop: Popularity, beta: float, n: int = 1) -> Allocation:
    if abs(beta - round(beta)) > 1e-9:
        raise ValueError(f"beta must be an integer for the theta = 1/2 closed form, got {beta}")
    return popular_allocation(len(pop), round(beta), n)


def theta_half_rate(cfg: SystemConfig, pop: Popularity, alloc: Allocation) -> float:
    """(M omega / 2)(1 - (n/M) sum_i alpha_i p_i), valid at theta = 1/2."""
    return 0.5 * cfg.total_request_rate * (1.0 - cfg.nu * float(np.dot(alloc.alpha, pop.p)))


@dataclass
class MilpResult:
    allocation: Allocation
    h: float
    bound: float
    gap: float
    nodes: int
    status: str = "optimal"
    log: list[dict] = field(default_factory=list)


class _GridHull:
    """Per-file cost interpolated linearly between neighbouring grid points.

    On the grid the MILP objective equals p_i psi(alpha_i); psi is convex, so
    its interpolant through the grid points is a convex minorant that is
    exact on the grid. Minimising the interpolant under the budget is a
    separable piecewise-linear problem solved by filling segments in order
    of slope; at most one variable ends strictly between grid points.
    """

    def __init__(self, prob: EpigraphProblem, grid: np.ndarray):
        self.prob, self.grid = prob, grid
        self.cost = prob.psi(grid)  # psi at grid index m
        length = np.diff(grid)
        slope = np.diff(self.cost) / length
        # rounding can leave adjacent slopes a few ulps out of order; sorting on
        # the running maximum keeps each file's segments in grid order
        key = np.maximum.accumulate(slope)
        N, G = prob.n_files, len(length)
        seg_i = np.repeat(np.arange(N), G)
        seg_m = np.tile(np.arange(G), N)
        val = prob.p[seg_i] * slope[seg_m]
        rank = prob.p[seg_i] * key[seg_m]
        keep = rank < 0
        seg_i, seg_m, val, rank = seg_i[keep], seg_m[keep], val[keep], rank[keep]
        order = np.lexsort((seg_m, seg_i, rank))
        self.seg_i, self.seg_m = seg_i[order], seg_m[order]
        self.seg_len = length[self.seg_m]
        self.seg_gain = val[order] * self.seg_len

    def _segments(self, lo_i, hi_i):
        mask = (self.seg_m >= lo_i[self.seg_i]) & (self.seg_m < hi_i[self.seg_i])
        return np.flatnonzero(mask)

    def solve(self, lo_i, hi_i):
        """Relaxed optimum on the node box, or None when the box breaks the budget."""
        grid, prob = self.grid, self.prob
        left = prob.beta - grid[lo_i].sum()
        if left < -1e-12 * max(1.0, prob.beta):
            return None
        idx = self._segments(lo_i, hi_i)
        full = np.cumsum(self.seg_len[idx]) <= left + 1e-15
        n_full = int(np.argmin(full)) if not full.all() else len(idx)
        filled = idx[:n_full]
        steps = np.bincount(self.seg_i[filled], minlength=prob.n_files)
        pos = lo_i + steps
        alpha = grid[pos].astype(float)
        obj = float(np.dot(prob.p, self.cost[pos]))
        price = 0.0
        if n_full < len(idx):
            s = idx[n_full]
            price = -self.seg_gain[s] / self.seg_len[s]
            rest = left - self.seg_len[filled].sum()
            if rest > 0:
                i = self.seg_i[s]
                share = rest / self.seg_len[s]
                alpha[i] += rest
                obj += share * self.seg_gain[s]
        return alpha, obj, price

    def tighten(self, lo_i, hi_i, price, cutoff):
        """Reduced-cost fixing: drop grid positions that cannot beat `cutoff`.

        Pricing the budget at `price` >= 0 gives the Lagrangian bound
        L = sum_i min_m (p_i psi(g_m) + price g_m) - price beta, valid for
        any price. Fixing file i at position m raises L by the excess of its
        term over the minimum on the box; positions whose excess pushes L to
        `cutoff` are removed, and the survivors form an interval by
        convexity. Returns the new box, or None when the node is pruned.
        """
        m = np.arange(len(self.grid))
        lag = self.prob.p[:, None] * self.cost[None, :] + price * self.grid[None, :]
        inside = (m[None, :] >= lo_i[:, None]) & (m[None, :] <= hi_i[:, None])
        lag = np.where(inside, lag, np.inf)
        best = lag.min(axis=1, keepdims=True)
        bound = float(best.sum()) - price * self.prob.beta
        excess = lag - best
        ok = inside & (bound + excess < cutoff)
        if not ok.any(axis=1).all():
            return None
        new_lo = np.argmax(ok, axis=1)
        new_hi = len(self.grid) - 1 - np.argmax(ok[:, ::-1], axis=1)
        return np.maximum(lo_i, new_lo), np.minimum(hi_i, new_hi)

    def repair(self, k_pos, lo_i, hi_i):
        """Spend leftover budget on whole grid steps, best slope first."""
        grid = self.grid
        pos = k_pos.copy()
        left = self.prob.beta - grid[pos].sum()
        for s in self._segments(np.maximum(lo_i, pos), hi_i):
            i = self.seg_i[s]
            if self.seg_m[s] == pos[i] and self.seg_len[s] <= left + 1e-15:
                pos[i] += 1
                left -= self.seg_len[s]
        return pos


def solve_milp(cfg: SystemConfig, pop: Popularity, contact: ContactModel, gap_tol: float = 1e-6,
               node_limit: int = 200_000, backend: str = "greedy", log=None,
               relaxation: str = "grid") -> MilpResult:
    """Branch and bound over the discrete allocation grid.

    Each file carries an interval of admissible grid indices. A node's bound
    comes from `relaxation`: ``"grid"`` (default) minimises the grid-point
    interpolant of the per-file cost, while ``"epigraph"`` solves the relaxed
    epigraph LP with `backend`. Both are exact on the grid, and the first is
    the tighter one. Children split the interval of the most fractional
    variable around its relaxed value. Nodes are explored best-bound first
    with ties broken by creation order, so the run is deterministic.
    Incumbents come from rounding each node's relaxed solution down to the
    grid and spending the leftover budget greedily.

    `log`, if given, is a writable text stream receiving one JSON record per
    processed node.
    """
    if relaxation not in ("grid", "epigraph"):
        raise ValueError(f"unknown relaxation {relaxation!r}")
    n = cfg.n
    N = len(pop)
    grid = np.array([0.0] + [1.0 / k for k in range(n, 0, -1)])
    k_of = np.array([0] + list(range(n, 0, -1)), dtype=np.int64)
    prob = build_epigraph_lp(cfg, pop, contact)
    scale = prob.scale
    hull = _GridHull(prob, grid)

    def exact_h(k):
        alloc = Allocation.from_k(k, n)
        return weighted_rate(cfg, pop, contact, alloc, check=False).h, alloc

    best_alloc = Allocation.zeros(N, n)
    best_h = exact_h(best_alloc.k)[0]
    records = []

    def consider(pos):
        nonlocal best_alloc, best_h
        alloc = Allocation.from_k(k_of[pos], n)
        if not alloc.within_budget(prob.beta):
            return
        h, alloc = exact_h(alloc.k)
        if h < best_h - 1e-15:
            best_h, best_alloc = h, alloc

    counter = 0
    heap = []
    lo_idx = np.zeros(N, dtype=np.int64)
    hi_idx = np.full(N, n, dtype=np.int64)

    def relax(lo_i, hi_i):
        if relaxation == "grid":
            res = hull.solve(lo_i, hi_i)
            return None if res is None else (res[0], res[1] * scale, res[2])
        try:
            alpha, obj = solve_epigraph(prob, grid[lo_i], grid[hi_i], backend)
        except InfeasibleProblem:
            return None
        return alpha, obj * scale, None

    def cutoff():
        return best_h - max(gap_tol * max(1.0, abs(best_h)), 1e-12 * max(1.0, abs(best_h)))

    root = relax(lo_idx, hi_idx)
    if root is None:
        raise InfeasibleProblem("budget infeasible")
    heapq.heappush(heap, (root[1], counter, lo_idx, hi_idx, root[0], root[2]))
    nodes = 0
    global_bound = root[1]
    status = "optimal"

    while heap:
        bound, _, lo_i, hi_i, alpha, price = heapq.heappop(heap)
        global_bound = bound
        if bound >= cutoff():
            global_bound = min(bound, best_h)
            heap.clear()
            break
        nodes += 1
        if nodes > node_limit:
            status = "node_limit"
            heapq.heappush(heap, (bound, counter, lo_i, hi_i, alpha, price))
            break
        if price is not None and best_h < np.inf:
            box = hull.tighten(lo_i, hi_i, price, cutoff() / scale)
            if box is None:
                continue
            if not (np.array_equal(box[0], lo_i) and np.array_equal(box[1], hi_i)):
                lo_i, hi_i = box
                res = relax(lo_i, hi_i)
                if res is None or res[1] >= cutoff():
                    continue
                alpha, bound, price = res[0], res[1], res[2]

        # locate alpha on the grid
        pos = np.searchsorted(grid, alpha, side="left")
        pos = np.clip(pos, 0, n)
        below = np.clip(pos - 1, 0, n)
        d_hi = np.abs(grid[pos] - alpha)
        d_lo = np.abs(alpha - grid[below])
        on_grid = (d_hi <= 1e-9) | (d_lo <= 1e-9)
        snapped = np.where(d_hi <= d_lo, pos, below)

        down = np.where(on_grid, snapped, below)
        consider(down)
        consider(hull.repair(np.clip(down, lo_i, hi_i), lo_i, hi_i))
        if log is not None:
            rec = {"node": nodes, "bound": bound, "incumbent": best_h, "open": len(heap)}
            records.append(rec)
            log.write(json.dumps(rec) + "\n")
        if np.all(on_grid):
            continue

        frac_i = np.flatnonzero(~on_grid)
        a = alpha[frac_i]
        lo_g = grid[below[frac_i]]
        hi_g = grid[pos[frac_i]]
        frac = np.minimum(a - lo_g, hi_g - a) / (hi_g - lo_g)
        sel = int(frac_i[np.argmax(frac)])
        left_hi = hi_i.copy()
        left_hi[sel] = below[sel]
        right_lo = lo_i.copy()
        right_lo[sel] = pos[sel]
        for clo, chi in ((lo_i, left_hi), (right_lo, hi_i)):
            res = relax(clo, chi)
            if res is None:
                continue
            if res[1] >= cutoff():
                continue
            counter += 1
            heapq.heappush(heap, (res[1], counter, clo, chi, res[0], res[2]))

    if heap:
        global_bound = min(global_bound, min(item[0] for item in heap))
    elif status == "optimal":
        global_bound = min(global_bound, best_h)
    gap = (best_h - global_bound) / max(1.0, abs(best_h))
    return MilpResult(allocation=best_alloc, h=best_h, bound=global_bound, gap=max(gap, 0.0),
                      nodes=nodes, status=status, log=records)


def brute_force(cfg: SystemConfig, pop: Popularity, contact: ContactModel):
    """Exhaustive search over the grid; only for tiny N and n."""
    import itertools

    n = cfg.n
    beta = cfg.beta
    ks = [0] + list(range(1, n + 1))
    best = (np.inf, None)
    for combo in itertools.product(ks, repeat=len(pop)):
        total = sum(Fraction(1, k) for k in combo if k)
        if total > Fraction(beta).limit_denominator(10**9) + Fraction(1, 10**12):
            continue
        alloc = Allocation.from_k(combo, n)
        h = weighted_rate(cfg, pop, contact, alloc, check=False).h
        if h < best[0]:
            best = (h, alloc)
    return best
