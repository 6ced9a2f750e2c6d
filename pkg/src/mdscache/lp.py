"""Dense bounded-variable primal simplex.

Solves ``min c^T x  s.t.  G x >= h,  lb <= x <= ub`` with a two-phase
tableau method. Bland's lowest-index rule is the default pivot rule; it is
slow but cannot cycle, and its pivot sequence is fully deterministic.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

PIVOT_TOL = 1e-9
COST_TOL = 1e-10
FEAS_TOL = 1e-8


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class NumericalFailure(RuntimeError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    G: sparse.csr_matrix
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.G = sparse.csr_matrix(self.G, dtype=float)
        if self.G.shape[1] != n and self.G.shape[0] > 0:
            raise ValueError(f"G has {self.G.shape[1]} columns, expected {n}")
        if self.G.shape[0] == 0:
            self.G = sparse.csr_matrix((0, n))
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if len(self.h) != self.G.shape[0]:
            raise ValueError("h length does not match the number of rows of G")
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.G.data))
                and np.all(np.isfinite(self.h))):
            raise ValueError("objective and constraints must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds must not be NaN")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("lower bounds must be < +inf and upper bounds > -inf")

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return self.G.shape[0]

    def violation(self, x) -> float:
        """Largest constraint or bound violation, rows scaled to unit max-abs."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.n_rows:
            scale = np.asarray(abs(self.G).max(axis=1).todense()).ravel()
            scale[scale == 0] = 1.0
            worst = max(worst, float(np.max((self.h - self.G @ x) / scale, initial=0.0)))
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return worst


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective: float
    max_violation: float
    iterations: int = 0
    trace: list[float] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class _Tableau:
    def __init__(self, A, b, ub):
        m, ny = A.shape
        self.m = m
        self.ny = ny
        neg = b <= 0
        A = np.where(neg[:, None], -A, A)
        b = np.where(neg, -b, b)
        slack_sign = np.where(neg, 1.0, -1.0)
        art_rows = np.flatnonzero(~neg)
        na = len(art_rows)
        self.n_cols = ny + m + na
        T = np.zeros((m, self.n_cols))
        T[:, :ny] = A
        T[np.arange(m), ny + np.arange(m)] = slack_sign
        T[art_rows, ny + m + np.arange(na)] = 1.0
        self.std = T.copy()
        self.std_rhs = b.copy()
        self.T = T
        self.rhs = b.copy()
        self.ub = np.concatenate([ub, np.full(m + na, np.inf)])
        self.flipped = np.zeros(self.n_cols, dtype=bool)
        self.basis = np.empty(m, dtype=np.int64)
        self.basis[neg] = ny + np.flatnonzero(neg)
        self.basis[art_rows] = ny + m + np.arange(na)
        self.rows = np.arange(m)
        self.art_start = ny + m

    def eff_cost(self, cost):
        return np.where(self.flipped, -cost, cost)

    def complement_nonbasic(self, q):
        u = self.ub[q]
        col = self.T[:, q]
        self.rhs -= col * u
        self.T[:, q] = -col
        self.flipped[q] = ~self.flipped[q]

    def complement_basic(self, r):
        q = self.basis[r]
        u = self.ub[q]
        self.T[r, :] = -self.T[r, :]
        self.T[r, q] = 1.0
        self.rhs[r] = u - self.rhs[r]
        self.flipped[q] = ~self.flipped[q]

    def pivot(self, r, q):
        piv = self.T[r, q]
        self.T[r, :] /= piv
        self.rhs[r] /= piv
        col = self.T[:, q].copy()
        col[r] = 0.0
        self.T -= np.outer(col, self.T[r, :])
        self.rhs -= col * self.rhs[r]
        self.T[:, q] = 0.0
        self.T[r, q] = 1.0
        self.basis[r] = q

    def delete_row(self, r):
        keep = np.ones(self.m, dtype=bool)
        keep[r] = False
        self.T = self.T[keep]
        self.rhs = self.rhs[keep]
        self.basis = self.basis[keep]
        self.rows = self.rows[keep]
        self.m -= 1

    def values(self):
        """Actual (uncomplemented) value of every column."""
        v = np.where(self.flipped, self.ub, 0.0)
        v[~np.isfinite(v)] = 0.0
        basic = self.rhs
        v[self.basis] = np.where(self.flipped[self.basis], self.ub[self.basis] - basic, basic)
        return v

    def refine(self, ncols):
        """Recompute basic values from the untouched standard-form rows."""
        v = self.values()
        B = self.std[np.ix_(self.rows, self.basis)]
        nonbasic = np.ones(ncols, dtype=bool)
        nonbasic[self.basis] = False
        rhs = self.std_rhs[self.rows] - self.std[np.ix_(self.rows, np.flatnonzero(nonbasic))] @ v[nonbasic]
        try:
            xb = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            return v
        if not np.all(np.isfinite(xb)):
            return v
        v[self.basis] = xb
        return v


def _run(tab: _Tableau, cost, allowed, rule, max_iter, trace, iters0):
    it = iters0
    degenerate_run = 0
    while True:
        if it >= max_iter:
            return "limit", it
        ceff = tab.eff_cost(cost)
        d = ceff - ceff[tab.basis] @ tab.T
        d[tab.basis] = 0.0
        d[~allowed] = 0.0
        cand = np.flatnonzero(d < -COST_TOL)
        if trace is not None:
            trace.append(float(cost @ tab.values()))
        if len(cand) == 0:
            return "optimal", it
        if rule == "dantzig" and degenerate_run < 50:
            q = int(cand[np.argmin(d[cand])])
        else:
            q = int(cand[0])
        col = tab.T[:, q]
        pos = np.flatnonzero(col > PIVOT_TOL)
        ub_b = tab.ub[tab.basis]
        negr = np.flatnonzero((col < -PIVOT_TOL) & np.isfinite(ub_b))
        rows = np.concatenate([pos, negr])
        t_all = np.concatenate([tab.rhs[pos] / col[pos], (ub_b[negr] - tab.rhs[negr]) / -col[negr]])
        t_all = np.maximum(t_all, 0.0)
        upper = np.concatenate([np.zeros(len(pos), bool), np.ones(len(negr), bool)])
        best_t = min(float(t_all.min()) if len(t_all) else np.inf, tab.ub[q])
        best_row, to_upper = -1, False
        if np.isfinite(best_t):
            tol = 1e-12 * (1.0 + best_t)
            tied = np.flatnonzero(t_all <= best_t + tol)
            best_key = q if tab.ub[q] <= best_t + tol else np.iinfo(np.int64).max
            if len(tied):
                keys = tab.basis[rows[tied]]
                k = int(np.argmin(keys))
                if keys[k] < best_key:
                    best_row, to_upper = int(rows[tied[k]]), bool(upper[tied[k]])
        if not np.isfinite(best_t):
            return "unbounded", it
        degenerate_run = degenerate_run + 1 if best_t <= 1e-12 else 0
        if best_row < 0:
            tab.complement_nonbasic(q)
        else:
            if to_upper:
                tab.complement_basic(best_row)
            tab.pivot(best_row, q)
        it += 1


def _equilibrate(A, b, passes: int = 8):
    """Geometric-mean row/column scaling followed by unit max-abs rows.

    Returns the scaled system and the column factors; original variable j
    equals col_scale[j] times the scaled one. Scaling matters for models whose
    coefficients span many decades (probability-weighted rows).
    """
    m, n = A.shape
    col_scale = np.ones(n)
    if m == 0 or n == 0:
        return A, b, col_scale
    absA = np.abs(A)
    nz = absA > 0
    row_f = np.ones(m)
    for _ in range(passes):
        S = absA * row_f[:, None] * col_scale[None, :]
        big = np.where(nz, S, 0.0).max(axis=1)
        small = np.where(nz, S, np.inf).min(axis=1)
        row_f /= np.sqrt(big * small)
        S = absA * row_f[:, None] * col_scale[None, :]
        big = np.where(nz, S, 0.0).max(axis=0)
        small = np.where(nz, S, np.inf).min(axis=0)
        has = big > 0
        col_scale[has] /= np.sqrt(big[has] * small[has])
    S = absA * row_f[:, None] * col_scale[None, :]
    row_f /= S.max(axis=1)
    return A * row_f[:, None] * col_scale[None, :], b * row_f, col_scale


def _standard_form(prob: LinearProgram):
    n = prob.n_vars
    cols = []
    x0 = np.zeros(n)
    ub_y = []
    for j in range(n):
        lo, hi = prob.lb[j], prob.ub[j]
        if np.isfinite(lo):
            x0[j] = lo
            cols.append((j, 1.0))
            ub_y.append(hi - lo)
        elif np.isfinite(hi):
            x0[j] = hi
            cols.append((j, -1.0))
            ub_y.append(np.inf)
        else:
            cols.append((j, 1.0))
            ub_y.append(np.inf)
            cols.append((j, -1.0))
            ub_y.append(np.inf)
    Tm = np.zeros((n, len(cols)))
    for k, (j, sgn) in enumerate(cols):
        Tm[j, k] = sgn
    return Tm, x0, np.array(ub_y, dtype=float)


def solve_lp(prob: LinearProgram, rule: str = "bland", max_iter: int | None = None,
             record_trace: bool = False) -> LpSolution:
    """Solve `prob` to optimality.

    On ITERATION_LIMIT the returned point is the last basic solution reached
    (feasible if phase two had started). `trace` holds the phase-two objective
    after every pivot when `record_trace` is set.
    """
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    if np.any(prob.lb > prob.ub):
        return LpSolution(LpStatus.INFEASIBLE, None, np.nan, np.inf)
    Tm, x0, ub_y = _standard_form(prob)
    Gd = prob.G.toarray()
    A = Gd @ Tm
    b = prob.h - Gd @ x0
    zero = ~np.any(A != 0, axis=1) if A.shape[0] else np.zeros(0, dtype=bool)
    if np.any(b[zero] > FEAS_TOL):
        return LpSolution(LpStatus.INFEASIBLE, None, np.nan, np.inf)
    A, b = A[~zero], b[~zero]
    A, b, col_scale = _equilibrate(A, b)
    ub_y = ub_y / col_scale

    tab = _Tableau(A, b, ub_y)
    if max_iter is None:
        max_iter = 50 * (tab.m + tab.n_cols) + 1000
    ncols = tab.n_cols

    cost1 = np.zeros(ncols)
    cost1[tab.art_start:] = 1.0
    allowed = np.ones(ncols, dtype=bool)
    status, it = _run(tab, cost1, allowed, rule, max_iter, None, 0)
    if status == "limit":
        return LpSolution(LpStatus.ITERATION_LIMIT, None, np.nan, np.inf, it)
    if status == "unbounded":
        raise NumericalFailure("phase one reported an unbounded ray")
    infeas = float(tab.values()[tab.art_start:].sum())
    if infeas > FEAS_TOL * max(1.0, tab.m):
        return LpSolution(LpStatus.INFEASIBLE, None, np.nan, infeas, it)

    # drive zero-valued artificials out of the basis, or drop redundant rows
    r = 0
    while r < tab.m:
        if tab.basis[r] >= tab.art_start:
            row = np.abs(tab.T[r, :tab.art_start])
            q = int(np.argmax(row)) if row.size else -1
            if q >= 0 and row[q] > PIVOT_TOL:
                tab.pivot(r, q)
                r += 1
            else:
                tab.delete_row(r)
            continue
        r += 1
    allowed[tab.art_start:] = False

    cost2 = np.zeros(ncols)
    cost2[:tab.ny] = (Tm.T @ prob.c) * col_scale
    trace = [] if record_trace else None
    status, it = _run(tab, cost2, allowed, rule, max_iter, trace, it)
    if status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, np.nan, it, trace or [])

    v = tab.refine(ncols)
    y = v[:tab.ny] * col_scale
    x = x0 + Tm @ y
    viol = prob.violation(x)
    obj = float(prob.c @ x)
    if trace is not None:
        offset = float(prob.c @ x0)
        trace = [t + offset for t in trace]
    st = LpStatus.OPTIMAL if status == "optimal" else LpStatus.ITERATION_LIMIT
    if st is LpStatus.OPTIMAL and viol > FEAS_TOL:
        raise NumericalFailure(f"optimal basis violates constraints by {viol:.3e}")
    return LpSolution(st, x, obj, viol, it, trace or [])


def dump_lp(prob: LinearProgram, fh) -> None:
    """Write `prob` in a plain-text standard form.

    Layout, one record per line, whitespace separated::

        lp <n_vars> <n_rows>
        c <j> <value>          nonzero objective coefficients
        bound <j> <lb> <ub>    every variable; inf/-inf allowed
        row <i> <rhs>          row i reads  sum_j G_ij x_j >= rhs
        g <i> <j> <value>      nonzero entries of G
    """
    fh.write("# minimize c'x subject to Gx >= h, lb <= x <= ub\n")
    fh.write(f"lp {prob.n_vars} {prob.n_rows}\n")
    for j in np.flatnonzero(prob.c):
        fh.write(f"c {j} {float(prob.c[j])!r}\n")
    for j in range(prob.n_vars):
        fh.write(f"bound {j} {float(prob.lb[j])!r} {float(prob.ub[j])!r}\n")
    G = prob.G.tocsr()
    for i in range(prob.n_rows):
        fh.write(f"row {i} {float(prob.h[i])!r}\n")
        for k in range(G.indptr[i], G.indptr[i + 1]):
            fh.write(f"g {i} {G.indices[k]} {float(G.data[k])!r}\n")


def load_lp(fh) -> LinearProgram:
    c = lb = ub = h = None
    rows, cols, vals = [], [], []
    n = m = 0
    for line in fh:
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "lp":
            n, m = int(parts[1]), int(parts[2])
            c, h = np.zeros(n), np.zeros(m)
            lb, ub = np.zeros(n), np.zeros(n)
        elif tag == "c":
            c[int(parts[1])] = float(parts[2])
        elif tag == "bound":
            j = int(parts[1])
            lb[j], ub[j] = float(parts[2]), float(parts[3])
        elif tag == "row":
            h[int(parts[1])] = float(parts[2])
        elif tag == "g":
            rows.append(int(parts[1]))
            cols.append(int(parts[2]))
            vals.append(float(parts[3]))
        else:
            raise ValueError(f"unknown record {tag!r}")
    if c is None:
        raise ValueError("missing 'lp' header")
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))
    return LinearProgram(c=c, G=G, h=h, lb=lb, ub=ub)
