"""Run experiment specifications and write result tables."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .config import ExperimentSpec, serialize
from .lp import NumericalFailure
from .model import Allocation, Popularity, SystemConfig, popular_allocation, weighted_rate
from .optimize import InfeasibleProblem, round_to_integer, solve_milp, solve_relaxed
from .sim import empirical_contact_stats, simulate
from .strict import greedy_strict_placement, uniform_random_placement

BASE_COLUMNS = ["axis", "value", "M", "n", "n_over_M", "density", "theta", "beta_d", "sigma",
                "allocation", "alloc_n", "f", "g", "h", "status"]
OPT_COLUMNS = ["cached_total", "gap", "k"]
SIM_COLUMNS = ["requests", "f_hat", "g_hat", "h_hat", "f_ci", "g_ci", "h_ci", "kl"]
VALIDATE_COLUMNS = ["M", "n", "requests", "kl", "kl_ok", "mean_contact", "contact_formula",
                    "contact_ci", "intercontact_rate", "rate_formula", "n_contacts"]


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)

    def column(self, name):
        return [r.get(name) for r in self.rows]

    def select(self, **match):
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def read_allocation_file(path: str, n: int) -> Allocation:
    """One alpha_i per line, as a decimal or a fraction such as 1/12."""
    vals = []
    with open(path) as fh:
        for line in fh:
            body = line.split("#", 1)[0].strip()
            if body:
                vals.append(Fraction(body))
    alpha = np.array([float(v) for v in vals])
    if all(v == 0 or (v.numerator == 1 and v.denominator <= n) for v in vals):
        return Allocation.from_k([v.denominator if v else 0 for v in vals], n)
    return Allocation.from_alpha(alpha, n)


def popular_n_grid(cfg: SystemConfig) -> list[int]:
    """Code lengths n <= M for which beta = beta_d * M / n is a whole number."""
    out = []
    for n in range(1, cfg.M + 1):
        b = cfg.beta_d * cfg.M / n
        if abs(b - round(b)) <= 1e-9 * max(1.0, b):
            out.append(n)
    return out or [cfg.n]


def best_popular(cfg: SystemConfig, pop: Popularity):
    """Popular allocation with n searched exhaustively over `popular_n_grid`."""
    best = None
    for n in popular_n_grid(cfg):
        c = cfg.with_(n=n)
        a = popular_allocation(len(pop), c.beta, n)
        br = weighted_rate(c, pop, c.contact(), a)
        if best is None or br.h < best[1].h:
            best = (c, br, a)
    return best


def _point_rows(spec: ExperimentSpec, value, seed_seq) -> list[dict]:
    cfg = spec.point(value)
    pop = cfg.popularity()
    contact = cfg.contact(spec.trunc_eps)
    rng = np.random.default_rng(seed_seq)
    base = {"axis": spec.sweep or "", "value": "" if value is None else value, "M": cfg.M, "n": cfg.n,
            "n_over_M": cfg.nu, "density": cfg.M / cfg.area, "theta": cfg.theta,
            "beta_d": cfg.beta_d, "sigma": cfg.sigma}
    search_popular = spec.sweep in ("density", "theta", "beta_d", "sigma")
    relaxed = milp = None
    rows = []
    for src in spec.allocations:
        row = dict(base, allocation=src, alloc_n=cfg.n, status="ok")
        used_cfg, placement, gap = cfg, None, ""
        try:
            if src in ("optimal_lp", "round") and relaxed is None:
                relaxed = solve_relaxed(cfg, pop, contact)
            if (src == "milp" or src.startswith("strict:")) and milp is None:
                milp = solve_milp(cfg, pop, contact, gap_tol=spec.gap_tol, node_limit=spec.node_limit)
            if src == "optimal_lp":
                alloc = relaxed.allocation
            elif src == "round":
                alloc = round_to_integer(relaxed.allocation, cfg.n)
            elif src == "milp":
                alloc, gap = milp.allocation, milp.gap
                if milp.status != "optimal":
                    row["status"] = milp.status
            elif src == "popular":
                if search_popular:
                    used_cfg, _, alloc = best_popular(cfg, pop)
                else:
                    alloc = popular_allocation(len(pop), cfg.beta, cfg.n)
            elif src == "none":
                alloc = Allocation.zeros(len(pop), cfg.n)
            elif src.startswith("strict:"):
                delta = float(src.split(":", 1)[1])
                st = greedy_strict_placement(milp.allocation, cfg, delta, rng)
                alloc, placement = st.alpha_prime, st.placement
            else:
                alloc = read_allocation_file(src[5:], cfg.n)
                if len(alloc) != len(pop):
                    raise ValueError(f"{src}: {len(alloc)} entries for a library of {len(pop)}")
            if not alloc.within_budget(used_cfg.beta):
                row["status"] = "over_budget"
            uc = used_cfg.contact(spec.trunc_eps) if used_cfg is not cfg else contact
            br = weighted_rate(used_cfg, pop, uc, alloc, check=alloc.grid_valid)
            h = br.h if alloc.grid_valid else br.h_epigraph
            row.update(alloc_n=used_cfg.n, f=br.f, g=br.g, h=h)
            if spec.mode == "optimize":
                ks = alloc.k if alloc.grid_valid else None
                row.update(cached_total=alloc.total, gap=gap,
                           k=";".join(str(int(x)) for x in ks) if ks is not None
                           else ";".join(f"{x:.6g}" for x in alloc.alpha))
            if spec.sim_requests > 0 or spec.mode == "simulate":
                requests = spec.sim_requests or 200_000
                if placement is None:
                    placement = uniform_random_placement(alloc, used_cfg, rng, allow_fractional=True)
                rep = simulate(used_cfg, placement, alloc, duration=math.inf, rng=rng, max_requests=requests)
                row.update(requests=rep.request_count, f_hat=rep.f_hat, g_hat=rep.g_hat, h_hat=rep.h_hat,
                           f_ci=rep.f_ci, g_ci=rep.g_ci, h_ci=rep.h_ci, kl=rep.kl_divergence)
        except (InfeasibleProblem, NumericalFailure, ValueError, OSError) as exc:
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _validate_rows(spec: ExperimentSpec, seed_seq) -> list[dict]:
    cfg = spec.point()
    pop = cfg.popularity()
    contact = cfg.contact(spec.trunc_eps)
    rng = np.random.default_rng(seed_seq)
    alloc = solve_relaxed(cfg, pop, contact).allocation
    placement = uniform_random_placement(alloc, cfg, rng, allow_fractional=True)
    rep = simulate(cfg, placement, alloc, duration=math.inf, rng=rng,
                   max_requests=spec.sim_requests or 200_000)
    cs = empirical_contact_stats(cfg, duration=spec.contact_duration, rng=rng)
    return [{"M": cfg.M, "n": cfg.n, "requests": rep.request_count, "kl": rep.kl_divergence,
             "kl_ok": rep.kl_divergence < 0.01, "mean_contact": cs.mean_contact,
             "contact_formula": 1.0 / contact.mu, "contact_ci": cs.contact_ci,
             "intercontact_rate": 1.0 / cs.mean_intercontact, "rate_formula": contact.pair_rate,
             "n_contacts": cs.n_contacts}]


def _job(args):
    spec, value, seed_seq = args
    return _point_rows(spec, value, seed_seq)


def run(spec: ExperimentSpec, parallel: int = 1) -> ResultTable:
    """Evaluate every sweep point and allocation source.

    Each sweep point draws from its own child of the spec seed, so results do
    not depend on `parallel` and rows keep the order of `spec.values`.
    """
    root = np.random.SeedSequence(spec.seed)
    if spec.mode == "validate":
        return ResultTable(VALIDATE_COLUMNS, _validate_rows(spec, root))
    values = list(spec.values) if spec.values else [None]
    seeds = root.spawn(len(values))
    jobs = [(spec, v, s) for v, s in zip(values, seeds)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            chunks = list(ex.map(_job, jobs))
    else:
        chunks = [_job(j) for j in jobs]
    cols = list(BASE_COLUMNS)
    if spec.mode == "optimize":
        cols += OPT_COLUMNS
    if spec.sim_requests > 0 or spec.mode == "simulate":
        cols += SIM_COLUMNS
    return ResultTable(cols, [r for chunk in chunks for r in chunk])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(table: ResultTable, spec: ExperimentSpec, fh) -> None:
    """CSV preceded by a ``#`` comment block holding the full specification."""
    fh.write(f"# mdscache {__version__}\n")
    for line in serialize(spec).splitlines():
        fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt(row.get(c)) for c in table.columns])
