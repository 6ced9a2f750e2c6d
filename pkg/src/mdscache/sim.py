"""Event-driven Monte-Carlo simulation of random-waypoint devices on a sphere.

Each device walks great-circle legs towards uniformly drawn targets at a speed
drawn uniformly from [s_min, s_max], with no pause. Requests arrive as a
Poisson process of total rate M*omega; at a request the positions of all
devices are interpolated exactly on their current legs.

The mobility state starts in its time-stationary regime: a leg is chosen with
probability proportional to its duration and the device is placed uniformly
along it. The warm-up interval is still simulated and discarded.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .geometry import position_on_leg, sample_uniform_point
from .model import Allocation, SystemConfig, download_fractions
from .strict import PlacementMatrix


@dataclass
class DeviceLeg:
    origin: np.ndarray
    target: np.ndarray
    speed: float
    depart_time: float
    arrive_time: float


def _angle(a, b):
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, dot)


def _tangent_direction(p, rng):
    """Uniform random unit tangent vectors at the points `p`."""
    while True:
        v = rng.standard_normal(p.shape)
        v -= np.sum(v * p, axis=-1, keepdims=True) * p
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.all(nrm > 1e-9):
            return v / nrm


class Fleet:
    """Legs of all devices, advanced lazily to the query time."""

    def __init__(self, M, rho, s_min, s_max, rng, stationary=True):
        self.M, self.rho = M, rho
        self.s_min, self.s_max = s_min, s_max
        self.rng = rng
        if stationary:
            self._stationary_start()
        else:
            self.origin = sample_uniform_point(rng, M)
            self.depart = np.zeros(M)
            self.target = np.empty((M, 3))
            self.speed = np.empty(M)
            self.arrive = np.empty(M)
            self._new_legs(np.arange(M))

    def _stationary_start(self):
        rng, M = self.rng, self.M
        omega = np.empty(M)
        speed = np.empty(M)
        filled = 0
        while filled < M:
            m = 4 * (M - filled) + 16
            w = np.arccos(rng.uniform(-1.0, 1.0, m))
            s = rng.uniform(self.s_min, self.s_max, m)
            keep = rng.random(m) < (w / math.pi) * (self.s_min / s)
            w, s = w[keep][: M - filled], s[keep][: M - filled]
            omega[filled:filled + len(w)] = w
            speed[filled:filled + len(w)] = s
            filled += len(w)
        omega = np.minimum(omega, math.pi - 1e-6)
        origin = sample_uniform_point(rng, M)
        u = _tangent_direction(origin, rng)
        self.origin = origin
        self.target = np.cos(omega)[:, None] * origin + np.sin(omega)[:, None] * u
        self.speed = speed
        dur = self.rho * omega / speed
        frac = rng.random(M)
        self.depart = -frac * dur
        self.arrive = self.depart + dur

    def _new_legs(self, idx):
        rng = self.rng
        tgt = sample_uniform_point(rng, len(idx))
        while True:
            bad = np.flatnonzero(math.pi - _angle(self.origin[idx], tgt) < 1e-9)
            if len(bad) == 0:
                break
            tgt[bad] = sample_uniform_point(rng, len(bad))
        self.target[idx] = tgt
        self.speed[idx] = rng.uniform(self.s_min, self.s_max, len(idx))
        self.arrive[idx] = self.depart[idx] + self.rho * _angle(self.origin[idx], tgt) / self.speed[idx]

    def advance(self, t: float) -> None:
        while True:
            idx = np.flatnonzero(self.arrive < t)
            if len(idx) == 0:
                return
            self.origin[idx] = self.target[idx]
            self.depart[idx] = self.arrive[idx]
            self._new_legs(idx)

    def positions(self, t: float) -> np.ndarray:
        self.advance(t)
        dur = self.arrive - self.depart
        frac = np.clip((t - self.depart) / np.where(dur > 0, dur, 1.0), 0.0, 1.0)
        return position_on_leg(self.origin, self.target, frac)

    def leg(self, d: int) -> DeviceLeg:
        return DeviceLeg(self.origin[d].copy(), self.target[d].copy(), float(self.speed[d]),
                         float(self.depart[d]), float(self.arrive[d]))


def range_query(positions, requester: int, r: float, cachers, rho: float) -> int:
    """Number of caching devices other than the requester within distance r."""
    cachers = np.asarray(cachers, dtype=np.int64)
    cachers = cachers[cachers != requester]
    if len(cachers) == 0:
        return 0
    if r >= math.pi * rho:
        return len(cachers)
    dots = positions[cachers] @ positions[requester]
    return int(np.count_nonzero(dots >= math.cos(r / rho)))


@dataclass
class SimReport:
    sim_duration: float
    request_count: int
    f_hat: float
    g_hat: float
    h_hat: float
    f_ci: float
    g_ci: float
    h_ci: float
    kl_divergence: float
    histogram: np.ndarray
    theta: float
    scale: float
    q_mean: float
    batch_bs: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    batch_d2d: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    FIELDS = ("sim_duration", "request_count", "f_hat", "g_hat", "h_hat", "f_ci", "g_ci", "h_ci",
              "kl_divergence", "theta", "scale", "q_mean")

    def histogram_rows(self):
        return [(j, int(cnt)) for j, cnt in enumerate(self.histogram) if cnt]

    def dumps(self) -> str:
        """Text record: ``key=value`` lines, then ``hist j count`` rows and
        ``batch bs d2d`` rows holding the per-batch mean fractions."""
        out = io.StringIO()
        for name in self.FIELDS:
            v = getattr(self, name)
            out.write(f"{name}={int(v) if name == 'request_count' else float(v)!r}\n")
        for j, cnt in self.histogram_rows():
            out.write(f"hist {j} {cnt}\n")
        for b, d in zip(self.batch_bs, self.batch_d2d):
            out.write(f"batch {float(b)!r} {float(d)!r}\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> SimReport:
        vals, hist, bb, bd = {}, {}, [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("hist "):
                _, j, c = line.split()
                hist[int(j)] = int(c)
            elif line.startswith("batch "):
                _, b, d = line.split()
                bb.append(float(b))
                bd.append(float(d))
            else:
                k, v = line.split("=", 1)
                vals[k] = int(v) if k == "request_count" else float(v)
        h = np.zeros(max(hist) + 1 if hist else 0, dtype=np.int64)
        for j, c in hist.items():
            h[j] = c
        return cls(histogram=h, batch_bs=np.array(bb), batch_d2d=np.array(bd), **vals)


def kl_to_poisson(histogram, mean: float) -> float:
    """KL(empirical || Poisson(mean)) in nats."""
    h = np.asarray(histogram, dtype=float)
    if h.sum() == 0:
        return float("nan")
    emp = h / h.sum()
    q = stats.poisson.pmf(np.arange(len(h)), mean)
    return float(stats.entropy(emp, q)) if np.all(q[emp > 0] > 0) else float("inf")


def _finish(sim_duration, count, bs, d2d, hist, theta, scale, q_mean) -> SimReport:
    bs, d2d = np.asarray(bs, dtype=float), np.asarray(d2d, dtype=float)
    nb = len(bs)

    def ci(x):
        if nb < 2:
            return float("nan")
        return float(stats.t.ppf(0.975, nb - 1) * x.std(ddof=1) / math.sqrt(nb))

    f = scale * float(bs.mean()) if nb else float("nan")
    g = scale * float(d2d.mean()) if nb else float("nan")
    hb = theta * bs + (1 - theta) * d2d
    return SimReport(sim_duration=sim_duration, request_count=int(count), f_hat=f, g_hat=g,
                     h_hat=theta * f + (1 - theta) * g, f_ci=scale * ci(bs), g_ci=scale * ci(d2d),
                     h_ci=scale * ci(hb), kl_divergence=kl_to_poisson(hist, q_mean), histogram=hist,
                     theta=theta, scale=scale, q_mean=q_mean, batch_bs=bs, batch_d2d=d2d)


def merge_reports(reports) -> SimReport:
    """Pool independent replications (equal-size batches assumed)."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    first = reports[0]
    L = max(len(r.histogram) for r in reports)
    hist = np.zeros(L, dtype=np.int64)
    for r in reports:
        hist[: len(r.histogram)] += r.histogram
    return _finish(sum(r.sim_duration for r in reports), sum(r.request_count for r in reports),
                   np.concatenate([r.batch_bs for r in reports]),
                   np.concatenate([r.batch_d2d for r in reports]), hist, first.theta,
                   first.scale, first.q_mean)


def simulate(cfg: SystemConfig, placement: PlacementMatrix, alloc: Allocation, duration: float,
             warmup: float | None = None, rng: np.random.Generator | None = None,
             n_batches: int = 20, max_requests: int | None = None) -> SimReport:
    """Run the request process for `duration` seconds after `warmup`.

    f_hat and g_hat are M*omega times the mean base-station and D2D
    fractions per request. Confidence half-widths (95%) come from
    `n_batches` consecutive batch means. The histogram counts, for requests
    of cached files only, the caching devices in range of the requester.
    """
    rng = np.random.default_rng() if rng is None else rng
    placement.check_consistent(alloc)
    if placement.shape != (len(alloc), cfg.M):
        raise ValueError("placement shape does not match the configuration")
    contact = cfg.contact()
    if warmup is None:
        warmup = 10.0 / contact.mu
    p = cfg.popularity().p
    if len(p) != len(alloc):
        raise ValueError("allocation length differs from the library size")
    fleet = Fleet(cfg.M, cfg.rho, cfg.s_min, cfg.s_max, rng)
    rate = cfg.total_request_rate
    cos_r = math.cos(cfg.r / cfg.rho) if cfg.r < math.pi * cfg.rho else -2.0
    cachers = [placement.cachers(i) for i in range(len(alloc))]
    alpha = alloc.alpha

    bs, d2d, hist = [], [], np.zeros(64, dtype=np.int64)
    t = 0.0
    end = warmup + duration
    chunk = 4096
    while True:
        gaps = rng.exponential(1.0 / rate, chunk)
        times = t + np.cumsum(gaps)
        reqs = rng.integers(cfg.M, size=chunk)
        files = rng.choice(len(p), size=chunk, p=p)
        stop = False
        for tt, d, i in zip(times, reqs, files):
            if tt > end or (max_requests is not None and len(bs) >= max_requests):
                stop = True
                break
            t = tt
            if tt < warmup:
                continue
            a = alpha[i]
            if a == 0:
                bs.append(1.0)
                d2d.append(0.0)
                continue
            pos = fleet.positions(tt)
            cs = cachers[i]
            others = cs[cs != d]
            j = int(np.count_nonzero(pos[others] @ pos[d] >= cos_r))
            bc, bnc, dc, dnc = download_fractions(a, j)
            if placement.c[i, d]:
                bs.append(bc)
                d2d.append(dc)
            else:
                bs.append(bnc)
                d2d.append(dnc)
            if j >= len(hist):
                hist = np.concatenate([hist, np.zeros(j + 1 - len(hist) + 64, dtype=np.int64)])
            hist[j] += 1
        if stop:
            break
        t = float(times[-1])
    count = len(bs)
    nb = min(n_batches, count)
    if nb:
        m = count // nb
        bsa = np.asarray(bs[: m * nb]).reshape(nb, m).mean(axis=1)
        dda = np.asarray(d2d[: m * nb]).reshape(nb, m).mean(axis=1)
    else:
        bsa = dda = np.zeros(0)
    last = np.flatnonzero(hist)
    hist = hist[: last[-1] + 1] if len(last) else hist[:0]
    sim_t = (min(t, end) - warmup) if count else 0.0
    return _finish(max(sim_t, 0.0), count, bsa, dda, hist, cfg.theta, rate, contact.mean)


@dataclass
class ContactStats:
    mean_contact: float
    contact_ci: float
    mean_intercontact: float
    intercontact_ci: float
    interarrival_rate: float
    n_contacts: int
    n_intercontacts: int


def empirical_contact_stats(cfg: SystemConfig, duration: float, warmup: float = 0.0,
                            rng: np.random.Generator | None = None, devices: int = 60,
                            dt: float = 0.05, groups: int = 20) -> ContactStats:
    """Contact and intercontact statistics over all pairs of `devices` walkers.

    Pair distances are sampled every `dt` seconds and crossings of the range
    boundary are located by linear interpolation of the cosine of the
    separation angle. The mean contact time is the sample mean of fully
    observed contacts. The mean intercontact time is the ratio of total
    out-of-range pair time to the number of contact starts; averaging only
    fully observed gaps would favour short ones, since gaps are not short
    compared with the observation window. `interarrival_rate` is contact
    starts per pair per second. Half-widths are 95% intervals from `groups`
    disjoint groups of pairs.
    """
    rng = np.random.default_rng() if rng is None else rng
    K = devices
    if K < 2:
        raise ValueError("need at least two devices")
    fleet = Fleet(K, cfg.rho, cfg.s_min, cfg.s_max, rng)
    iu, ju = np.triu_indices(K, 1)
    P = len(iu)
    whole = cfg.r >= math.pi * cfg.rho
    thr = math.cos(min(cfg.r / cfg.rho, math.pi))
    steps = int(math.ceil(duration / dt))
    last_change = np.full(P, np.nan)
    c_sum, c_cnt = np.zeros(P), np.zeros(P)
    out_time, starts = np.zeros(P), np.zeros(P)

    t = warmup
    pos = fleet.positions(t)
    prev = np.sum(pos[iu] * pos[ju], axis=1) - thr
    inside = np.ones(P, bool) if whole else prev >= 0
    entered_at = np.where(inside, np.nan, t)
    for s in range(1, steps + 1):
        t = warmup + s * dt
        if whole:
            continue
        pos = fleet.positions(t)
        cur = np.sum(pos[iu] * pos[ju], axis=1) - thr
        now_in = cur >= 0
        flip = np.flatnonzero(now_in != inside)
        if len(flip):
            w = prev[flip] / (prev[flip] - cur[flip])
            tc = t - dt + np.clip(w, 0.0, 1.0) * dt
            entering = now_in[flip]
            enter_idx, leave_idx = flip[entering], flip[~entering]
            # leaving: a contact ends; count it if its start was observed
            seen = ~np.isnan(last_change[leave_idx])
            span = tc[~entering] - last_change[leave_idx]
            np.add.at(c_sum, leave_idx[seen], span[seen])
            np.add.at(c_cnt, leave_idx[seen], 1)
            entered_at[leave_idx] = tc[~entering]
            # entering: a gap ends and a contact starts
            out_time[enter_idx] += tc[entering] - entered_at[enter_idx]
            entered_at[enter_idx] = np.nan
            starts[enter_idx] += 1
            last_change[flip] = tc
            inside[flip] = now_in[flip]
        prev = cur
    end = warmup + steps * dt
    still_out = ~inside
    out_time[still_out] += end - entered_at[still_out]
    span_t = steps * dt

    grp = np.arange(P) % max(1, min(groups, P))
    G = grp.max() + 1

    def ratio(num, den):
        tot = den.sum()
        if tot == 0:
            return float("nan"), float("nan")
        est = num.sum() / tot
        gn = np.bincount(grp, num, G)
        gd = np.bincount(grp, den, G)
        ok = gd > 0
        if ok.sum() < 2:
            return float(est), float("nan")
        r = gn[ok] / gd[ok]
        return float(est), float(stats.t.ppf(0.975, ok.sum() - 1) * r.std(ddof=1) / math.sqrt(ok.sum()))

    mc, cc = ratio(c_sum, c_cnt)
    mi, ci = ratio(out_time, starts)
    rate = float(starts.sum() / (P * span_t)) if span_t > 0 else float("nan")
    return ContactStats(mean_contact=mc, contact_ci=cc, mean_intercontact=mi, intercontact_ci=ci,
                        interarrival_rate=rate, n_contacts=int(c_cnt.sum()), n_intercontacts=int(starts.sum()))
