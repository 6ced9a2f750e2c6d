"""Experiment specifications: a flat ``key = value`` text format.

Lines hold one ``key = value`` pair; ``#`` starts a comment; list values are
comma separated. Unknown keys are rejected. Example::

    mode = sweep
    M = 500
    theta = 1
    sweep = n_over_M
    values = 0.01, 0.1, 1
    allocations = optimal_lp, round, popular
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .contact import DEFAULT_TRUNC_EPS
from .model import SystemConfig

MODES = ("analyze", "optimize", "simulate", "sweep", "validate")
AXES = ("n_over_M", "density", "theta", "beta_d", "sigma")
PLAIN_SOURCES = ("optimal_lp", "milp", "round", "popular", "none")


class ConfigError(ValueError):
    """A specification could not be parsed or failed validation."""


def _check_source(src: str) -> None:
    if src in PLAIN_SOURCES:
        return
    if src.startswith("strict:"):
        try:
            d = float(src.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad overhead in allocation source {src!r}") from None
        if not (d >= 0 and math.isfinite(d)):
            raise ConfigError(f"strict overhead must be finite and >= 0 in {src!r}")
        return
    if src.startswith("file:") and len(src) > 5:
        return
    raise ConfigError(f"unknown allocation source {src!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str = "analyze"
    # system parameters
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
    n_over_M: float | None = None
    file_size_bits: float | None = None
    # experiment
    sweep: str | None = None
    values: tuple = ()
    allocations: tuple = ("optimal_lp", "round", "popular")
    seed: int = 0
    output: str | None = None
    sim_requests: int = 0
    trunc_eps: float = DEFAULT_TRUNC_EPS
    gap_tol: float = 1e-6
    node_limit: int = 20000
    contact_duration: float = 2000.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if self.sweep is not None and self.sweep not in AXES:
            raise ConfigError(f"sweep axis must be one of {', '.join(AXES)}; got {self.sweep!r}")
        if self.mode == "sweep" and (self.sweep is None or not self.values):
            raise ConfigError("mode=sweep needs a sweep axis and at least one value")
        if self.values and self.sweep is None:
            raise ConfigError("values given without a sweep axis")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "allocations", tuple(self.allocations))
        for src in self.allocations:
            _check_source(src)
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.n_over_M is not None and not 0 < self.n_over_M <= 1:
            raise ConfigError("n_over_M must lie in (0, 1]")
        if self.sim_requests < 0 or self.node_limit < 1 or self.contact_duration <= 0:
            raise ConfigError("sim_requests >= 0, node_limit >= 1 and contact_duration > 0 required")
        if not 0 < self.trunc_eps <= 1e-6:
            raise ConfigError("trunc_eps must lie in (0, 1e-6]")
        if self.gap_tol < 0:
            raise ConfigError("gap_tol must be non-negative")
        try:
            for v in self.values or (None,):
                self.point(v)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def point(self, value=None) -> SystemConfig:
        """SystemConfig for one sweep value (or the base point if None)."""
        kw = {f: getattr(self, f) for f in ("rho", "r", "M", "N", "sigma", "s_min", "s_max",
                                            "omega", "theta", "beta_d", "file_size_bits")}
        axis = self.sweep if value is not None else None
        if axis == "density":
            kw["M"] = int(round(value * 4.0 * math.pi * self.rho**2))
            if kw["M"] < 1:
                raise ValueError(f"density {value} gives fewer than one device")
        elif axis in ("theta", "beta_d", "sigma"):
            kw[axis] = value
        M = kw["M"]
        if axis == "n_over_M":
            if not 0 < value <= 1:
                raise ValueError(f"n/M must lie in (0, 1], got {value}")
            kw["n"] = max(1, int(round(value * M)))
        elif self.n is not None and axis != "density":
            kw["n"] = self.n
        else:
            kw["n"] = max(1, int(round((self.n_over_M or 1.0) * M)))
        return SystemConfig(**kw)

    def points(self):
        return [self.point(v) for v in self.values] if self.values else [self.point()]

    def with_(self, **kw) -> ExperimentSpec:
        return replace(self, **kw)


_INT = {"M", "N", "n", "seed", "sim_requests", "node_limit"}
_FLOAT = {"rho", "r", "sigma", "s_min", "s_max", "omega", "theta", "beta_d", "n_over_M",
          "file_size_bits", "trunc_eps", "gap_tol", "contact_duration"}
_STR = {"mode", "sweep", "output"}
_LIST = {"values", "allocations"}


def _convert(key, raw, lineno):
    try:
        if key in _INT:
            v = float(raw) if any(ch in raw for ch in ".eE") else int(raw)
            if isinstance(v, float):
                if not v.is_integer():
                    raise ValueError
                v = int(v)
            return v
        if key in _FLOAT:
            return float(raw)
        if key in _STR:
            return raw
        items = [x.strip() for x in raw.split(",") if x.strip()]
        return tuple(float(x) for x in items) if key == "values" else tuple(items)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot read {key!r} from {raw!r}") from None


def parse_config(text: str, base: ExperimentSpec | None = None) -> ExperimentSpec:
    known = {f.name for f in fields(ExperimentSpec)}
    seen: dict[str, int] = {}
    kw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        if raw.lower() in ("", "none") and key not in _LIST:
            kw[key] = None
            continue
        kw[key] = _convert(key, raw, lineno)
    try:
        return replace(base, **kw) if base is not None else ExperimentSpec(**kw)
    except ConfigError as exc:
        raise ConfigError(f"invalid specification: {exc}") from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def serialize(spec: ExperimentSpec) -> str:
    lines = []
    for f in fields(ExperimentSpec):
        v = getattr(spec, f.name)
        if v is None:
            text = "none"
        elif isinstance(v, tuple):
            text = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def _fig_grid(*groups):
    return tuple(sorted({round(v, 6) for g in groups for v in g}))


_FIG3_N = _fig_grid([k / 100 for k in range(1, 10)], [k / 10 for k in range(1, 11)],
                    [0.002, 0.004, 0.008, 0.02, 0.04, 0.05, 0.25, 0.5])
_FIG4_N = _fig_grid([k / 100 for k in range(1, 10)], [k / 100 for k in range(10, 26)],
                    [0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 1.0],
                    [0.0005, 0.001, 0.002, 0.0025, 0.004, 0.005, 0.008, 0.0125, 0.025, 0.04,
                     0.0625, 0.125])
_AREA = 4.0 * math.pi * 30.0**2

PRESETS = {
    "fig3": ExperimentSpec(mode="sweep", M=500, theta=1.0, sweep="n_over_M", values=_FIG3_N,
                           allocations=("optimal_lp", "round", "popular", "strict:0", "none")),
    "fig4": ExperimentSpec(mode="sweep", M=2000, theta=0.75, sweep="n_over_M", values=_FIG4_N,
                           allocations=("optimal_lp", "round", "popular", "none")),
    "fig5": ExperimentSpec(mode="sweep", theta=0.75, sweep="density",
                           values=tuple(m / _AREA for m in (100, 500, 1000, 2000, 3000, 4000, 5000, 6000,
                                                            7000, 8000, 9000, 10000, 15000, 20000)),
                           allocations=("optimal_lp", "round", "popular", "none")),
    "fig6": ExperimentSpec(mode="sweep", M=2000, sweep="theta",
                           values=tuple([round(0.5 + k / 100, 2) for k in range(11)] + [0.7, 0.75, 0.8, 0.9, 1.0]),
                           allocations=("optimal_lp", "round", "popular", "none")),
    "fig7": ExperimentSpec(mode="sweep", M=2000, theta=0.75, sweep="beta_d",
                           values=(1.0, 1.5, 2.0, 3.0, 4.0, 5.0),
                           allocations=("optimal_lp", "round", "popular", "none")),
    # sigma = 0 lies outside the Zipf domain; 0.001 stands in for the uniform end
    "fig8": ExperimentSpec(mode="sweep", M=2000, theta=0.75, sweep="sigma",
                           values=(0.001, 0.4, 0.7, 1.0, 1.5),
                           allocations=("optimal_lp", "round", "popular", "none")),
}
