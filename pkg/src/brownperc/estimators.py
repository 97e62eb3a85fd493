"""Monte Carlo estimators built on the samplers and geometry.

Every estimator draws replica i from ``stream.child("replica", i)`` and reduces replicas
by summing success counts, so results do not depend on worker count or ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .boxes import Box
from .errors import InvalidDimension, InvalidParameter, UnbracketedTarget
from .geometry import PackedChains, crossing_indicator, default_tol, spanning_cluster_count
from .models import (
    ModelConfig,
    OccupiedSetSample,
    coarse_grain_edges,
    polylines_touch,
    sample_occupied_set,
)
from .parallel import sum_over_replicas
from .stochastic import RngStream, brownian_positions, sample_brownian_bridge

DEFAULT_LEVEL = 0.99


# ------------------------------------------------------------------ confidence intervals


def wilson_interval(successes: int, replicas: int, level: float = DEFAULT_LEVEL) -> tuple[float, float]:
    if replicas < 1:
        raise InvalidParameter("replicas must be >= 1")
    if not 0 <= successes <= replicas:
        raise InvalidParameter("successes must lie in [0, replicas]")
    if not 0 < level < 1:
        raise InvalidParameter("level must lie in (0, 1)")
    z = float(norm.ppf(0.5 + 0.5 * level))
    n = float(replicas)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo = 0.0 if successes == 0 else min(max(center - half, 0.0), p)
    hi = 1.0 if successes == replicas else max(min(center + half, 1.0), p)
    return lo, hi


@dataclass(frozen=True)
class EstimateCI:
    successes: int
    replicas: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    level: float = DEFAULT_LEVEL
    flag: str | None = None

    @classmethod
    def from_counts(cls, successes: int, replicas: int, level: float = DEFAULT_LEVEL, flag: str | None = None) -> "EstimateCI":
        successes, replicas = int(successes), int(replicas)
        lo, hi = wilson_interval(successes, replicas, level)
        return cls(successes, replicas, successes / replicas, lo, hi, float(level), flag)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.replicas)

    def straddles(self, target: float) -> bool:
        return self.ci_lo <= target <= self.ci_hi

    def to_dict(self) -> dict:
        out = {
            "successes": self.successes,
            "replicas": self.replicas,
            "p_hat": self.p_hat,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "level": self.level,
        }
        if self.flag:
            out["flag"] = self.flag
        return out


def _check_replicas(replicas: int) -> int:
    if int(replicas) != replicas or replicas < 1:
        raise InvalidParameter(f"replicas must be a positive integer, got {replicas}")
    return int(replicas)


# ------------------------------------------------------------------ crossing


def _as_packed(sampled, d: int) -> tuple[PackedChains, float | None]:
    if isinstance(sampled, OccupiedSetSample):
        return sampled.packed, sampled.tol
    if isinstance(sampled, PackedChains):
        return sampled, None
    return PackedChains.from_chains(list(sampled), d), None


def _crossing_block(payload, start: int, stop: int) -> int:
    config, stream, sampler = payload
    hits = 0
    for i in range(start, stop):
        rs = stream.child("replica", i)
        sampled = sample_occupied_set(config, rs) if sampler is None else sampler(config, rs)
        packed, tol = _as_packed(sampled, config.d)
        hits += crossing_indicator(packed, config.box, config.resolved_tol if tol is None else tol)
    return hits


def count_crossings(config: ModelConfig, start: int, stop: int, stream: RngStream, sampler: Callable | None = None) -> int:
    """Crossing successes over replicas [start, stop)."""
    if config.lam == 0 and sampler is None:
        return 0
    return int(sum_over_replicas(_crossing_block, (config.resolved(), stream, sampler), start, stop))


def crossing_probability(
    config: ModelConfig,
    replicas: int,
    stream: RngStream,
    sampler: Callable | None = None,
    level: float = DEFAULT_LEVEL,
) -> EstimateCI:
    """Bernoulli estimate of the crossing probability of config.box.

    `sampler(config, stream)` may replace the occupied-set sampler; it returns an
    OccupiedSetSample, a PackedChains, or a list of CapsuleChain.
    """
    n = _check_replicas(replicas)
    return EstimateCI.from_counts(count_crossings(config, 0, n, stream, sampler), n, level)


# ------------------------------------------------------------------ threshold bisection


@dataclass(frozen=True)
class ThresholdBracket:
    axis: str
    lo: float
    hi: float
    p_lo: EstimateCI
    p_hi: EstimateCI
    target: float
    history: tuple = field(default=(), repr=False)
    flag: str | None = None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def relative_width(self) -> float:
        return (self.hi - self.lo) / self.midpoint

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "lo": self.lo,
            "hi": self.hi,
            "p_lo": self.p_lo.to_dict(),
            "p_hi": self.p_hi.to_dict(),
            "target": self.target,
            "relative_width": self.relative_width,
            "flag": self.flag,
            "history": [{"param": v, **e.to_dict()} for v, e in self.history],
        }


AXES = ("t", "lam")


class CrossingCounter:
    """Counts crossings of a config template with one axis overridden.

    A fixed margin (resolved at `margin_at`) is shared by all axis values, so replica i
    sees the same seeds at every value of t.
    """

    def __init__(self, template: ModelConfig, axis: str, stream: RngStream, margin_at: float | None = None):
        if axis not in AXES:
            raise InvalidParameter(f"axis must be one of {AXES}, got {axis!r}")
        self.axis = axis
        self.stream = stream
        if template.margin is None and margin_at is not None:
            template = replace(template, margin=replace(template, **{axis: margin_at}).resolved_margin)
        self.template = template

    def config_at(self, value: float) -> ModelConfig:
        return replace(self.template, **{self.axis: float(value)})

    def __call__(self, value: float, start: int, stop: int) -> int:
        return count_crossings(self.config_at(value), start, stop, self.stream)


def _evaluate(counter: Callable, value: float, replicas: int, target: float, level: float, max_boost: int) -> EstimateCI:
    n = replicas
    hits = counter(value, 0, n)
    est = EstimateCI.from_counts(hits, n, level)
    while est.straddles(target) and 2 * n <= replicas * max_boost:
        hits += counter(value, n, 2 * n)
        n *= 2
        est = EstimateCI.from_counts(hits, n, level)
    return est


def _split(lo: float, hi: float) -> float:
    return math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)


def threshold_bisect(
    template: ModelConfig | None,
    axis: str,
    target: float = 0.5,
    lo0: float = 0.0,
    hi0: float = 1.0,
    replicas: int = 400,
    max_iters: int = 20,
    stream: RngStream | None = None,
    level: float = DEFAULT_LEVEL,
    max_boost: int = 8,
    rel_width: float = 0.2,
    counter: Callable | None = None,
) -> ThresholdBracket:
    """Bisect `axis` for the value where the crossing probability passes `target`.

    Each comparison needs the CI to clear the target; a straddling point gets its replicas
    doubled up to `max_boost` times, after which the two flanking points are tried. `counter`
    (value, start, stop) -> successes replaces the crossing estimator.
    """
    if axis not in AXES:
        raise InvalidParameter(f"axis must be one of {AXES}, got {axis!r}")
    if not 0 < target < 1:
        raise InvalidParameter("target must lie in (0, 1)")
    if not 0 <= lo0 < hi0:
        raise InvalidParameter("need 0 <= lo0 < hi0")
    replicas = _check_replicas(replicas)
    if max_boost < 1:
        raise InvalidParameter("max_boost must be >= 1")
    if counter is None:
        if template is None or stream is None:
            raise InvalidParameter("a config template and stream are required without a custom counter")
        counter = CrossingCounter(template, axis, stream, margin_at=hi0 if axis == "t" else None)

    history: list[tuple[float, EstimateCI]] = []

    def evaluate(v: float) -> EstimateCI:
        est = _evaluate(counter, v, replicas, target, level, max_boost)
        history.append((float(v), est))
        return est

    lo, hi = float(lo0), float(hi0)
    p_lo = evaluate(lo)
    if not p_lo.ci_hi < target:
        raise UnbracketedTarget(f"estimate at lo0={lo} is not below the target (ci_hi={p_lo.ci_hi:.4g})")
    p_hi = evaluate(hi)
    if not p_hi.ci_lo > target:
        raise UnbracketedTarget(f"estimate at hi0={hi} is not above the target (ci_lo={p_hi.ci_lo:.4g})")

    flag = None
    for _ in range(max_iters):
        if (hi - lo) / (0.5 * (hi + lo)) <= rel_width:
            break
        mid = _split(lo, hi)
        est = evaluate(mid)
        if est.ci_hi < target:
            lo, p_lo = mid, est
            continue
        if est.ci_lo > target:
            hi, p_hi = mid, est
            continue
        # unresolved at the split point: try the flanks instead
        moved = False
        left = _split(lo, mid)
        e_left = evaluate(left)
        if e_left.ci_hi < target:
            lo, p_lo, moved = left, e_left, True
        right = _split(mid, hi)
        e_right = evaluate(right)
        if e_right.ci_lo > target:
            hi, p_hi, moved = right, e_right, True
        if not moved:
            flag = "unresolved"
            break
    if flag is None and (hi - lo) / (0.5 * (hi + lo)) > rel_width:
        flag = "budget-exhausted"
    return ThresholdBracket(axis, lo, hi, p_lo, p_hi, float(target), tuple(history), flag)


# ------------------------------------------------------------------ coarse-grained edges


def _edge_block(payload, start: int, stop: int) -> np.ndarray:
    R, t, lam, d, step, tol, stream = payload
    shape = (2,) + (1,) * (d - 1)
    out = np.zeros(3, dtype=np.int64)
    for i in range(start, stop):
        field_ = coarse_grain_edges(R, t, lam, d, shape, step, tol, stream.child("replica", i))
        out[0] += int(field_.open[0])
        out[1] += int(np.count_nonzero(field_.counts))
        out[2] += field_.n_sites
    return out


def edge_statistics(
    R: float,
    t: float,
    lam: float,
    d: int,
    step: float,
    tol: float,
    replicas: int,
    stream: RngStream,
    level: float = DEFAULT_LEVEL,
) -> tuple[EstimateCI, EstimateCI]:
    """(edge-open estimate, site-occupancy estimate) from a two-site window per replica."""
    n = _check_replicas(replicas)
    if int(d) != d or d < 1:
        raise InvalidDimension(f"d must be a positive integer, got {d}")
    counts = sum_over_replicas(_edge_block, (float(R), float(t), float(lam), int(d), float(step), float(tol), stream), 0, n)
    return (
        EstimateCI.from_counts(int(counts[0]), n, level),
        EstimateCI.from_counts(int(counts[1]), int(counts[2]), level),
    )


def edge_open_probability(
    R: float,
    t: float,
    lam: float,
    d: int,
    step: float,
    tol: float,
    replicas: int,
    stream: RngStream,
    level: float = DEFAULT_LEVEL,
) -> EstimateCI:
    return edge_statistics(R, t, lam, d, step, tol, replicas, stream, level)[0]


# ------------------------------------------------------------------ two-path intersection


def _intersection_block(payload, start: int, stop: int) -> int:
    sep, t, d, step, tol, stream = payload
    y = np.zeros(d)
    y[0] = sep
    hits = 0
    for i in range(start, stop):
        rs = stream.child("replica", i)
        p1 = brownian_positions(np.zeros((1, d)), t, step, rs.child("path", 0))[0]
        p2 = brownian_positions(y[None, :], t, step, rs.child("path", 1))[0]
        hits += polylines_touch(p1, p2, tol)
    return hits


def path_intersection_probability(
    separation: float,
    t: float,
    d: int,
    step: float,
    tol: float | None,
    replicas: int,
    stream: RngStream,
    level: float = DEFAULT_LEVEL,
) -> EstimateCI:
    """P(paths from 0 and from (separation, 0, ...) come within tol of each other by time t)."""
    n = _check_replicas(replicas)
    if not (separation >= 0 and t >= 0):
        raise InvalidParameter("separation and t must be nonnegative")
    flag = None
    if d not in (2, 3):
        if int(d) == d and d >= 4 and tol is not None and tol > 0:
            flag = "high-dimension-tolerance"
        else:
            raise InvalidDimension(f"path intersection needs d in {{2, 3}} (or d >= 4 with tol > 0), got {d}")
    tol = default_tol(d, 0.0, step) if tol is None else float(tol)
    if separation <= tol:
        return EstimateCI.from_counts(n, n, level, flag)
    hits = sum_over_replicas(_intersection_block, (float(separation), float(t), int(d), float(step), tol, stream), 0, n)
    return EstimateCI.from_counts(int(hits), n, level, flag)


# ------------------------------------------------------------------ scale invariance


@dataclass(frozen=True)
class TwoProportionReport:
    first: EstimateCI
    second: EstimateCI
    z: float
    p_value: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.p_value >= self.alpha

    def to_dict(self) -> dict:
        return {
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "z": self.z,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "passed": self.passed,
        }


def two_proportion_test(a: EstimateCI, b: EstimateCI, alpha: float = 0.01) -> TwoProportionReport:
    """Pooled two-sided z-test of equal success probabilities."""
    pooled = (a.successes + b.successes) / (a.replicas + b.replicas)
    var = pooled * (1 - pooled) * (1 / a.replicas + 1 / b.replicas)
    if var == 0:
        z = 0.0 if a.p_hat == b.p_hat else math.inf
    else:
        z = (a.p_hat - b.p_hat) / math.sqrt(var)
    p_value = float(2 * norm.sf(abs(z))) if math.isfinite(z) else 0.0
    return TwoProportionReport(a, b, float(z), p_value, float(alpha))


def two_proportion_check(
    config_a: ModelConfig,
    config_b: ModelConfig,
    replicas: int,
    stream: RngStream,
    shared: bool = False,
    alpha: float = 0.01,
    level: float = DEFAULT_LEVEL,
) -> TwoProportionReport:
    """Crossing estimates of two configs compared by the two-proportion test."""
    sa = stream if shared else stream.child("first")
    sb = stream if shared else stream.child("second")
    a = crossing_probability(config_a, replicas, sa, level=level)
    b = crossing_probability(config_b, replicas, sb, level=level)
    return two_proportion_test(a, b, alpha)


def rescaled_config(config: ModelConfig, eta: float) -> ModelConfig:
    """(eta lam, eta^(-2/d) t, eta^(-1/d) lengths): the same occupied set in law, up to a dilation."""
    if not eta > 0:
        raise InvalidParameter("eta must be positive")
    d = config.d
    ell = eta ** (-1.0 / d)
    base = config.resolved()
    return replace(
        base,
        lam=config.lam * eta,
        t=config.t * ell * ell,
        N=config.N * ell,
        r=config.r * ell,
        step=config.step * ell * ell,
        extents=tuple(e * ell for e in base.box.extents),
        origin=tuple(o * ell for o in base.box.lo),
        margin=base.margin * ell,
        tol=base.tol * ell,
    )


def scale_invariance_check(
    lam: float,
    t: float,
    N: float,
    eta: float,
    d: int,
    replicas: int,
    stream: RngStream,
    shared: bool = False,
    step: float = 0.01,
    alpha: float = 0.01,
    level: float = DEFAULT_LEVEL,
) -> TwoProportionReport:
    base = ModelConfig(d=d, lam=lam, t=t, N=N, step=step)
    return two_proportion_check(base, rescaled_config(base, eta), replicas, stream, shared, alpha, level)


# ------------------------------------------------------------------ uniqueness surrogate


def _centered_config(config: ModelConfig, R_out: float) -> ModelConfig:
    return replace(config, N=2 * R_out, extents=(2 * R_out,) * config.d, origin=(-R_out,) * config.d)


def unbounded_cluster_count(sample: OccupiedSetSample, R_in: float, R_out: float) -> int:
    """Clusters of the sample inside {R_in <= |x|_inf <= R_out} touching both boundary spheres."""
    if not (R_out > R_in > 0):
        raise InvalidParameter("need R_out > R_in > 0")
    window = sample.config.window
    lo, hi = window.as_arrays()
    if np.any(lo > -R_out) or np.any(hi < R_out):
        raise InvalidParameter("sample window must contain the sup-ball of radius R_out")
    if sample.n_chains == 0:
        return 0
    return spanning_cluster_count(sample.packed, R_in, R_out, sample.tol)


def _multi_cluster_block(payload, start: int, stop: int) -> int:
    config, R_in, R_out, stream = payload
    hits = 0
    for i in range(start, stop):
        sample = sample_occupied_set(config, stream.child("replica", i))
        hits += unbounded_cluster_count(sample, R_in, R_out) >= 2
    return hits


def multiple_cluster_frequency(
    config: ModelConfig,
    R_in: float,
    R_out: float,
    replicas: int,
    stream: RngStream,
    level: float = DEFAULT_LEVEL,
) -> EstimateCI:
    """Frequency of at least two annulus-spanning clusters, sampling around the sup-ball of radius R_out."""
    n = _check_replicas(replicas)
    if not (R_out > R_in > 0):
        raise InvalidParameter("need R_out > R_in > 0")
    cfg = _centered_config(config, R_out).resolved()
    hits = sum_over_replicas(_multi_cluster_block, (cfg, float(R_in), float(R_out), stream), 0, n)
    return EstimateCI.from_counts(int(hits), n, level)


# ------------------------------------------------------------------ annulus probabilities


@dataclass(frozen=True)
class Annulus:
    """Open Euclidean annulus {R - eps < |x| < R + eps} with the inner annulus of half-width eps_bar."""

    R: float
    eps: float
    eps_bar: float | None = None

    def __post_init__(self) -> None:
        if not (self.R > 0 and self.eps > 0):
            raise InvalidParameter("annulus needs R > 0 and eps > 0")
        if self.eps_bar is not None and not 0 < self.eps_bar <= self.eps:
            raise InvalidParameter("eps_bar must lie in (0, eps]")

    def contains(self, x: np.ndarray, inner: bool = False) -> np.ndarray:
        w = self.eps_bar if inner and self.eps_bar is not None else self.eps
        norms = np.linalg.norm(np.atleast_2d(x), axis=-1)
        return (norms > self.R - w) & (norms < self.R + w)

    def contains_closed_inner(self, x) -> bool:
        w = self.eps_bar if self.eps_bar is not None else self.eps
        r = float(np.linalg.norm(np.asarray(x, dtype=float)))
        return self.R - w <= r <= self.R + w


def _bridge_block(payload, start: int, stop: int) -> int:
    annulus, a, a_bar, delta, step, stream = payload
    hits = 0
    for i in range(start, stop):
        path = sample_brownian_bridge(a, a_bar, delta, step, stream.child("replica", i))
        hits += bool(annulus.contains(path.positions).all())
    return hits


def bridge_stay_probability(
    R: float,
    eps: float,
    a,
    a_bar,
    delta: float,
    step: float,
    replicas: int,
    stream: RngStream,
    eps_bar: float | None = None,
    level: float = DEFAULT_LEVEL,
) -> EstimateCI:
    """P(bridge from a to a_bar over [0, delta] stays in the open annulus), checked at every grid time."""
    n = _check_replicas(replicas)
    annulus = Annulus(float(R), float(eps), None if eps_bar is None else float(eps_bar))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    a_bar = np.atleast_1d(np.asarray(a_bar, dtype=float))
    if not (annulus.contains_closed_inner(a) and annulus.contains_closed_inner(a_bar)):
        raise InvalidParameter("bridge endpoints must lie in the closed inner annulus")
    if not (annulus.contains(a)[0] and annulus.contains(a_bar)[0]):
        return EstimateCI.from_counts(0, n, level)
    hits = sum_over_replicas(_bridge_block, (annulus, a, a_bar, float(delta), float(step), stream), 0, n)
    return EstimateCI.from_counts(int(hits), n, level)


def _annulus_pair_block(payload, start: int, stop: int) -> int:
    annulus, starts, horizons, delta, step, tol, stream = payload
    hits = 0
    for i in range(start, stop):
        rs = stream.child("replica", i)
        paths = []
        ok = True
        for k in range(2):
            pos = brownian_positions(starts[k][None, :], horizons[k], step, rs.child("path", k))[0]
            if not annulus.contains(pos).all():
                ok = False
                break
            if annulus.eps_bar is not None:
                idx = min(int(round(delta / step)), len(pos) - 1)
                if not (annulus.contains(pos[idx], inner=True)[0] and annulus.contains(pos[-1], inner=True)[0]):
                    ok = False
                    break
            paths.append(pos)
        if ok:
            hits += polylines_touch(paths[0], paths[1], tol)
    return hits


def annulus_intersection_probability(
    annulus: Annulus,
    a1,
    a2,
    tau1: float,
    tau2: float,
    delta: float,
    step: float,
    tol: float | None,
    replicas: int,
    stream: RngStream,
    level: float = DEFAULT_LEVEL,
) -> EstimateCI:
    """P(two independent paths from a1, a2 stay in the annulus up to tau_i - delta and come within tol).

    With annulus.eps_bar set, each path must also sit in the inner annulus at times delta and tau_i - delta.
    """
    n = _check_replicas(replicas)
    a1 = np.atleast_1d(np.asarray(a1, dtype=float))
    a2 = np.atleast_1d(np.asarray(a2, dtype=float))
    d = a1.size
    if a2.size != d:
        raise InvalidParameter("starting points must share a dimension")
    if d not in (2, 3):
        raise InvalidParameter(f"annulus intersection needs d in {{2, 3}}, got {d}")
    if not (annulus.contains(a1)[0] and annulus.contains(a2)[0]):
        raise InvalidParameter("starting points must lie inside the annulus")
    if not (delta > 0 and tau1 > delta and tau2 > delta):
        raise InvalidParameter("need 0 < delta < tau_i")
    tol = default_tol(d, 0.0, step) if tol is None else float(tol)
    if tol < 0:
        raise InvalidParameter("tol must be nonnegative")
    horizons = (float(tau1) - float(delta), float(tau2) - float(delta))
    hits = sum_over_replicas(
        _annulus_pair_block, (annulus, (a1, a2), horizons, float(delta), float(step), tol, stream), 0, n
    )
    return EstimateCI.from_counts(int(hits), n, level)


def crossing_curve(
    template: ModelConfig,
    axis: str,
    values: Sequence[float],
    replicas: int,
    stream: RngStream,
    level: float = DEFAULT_LEVEL,
) -> list[tuple[float, EstimateCI]]:
    """Crossing estimates along one axis on shared seeds (margin fixed at the largest value)."""
    n = _check_replicas(replicas)
    counter = CrossingCounter(template, axis, stream, margin_at=max(values) if axis == "t" else None)
    return [(float(v), EstimateCI.from_counts(counter(v, 0, n), n, level)) for v in values]


# ------------------------------------------------------------------ slab projection diagnostics


@dataclass(frozen=True)
class SlabDiagnostics:
    """Per-slab thinning rates against the analytic hitting probabilities, plus a Poisson fit of projected counts."""

    t: float
    lam: float
    analytic: np.ndarray = field(repr=False)
    proposed: np.ndarray = field(repr=False)
    kept: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    expected_count: float
    gof_statistic: float
    gof_p_value: float
    gof_bins: int

    @property
    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.proposed > 0, self.kept / np.maximum(self.proposed, 1), np.nan)

    @property
    def z_scores(self) -> np.ndarray:
        p = self.analytic
        sd = np.sqrt(p * (1 - p) / np.maximum(self.proposed, 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sd > 0, (self.rates - p) / sd, 0.0)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "lambda": self.lam,
            "analytic": self.analytic.tolist(),
            "proposed": self.proposed.tolist(),
            "kept": self.kept.tolist(),
            "max_abs_z": float(np.nanmax(np.abs(self.z_scores))) if self.analytic.size else 0.0,
            "expected_count": self.expected_count,
            "mean_count": float(self.counts.mean()),
            "gof_statistic": self.gof_statistic,
            "gof_p_value": self.gof_p_value,
            "gof_bins": self.gof_bins,
        }


def poisson_gof(counts: np.ndarray, mean: float, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square fit of integer counts to Poisson(mean), merging tail bins until each expects >= min_expected."""
    from scipy.stats import chi2, poisson

    counts = np.asarray(counts, dtype=np.int64)
    n = counts.size
    if n == 0 or mean <= 0:
        return 0.0, 1.0, 0
    hi = int(max(counts.max(), poisson.ppf(1 - 1e-12, mean))) + 1
    ks = np.arange(hi + 1)
    probs = poisson.pmf(ks, mean)
    probs[-1] += poisson.sf(hi, mean)
    observed = np.bincount(np.minimum(counts, hi), minlength=hi + 1).astype(float)
    # merge adjacent cells left to right, then fold any short final cell into its neighbour
    obs_bins, exp_bins = [], []
    o_acc = e_acc = 0.0
    for o, p in zip(observed, probs):
        o_acc += o
        e_acc += p * n
        if e_acc >= min_expected:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_bins:
            obs_bins[-1] += o_acc
            exp_bins[-1] += e_acc
        else:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
    k = len(exp_bins)
    if k < 2:
        return 0.0, 1.0, k
    o = np.array(obs_bins)
    e = np.array(exp_bins)
    stat = float(((o - e) ** 2 / e).sum())
    return stat, float(chi2.sf(stat, k - 1)), k


def slab_diagnostics(
    lam: float,
    t: float,
    d: int,
    window: Box,
    replicas: int,
    stream: RngStream,
    K_max: int | None = None,
    method: str = "exact",
    step: float = 0.01,
) -> SlabDiagnostics:
    from .models import slab_projection_details
    from .stochastic import default_slab_count, slab_hit_probabilities

    n = _check_replicas(replicas)
    K_max = default_slab_count(t) if K_max is None else int(K_max)
    analytic = slab_hit_probabilities(t, K_max)
    proposed = np.zeros(K_max, dtype=np.int64)
    kept = np.zeros(K_max, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        det = slab_projection_details(lam, t, d, window, K_max, stream.child("replica", i), method, step)
        proposed += det.proposed
        kept += det.kept
        counts[i] = len(det.points)
    expected = float(lam * window.volume * analytic.sum())
    stat, p_value, bins = poisson_gof(counts, expected)
    return SlabDiagnostics(float(t), float(lam), analytic, proposed, kept, counts, expected, stat, p_value, bins)
