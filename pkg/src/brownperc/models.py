"""Builders from random samples to occupied sets: Brownian sausages, Boolean balls, the coarse-grained bond model, slab projection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from numba import njit

from .boxes import Box
from .certificate import tail_series
from .errors import InvalidParameter
from .geometry import CapsuleChain, PackedChains, default_tol
from .geometry import _kernels as K
from .stochastic import (
    Deterministic,
    PointSet,
    Polyline,
    RadiusDistribution,
    RngStream,
    SupOfBrownian,
    brownian_positions,
    default_slab_count,
    sample_poisson_points,
)

DEFAULT_MARGIN_ERROR = 1e-3


@dataclass(frozen=True)
class ModelConfig:
    """Parameters of one occupied-set model.

    `margin` is the padding added around the crossing box before sampling starts; None means
    derive it from build_margin. `tol` None means the discretization default. A non-None
    `radius_law` switches the model to the Boolean model with that radius distribution.
    """

    d: int
    lam: float
    t: float
    N: float
    r: float = 0.0
    step: float = 0.01
    extents: tuple | None = None
    origin: tuple | None = None
    margin: float | None = None
    tol: float | None = None
    master_seed: int = 0
    radius_law: RadiusDistribution | None = None
    margin_error: float = DEFAULT_MARGIN_ERROR

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise InvalidParameter(f"d must be a positive integer, got {self.d}")
        for name in ("lam", "t", "r"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float, np.floating, np.integer)) and v >= 0 and math.isfinite(v)):
                raise InvalidParameter(f"{name} must be finite and nonnegative, got {v}")
        if not self.step > 0:
            raise InvalidParameter(f"step must be positive, got {self.step}")
        if not self.N > 0:
            raise InvalidParameter(f"N must be positive, got {self.N}")
        if self.margin is not None and not self.margin >= 0:
            raise InvalidParameter("margin must be nonnegative")
        if self.tol is not None and not self.tol >= 0:
            raise InvalidParameter("tol must be nonnegative")
        if not 0 < self.margin_error < 1:
            raise InvalidParameter("margin_error must lie in (0, 1)")
        if self.extents is not None and len(self.extents) != self.d:
            raise InvalidParameter("extents must have d entries")
        if self.origin is not None and len(self.origin) != self.d:
            raise InvalidParameter("origin must have d entries")
        object.__setattr__(self, "d", int(self.d))

    @property
    def box(self) -> Box:
        if self.extents is None:
            box = Box.crossing_box(self.N, self.d)
        else:
            box = Box.from_extents(self.extents)
        return box if self.origin is None else box.translate(self.origin)

    @property
    def is_boolean(self) -> bool:
        return self.radius_law is not None

    def radius_tail(self) -> RadiusDistribution:
        """Law (or tail bound) of the distance from a seed point to the farthest occupied point it owns."""
        if self.radius_law is not None:
            return self.radius_law
        if self.t == 0:
            return Deterministic(self.r)
        return SupOfBrownian(self.t, self.r, self.d, self.step)

    @cached_property
    def resolved_tol(self) -> float:
        if self.tol is not None:
            return float(self.tol)
        if self.is_boolean or self.t == 0:
            return 0.0
        return default_tol(self.d, self.r, self.step)

    @cached_property
    def resolved_margin(self) -> float:
        if self.margin is not None:
            return float(self.margin)
        box = self.box
        M = build_margin(box, self.t, self.r, self.radius_tail(), self.margin_error, self.d)
        return float(M - max(box.extents)) + 0.5 * self.resolved_tol

    def resolved(self) -> "ModelConfig":
        return replace(self, margin=self.resolved_margin, tol=self.resolved_tol)

    @property
    def window(self) -> Box:
        return self.box.inflate(self.resolved_margin)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "lambda": self.lam,
            "t": self.t,
            "N": self.N,
            "r": self.r,
            "step": self.step,
            "extents": list(self.box.extents),
            "origin": list(self.box.lo),
            "margin": self.resolved_margin,
            "tol": self.resolved_tol,
            "master_seed": self.master_seed,
            "radius_law": self.radius_law.to_dict() if self.radius_law is not None else None,
            "margin_error": self.margin_error,
        }


@dataclass(frozen=True)
class OccupiedSetSample:
    """Chains as a uniform (m, n, d) position array plus per-chain radii."""

    config: ModelConfig
    positions: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    stream: RngStream | None = None

    @property
    def n_chains(self) -> int:
        return int(self.positions.shape[0])

    @property
    def tol(self) -> float:
        return self.config.resolved_tol

    @cached_property
    def packed(self) -> PackedChains:
        return PackedChains.from_positions(self.positions, self.radii)

    @cached_property
    def chains(self) -> list[CapsuleChain]:
        step = self.config.step
        horizon = self.config.t if self.positions.shape[1] > 1 else 0.0
        return [
            CapsuleChain(Polyline(self.positions[i, 0].copy(), step, horizon, self.positions[i]), float(self.radii[i]), i)
            for i in range(self.n_chains)
        ]

    def bounding_box(self) -> Box | None:
        if self.n_chains == 0:
            return None
        lo = (self.positions.min(axis=1) - self.radii[:, None]).min(axis=0)
        hi = (self.positions.max(axis=1) + self.radii[:, None]).max(axis=0)
        return Box(tuple(lo), tuple(hi))


def build_margin(
    box: Box,
    t: float,
    r: float,
    radius_tail: RadiusDistribution | None,
    delta_err: float = DEFAULT_MARGIN_ERROR,
    d: int | None = None,
) -> int:
    """Smallest integer M with d 4^d sum_{K >= M - L} K^(d-1) tail(K) <= delta_err, L the longest box side.

    Bounded-support tails return ceil(support) + L directly.
    """
    if not 0 < delta_err < 1:
        raise InvalidParameter("delta_err must lie in (0, 1)")
    d = box.d if d is None else int(d)
    if radius_tail is None:
        radius_tail = Deterministic(r) if t == 0 else SupOfBrownian(t, r, d)
    offset = max(box.extents)
    offset_int = math.ceil(offset)
    support = radius_tail.support_bound()
    if support is not None:
        return int(math.ceil(support) + offset_int)

    def bound(M: int) -> float:
        return tail_series(radius_tail, M - offset_int, d)

    lo = offset_int
    if bound(lo) <= delta_err:
        return lo
    step = 1
    hi = lo + step
    while bound(hi) > delta_err:
        lo = hi
        step *= 2
        hi = lo + step
        if step > 1 << 40:
            raise InvalidParameter("no finite margin reaches the requested error")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) <= delta_err:
            hi = mid
        else:
            lo = mid
    return int(hi)


def sample_occupied_set(config: ModelConfig, stream: RngStream) -> OccupiedSetSample:
    """Poisson seeds in the margin-padded box; one Brownian polyline of duration t per seed, radius r."""
    if config.is_boolean:
        return sample_boolean(config.box, config.lam, config.radius_law, stream, config=config)
    window = config.window
    pts = sample_poisson_points(window, config.lam, stream.child("points"))
    pos = brownian_positions(pts.points, config.t, config.step, stream.child("paths"))
    return OccupiedSetSample(config, pos, np.full(len(pts), float(config.r)), stream)


def sample_boolean(
    box: Box,
    lam: float,
    radius_law: RadiusDistribution,
    stream: RngStream,
    config: ModelConfig | None = None,
) -> OccupiedSetSample:
    """Balls with i.i.d. radii at Poisson points of the padded box.

    SupOfBrownian radii are computed from the same ("points", "paths") substreams the
    Brownian builder uses, so the ball contains the matching path pathwise.
    """
    if radius_law is None:
        raise InvalidParameter("a radius distribution is required")
    if config is None:
        t = radius_law.t if isinstance(radius_law, SupOfBrownian) else 0.0
        step = radius_law.step if isinstance(radius_law, SupOfBrownian) else 0.01
        config = ModelConfig(
            d=box.d,
            lam=lam,
            t=t,
            N=box.extents[0],
            step=step,
            extents=box.extents,
            origin=box.lo,
            radius_law=radius_law,
        )
    window = config.window
    pts = sample_poisson_points(window, lam, stream.child("points"))
    if isinstance(radius_law, SupOfBrownian):
        radii, _ = radius_law.sample_with_paths(pts.points, stream.child("paths"))
    else:
        radii = radius_law.sample(len(pts), stream.child("radii"))
    return OccupiedSetSample(config, pts.points[:, None, :].copy(), np.asarray(radii, dtype=float), stream)


# ------------------------------------------------------------------ coarse-grained bond model


@dataclass(frozen=True)
class EdgeField:
    """Sites z in the window {0..shape_k-1}; the site box is the sup-ball of radius R around 2Rz."""

    R: float
    shape: tuple
    counts: np.ndarray = field(repr=False)
    selected: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    edge_axis: np.ndarray = field(repr=False)
    open: np.ndarray = field(repr=False)
    tol: float = 0.0

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def site_index(self, z: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(x) for x in z), self.shape))

    def site_coords(self, idx: int) -> tuple[int, ...]:
        return tuple(int(x) for x in np.unravel_index(idx, self.shape))

    def state(self, x: Sequence[int], y: Sequence[int]) -> bool:
        a, b = sorted((self.site_index(x), self.site_index(y)))
        hit = np.nonzero((self.edges[:, 0] == a) & (self.edges[:, 1] == b))[0]
        if hit.size == 0:
            raise InvalidParameter(f"{x} and {y} are not nearest neighbours inside the window")
        return bool(self.open[hit[0]])


@njit(cache=True)
def _paths_touch(A1, B1, A2, B2, limit):
    for i in range(A1.shape[0]):
        for j in range(A2.shape[0]):
            near = True
            for k in range(A1.shape[1]):
                if min(A1[i, k], B1[i, k]) - limit > max(A2[j, k], B2[j, k]):
                    near = False
                    break
                if min(A2[j, k], B2[j, k]) - limit > max(A1[i, k], B1[i, k]):
                    near = False
                    break
            if not near:
                continue
            _, _, g2 = K.closest_params(A1[i], B1[i], A2[j], B2[j])
            if np.sqrt(g2) <= limit:
                return True
    return False


def polylines_touch(p1: np.ndarray, p2: np.ndarray, limit: float) -> bool:
    """True iff two polylines (position arrays) come within `limit` of each other."""
    a1 = np.ascontiguousarray(p1[:-1] if len(p1) > 1 else p1)
    b1 = np.ascontiguousarray(p1[1:] if len(p1) > 1 else p1)
    a2 = np.ascontiguousarray(p2[:-1] if len(p2) > 1 else p2)
    b2 = np.ascontiguousarray(p2[1:] if len(p2) > 1 else p2)
    return bool(_paths_touch(a1, b1, a2, b2, float(limit)))


def select_center_point(points: np.ndarray, center: np.ndarray) -> int:
    """Index of the point closest to center; ties broken by lexicographic coordinate order."""
    dist2 = ((points - center) ** 2).sum(axis=1)
    best = np.nonzero(dist2 == dist2.min())[0]
    if best.size == 1:
        return int(best[0])
    order = np.lexsort(points[best].T[::-1])
    return int(best[order[0]])


def coarse_grain_edges(
    R: float,
    t: float,
    lam: float,
    d: int,
    shape: Sequence[int],
    step: float,
    tol: float,
    stream: RngStream,
    forced_points: dict | None = None,
) -> EdgeField:
    """Bond model: edge (x, y) open iff both site boxes hold a Poisson point and the paths of
    the points nearest the two box centres come within tol of each other by time t.

    `forced_points` maps a site tuple to an explicit (k, d) point array replacing its Poisson cloud.
    """
    if not R > 0:
        raise InvalidParameter("R must be positive")
    shape = tuple(int(s) for s in shape)
    if len(shape) != d or any(s < 1 for s in shape):
        raise InvalidParameter("lattice window must be non-empty with d axes")
    if not (lam >= 0 and t >= 0 and tol >= 0):
        raise InvalidParameter("lam, t, tol must be nonnegative")
    forced = {tuple(int(x) for x in k): np.atleast_2d(np.asarray(v, dtype=float)) for k, v in (forced_points or {}).items()}
    n_sites = int(np.prod(shape))
    counts = np.zeros(n_sites, dtype=np.int64)
    selected = np.full((n_sites, d), np.nan)
    paths: list = [None] * n_sites
    for idx in range(n_sites):
        z = np.array(np.unravel_index(idx, shape), dtype=float)
        center = 2.0 * R * z
        site_stream = stream.child("site", idx)
        if tuple(int(x) for x in z) in forced:
            pts = forced[tuple(int(x) for x in z)]
        else:
            pts = sample_poisson_points(Box.cube(R, d, center), lam, site_stream.child("points")).points
        counts[idx] = len(pts)
        if len(pts):
            sel = pts[select_center_point(pts, center)]
            selected[idx] = sel
            paths[idx] = brownian_positions(sel[None, :], t, step, site_stream.child("path"))[0]
    edges, axes, states = [], [], []
    for idx in range(n_sites):
        z = np.unravel_index(idx, shape)
        for k in range(d):
            if z[k] + 1 >= shape[k]:
                continue
            y = list(z)
            y[k] += 1
            jdx = int(np.ravel_multi_index(tuple(y), shape))
            is_open = counts[idx] >= 1 and counts[jdx] >= 1 and polylines_touch(paths[idx], paths[jdx], tol)
            edges.append((idx, jdx))
            axes.append(k)
            states.append(is_open)
    return EdgeField(
        float(R),
        shape,
        counts.reshape(shape),
        selected.reshape(shape + (d,)),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        np.array(axes, dtype=np.int64),
        np.array(states, dtype=bool),
        float(tol),
    )


# ------------------------------------------------------------------ slab projection


@dataclass(frozen=True)
class SlabProjection:
    points: PointSet
    proposed: np.ndarray
    kept: np.ndarray
    slab_of_point: np.ndarray = field(repr=False)


def _first_passage_times(heights: np.ndarray, t: float, method: str, step: float, gen: np.random.Generator) -> np.ndarray:
    """Hitting time of 0 for 1-d motions from the given heights (inf when not hit by t)."""
    if method == "exact":
        # first passage to distance z has the law z^2 / Z^2
        Z = gen.standard_normal(heights.size)
        with np.errstate(divide="ignore"):
            tau = heights**2 / Z**2
        tau[tau > t] = np.inf
        return tau
    if method == "euler":
        from .stochastic import step_sizes

        dts = step_sizes(t, step)
        times = np.cumsum(dts)
        tau = np.full(heights.size, np.inf)
        if heights.size == 0 or dts.size == 0:
            return tau
        incr = gen.standard_normal((heights.size, dts.size)) * np.sqrt(dts)[None, :]
        paths = heights[:, None] + np.cumsum(incr, axis=1)
        hit = paths <= 0
        any_hit = hit.any(axis=1)
        first = hit.argmax(axis=1)
        tau[any_hit] = times[first[any_hit]]
        return tau
    raise InvalidParameter(f"unknown hitting method {method!r}")


def slab_projection_details(
    lam: float,
    t: float,
    d: int,
    window: Box,
    K_max: int | None,
    stream: RngStream,
    method: str = "exact",
    step: float = 0.01,
) -> SlabProjection:
    """Thin each unit slab's seeds by whether their 1-d height process hits 0 by t, then shift
    survivors by an independent (d-1)-dimensional Brownian displacement at the hitting time."""
    if d < 2:
        raise InvalidParameter("slab projection needs d >= 2")
    if window.d != d - 1:
        raise InvalidParameter("hyperplane window must have d - 1 axes")
    if not (lam >= 0 and t >= 0):
        raise InvalidParameter("lam and t must be nonnegative")
    K_max = default_slab_count(t) if K_max is None else int(K_max)
    if K_max < 1:
        raise InvalidParameter("K_max must be >= 1")
    # displacements are Gaussian with variance <= t: a padding of 8 sqrt(t) loses < 1e-14 per point
    source = window.inflate(8.0 * math.sqrt(t))
    out, slab_of, proposed, kept = [], [], np.zeros(K_max, dtype=np.int64), np.zeros(K_max, dtype=np.int64)
    for k in range(1, K_max + 1):
        s = stream.child("slab", k)
        base = sample_poisson_points(source, lam, s.child("points")) if lam > 0 else None
        n = 0 if base is None else len(base)
        proposed[k - 1] = n
        if n == 0:
            continue
        gen = s.child("hit").generator()
        heights = (k - 1) + gen.random(n)
        tau = _first_passage_times(heights, t, method, step, gen)
        keep = np.isfinite(tau)
        kept[k - 1] = int(keep.sum())
        if not keep.any():
            continue
        shift = s.child("shift").generator().standard_normal((int(keep.sum()), d - 1)) * np.sqrt(tau[keep])[:, None]
        moved = base.points[keep] + shift
        inside = window.contains(moved)
        out.append(moved[inside])
        slab_of.append(np.full(int(inside.sum()), k, dtype=np.int64))
    pts = np.concatenate(out) if out else np.zeros((0, d - 1))
    slabs = np.concatenate(slab_of) if slab_of else np.zeros(0, dtype=np.int64)
    return SlabProjection(PointSet(window, float(lam), pts), proposed, kept, slabs)


def slab_projection_sample(
    lam: float,
    t: float,
    d: int,
    window: Box,
    K_max: int | None,
    stream: RngStream,
    method: str = "exact",
    step: float = 0.01,
) -> PointSet:
    return slab_projection_details(lam, t, d, window, K_max, stream, method, step).points
