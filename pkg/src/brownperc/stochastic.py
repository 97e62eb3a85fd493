"""Seeded sampling of Poisson clouds, Brownian paths and bridges, plus closed-form helpers."""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .boxes import Box
from .errors import InvalidParameter, NumericFailure

RNG_ALGORITHM = "numpy-Philox4x64-10/key=blake2b-128(label-path)/v1"
QUAD_EPSABS = 1e-8
QUAD_LIMIT = 10**6
_UINT64 = 1 << 64


@dataclass(frozen=True)
class RngStream:
    """An addressable substream: the key is a hash of (master_seed, label path)."""

    master_seed: int
    labels: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if not isinstance(self.master_seed, (int, np.integer)) or not 0 <= int(self.master_seed) < _UINT64:
            raise InvalidParameter("master_seed must be an integer in [0, 2^64)")
        labels = tuple((str(name), int(idx)) for name, idx in self.labels)
        if not labels:
            raise InvalidParameter("empty label path")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "labels", labels)

    @property
    def key(self) -> int:
        h = hashlib.blake2b(digest_size=16, person=b"brownperc-rng")
        h.update(struct.pack("<Q", self.master_seed))
        for name, idx in self.labels:
            raw = name.encode("utf-8")
            h.update(struct.pack("<I", len(raw)))
            h.update(raw)
            h.update(struct.pack("<q", idx))
        return int.from_bytes(h.digest(), "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key))

    def child(self, name: str, index: int = 0) -> "RngStream":
        return RngStream(self.master_seed, self.labels + ((name, index),))

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "labels": [list(x) for x in self.labels]}


def derive_stream(master_seed: int, labels: Sequence[tuple[str, int]]) -> RngStream:
    return RngStream(master_seed, tuple(labels))


@dataclass(frozen=True)
class PointSet:
    window: Box
    intensity: float
    points: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.window.d

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class Polyline:
    start: np.ndarray
    step: float
    horizon: float
    positions: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return int(self.positions.shape[1])

    def __len__(self) -> int:
        return int(self.positions.shape[0])


def step_count(horizon: float, step: float) -> int:
    """Number of increments: ceil(horizon/step), robust to representation noise in the ratio."""
    if horizon <= 0:
        return 0
    return max(1, math.ceil(round(horizon / step, 9)))


def step_sizes(horizon: float, step: float) -> np.ndarray:
    n = step_count(horizon, step)
    dts = np.full(n, float(step))
    if n and round(horizon / step, 9) != n:
        dts[-1] = max(horizon - (n - 1) * step, 0.0)
    return dts


def _check_step(step: float) -> None:
    if not step > 0:
        raise InvalidParameter(f"step must be positive, got {step}")


def sample_poisson_points(window: Box, intensity: float, stream: RngStream) -> PointSet:
    if not intensity >= 0:
        raise InvalidParameter(f"intensity must be nonnegative, got {intensity}")
    if window.is_degenerate():
        raise InvalidParameter("window must have positive volume")
    gen = stream.generator()
    count = int(gen.poisson(intensity * window.volume)) if intensity > 0 else 0
    lo, hi = window.as_arrays()
    pts = lo + (hi - lo) * gen.random((count, window.d))
    return PointSet(window, float(intensity), pts)


def brownian_positions(starts: np.ndarray, horizon: float, step: float, stream: RngStream) -> np.ndarray:
    """Batch of discretized paths, shape (m, 1 + steps, d); row i starts at starts[i]."""
    _check_step(step)
    if not horizon >= 0:
        raise InvalidParameter(f"time horizon must be nonnegative, got {horizon}")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    m, d = starts.shape
    dts = step_sizes(horizon, step)
    out = np.empty((m, dts.size + 1, d))
    out[:, 0, :] = starts
    if dts.size and m:
        # step-major draws: a longer horizon extends every path without changing its prefix
        incr = stream.generator().standard_normal((dts.size, m, d))
        incr *= np.sqrt(dts)[:, None, None]
        np.cumsum(incr, axis=0, out=incr)
        out[:, 1:, :] = starts[:, None, :] + incr.transpose(1, 0, 2)
    return out


def sample_brownian_path(start, t: float, step: float, stream: RngStream) -> Polyline:
    start = np.atleast_1d(np.asarray(start, dtype=float))
    pos = brownian_positions(start[None, :], t, step, stream)[0]
    return Polyline(start.copy(), float(step), float(t), pos)


def sample_brownian_bridge(a, a_bar, duration: float, step: float, stream: RngStream) -> Polyline:
    """Bridge from a to a_bar over [0, duration]: W_s = B_s - (s/duration)(B_duration - a_bar)."""
    if not duration > 0:
        raise InvalidParameter(f"bridge duration must be positive, got {duration}")
    _check_step(step)
    if step > duration:
        raise InvalidParameter("step must not exceed the bridge duration")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    a_bar = np.atleast_1d(np.asarray(a_bar, dtype=float))
    if a.shape != a_bar.shape:
        raise InvalidParameter("bridge endpoints must have the same dimension")
    free = brownian_positions(a[None, :], duration, step, stream)[0]
    times = np.concatenate([[0.0], np.cumsum(step_sizes(duration, step))])
    times[-1] = duration
    pos = free - (times / duration)[:, None] * (free[-1] - a_bar)[None, :]
    pos[-1] = a_bar
    return Polyline(a.copy(), float(step), float(duration), pos)


def hitting_probability_halfline(z: float, t: float) -> float:
    """P^z(the 1-d motion started at z reaches 0 by time t) = 2(1 - Phi(z/sqrt(t)))."""
    if not (z >= 0 and t >= 0):
        raise InvalidParameter("z and t must be nonnegative")
    if t == 0:
        return 1.0 if z == 0 else 0.0
    return float(math.erfc(z / math.sqrt(2.0 * t)))


def slab_hit_probabilities(t: float, K_max: int) -> np.ndarray:
    """p^k_t for k = 1..K_max: mean hitting probability over heights in (k-1, k)."""
    if not t > 0:
        raise InvalidParameter(f"t must be positive, got {t}")
    if int(K_max) != K_max or K_max < 1:
        raise InvalidParameter(f"K_max must be a positive integer, got {K_max}")
    scale = math.sqrt(2.0 * t)
    out = np.empty(int(K_max))
    for k in range(1, int(K_max) + 1):
        val, err, info = _quad(lambda z: math.erfc(z / scale), k - 1.0, float(k))
        out[k - 1] = val
    return out


def slab_intensity_sum(t: float, K_max: int) -> tuple[float, float]:
    """(sum of p^k_t over k <= K_max, the lower bound sqrt(2t/pi) - 1)."""
    probs = slab_hit_probabilities(t, K_max)
    return float(probs.sum()), math.sqrt(2.0 * t / math.pi) - 1.0


def default_slab_count(t: float) -> int:
    return math.ceil(10.0 * math.sqrt(t)) + 10


def sup_radius(path: Polyline) -> float:
    pos = np.asarray(path.positions, dtype=float)
    if pos.size == 0:
        raise InvalidParameter("path must be non-empty")
    return float(np.sqrt(((pos - pos[0]) ** 2).sum(axis=1)).max())


def _quad(fn, a: float, b: float):
    val, err, info = integrate.quad(fn, a, b, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT, full_output=1)[:3]
    if not np.isfinite(val) or err > max(QUAD_EPSABS * 10, 1e-6 * abs(val)):
        raise NumericFailure(f"quadrature did not converge on [{a}, {b}] (err={err:g})")
    return val, err, info


def radius_moment_bound(t: float, d: int, eps: float) -> float:
    """eps^d + 4d sqrt(td/2pi) * int_{eps^d}^inf y^(-1/d) exp(-y^(2/d)/(2td)) dy."""
    if not (t > 0 and eps > 0) or int(d) != d or d < 1:
        raise InvalidParameter("need t > 0, eps > 0 and integer d >= 1")
    d = int(d)
    lower = eps**d

    def integrand(y: float) -> float:
        return y ** (-1.0 / d) * math.exp(-(y ** (2.0 / d)) / (2.0 * t * d))

    # the integrand lives on the scale (2td)^(d/2); split there so quad sees the bulk
    knee = lower + 60.0 * (2.0 * t * d) ** (d / 2.0)
    v1, _, _ = _quad(integrand, lower, knee)
    v2, _, _ = _quad(integrand, knee, math.inf)
    return lower + 4.0 * d * math.sqrt(t * d / (2.0 * math.pi)) * (v1 + v2)


def gouere_safe_intensity(moment: float, C_const: float) -> float:
    """Intensity below which the Boolean model is subcritical, given the dimension constant C."""
    if not (moment > 0 and C_const > 0):
        raise InvalidParameter("moment and C_const must be positive")
    return float(C_const) / float(moment)


# ---------------------------------------------------------------- radius laws


class RadiusDistribution:
    """Law of the ball radius in a Boolean model. tail(L) bounds P(radius >= L)."""

    kind: str = "abstract"

    def tail(self, L: float) -> float:
        raise NotImplementedError

    def tail_array(self, L: np.ndarray) -> np.ndarray:
        return np.array([self.tail(float(x)) for x in np.asarray(L, dtype=float)])

    def support_bound(self) -> float | None:
        return None

    def sample(self, n: int, stream: RngStream) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Deterministic(RadiusDistribution):
    r: float
    kind = "deterministic"

    def __post_init__(self) -> None:
        if not self.r >= 0:
            raise InvalidParameter("deterministic radius must be nonnegative")

    def tail(self, L: float) -> float:
        return 1.0 if L <= self.r else 0.0

    def tail_array(self, L):
        return (np.asarray(L, dtype=float) <= self.r).astype(float)

    def support_bound(self) -> float:
        return float(self.r)

    def sample(self, n: int, stream: RngStream) -> np.ndarray:
        return np.full(n, float(self.r))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "r": self.r}


@dataclass(frozen=True)
class Empirical(RadiusDistribution):
    samples: tuple[float, ...]
    kind = "empirical"

    def __post_init__(self) -> None:
        vals = tuple(float(x) for x in self.samples)
        if not vals or any(not (x >= 0 and math.isfinite(x)) for x in vals):
            raise InvalidParameter("empirical samples must be a non-empty list of finite nonnegative values")
        object.__setattr__(self, "samples", vals)

    def tail(self, L: float) -> float:
        return float(np.mean(np.asarray(self.samples) >= L))

    def tail_array(self, L):
        s = np.sort(np.asarray(self.samples))
        return 1.0 - np.searchsorted(s, np.asarray(L, dtype=float), side="left") / s.size

    def support_bound(self) -> float:
        return max(self.samples)

    def sample(self, n: int, stream: RngStream) -> np.ndarray:
        vals = np.asarray(self.samples)
        return vals[stream.generator().integers(0, vals.size, size=n)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "samples": list(self.samples)}


@dataclass(frozen=True)
class ExponentialTail(RadiusDistribution):
    """Radius max(R0, Exp(rate C)): P(radius >= L) = exp(-C L) for L > R0."""

    C: float
    R0: float
    kind = "exponential_tail"

    def __post_init__(self) -> None:
        if not (self.C > 0 and self.R0 > 0):
            raise InvalidParameter("ExponentialTail needs C > 0 and R0 > 0")

    def tail(self, L: float) -> float:
        return 1.0 if L <= self.R0 else math.exp(-self.C * L)

    def tail_array(self, L):
        L = np.asarray(L, dtype=float)
        return np.where(L <= self.R0, 1.0, np.exp(-self.C * L))

    def sample(self, n: int, stream: RngStream) -> np.ndarray:
        return np.maximum(self.R0, stream.generator().exponential(1.0 / self.C, size=n))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "C": self.C, "R0": self.R0}


@dataclass(frozen=True)
class SupOfBrownian(RadiusDistribution):
    """Radius sup_{s<=t} |B_s - B_0| + r_offset of a d-dimensional motion (discretized at `step`).

    The tail is the per-coordinate reflection bound min(1, 4d(1 - Phi((L - r)/sqrt(d t)))).
    """

    t: float
    r_offset: float
    d: int
    step: float = 0.01
    kind = "sup_of_brownian"

    def __post_init__(self) -> None:
        if not (self.t > 0 and self.r_offset >= 0 and self.step > 0) or int(self.d) != self.d or self.d < 1:
            raise InvalidParameter("SupOfBrownian needs t > 0, r_offset >= 0, step > 0, integer d >= 1")

    def tail(self, L: float) -> float:
        x = L - self.r_offset
        if x <= 0:
            return 1.0
        return min(1.0, 2.0 * self.d * math.erfc(x / math.sqrt(2.0 * self.d * self.t)))

    def tail_array(self, L):
        x = np.asarray(L, dtype=float) - self.r_offset
        val = 2.0 * self.d * special.erfc(np.maximum(x, 0.0) / math.sqrt(2.0 * self.d * self.t))
        return np.where(x <= 0, 1.0, np.minimum(1.0, val))

    def sample(self, n: int, stream: RngStream) -> np.ndarray:
        return self.sample_with_paths(np.zeros((n, self.d)), stream)[0]

    def sample_with_paths(self, centers: np.ndarray, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
        pos = brownian_positions(centers, self.t, self.step, stream)
        radii = np.sqrt(((pos - pos[:, :1, :]) ** 2).sum(axis=2)).max(axis=1) + self.r_offset
        return radii, pos

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t": self.t, "r_offset": self.r_offset, "d": self.d, "step": self.step}


def radius_distribution_from_dict(data: dict) -> RadiusDistribution:
    data = dict(data)
    kind = data.pop("kind", None)
    try:
        if kind == "deterministic":
            return Deterministic(**data)
        if kind == "empirical":
            return Empirical(tuple(data.pop("samples")), **data)
        if kind == "exponential_tail":
            return ExponentialTail(**data)
        if kind == "sup_of_brownian":
            return SupOfBrownian(**data)
    except TypeError as exc:
        raise InvalidParameter(f"bad radius distribution fields: {exc}") from None
    raise InvalidParameter(f"unknown radius distribution kind {kind!r}")
