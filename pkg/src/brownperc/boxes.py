"""Closed axis-aligned boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if len(lo) != len(hi) or not lo:
            raise InvalidParameter("box corners must have equal, positive length")
        if any(not (np.isfinite(a) and np.isfinite(b)) for a, b in zip(lo, hi)):
            raise InvalidParameter("box corners must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise InvalidParameter(f"box has lo > hi: {lo} vs {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_extents(cls, extents, origin=None) -> "Box":
        extents = tuple(float(x) for x in extents)
        origin = (0.0,) * len(extents) if origin is None else tuple(float(x) for x in origin)
        return cls(origin, tuple(o + e for o, e in zip(origin, extents)))

    @classmethod
    def crossing_box(cls, N: float, d: int) -> "Box":
        """The standard [0,N] x [0,3N]^(d-1) crossing box."""
        return cls.from_extents((N,) + (3 * N,) * (d - 1))

    @classmethod
    def cube(cls, half_width: float, d: int, center=None) -> "Box":
        center = (0.0,) * d if center is None else tuple(center)
        return cls(tuple(c - half_width for c in center), tuple(c + half_width for c in center))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def extents(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def is_degenerate(self) -> bool:
        return any(e <= 0 for e in self.extents)

    def inflate(self, margin: float) -> "Box":
        return Box(tuple(a - margin for a in self.lo), tuple(b + margin for b in self.hi))

    def translate(self, shift) -> "Box":
        return Box(tuple(a + s for a, s in zip(self.lo, shift)), tuple(b + s for b, s in zip(self.hi, shift)))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=1)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}
