"""Capsule chains, the uniform-grid index, clustering and crossing detection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..boxes import Box
from ..errors import InvalidParameter
from ..stochastic import Polyline
from . import _kernels as K

FACE_LOW = 1
FACE_HIGH = 2
# broad phase runs over runs of this many consecutive segments
CHUNK_LEN = 8


@dataclass(frozen=True)
class CapsuleChain:
    """A polyline thickened by `radius`; a single-position chain is the ball B(x, radius)."""

    path: Polyline
    radius: float
    id: int = 0

    def __post_init__(self) -> None:
        if not self.radius >= 0:
            raise InvalidParameter("capsule radius must be nonnegative")

    @classmethod
    def ball(cls, center, radius: float, id: int = 0) -> "CapsuleChain":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(Polyline(c.copy(), 1.0, 0.0, c[None, :].copy()), float(radius), id)

    @classmethod
    def from_points(cls, points, radius: float, id: int = 0, step: float = 1.0) -> "CapsuleChain":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(Polyline(pts[0].copy(), step, step * (len(pts) - 1), pts), float(radius), id)

    @property
    def positions(self) -> np.ndarray:
        return self.path.positions

    @property
    def d(self) -> int:
        return int(self.path.positions.shape[1])


@dataclass(frozen=True)
class PackedChains:
    """Flat segment arrays for a chain collection: piece i runs A[i] -> B[i] on chain chain[i]."""

    A: np.ndarray
    B: np.ndarray
    radius: np.ndarray
    chain: np.ndarray
    segment: np.ndarray
    n_chains: int
    d: int

    @property
    def n_pieces(self) -> int:
        return int(self.A.shape[0])

    @classmethod
    def empty(cls, d: int) -> "PackedChains":
        z = np.zeros((0, d))
        zi = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0), zi, zi.copy(), 0, d)

    @classmethod
    def from_positions(cls, positions: np.ndarray, radii) -> "PackedChains":
        """Uniform-length chains from an (m, n, d) array of positions."""
        m, n, d = positions.shape
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (m,))
        if n == 1:
            A = positions[:, 0, :].copy()
            B = A.copy()
            seg = np.zeros(m, dtype=np.int64)
            per = 1
        else:
            A = positions[:, :-1, :].reshape(-1, d)
            B = positions[:, 1:, :].reshape(-1, d)
            per = n - 1
            seg = np.tile(np.arange(per, dtype=np.int64), m)
        chain = np.repeat(np.arange(m, dtype=np.int64), per)
        return cls(
            np.ascontiguousarray(A), np.ascontiguousarray(B), np.repeat(radii, per).astype(float), chain, seg, m, d
        )

    @classmethod
    def from_chains(cls, chains: Sequence[CapsuleChain], d: int | None = None) -> "PackedChains":
        if not chains:
            return cls.empty(d if d is not None else 1)
        d = chains[0].d
        As, Bs, rs, cs, ss = [], [], [], [], []
        for idx, ch in enumerate(chains):
            pos = np.asarray(ch.positions, dtype=float)
            if pos.shape[1] != d:
                raise InvalidParameter("all chains must share one dimension")
            if len(pos) == 1:
                a, b = pos, pos
            else:
                a, b = pos[:-1], pos[1:]
            As.append(a)
            Bs.append(b)
            rs.append(np.full(len(a), float(ch.radius)))
            cs.append(np.full(len(a), idx, dtype=np.int64))
            ss.append(np.arange(len(a), dtype=np.int64))
        return cls(
            np.ascontiguousarray(np.concatenate(As)),
            np.ascontiguousarray(np.concatenate(Bs)),
            np.concatenate(rs),
            np.concatenate(cs),
            np.concatenate(ss),
            len(chains),
            d,
        )

    def subset(self, mask: np.ndarray) -> "PackedChains":
        return PackedChains(
            self.A[mask], self.B[mask], self.radius[mask], self.chain[mask], self.segment[mask], self.n_chains, self.d
        )


def default_tol(d: int, r: float, step: float) -> float:
    """Contact tolerance standing in for path continuity lost to discretization."""
    if r == 0 and d in (2, 3):
        return 3.0 * math.sqrt(step)
    return 0.0


def segment_distance(s1, s2) -> float:
    """Minimum Euclidean distance between closed segments s1 = (p1, q1) and s2 = (p2, q2)."""
    p1, q1 = (np.atleast_1d(np.asarray(x, dtype=float)) for x in s1)
    p2, q2 = (np.atleast_1d(np.asarray(x, dtype=float)) for x in s2)
    return float(K.segment_distance_kernel(p1, q1, p2, q2))


def _as_packed(chains) -> PackedChains:
    if isinstance(chains, PackedChains):
        return chains
    return PackedChains.from_chains(list(chains))


def chains_touch(c1: CapsuleChain, c2: CapsuleChain, tol: float = 0.0) -> bool:
    """Closed contact test: min segment gap <= radius1 + radius2 + tol."""
    if not tol >= 0:
        raise InvalidParameter("tol must be nonnegative")
    p = PackedChains.from_chains([c1, c2])
    first = p.chain == 0
    limit = c1.radius + c2.radius + tol
    A1, B1 = p.A[first], p.B[first]
    A2, B2 = p.A[~first], p.B[~first]
    for i in range(len(A1)):
        for j in range(len(A2)):
            if K.segment_distance_kernel(A1[i], B1[i], A2[j], B2[j]) <= limit:
                return True
    return False


def choose_cell_size(packed: PackedChains, tol: float) -> float:
    """Median inflated segment diagonal clamped to [r_max, 4 r_max] (r_max includes tol/2)."""
    if packed.n_pieces == 0:
        return 1.0
    rho = packed.radius + 0.5 * tol
    ext = np.abs(packed.B - packed.A) + 2.0 * rho[:, None]
    diag = float(np.median(np.sqrt((ext**2).sum(axis=1))))
    r_max = float(rho.max())
    if r_max > 0:
        return min(max(diag, r_max), 4.0 * r_max)
    return diag if diag > 0 else 1.0


def _unbounded_region(d: int) -> tuple[np.ndarray, np.ndarray]:
    return np.full((1, d), -np.inf), np.full((1, d), np.inf)


@dataclass
class SpatialIndex:
    """Uniform grid over inflated segment boxes. Entries are (chain id, segment index) per cell."""

    cell_size: float
    tol: float
    packed: PackedChains = field(repr=False)
    cell_lo: np.ndarray = field(repr=False)
    cell_hi: np.ndarray = field(repr=False)
    _grid: dict | None = field(default=None, repr=False)

    @property
    def grid(self) -> dict[tuple[int, ...], list[tuple[int, int]]]:
        if self._grid is None:
            grid: dict[tuple[int, ...], list[tuple[int, int]]] = {}
            p = self.packed
            for i in range(p.n_pieces):
                ranges = [range(int(a), int(b) + 1) for a, b in zip(self.cell_lo[i], self.cell_hi[i])]
                for cell in np.ndindex(*[len(r) for r in ranges]):
                    key = tuple(r[c] for r, c in zip(ranges, cell))
                    grid.setdefault(key, []).append((int(p.chain[i]), int(p.segment[i])))
            self._grid = grid
        return self._grid

    def query(self, lo, hi) -> set[int]:
        """Chain positions whose registered segments share a cell with the closed box [lo, hi]."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if self.packed.n_pieces == 0:
            return set()
        qlo = np.floor(lo / self.cell_size).astype(np.int64)
        qhi = np.floor(hi / self.cell_size).astype(np.int64)
        hit = np.all((self.cell_lo <= qhi) & (self.cell_hi >= qlo), axis=1)
        return set(int(c) for c in np.unique(self.packed.chain[hit]))

    def candidate_pairs(self) -> set[tuple[int, int]]:
        """Distinct chain pairs sharing at least one cell."""
        p = self.packed
        if p.n_pieces == 0:
            return set()
        rho = p.radius + 0.5 * self.tol
        ii, jj = K.candidate_pairs(p.A, p.B, rho, self.cell_size)
        ci = p.chain[ii]
        cj = p.chain[jj]
        keep = ci != cj
        return set(zip(np.minimum(ci, cj)[keep].tolist(), np.maximum(ci, cj)[keep].tolist()))


def build_index(chains, tol: float = 0.0, cell_size: float | None = None) -> SpatialIndex:
    """Register each segment's box inflated by radius + tol/2 in every closed cell it overlaps."""
    if not tol >= 0:
        raise InvalidParameter("tol must be nonnegative")
    packed = _as_packed(chains)
    cell = float(cell_size) if cell_size is not None else choose_cell_size(packed, tol)
    if not cell > 0:
        raise InvalidParameter("cell size must be positive")
    d = packed.d
    rho = packed.radius + 0.5 * tol
    if packed.n_pieces:
        lo = np.minimum(packed.A, packed.B) - rho[:, None]
        hi = np.maximum(packed.A, packed.B) + rho[:, None]
        clo = np.floor(lo / cell).astype(np.int64)
        chi = np.floor(hi / cell).astype(np.int64)
    else:
        clo = np.zeros((0, d), dtype=np.int64)
        chi = clo.copy()
    return SpatialIndex(cell, float(tol), packed, clo, chi)


@dataclass(frozen=True)
class ClusterLabeling:
    """Partition of chains into clusters; cluster_id[i] is the smallest chain position in i's cluster."""

    parent: np.ndarray
    cluster_id: np.ndarray
    bbox_lo: dict
    bbox_hi: dict
    tol: float

    @property
    def n_clusters(self) -> int:
        return len(self.bbox_lo)

    def clusters(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for i, c in enumerate(self.cluster_id.tolist()):
            groups.setdefault(c, []).append(i)
        return [groups[k] for k in sorted(groups)]


def _label_packed(packed: PackedChains, tol: float, cell: float) -> ClusterLabeling:
    n = packed.n_chains
    parent = np.arange(n, dtype=np.int64)
    if packed.n_pieces:
        rho = packed.radius + 0.5 * tol
        region = np.zeros(packed.n_pieces, dtype=np.int64)
        blo, bhi = _unbounded_region(packed.d)
        K.union_touching_chunked(
            packed.A, packed.B, rho, packed.chain, packed.chain, region, blo, bhi, cell, parent, True, CHUNK_LEN
        )
    roots = np.array([K.uf_find(parent, i) for i in range(n)], dtype=np.int64)
    parent[:] = roots
    bbox_lo: dict = {}
    bbox_hi: dict = {}
    if packed.n_pieces:
        rho = packed.radius + 0.5 * tol
        lo = np.minimum(packed.A, packed.B) - rho[:, None]
        hi = np.maximum(packed.A, packed.B) + rho[:, None]
        piece_root = roots[packed.chain]
        for root in np.unique(roots):
            sel = piece_root == root
            bbox_lo[int(root)] = lo[sel].min(axis=0)
            bbox_hi[int(root)] = hi[sel].max(axis=0)
    return ClusterLabeling(parent, roots, bbox_lo, bbox_hi, float(tol))


def cluster(chains, index: SpatialIndex | None = None, tol: float = 0.0) -> ClusterLabeling:
    """Connected components of the touch graph (pairs at gap <= r1 + r2 + tol)."""
    if not tol >= 0:
        raise InvalidParameter("tol must be nonnegative")
    packed = _as_packed(chains)
    if index is None or index.tol < tol:
        # an index inflated for a smaller tol cannot guarantee completeness
        index = build_index(packed, tol)
    return _label_packed(packed, tol, index.cell_size)


def _faces(box: Box) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = box.as_arrays()
    f_lo = np.vstack([lo, lo])
    f_hi = np.vstack([hi, hi])
    f_hi[0, 0] = lo[0]
    f_lo[1, 0] = hi[0]
    return f_lo, f_hi


def _region_components(
    packed: PackedChains,
    tol: float,
    regions_lo: np.ndarray,
    regions_hi: np.ndarray,
    faces_lo: np.ndarray,
    faces_hi: np.ndarray,
    face_region: np.ndarray,
    face_bit: np.ndarray,
    cell_size: float | None = None,
) -> np.ndarray:
    """Per-component OR of face bits for the occupied set restricted to a union of closed boxes."""
    d = packed.d
    rho_all = packed.radius + 0.5 * tol
    lo_all = np.minimum(packed.A, packed.B) - rho_all[:, None]
    hi_all = np.maximum(packed.A, packed.B) + rho_all[:, None]
    sel_idx = []
    sel_reg = []
    for r in range(regions_lo.shape[0]):
        hit = np.all((lo_all <= regions_hi[r]) & (hi_all >= regions_lo[r]), axis=1)
        idx = np.nonzero(hit)[0]
        sel_idx.append(idx)
        sel_reg.append(np.full(idx.size, r, dtype=np.int64))
    idx = np.concatenate(sel_idx) if sel_idx else np.zeros(0, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(0, dtype=np.int64)
    region = np.concatenate(sel_reg)
    A = np.ascontiguousarray(packed.A[idx])
    B = np.ascontiguousarray(packed.B[idx])
    rho = rho_all[idx]
    chain = packed.chain[idx]
    n = idx.size
    node = np.arange(n, dtype=np.int64)
    parent = node.copy()
    K.chain_prelink(node, region, A, B, chain, regions_lo, regions_hi, parent)
    cell = cell_size if cell_size is not None else choose_cell_size(packed.subset(idx), tol)
    K.union_touching_chunked(A, B, rho, node, chain, region, regions_lo, regions_hi, cell, parent, False, CHUNK_LEN)
    return K.face_flags(A, B, rho, region, faces_lo, faces_hi, face_region, face_bit, parent, node, n)


def crossing_indicator(packed: PackedChains, box: Box, tol: float, cell_size: float | None = None) -> bool:
    """True iff one component of (occupied set ∩ box) meets both faces orthogonal to axis 1."""
    if box.is_degenerate():
        raise InvalidParameter("crossing box must be nondegenerate")
    if packed.n_pieces == 0:
        return False
    blo, bhi = box.as_arrays()
    f_lo, f_hi = _faces(box)
    flags = _region_components(
        packed,
        tol,
        blo[None, :],
        bhi[None, :],
        f_lo,
        f_hi,
        np.zeros(2, dtype=np.int64),
        np.array([FACE_LOW, FACE_HIGH], dtype=np.int64),
        cell_size,
    )
    return bool(np.any(flags == (FACE_LOW | FACE_HIGH)))


def crossing(labeling: ClusterLabeling, chains, box: Box) -> bool:
    """CROSS test counting only capsule material inside the closed box.

    The global labeling prunes clusters that cannot reach both faces; survivors are
    re-clustered with material clipped to the box.
    """
    if box.is_degenerate():
        raise InvalidParameter("crossing box must be nondegenerate")
    packed = _as_packed(chains)
    if packed.n_pieces == 0:
        return False
    blo, bhi = box.as_arrays()
    keep_roots = [
        root
        for root in labeling.bbox_lo
        if labeling.bbox_lo[root][0] <= blo[0]
        and labeling.bbox_hi[root][0] >= bhi[0]
        and np.all(labeling.bbox_lo[root] <= bhi)
        and np.all(labeling.bbox_hi[root] >= blo)
    ]
    if not keep_roots:
        return False
    mask = np.isin(labeling.cluster_id[packed.chain], np.asarray(keep_roots))
    return crossing_indicator(packed.subset(mask), box, labeling.tol)


def annulus_regions(R_in: float, R_out: float, d: int):
    """Closed slabs covering {R_in <= |x|_inf <= R_out}, with inner/outer faces assigned per slab."""
    regions_lo, regions_hi, faces_lo, faces_hi, face_region, face_bit = [], [], [], [], [], []
    for k in range(d):
        for sign in (-1.0, 1.0):
            lo = np.full(d, -R_out)
            hi = np.full(d, R_out)
            if sign > 0:
                lo[k], hi[k] = R_in, R_out
            else:
                lo[k], hi[k] = -R_out, -R_in
            reg = len(regions_lo)
            regions_lo.append(lo)
            regions_hi.append(hi)
            inner_lo = np.full(d, -R_in)
            inner_hi = np.full(d, R_in)
            inner_lo[k] = inner_hi[k] = sign * R_in
            outer_lo = np.full(d, -R_out)
            outer_hi = np.full(d, R_out)
            outer_lo[k] = outer_hi[k] = sign * R_out
            faces_lo += [inner_lo, outer_lo]
            faces_hi += [inner_hi, outer_hi]
            face_region += [reg, reg]
            face_bit += [FACE_LOW, FACE_HIGH]
    return (
        np.array(regions_lo),
        np.array(regions_hi),
        np.array(faces_lo),
        np.array(faces_hi),
        np.array(face_region, dtype=np.int64),
        np.array(face_bit, dtype=np.int64),
    )


def spanning_cluster_count(packed: PackedChains, R_in: float, R_out: float, tol: float) -> int:
    """Components of (occupied set ∩ {R_in <= |x|_inf <= R_out}) touching both boundary spheres."""
    if not (R_out > R_in > 0):
        raise InvalidParameter("need R_out > R_in > 0")
    if packed.n_pieces == 0:
        return 0
    flags = _region_components(packed, tol, *annulus_regions(R_in, R_out, packed.d))
    return int(np.count_nonzero(flags == (FACE_LOW | FACE_HIGH)))
