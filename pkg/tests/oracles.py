"""Independent reference implementations used to cross-check the package.

Nothing here imports the geometry kernels: distances, touch graphs, clustering and
crossing are recomputed from scratch with plain numpy and scipy.
"""
from __future__ import annotations

from collections import deque

import numpy as np
from scipy import ndimage


def point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def segment_distance_qp(p1, q1, p2, q2) -> float:
    """Minimum of |P(s) - Q(u)| over the unit square: interior stationary point plus the four edges."""
    p1, q1, p2, q2 = (np.asarray(x, dtype=float) for x in (p1, q1, p2, q2))
    d1, d2, w = q1 - p1, q2 - p2, p1 - p2
    best = min(
        point_segment_distance(p1, p2, q2),
        point_segment_distance(q1, p2, q2),
        point_segment_distance(p2, p1, q1),
        point_segment_distance(q2, p1, q1),
    )
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    det = a * c - b * b
    if det > 1e-14 * max(a * c, 1e-300):
        s = (b * (d2 @ w) - c * (d1 @ w)) / det
        u = (a * (d2 @ w) - b * (d1 @ w)) / det
        if 0 <= s <= 1 and 0 <= u <= 1:
            best = min(best, float(np.linalg.norm(w + s * d1 - u * d2)))
    return best


def segment_distance_grid(p1, q1, p2, q2, n: int = 1000) -> float:
    """Brute force over an n x n grid of segment parameters."""
    s = np.linspace(0.0, 1.0, n)
    P = np.asarray(p1, float)[None, :] + s[:, None] * (np.asarray(q1, float) - np.asarray(p1, float))[None, :]
    Q = np.asarray(p2, float)[None, :] + s[:, None] * (np.asarray(q2, float) - np.asarray(p2, float))[None, :]
    best = np.inf
    for row in np.array_split(np.arange(n), 10):
        diff = P[row][:, None, :] - Q[None, :, :]
        best = min(best, float(np.sqrt((diff**2).sum(axis=2)).min()))
    return best


def chain_segments(points: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    if len(points) == 1:
        return [(points[0], points[0])]
    return [(points[i], points[i + 1]) for i in range(len(points) - 1)]


def chain_gap(c1: np.ndarray, c2: np.ndarray) -> float:
    return min(segment_distance_qp(a, b, c, d) for a, b in chain_segments(c1) for c, d in chain_segments(c2))


def touch_graph(chains: list[np.ndarray], radii, tol: float) -> list[set[int]]:
    n = len(chains)
    adj: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if chain_gap(chains[i], chains[j]) <= radii[i] + radii[j] + tol:
                adj[i].add(j)
                adj[j].add(i)
    return adj


def bfs_components(adj: list[set[int]]) -> list[frozenset[int]]:
    seen: set[int] = set()
    comps = []
    for s in range(len(adj)):
        if s in seen:
            continue
        comp = {s}
        queue = deque([s])
        seen.add(s)
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    queue.append(w)
        comps.append(frozenset(comp))
    return comps


def partition_of(labels) -> set[frozenset[int]]:
    groups: dict = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return {frozenset(g) for g in groups.values()}


def _distance_field(chains: list[np.ndarray], centers: np.ndarray) -> np.ndarray:
    """Distance from each pixel centre to the nearest chain, per chain: shape (n_chains, n_pixels)."""
    out = np.full((len(chains), centers.shape[0]), np.inf)
    for k, pts in enumerate(chains):
        for a, b in chain_segments(pts):
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0:
                dist = np.linalg.norm(centers - a, axis=1)
            else:
                s = np.clip(((centers - a) @ ab) / denom, 0.0, 1.0)
                dist = np.linalg.norm(centers - (a[None, :] + s[:, None] * ab[None, :]), axis=1)
            np.minimum(out[k], dist, out=out[k])
    return out


def raster_crossing(chains: list[np.ndarray], rho, box_hi, pitch: float) -> bool | None:
    """Sandwich rasterization of the 2-d crossing event inside [0, W] x [0, H].

    Inner pixels (centre within rho - pitch of a capsule axis) lie inside the occupied set,
    so a 4-connected inner crossing proves crossing. Outer pixels (within rho + pitch) cover
    the occupied set, so no 8-connected outer crossing proves there is none. None means the
    raster cannot decide at this pitch.
    """
    W, H = float(box_hi[0]), float(box_hi[1])
    nx, ny = int(np.ceil(W / pitch)), int(np.ceil(H / pitch))
    xs = (np.arange(nx) + 0.5) * (W / nx)
    ys = (np.arange(ny) + 0.5) * (H / ny)
    hx, hy = W / nx, H / ny
    h = float(np.hypot(hx, hy))
    centers = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    rho = np.asarray(rho, dtype=float)
    field = _distance_field(chains, centers) - rho[:, None]
    gap = field.min(axis=0).reshape(nx, ny) if len(chains) else np.full((nx, ny), np.inf)

    def crosses(mask: np.ndarray, structure: np.ndarray) -> bool:
        lab, _ = ndimage.label(mask, structure=structure)
        left = set(np.unique(lab[0, :])) - {0}
        right = set(np.unique(lab[-1, :])) - {0}
        return bool(left & right)

    four = ndimage.generate_binary_structure(2, 1)
    eight = ndimage.generate_binary_structure(2, 2)
    if crosses(gap <= -h, four):
        return True
    if not crosses(gap <= h, eight):
        return False
    return None


def exact_pairs(chains: list[np.ndarray], radii, tol: float) -> set[tuple[int, int]]:
    adj = touch_graph(chains, radii, tol)
    return {(i, j) for i in range(len(adj)) for j in adj[i] if i < j}


# ------------------------------------------------------------------ counting lemma


def disjoint_families(elements, min_members: int = 3) -> list[frozenset]:
    """Every unordered family of >= min_members pairwise disjoint non-empty subsets of `elements`."""
    elements = list(elements)
    seen: set[frozenset] = set()
    n = len(elements)
    for labels in np.ndindex(*([n + 1] * n)) if n else [()]:
        blocks: dict[int, set] = {}
        for e, lab in zip(elements, labels):
            if lab:
                blocks.setdefault(lab, set()).add(e)
        fam = frozenset(frozenset(b) for b in blocks.values())
        if len(fam) >= min_members:
            seen.add(fam)
    return sorted(seen, key=lambda f: sorted(sorted(c) for c in f))


def pair_allowed(z, Cz, w, Cw) -> bool:
    """Cases (i)-(iv) for the pair (z, w), with C_z the union of z's family."""
    Uz = {z}.union(*Cz)
    Uw = {w}.union(*Cw)
    if not Uz & Uw:
        return True
    if any(Uw - cj <= ci and Uz - ci <= cj for ci in Cz for cj in Cw):
        return True
    return any(Uw <= ci for ci in Cz) or any(Uz <= cj for cj in Cw)


def brute_force_counting(s: int) -> dict[tuple[int, int], int]:
    """Number of valid K = 1 instances on S = {0..s-1}, R = {0..k-1}, for every k."""
    import itertools

    fams = {z: disjoint_families([e for e in range(s) if e != z]) for z in range(s)}
    out = {}
    for k in range(1, s + 1):
        count = 0
        for choice in itertools.product(*(fams[z] for z in range(k))):
            if all(pair_allowed(a, choice[a], b, choice[b]) for a, b in itertools.combinations(range(k), 2)):
                count += 1
        out[(s, k)] = count
    return out


# ------------------------------------------------------------------ bridge stay probability


def bridge_stay_rejection(R, eps, a, a_bar, delta, step, rho, n_paths, seed, batch=20_000):
    """Stay-in-annulus frequency of free Brownian paths whose endpoint lands within rho of a_bar.

    Returns (frequency, accepted paths). Containment is checked at the same grid times the
    bridge sampler uses; the endpoint ball adds an O(rho^2) bias.
    """
    rng = np.random.default_rng(seed)
    a = np.asarray(a, dtype=float)
    a_bar = np.asarray(a_bar, dtype=float)
    n_steps = int(round(delta / step))
    accepted = stayed = 0
    for start in range(0, n_paths, batch):
        m = min(batch, n_paths - start)
        pos = a + np.cumsum(rng.standard_normal((m, n_steps, a.size)) * np.sqrt(step), axis=1)
        hit = np.linalg.norm(pos[:, -1] - a_bar, axis=1) <= rho
        r = np.linalg.norm(pos[hit], axis=2)
        accepted += int(hit.sum())
        stayed += int(np.all((r > R - eps) & (r < R + eps), axis=1).sum())
    return stayed / max(accepted, 1), accepted
