"""Compiled primitives: segment distances, capsule/box tests, grid broad phase, union-find."""
from __future__ import annotations

import numpy as np
from numba import njit

ELLIPSOID_MAX_ITER = 2000


@njit(cache=True, inline="always")
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True)
def closest_params(p1, q1, p2, q2):
    """Parameters (s, u) of closest points p1+s(q1-p1), p2+u(q2-p2) and the squared gap."""
    d = p1.shape[0]
    a = 0.0
    e = 0.0
    f = 0.0
    c = 0.0
    b = 0.0
    for k in range(d):
        d1 = q1[k] - p1[k]
        d2 = q2[k] - p2[k]
        rk = p1[k] - p2[k]
        a += d1 * d1
        e += d2 * d2
        f += d2 * rk
        c += d1 * rk
        b += d1 * d2
    if a <= 0.0 and e <= 0.0:
        s = 0.0
        u = 0.0
    elif a <= 0.0:
        s = 0.0
        u = _clamp01(f / e)
    elif e <= 0.0:
        u = 0.0
        s = _clamp01(-c / a)
    else:
        denom = a * e - b * b
        if denom > 1e-14 * a * e:
            s = _clamp01((b * f - c * e) / denom)
        else:
            s = 0.0
        u = (b * s + f) / e
        if u < 0.0:
            u = 0.0
            s = _clamp01(-c / a)
        elif u > 1.0:
            u = 1.0
            s = _clamp01((b - c) / a)
        # alternating projections polish nearly parallel cases
        for _ in range(2):
            s = _clamp01((b * u - c) / a)
            u = _clamp01((b * s + f) / e)
    gap2 = 0.0
    for k in range(d):
        x = p1[k] + s * (q1[k] - p1[k]) - p2[k] - u * (q2[k] - p2[k])
        gap2 += x * x
    return s, u, gap2


@njit(cache=True)
def segment_distance_kernel(p1, q1, p2, q2):
    _, _, gap2 = closest_params(p1, q1, p2, q2)
    return np.sqrt(gap2)


@njit(cache=True)
def point_segment_dist(x, p, q):
    d = x.shape[0]
    num = 0.0
    den = 0.0
    for k in range(d):
        dk = q[k] - p[k]
        num += (x[k] - p[k]) * dk
        den += dk * dk
    s = 0.0
    if den > 0.0:
        s = _clamp01(num / den)
    g = 0.0
    for k in range(d):
        y = x[k] - p[k] - s * (q[k] - p[k])
        g += y * y
    return np.sqrt(g), s


@njit(cache=True)
def clip_segment(p, q, lo, hi):
    """Liang-Barsky: parameter interval of the segment inside the closed box (empty if s0 > s1)."""
    s0 = 0.0
    s1 = 1.0
    for k in range(p.shape[0]):
        dk = q[k] - p[k]
        if dk == 0.0:
            if p[k] < lo[k] or p[k] > hi[k]:
                return 1.0, 0.0
        else:
            ta = (lo[k] - p[k]) / dk
            tb = (hi[k] - p[k]) / dk
            if ta > tb:
                ta, tb = tb, ta
            if ta > s0:
                s0 = ta
            if tb < s1:
                s1 = tb
            if s0 > s1:
                return 1.0, 0.0
    return s0, s1


@njit(cache=True)
def seg_box_dist2(p, q, lo, hi):
    """Exact squared distance from segment pq to the closed box [lo, hi]."""
    d = p.shape[0]
    brk = np.empty(2 * d + 2)
    nb = 0
    brk[nb] = 0.0
    nb += 1
    brk[nb] = 1.0
    nb += 1
    for k in range(d):
        dk = q[k] - p[k]
        if dk != 0.0:
            for bound in (lo[k], hi[k]):
                u = (bound - p[k]) / dk
                if u > 0.0 and u < 1.0:
                    brk[nb] = u
                    nb += 1
    br = np.sort(brk[:nb])
    best = np.inf
    for j in range(nb - 1):
        u0 = br[j]
        u1 = br[j + 1]
        um = 0.5 * (u0 + u1)
        num = 0.0
        den = 0.0
        for k in range(d):
            dk = q[k] - p[k]
            xm = p[k] + um * dk
            if xm < lo[k]:
                num += (p[k] - lo[k]) * dk
                den += dk * dk
            elif xm > hi[k]:
                num += (p[k] - hi[k]) * dk
                den += dk * dk
        cands = (u0, u1, -num / den if den > 0.0 else u0)
        for u in cands:
            if u < u0:
                u = u0
            if u > u1:
                u = u1
            g = 0.0
            for k in range(d):
                x = p[k] + u * (q[k] - p[k])
                if x < lo[k]:
                    g += (lo[k] - x) ** 2
                elif x > hi[k]:
                    g += (x - hi[k]) ** 2
            if g < best:
                best = g
    if nb == 1:
        g = 0.0
        for k in range(d):
            x = p[k]
            if x < lo[k]:
                g += (lo[k] - x) ** 2
            elif x > hi[k]:
                g += (x - hi[k]) ** 2
        best = g
    return best


@njit(cache=True)
def _ellipsoid_meet(p1, q1, r1, p2, q2, r2, lo, hi, max_iter):
    """Decide whether capsule1 ∩ capsule2 ∩ box is non-empty by the central-cut ellipsoid method (d >= 2).

    Minimizes max(dist1 - r1, dist2 - r2) over the box; stops on a feasible witness
    or on a certified positive lower bound.
    """
    d = lo.shape[0]
    c = 0.5 * (lo + hi)
    rad2 = 0.0
    for k in range(d):
        rad2 += (0.5 * (hi[k] - lo[k])) ** 2
    rad2 = rad2 * (1.0 + 1e-9) + 1e-300
    P = np.eye(d) * rad2
    g = np.zeros(d)
    Pg = np.zeros(d)
    for _ in range(max_iter):
        cut_box = False
        for k in range(d):
            g[k] = 0.0
        for k in range(d):
            if c[k] < lo[k]:
                g[k] = -1.0
                cut_box = True
                break
            if c[k] > hi[k]:
                g[k] = 1.0
                cut_box = True
                break
        if not cut_box:
            d1, s1 = point_segment_dist(c, p1, q1)
            d2, s2 = point_segment_dist(c, p2, q2)
            f1 = d1 - r1
            f2 = d2 - r2
            if f1 <= 0.0 and f2 <= 0.0:
                return True
            if f1 >= f2:
                f = f1
                dd = d1
                for k in range(d):
                    g[k] = (c[k] - p1[k] - s1 * (q1[k] - p1[k])) / dd
            else:
                f = f2
                dd = d2
                for k in range(d):
                    g[k] = (c[k] - p2[k] - s2 * (q2[k] - p2[k])) / dd
        gPg = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += P[i, j] * g[j]
            Pg[i] = acc
            gPg += g[i] * acc
        if gPg <= 1e-300:
            return False
        sq = np.sqrt(gPg)
        if not cut_box and f - sq > 0.0:
            return False
        for i in range(d):
            Pg[i] /= sq
        for i in range(d):
            c[i] -= Pg[i] / (d + 1.0)
        fac = d * d / (d * d - 1.0)
        for i in range(d):
            for j in range(d):
                P[i, j] = fac * (P[i, j] - 2.0 / (d + 1.0) * Pg[i] * Pg[j])
    return False


@njit(cache=True)
def capsules_meet_in_box(p1, q1, r1, p2, q2, r2, lo, hi):
    """True iff the two closed capsules share a point inside the closed box [lo, hi]."""
    d = lo.shape[0]
    s, u, gap2 = closest_params(p1, q1, p2, q2)
    rs = r1 + r2
    gap = np.sqrt(gap2)
    if gap > rs:
        return False
    # feasible region: box ∩ both capsule AABBs
    blo = np.empty(d)
    bhi = np.empty(d)
    for k in range(d):
        a = max(min(p1[k], q1[k]) - r1, min(p2[k], q2[k]) - r2, lo[k])
        b = min(max(p1[k], q1[k]) + r1, max(p2[k], q2[k]) + r2, hi[k])
        if a > b:
            return False
        blo[k] = a
        bhi[k] = b
    w = 0.5
    if rs > 0.0:
        w = r1 / rs
    inside = True
    for k in range(d):
        c1 = p1[k] + s * (q1[k] - p1[k])
        c2 = p2[k] + u * (q2[k] - p2[k])
        x = c1 + w * (c2 - c1)
        if x < lo[k] or x > hi[k]:
            inside = False
            break
    if inside:
        return True
    a0, a1 = clip_segment(p1, q1, lo, hi)
    b0, b1 = clip_segment(p2, q2, lo, hi)
    if a0 <= a1 and b0 <= b1:
        cp1 = p1 + a0 * (q1 - p1)
        cq1 = p1 + a1 * (q1 - p1)
        cp2 = p2 + b0 * (q2 - p2)
        cq2 = p2 + b1 * (q2 - p2)
        _, _, g2 = closest_params(cp1, cq1, cp2, cq2)
        if np.sqrt(g2) <= rs:
            return True
    if d == 1:
        return True  # intervals: the AABB intersection above is exact
    return _ellipsoid_meet(p1, q1, r1, p2, q2, r2, blo, bhi, ELLIPSOID_MAX_ITER)


@njit(cache=True, inline="always")
def uf_find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True, inline="always")
def uf_union(parent, i, j):
    ri = uf_find(parent, i)
    rj = uf_find(parent, j)
    if ri == rj:
        return False
    if ri < rj:
        parent[rj] = ri
    else:
        parent[ri] = rj
    return True


@njit(cache=True)
def clipped_aabbs(A, B, rho, region, box_lo, box_hi):
    n, d = A.shape
    lo = np.empty((n, d))
    hi = np.empty((n, d))
    active = np.ones(n, dtype=np.bool_)
    for i in range(n):
        bx = region[i]
        for k in range(d):
            a = min(A[i, k], B[i, k]) - rho[i]
            b = max(A[i, k], B[i, k]) + rho[i]
            if a < box_lo[bx, k]:
                a = box_lo[bx, k]
            if b > box_hi[bx, k]:
                b = box_hi[bx, k]
            lo[i, k] = a
            hi[i, k] = b
            if a > b:
                active[i] = False
    return lo, hi, active


@njit(cache=True)
def grid_entries(lo, hi, active, cell):
    """Register every active box in each closed cell it overlaps; returns sorted (keys, ids, cell coords)."""
    n, d = lo.shape
    clo = np.empty((n, d), dtype=np.int64)
    chi = np.empty((n, d), dtype=np.int64)
    gmin = np.full(d, np.iinfo(np.int64).max)
    gmax = np.full(d, np.iinfo(np.int64).min)
    total = 0
    for i in range(n):
        if not active[i]:
            continue
        cnt = 1
        for k in range(d):
            a = np.int64(np.floor(lo[i, k] / cell))
            b = np.int64(np.floor(hi[i, k] / cell))
            clo[i, k] = a
            chi[i, k] = b
            gmin[k] = min(gmin[k], a)
            gmax[k] = max(gmax[k], b)
            cnt *= b - a + 1
        total += cnt
    stride = np.ones(d, dtype=np.int64)
    for k in range(1, d):
        stride[k] = stride[k - 1] * (gmax[k - 1] - gmin[k - 1] + 1)
    keys = np.empty(total, dtype=np.int64)
    ids = np.empty(total, dtype=np.int64)
    cur = np.empty(d, dtype=np.int64)
    m = 0
    for i in range(n):
        if not active[i]:
            continue
        for k in range(d):
            cur[k] = clo[i, k]
        while True:
            key = 0
            for k in range(d):
                key += (cur[k] - gmin[k]) * stride[k]
            keys[m] = key
            ids[m] = i
            m += 1
            k = 0
            while k < d:
                cur[k] += 1
                if cur[k] <= chi[i, k]:
                    break
                cur[k] = clo[i, k]
                k += 1
            if k == d:
                break
    order = np.argsort(keys, kind="mergesort")
    return keys[order], ids[order], clo, chi, gmin, stride


@njit(cache=True)
def _owns_pair(key, gmin, stride, clo, chi, i, j):
    """A pair is processed only in the cell holding the max-of-lo corner of the two cell ranges."""
    d = gmin.shape[0]
    rem = key
    for k in range(d - 1, -1, -1):
        ck = rem // stride[k]
        rem -= ck * stride[k]
        ck += gmin[k]
        if ck != max(clo[i, k], clo[j, k]):
            return False
    return True


@njit(cache=True)
def union_touching(A, B, rho, node, region, box_lo, box_hi, cell, parent, skip_same_node):
    """Union node[i], node[j] for every pair of pieces whose capsules meet inside their common region."""
    n, d = A.shape
    lo, hi, active = clipped_aabbs(A, B, rho, region, box_lo, box_hi)
    if n == 0:
        return 0
    keys, ids, clo, chi, gmin, stride = grid_entries(lo, hi, active, cell)
    m = keys.shape[0]
    rlo = np.empty(d)
    rhi = np.empty(d)
    tests = 0
    g0 = 0
    while g0 < m:
        g1 = g0 + 1
        while g1 < m and keys[g1] == keys[g0]:
            g1 += 1
        for x in range(g0, g1):
            i = ids[x]
            for y in range(x + 1, g1):
                j = ids[y]
                ni = node[i]
                nj = node[j]
                if skip_same_node and ni == nj:
                    continue
                overlap = True
                for k in range(d):
                    if lo[i, k] > hi[j, k] or lo[j, k] > hi[i, k]:
                        overlap = False
                        break
                if not overlap:
                    continue
                if not _owns_pair(keys[g0], gmin, stride, clo, chi, i, j):
                    continue
                if uf_find(parent, ni) == uf_find(parent, nj):
                    continue
                bi = region[i]
                bj = region[j]
                empty = False
                for k in range(d):
                    rlo[k] = max(box_lo[bi, k], box_lo[bj, k])
                    rhi[k] = min(box_hi[bi, k], box_hi[bj, k])
                    if rlo[k] > rhi[k]:
                        empty = True
                if empty:
                    continue
                tests += 1
                if capsules_meet_in_box(A[i], B[i], rho[i], A[j], B[j], rho[j], rlo, rhi):
                    uf_union(parent, ni, nj)
        g0 = g1
    return tests


@njit(cache=True)
def candidate_pairs(A, B, rho, cell):
    """All distinct piece pairs whose inflated boxes share a grid cell (each pair once)."""
    n, d = A.shape
    region = np.zeros(n, dtype=np.int64)
    big_lo = np.full((1, d), -np.inf)
    big_hi = np.full((1, d), np.inf)
    lo, hi, active = clipped_aabbs(A, B, rho, region, big_lo, big_hi)
    out_i = np.empty(16, dtype=np.int64)
    out_j = np.empty(16, dtype=np.int64)
    cnt = 0
    if n == 0:
        return out_i[:0], out_j[:0]
    keys, ids, clo, chi, gmin, stride = grid_entries(lo, hi, active, cell)
    m = keys.shape[0]
    g0 = 0
    while g0 < m:
        g1 = g0 + 1
        while g1 < m and keys[g1] == keys[g0]:
            g1 += 1
        for x in range(g0, g1):
            for y in range(x + 1, g1):
                i = ids[x]
                j = ids[y]
                if not _owns_pair(keys[g0], gmin, stride, clo, chi, i, j):
                    continue
                if cnt == out_i.shape[0]:
                    ni = np.empty(2 * cnt, dtype=np.int64)
                    nj = np.empty(2 * cnt, dtype=np.int64)
                    ni[:cnt] = out_i
                    nj[:cnt] = out_j
                    out_i = ni
                    out_j = nj
                out_i[cnt] = min(i, j)
                out_j[cnt] = max(i, j)
                cnt += 1
        g0 = g1
    return out_i[:cnt], out_j[:cnt]


@njit(cache=True)
def face_flags(A, B, rho, region, face_lo, face_hi, face_region, face_bit, parent, node, nnodes):
    """OR together, per union-find root, the bits of every terminal face each piece reaches."""
    flags = np.zeros(nnodes, dtype=np.int64)
    n = A.shape[0]
    nf = face_lo.shape[0]
    for i in range(n):
        for f in range(nf):
            if face_region[f] != region[i]:
                continue
            near = True
            for k in range(A.shape[1]):
                if min(A[i, k], B[i, k]) - rho[i] > face_hi[f, k] or max(A[i, k], B[i, k]) + rho[i] < face_lo[f, k]:
                    near = False
                    break
            if not near:
                continue
            if seg_box_dist2(A[i], B[i], face_lo[f], face_hi[f]) <= rho[i] * rho[i]:
                root = uf_find(parent, node[i])
                flags[root] |= face_bit[f]
    return flags


@njit(cache=True)
def chain_prelink(node, region, A, B, chain, box_lo, box_hi, parent):
    """Link consecutive pieces of a chain when their shared vertex lies in their common region."""
    n, d = A.shape
    for i in range(n - 1):
        if chain[i] != chain[i + 1]:
            continue
        shared = True
        for k in range(d):
            if B[i, k] != A[i + 1, k]:
                shared = False
                break
        if not shared:
            continue
        bi = region[i]
        bj = region[i + 1]
        ok = True
        for k in range(d):
            x = B[i, k]
            if x < max(box_lo[bi, k], box_lo[bj, k]) or x > min(box_hi[bi, k], box_hi[bj, k]):
                ok = False
                break
        if ok:
            uf_union(parent, node[i], node[i + 1])


@njit(cache=True)
def make_chunks(chain, region, active, max_len):
    """Group active pieces into runs of <= max_len consecutive pieces sharing chain and region."""
    n = chain.shape[0]
    members = np.empty(n, dtype=np.int64)
    starts = np.empty(n + 1, dtype=np.int64)
    nm = 0
    nc = 0
    cur_len = 0
    for i in range(n):
        if not active[i]:
            continue
        new = cur_len == 0 or cur_len >= max_len
        if not new:
            prev = members[nm - 1]
            new = chain[prev] != chain[i] or region[prev] != region[i]
        if new:
            starts[nc] = nm
            nc += 1
            cur_len = 0
        members[nm] = i
        nm += 1
        cur_len += 1
    starts[nc] = nm
    return members[:nm], starts[: nc + 1]


@njit(cache=True)
def union_touching_chunked(A, B, rho, node, chain, region, box_lo, box_hi, cell, parent, skip_same_node, max_len):
    """Same contract as union_touching, with the broad phase run over short runs of pieces."""
    n, d = A.shape
    if n == 0:
        return 0
    lo, hi, active = clipped_aabbs(A, B, rho, region, box_lo, box_hi)
    members, starts = make_chunks(chain, region, active, max_len)
    nc = starts.shape[0] - 1
    clo_ = np.empty((nc, d))
    chi_ = np.empty((nc, d))
    for c in range(nc):
        for k in range(d):
            clo_[c, k] = np.inf
            chi_[c, k] = -np.inf
        for x in range(starts[c], starts[c + 1]):
            i = members[x]
            for k in range(d):
                clo_[c, k] = min(clo_[c, k], lo[i, k])
                chi_[c, k] = max(chi_[c, k], hi[i, k])
    cact = np.ones(nc, dtype=np.bool_)
    # a chunk whose members already share a component stays that way: compare roots once
    uniform = np.ones(nc, dtype=np.bool_)
    for c in range(nc):
        r0 = uf_find(parent, node[members[starts[c]]])
        for x in range(starts[c] + 1, starts[c + 1]):
            if uf_find(parent, node[members[x]]) != r0:
                uniform[c] = False
                break
    keys, ids, gclo, gchi, gmin, stride = grid_entries(clo_, chi_, cact, cell)
    m = keys.shape[0]
    rlo = np.empty(d)
    rhi = np.empty(d)
    tests = 0
    g0 = 0
    while g0 < m:
        g1 = g0 + 1
        while g1 < m and keys[g1] == keys[g0]:
            g1 += 1
        for x in range(g0, g1):
            ca = ids[x]
            for y in range(x + 1, g1):
                cb = ids[y]
                overlap = True
                for k in range(d):
                    if clo_[ca, k] > chi_[cb, k] or clo_[cb, k] > chi_[ca, k]:
                        overlap = False
                        break
                if not overlap:
                    continue
                if not _owns_pair(keys[g0], gmin, stride, gclo, gchi, ca, cb):
                    continue
                both_uniform = uniform[ca] and uniform[cb]
                if both_uniform and uf_find(parent, node[members[starts[ca]]]) == uf_find(
                    parent, node[members[starts[cb]]]
                ):
                    continue
                merged = False
                for xa in range(starts[ca], starts[ca + 1]):
                    if merged:
                        break
                    i = members[xa]
                    for xb in range(starts[cb], starts[cb + 1]):
                        j = members[xb]
                        ni = node[i]
                        nj = node[j]
                        if skip_same_node and ni == nj:
                            continue
                        ov = True
                        for k in range(d):
                            if lo[i, k] > hi[j, k] or lo[j, k] > hi[i, k]:
                                ov = False
                                break
                        if not ov:
                            continue
                        if uf_find(parent, ni) == uf_find(parent, nj):
                            continue
                        bi = region[i]
                        bj = region[j]
                        empty = False
                        for k in range(d):
                            rlo[k] = max(box_lo[bi, k], box_lo[bj, k])
                            rhi[k] = min(box_hi[bi, k], box_hi[bj, k])
                            if rlo[k] > rhi[k]:
                                empty = True
                        if empty:
                            continue
                        tests += 1
                        if capsules_meet_in_box(A[i], B[i], rho[i], A[j], B[j], rho[j], rlo, rhi):
                            uf_union(parent, ni, nj)
                            if both_uniform:
                                merged = True
                                break
        g0 = g1
    # pairs inside one chunk
    for c in range(nc):
        for xa in range(starts[c], starts[c + 1]):
            i = members[xa]
            for xb in range(xa + 1, starts[c + 1]):
                j = members[xb]
                ni = node[i]
                nj = node[j]
                if skip_same_node and ni == nj:
                    continue
                ov = True
                for k in range(d):
                    if lo[i, k] > hi[j, k] or lo[j, k] > hi[i, k]:
                        ov = False
                        break
                if not ov or uf_find(parent, ni) == uf_find(parent, nj):
                    continue
                bi = region[i]
                for k in range(d):
                    rlo[k] = box_lo[bi, k]
                    rhi[k] = box_hi[bi, k]
                tests += 1
                if capsules_meet_in_box(A[i], B[i], rho[i], A[j], B[j], rho[j], rlo, rhi):
                    uf_union(parent, ni, nj)
    return tests
