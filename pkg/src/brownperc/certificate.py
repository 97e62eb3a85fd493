"""Deterministic verifiers: the multiscale recursion, the seed condition, the boundary series and the counting lemma."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import gmpy2
import mpmath
import numpy as np

from .errors import InvalidParameter
from .stochastic import RadiusDistribution

MIN_PRECISION_BITS = 256
DEFAULT_SCALE_BIT_CAP = 1 << 22
SERIES_TERM_FLOOR = 1e-16
SERIES_MAX_TERMS = 10**7


def default_constants(d: int, tail_C: float) -> dict:
    """Heuristic defaults: c1 = c4 = 3^d (box counting), c2 = tail rate, c3 = 1."""
    return {"c1": 3**d, "c2": tail_C, "c3": 1, "c4": 3**d}


_GMP_RATIONAL = (type(gmpy2.mpz()), type(gmpy2.mpq()))


def _is_rational(x) -> bool:
    return isinstance(x, (int, Fraction, np.integer) + _GMP_RATIONAL)


def _mpq(x):
    if isinstance(x, Fraction):
        return gmpy2.mpq(x.numerator, x.denominator)
    if isinstance(x, float):
        return gmpy2.mpq(Fraction(x))
    return gmpy2.mpq(x)


@dataclass
class CertificateReport:
    d: int
    R: int
    L0: int
    N: int
    lam: float
    tail: tuple
    c1: object
    c2: object
    c3: object
    c4: object
    a0: object
    n_max: int
    scales: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    verdict: str = "pass"
    failed_at: int | None = None
    structural_ok: bool = True
    truncated_at: int | None = None
    tail_regime_ok: bool = True
    epsilon_max: object = None
    arithmetic: str = "exact-rational"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        def num(x):
            if isinstance(x, (int, np.integer)):
                return int(x)
            if isinstance(x, Fraction):
                return str(x)
            return float(x) if isinstance(x, float) else str(x)

        def log10(x):
            if x == 0:
                return None
            if isinstance(x, mpmath.mpf):
                return float(mpmath.log10(x))
            q = _mpq(x)
            return (
                float(gmpy2.log10(gmpy2.mpfr(q.numerator)) - gmpy2.log10(gmpy2.mpfr(q.denominator)))
                if q > 0
                else None
            )

        return {
            "d": self.d,
            "R": self.R,
            "L0": self.L0,
            "N": self.N,
            "lambda": self.lam,
            "tail": list(self.tail),
            "constants": {"c1": num(self.c1), "c2": num(self.c2), "c3": num(self.c3), "c4": num(self.c4)},
            "a0": num(self.a0),
            "n_max": self.n_max,
            "log10_scales": [float(gmpy2.log10(gmpy2.mpz(L))) for L in self.scales],
            "log10_bounds": [log10(a) for a in self.bounds],
            "verdict": self.verdict,
            "failed_at": self.failed_at,
            "structural_ok": self.structural_ok,
            "truncated_at": self.truncated_at,
            "tail_regime_ok": self.tail_regime_ok,
            "epsilon_max": num(self.epsilon_max) if self.epsilon_max is not None else None,
            "arithmetic": self.arithmetic,
        }


def renorm_recursion(
    d: int,
    R: int,
    L0: int,
    N: int,
    lam,
    tail: tuple = (1.0, 1.0),
    c1=None,
    c2=None,
    c3=None,
    a0=0,
    n_max: int = 20,
    c4=None,
    scale_bit_cap: int = DEFAULT_SCALE_BIT_CAP,
    precision_bits: int = MIN_PRECISION_BITS,
) -> CertificateReport:
    """Iterate a_{n+1} = a_n^2 R^{4(d-1)} + 4 c1^2 c3 R^{4(d-1)(n+1)} lam (3 L_{n+1} N)^d exp(-c2 L_{n+1} N / 6).

    Scales follow L_{n+1} = R^{n+1} L_n in big integers. Verdict is pass iff a_n <= 1/L_n
    for every n <= n_max. With c3 = 0 and rational inputs the iteration is exact rational;
    otherwise it runs in mpmath at >= 256 bits.
    """
    tail_C, tail_R0 = tail
    defaults = default_constants(int(d), tail_C)
    c1 = defaults["c1"] if c1 is None else c1
    c2 = defaults["c2"] if c2 is None else c2
    c3 = defaults["c3"] if c3 is None else c3
    c4 = defaults["c4"] if c4 is None else c4
    if int(d) != d or d < 1:
        raise InvalidParameter("d must be a positive integer")
    if int(R) != R or R <= 1:
        raise InvalidParameter("R must be an integer > 1")
    if int(L0) != L0 or L0 <= 1:
        raise InvalidParameter("L0 must be an integer > 1")
    if int(N) != N or N < 1:
        raise InvalidParameter("N must be a positive integer")
    if not (lam >= 0 and tail_C > 0 and tail_R0 > 0):
        raise InvalidParameter("need lam >= 0 and a positive tail (C, R0)")
    if not (c1 > 0 and c2 > 0 and c3 >= 0 and c4 > 0):
        raise InvalidParameter("constants c1, c2, c4 must be positive and c3 nonnegative")
    if not 0 <= a0 <= 1:
        raise InvalidParameter("a0 must lie in [0, 1]")
    if precision_bits < MIN_PRECISION_BITS:
        raise InvalidParameter(f"precision must be at least {MIN_PRECISION_BITS} bits")
    d, R, L0, N = int(d), int(R), int(L0), int(N)
    exact = c3 == 0 and _is_rational(a0)
    report = CertificateReport(
        d=d, R=R, L0=L0, N=N, lam=lam, tail=(tail_C, tail_R0), c1=c1, c2=c2, c3=c3, c4=c4, a0=a0, n_max=n_max
    )
    report.structural_ok = L0 >= 2 * R ** (4 * (d - 1) + 1)
    report.epsilon_max = seed_condition(d, L0, c1, c4)
    growth = R ** (4 * (d - 1))
    L = gmpy2.mpz(L0)
    if exact:
        a = _mpq(a0)
        report.arithmetic = "exact-rational"
    else:
        report.arithmetic = f"mpmath-{precision_bits}bit"
    old_prec = mpmath.mp.prec
    mpmath.mp.prec = precision_bits
    try:
        if not exact:
            a = mpmath.mpf(Fraction(a0).numerator) / Fraction(a0).denominator if _is_rational(a0) else mpmath.mpf(a0)
            m_c1 = mpmath.mpf(c1)
            m_c2 = mpmath.mpf(c2)
            m_c3 = mpmath.mpf(c3)
            m_lam = mpmath.mpf(lam)
        for n in range(n_max + 1):
            report.scales.append(int(L))
            report.bounds.append(a)
            ok = a * L <= 1
            if not ok:
                report.verdict = "fail"
                report.failed_at = n
                break
            if n == n_max:
                break
            L_next = L * gmpy2.mpz(R) ** (n + 1)
            if L_next.bit_length() > scale_bit_cap:
                report.truncated_at = n
                break
            if L_next * N < 6 * tail_R0:
                report.tail_regime_ok = False
            if exact:
                a = a * a * growth
            else:
                Lm = mpmath.mpf(int(L_next))
                a = a * a * growth + 4 * m_c1**2 * m_c3 * mpmath.mpf(R) ** (4 * (d - 1) * (n + 1)) * m_lam * (
                    3 * Lm * N
                ) ** d * mpmath.exp(-m_c2 * Lm * N / 6)
            L = L_next
    finally:
        mpmath.mp.prec = old_prec
    return report


def seed_condition(d: int, L0, c1, c4):
    """epsilon_max = (4 d c1 c4 L0^(d+1))^(-1); exact Fraction for rational inputs."""
    if not (d > 0 and L0 > 0 and c1 > 0 and c4 > 0):
        raise InvalidParameter("seed condition inputs must be positive")
    if all(_is_rational(x) for x in (d, L0, c1, c4)):
        return Fraction(1, 1) / (4 * int(d) * Fraction(c1) * Fraction(c4) * Fraction(L0) ** (int(d) + 1))
    return 1.0 / (4.0 * d * float(c1) * float(c4) * float(L0) ** (d + 1))


def crossing_certified(ci_hi: float, epsilon_max) -> bool:
    """A measured crossing bound certifies the seed condition iff its upper CI end is below epsilon_max."""
    return float(ci_hi) < float(epsilon_max)


def boundary_constant(d: int) -> int:
    return d * 4**d


def tail_series(tail: RadiusDistribution, K_start: int, d: int) -> float:
    """d 4^d * sum_{K >= K_start} K^(d-1) tail(K), truncated once terms fall below 1e-16."""
    K_start = max(int(K_start), 0)
    total = 0.0
    block = 1024
    K = K_start
    prev_last = math.inf
    while K - K_start < SERIES_MAX_TERMS:
        ks = np.arange(K, K + block, dtype=float)
        terms = ks ** (d - 1) * tail.tail_array(ks)
        # K = 0 contributes 0^(d-1) and says nothing about the tail
        small = (terms < SERIES_TERM_FLOOR) & (ks >= 1)
        # stop at the first small term past the point where terms started decreasing
        decreasing = np.empty(block, dtype=bool)
        decreasing[0] = terms[0] <= prev_last
        decreasing[1:] = terms[1:] <= terms[:-1]
        stop = np.nonzero(small & decreasing)[0]
        if stop.size:
            total += float(terms[: stop[0]].sum())
            return boundary_constant(d) * total
        total += float(terms.sum())
        prev_last = terms[-1]
        K += block
        block = min(block * 2, 1 << 20)
    raise InvalidParameter("boundary series does not converge (radius law lacks a finite d-th moment)")


def boundary_tail_bound(tail: RadiusDistribution, M: int, N: int, d: int) -> float:
    """Boundary bound: d 4^d * sum_{K >= M - 3N} K^(d-1) P(radius >= K)."""
    return tail_series(tail, int(M) - 3 * int(N), int(d))


# ------------------------------------------------------------------ counting lemma


@dataclass(frozen=True)
class CountingInstance:
    S: frozenset
    R: frozenset
    families: dict
    K: int

    @classmethod
    def build(cls, S: Iterable, R: Iterable, families: dict, K: int) -> "CountingInstance":
        fam = {z: tuple(frozenset(c) for c in cs) for z, cs in families.items()}
        return cls(frozenset(S), frozenset(R), fam, int(K))

    def to_dict(self) -> dict:
        return {
            "S": sorted(self.S, key=repr),
            "R": sorted(self.R, key=repr),
            "K": self.K,
            "families": {str(z): [sorted(c, key=repr) for c in cs] for z, cs in self.families.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CountingInstance":
        try:
            S = list(data["S"])
            R = list(data["R"])
            K = data["K"]
            raw = data["families"]
        except (KeyError, TypeError) as exc:
            raise InvalidParameter(f"counting instance is missing field {exc}") from None
        by_name = {str(x): x for x in S}
        fam = {}
        for key, cs in raw.items():
            if key not in by_name:
                raise InvalidParameter(f"family key {key!r} is not an element of S")
            fam[by_name[key]] = cs
        return cls.build(S, R, fam, K)


@dataclass(frozen=True)
class CountingReport:
    preconditions_ok: bool
    conclusion_ok: bool
    violations: tuple = ()

    def __iter__(self):
        return iter((self.preconditions_ok, self.conclusion_ok))


def _pair_case(z, Cz, z2, Cz2) -> str | None:
    Uz = {z}.union(*Cz)
    Uz2 = {z2}.union(*Cz2)
    if not (Uz & Uz2):
        return "i"
    for ci in Cz:
        for cj in Cz2:
            if (Uz2 - cj) <= ci and (Uz - ci) <= cj:
                return "ii"
    if any(Uz2 <= ci for ci in Cz):
        return "iii"
    if any(Uz <= cj for cj in Cz2):
        return "iv"
    return None


def counting_lemma_check(instance: CountingInstance) -> CountingReport:
    """Check hypotheses (a), (b) on every pair of distinct points of R, then |S| >= K(|R| + 2)."""
    S, R, K = instance.S, instance.R, instance.K
    violations: list[str] = []
    if not R:
        violations.append("R is empty")
    if not R <= S:
        violations.append("R is not a subset of S")
    if K <= 0:
        violations.append("K must be positive")
    for z in R:
        fam = instance.families.get(z)
        if fam is None:
            violations.append(f"(a) no family for {z!r}")
            continue
        if len(fam) < 3:
            violations.append(f"(a) family of {z!r} has {len(fam)} < 3 members")
        for i, c in enumerate(fam):
            if not c:
                violations.append(f"(a) member {i} of {z!r} is empty")
            if len(c) < K:
                violations.append(f"(a) member {i} of {z!r} has size {len(c)} < K")
            if z in c:
                violations.append(f"(a) member {i} of {z!r} contains {z!r}")
            if not c <= S:
                violations.append(f"(a) member {i} of {z!r} leaves S")
        for (i, c), (j, c2) in itertools.combinations(enumerate(fam), 2):
            if c & c2:
                violations.append(f"(a) members {i} and {j} of {z!r} overlap")
    if not violations:
        for z, z2 in itertools.combinations(sorted(R, key=repr), 2):
            if _pair_case(z, instance.families[z], z2, instance.families[z2]) is None:
                violations.append(f"(b) pair ({z!r}, {z2!r}) fits none of (i)-(iv)")
    pre_ok = not violations
    return CountingReport(pre_ok, len(S) >= K * (len(R) + 2), tuple(violations))


def _families_for(z: int, universe: int, min_members: int = 3) -> list[tuple[int, ...]]:
    """All unordered families of >= min_members disjoint non-empty subsets of universe minus z (bitmasks)."""
    elems = [e for e in range(universe) if e != z]
    out: list[tuple[int, ...]] = []

    def rec(idx: int, blocks: list[int]) -> None:
        if idx == len(elems):
            if len(blocks) >= min_members:
                out.append(tuple(blocks))
            return
        bit = 1 << elems[idx]
        rec(idx + 1, blocks)
        for b in range(len(blocks)):
            blocks[b] |= bit
            rec(idx + 1, blocks)
            blocks[b] &= ~bit
        blocks.append(bit)
        rec(idx + 1, blocks)
        blocks.pop()

    rec(0, [])
    return out


def _compat_matrix(z: int, fz: list, z2: int, fz2: list) -> np.ndarray:
    """compat[a, b] = True iff family fz[a] of z and fz2[b] of z2 satisfy one of (i)-(iv)."""
    width = max(len(f) for f in fz + fz2)

    def pack(z0, fams):
        blocks = np.zeros((len(fams), width), dtype=np.int64)
        for a, f in enumerate(fams):
            blocks[a, : len(f)] = f
        union = blocks.sum(axis=1) | (1 << z0)
        return blocks, union

    Bz, Uz = pack(z, fz)
    Bz2, Uz2 = pack(z2, fz2)
    U1 = Uz[:, None]
    U2 = Uz2[None, :]
    ok = (U1 & U2) == 0
    for i in range(width):
        ci = Bz[:, i][:, None]
        valid_i = ci != 0
        ok |= valid_i & ((U2 & ~ci) == 0)  # (iii): U2 within C_z^i
        for j in range(width):
            cj = Bz2[:, j][None, :]
            valid = valid_i & (cj != 0)
            ok |= valid & (((U2 & ~cj) & ~ci) == 0) & (((U1 & ~ci) & ~cj) == 0)  # (ii)
    for j in range(width):
        cj = Bz2[:, j][None, :]
        ok |= (cj != 0) & ((U1 & ~cj) == 0)  # (iv)
    return ok


@dataclass
class EnumerationSummary:
    K: int
    max_size: int
    valid_instances: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.valid_instances.values())


def enumerate_counting_instances(max_size: int, K: int = 1, sample_hook=None) -> EnumerationSummary:
    """Exhaustively enumerate valid instances with |S| <= max_size (K = 1 only).

    Elements of S are interchangeable, so R = {0, ..., k-1} loses no generality.
    `sample_hook(instance)` is called on the first few instances of every (|S|, |R|) cell.
    """
    if K != 1:
        raise InvalidParameter("exhaustive enumeration is implemented for K = 1")
    summary = EnumerationSummary(K=K, max_size=max_size)
    for s in range(1, max_size + 1):
        fams = {z: _families_for(z, s) for z in range(s)}
        compat: dict = {}
        for k in range(1, s + 1):
            if any(not fams[z] for z in range(k)):
                summary.valid_instances[(s, k)] = 0
                continue
            for a in range(k):
                for b in range(a + 1, k):
                    if (a, b) not in compat:
                        m = _compat_matrix(a, fams[a], b, fams[b])
                        compat[(a, b)] = [
                            int.from_bytes(np.packbits(row, bitorder="little").tobytes(), "little") for row in m
                        ]
            count = 0
            hooks_left = 3
            full = [(1 << len(fams[z])) - 1 for z in range(k)]

            def rec(level: int, choice: list[int], allowed: list[int]) -> None:
                nonlocal count, hooks_left
                if level == k - 1:
                    mask = allowed[level]
                    n_ok = bin(mask).count("1")
                    if n_ok:
                        count += n_ok
                        if s < K * (k + 2):
                            idx = (mask & -mask).bit_length() - 1
                            summary.counterexamples.append((s, k, tuple(choice) + (idx,)))
                        if sample_hook is not None and hooks_left > 0:
                            idx = (mask & -mask).bit_length() - 1
                            hooks_left -= 1
                            sample_hook(_instance_from_choice(s, k, fams, tuple(choice) + (idx,)))
                    return
                mask = allowed[level]
                while mask:
                    low = mask & -mask
                    idx = low.bit_length() - 1
                    mask ^= low
                    nxt = list(allowed)
                    dead = False
                    for b in range(level + 1, k):
                        nxt[b] &= compat[(level, b)][idx]
                        if not nxt[b]:
                            dead = True
                            break
                    if not dead:
                        rec(level + 1, choice + [idx], nxt)

            rec(0, [], full)
            summary.valid_instances[(s, k)] = count
    return summary


def _instance_from_choice(s: int, k: int, fams: dict, choice: Sequence[int]) -> CountingInstance:
    def members(mask: int) -> frozenset:
        return frozenset(e for e in range(s) if mask >> e & 1)

    families = {z: [members(m) for m in fams[z][choice[z]]] for z in range(k)}
    return CountingInstance.build(range(s), range(k), families, 1)
