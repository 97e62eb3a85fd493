import math
from fractions import Fraction

import numpy as np
import pytest

from brownperc.certificate import (
    CountingInstance,
    boundary_tail_bound,
    counting_lemma_check,
    crossing_certified,
    enumerate_counting_instances,
    renorm_recursion,
    seed_condition,
    tail_series,
)
from brownperc.errors import InvalidParameter
from brownperc.stochastic import Deterministic, ExponentialTail, RadiusDistribution, SupOfBrownian

from oracles import brute_force_counting


# ------------------------------------------------------------------ recursion


def test_first_step_exact():
    rep = renorm_recursion(2, 2, 64, 1, 1.0, a0=Fraction(1, 64), c3=0, n_max=1)
    assert rep.scales == [64, 128]
    assert rep.bounds[1] == Fraction(1, 256)
    assert rep.passed
    assert rep.arithmetic == "exact-rational"


def test_full_bound_fails_at_zero():
    for L0 in (2, 10, 1000):
        rep = renorm_recursion(2, 3, L0, 1, 1.0, a0=1, c3=0)
        assert rep.verdict == "fail" and rep.failed_at == 0


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("R", [2, 3, 4, 5])
def test_structural_seed_passes_twenty_levels(d, R):
    L0 = 2 * R ** (4 * (d - 1) + 1)
    rep = renorm_recursion(d, R, L0, 1, 1.0, a0=Fraction(1, L0), c3=0, n_max=20)
    assert rep.structural_ok
    assert rep.passed and len(rep.bounds) == 21
    # closed form: a_n = a0^(2^n) G^(2^n - 1), L_n = L0 R^(n(n+1)/2), G = R^(4(d-1))
    logG = 4 * (d - 1) * math.log(R)
    for n in (1, 5, 20):
        m = 2**n - 1
        log_aL = -(2**n) * math.log(L0) + m * logG + math.log(L0) + n * (n + 1) / 2 * math.log(R)
        assert log_aL <= 0
        assert rep.scales[n] == L0 * R ** (n * (n + 1) // 2)


def test_scales_are_exact_integers():
    rep = renorm_recursion(3, 7, 10**6, 2, 1.0, a0=0, c3=0, n_max=20)
    for n in range(1, len(rep.scales)):
        assert rep.scales[n] == rep.scales[n - 1] * 7**n
    assert rep.scales[-1].bit_length() > 64


def test_scale_overflow_reports_truncation():
    rep = renorm_recursion(2, 1000, 10, 1, 1.0, a0=0, c3=0, n_max=20, scale_bit_cap=200)
    assert rep.truncated_at is not None
    assert rep.passed
    assert max(s.bit_length() for s in rep.scales) <= 200


def test_structural_flag():
    assert not renorm_recursion(2, 2, 63, 1, 1.0, a0=0, c3=0).structural_ok
    assert renorm_recursion(2, 2, 64, 1, 1.0, a0=0, c3=0).structural_ok


def test_correction_term_uses_high_precision():
    rep = renorm_recursion(2, 2, 64, 10, 0.5, tail=(1.0, 1.0), c1=9, c2=1.0, c3=1, a0=Fraction(1, 64), c4=9)
    assert rep.arithmetic.startswith("mpmath-")
    assert int(rep.arithmetic.split("-")[1].rstrip("bit")) >= 256
    # the correction only adds, so bounds dominate the c3 = 0 run
    bare = renorm_recursion(2, 2, 64, 10, 0.5, a0=Fraction(1, 64), c3=0)
    for a, b in zip(rep.bounds, bare.bounds):
        assert float(a) >= float(b)


def test_report_round_trip_fields():
    rep = renorm_recursion(2, 2, 64, 1, 1.0, a0=Fraction(1, 64), c3=0, n_max=3)
    data = rep.to_dict()
    assert data["constants"] == {"c1": 9, "c2": 1.0, "c3": 0, "c4": 9}
    assert data["log10_scales"][0] == pytest.approx(math.log10(64))
    assert data["log10_bounds"][1] == pytest.approx(-math.log10(256))
    assert data["epsilon_max"] == str(Fraction(1, 4 * 2 * 81 * 64**3))


@pytest.mark.parametrize(
    "kwargs",
    [{"R": 1}, {"L0": 1}, {"a0": 2}, {"a0": -0.1}, {"c1": 0}, {"N": 0}, {"lam": -1.0}],
)
def test_recursion_preconditions(kwargs):
    args = {"d": 2, "R": 2, "L0": 64, "N": 1, "lam": 1.0, "a0": 0, "c3": 0}
    args.update(kwargs)
    with pytest.raises(InvalidParameter):
        renorm_recursion(**args)


def test_monotone_in_seed_and_correction():
    rng = np.random.default_rng(3)
    for _ in range(40):
        R = int(rng.integers(2, 4))
        L0 = int(rng.integers(2, 3000))
        a_lo = Fraction(int(rng.integers(0, 50)), L0 * 50)
        a_hi = a_lo + Fraction(int(rng.integers(0, 50)), L0 * 50)
        lo = renorm_recursion(2, R, L0, 1, 1.0, a0=a_lo, c3=0, n_max=8)
        hi = renorm_recursion(2, R, L0, 1, 1.0, a0=a_hi, c3=0, n_max=8)
        assert not (hi.passed and not lo.passed)
        c_lo = renorm_recursion(2, R, L0, 2, 1.0, a0=a_lo, c3=0.5, n_max=6)
        c_hi = renorm_recursion(2, R, L0, 2, 1.0, a0=a_lo, c3=2.0, n_max=6)
        assert not (c_hi.passed and not c_lo.passed)


# ------------------------------------------------------------------ seed condition


def test_seed_condition_examples():
    assert seed_condition(1, 1, 1, 1) == Fraction(1, 4)
    assert seed_condition(2, 64, 3, 3) == Fraction(1, 18874368)


def test_seed_condition_homogeneity_and_monotonicity():
    for d in (1, 2, 3):
        assert seed_condition(d, 20, 3, 5) / seed_condition(d, 40, 3, 5) == 2 ** (d + 1)
    base = seed_condition(2, 10, 2, 2)
    assert seed_condition(3, 10, 2, 2) < base
    assert seed_condition(2, 11, 2, 2) < base
    assert seed_condition(2, 10, 3, 2) < base
    assert seed_condition(2, 10, 2, 3) < base
    assert seed_condition(2, 10.5, 2, 2) == pytest.approx(1 / (4 * 2 * 4 * 10.5**3))


def test_seed_condition_rejects_nonpositive():
    with pytest.raises(InvalidParameter):
        seed_condition(2, 0, 1, 1)


def test_crossing_certified():
    eps = seed_condition(1, 1, 1, 1)
    assert crossing_certified(0.2, eps)
    assert not crossing_certified(0.25, eps)


# ------------------------------------------------------------------ boundary series


def test_bounded_tail_series_vanishes():
    assert boundary_tail_bound(Deterministic(1.0), 3 * 10 + 2, 10, 2) == 0.0


def test_series_strictly_decreasing_in_margin():
    law = ExponentialTail(0.5, 1.0)
    # from M = 3N + 1 on every dropped term is positive (K = 0 contributes nothing)
    vals = [boundary_tail_bound(law, M, 10, 2) for M in range(31, 60)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize(
    "law,d,K0",
    [(ExponentialTail(0.05, 1.0), 2, 3), (ExponentialTail(1.0, 2.0), 3, 0), (SupOfBrownian(400.0, 0.0, 2), 2, 10)],
)
def test_series_matches_brute_force(law, d, K0):
    ks = np.arange(K0, K0 + 10**7, dtype=float)
    brute = d * 4**d * math.fsum(ks ** (d - 1) * law.tail_array(ks))
    assert tail_series(law, K0, d) == pytest.approx(brute, rel=1e-10)


class _HarmonicTail(RadiusDistribution):
    kind = "harmonic"

    def tail(self, L):
        return 1.0 if L <= 1 else 1.0 / L**2

    def tail_array(self, L):
        L = np.asarray(L, dtype=float)
        return np.where(L <= 1, 1.0, 1.0 / np.maximum(L, 1.0) ** 2)


def test_series_without_moment_rejected():
    with pytest.raises(InvalidParameter):
        tail_series(_HarmonicTail(), 1, 2)


# ------------------------------------------------------------------ counting lemma


def test_minimal_instance():
    inst = CountingInstance.build("zabc", "z", {"z": ["a", "b", "c"]}, 1)
    assert tuple(counting_lemma_check(inst)) == (True, True)


def test_undersized_member_breaks_preconditions():
    inst = CountingInstance.build(range(8), [0], {0: [{1, 2}, {3, 4}, {5}]}, 2)
    pre, _ = counting_lemma_check(inst)
    assert not pre


@pytest.mark.parametrize(
    "families",
    [
        {0: [{1}, {2}]},  # fewer than three members
        {0: [{1}, {1, 2}, {3}]},  # overlapping members
        {0: [{0}, {2}, {3}]},  # contains its own point
        {0: [{1}, {2}, set()]},  # empty member
    ],
)
def test_condition_a_violations(families):
    pre, _ = counting_lemma_check(CountingInstance.build(range(5), [0], families, 1))
    assert not pre


def test_pair_cases():
    fam = {0: [{1}, {2}, {3}], 4: [{5}, {6}, {7}]}
    assert counting_lemma_check(CountingInstance.build(range(8), [0, 4], fam, 1)).preconditions_ok  # (i)
    nested = {0: [{1}, {2}, {3, 4, 5, 6, 7}], 4: [{5}, {6}, {7}]}
    assert counting_lemma_check(CountingInstance.build(range(8), [0, 4], nested, 1)).preconditions_ok  # (iii)
    mirror = {0: [{1}, {2}, {3, 4, 5, 6}], 3: [{4}, {5}, {0, 1, 2, 6}]}
    # (ii) with C_0^3 = {3,4,5,6} and C_3^3 = {0,1,2,6}
    assert counting_lemma_check(CountingInstance.build(range(7), [0, 3], mirror, 1)).preconditions_ok
    clash = {0: [{1}, {2}, {3}], 1: [{0}, {2}, {4}]}
    rep = counting_lemma_check(CountingInstance.build(range(5), [0, 1], clash, 1))
    assert not rep.preconditions_ok and any("(b)" in v for v in rep.violations)


def test_instance_dict_round_trip():
    inst = CountingInstance.build(["z", "a", "b", "c"], ["z"], {"z": [["a"], ["b"], ["c"]]}, 1)
    assert CountingInstance.from_dict(inst.to_dict()) == inst
    with pytest.raises(InvalidParameter):
        CountingInstance.from_dict({"S": [1]})


@pytest.mark.parametrize("s", [1, 2, 3, 4, 5])
def test_enumeration_counts_match_brute_force(s):
    summary = enumerate_counting_instances(s)
    expected = brute_force_counting(s)
    for k in range(1, s + 1):
        assert summary.valid_instances[(s, k)] == expected[(s, k)]


def test_enumerated_instances_pass_checker():
    seen = []

    def hook(inst):
        seen.append(inst)
        pre, concl = counting_lemma_check(inst)
        assert pre and concl

    summary = enumerate_counting_instances(6, sample_hook=hook)
    assert summary.counterexamples == []
    assert len(seen) > 0


def test_enumeration_rejects_larger_k():
    with pytest.raises(InvalidParameter):
        enumerate_counting_instances(4, K=2)
