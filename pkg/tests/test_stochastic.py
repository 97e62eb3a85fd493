import math

import numpy as np
import pytest
from scipy import stats

from brownperc.boxes import Box
from brownperc.errors import InvalidParameter
from brownperc.stochastic import (
    RNG_ALGORITHM,
    Deterministic,
    Empirical,
    ExponentialTail,
    Polyline,
    SupOfBrownian,
    brownian_positions,
    default_slab_count,
    derive_stream,
    gouere_safe_intensity,
    hitting_probability_halfline,
    radius_distribution_from_dict,
    radius_moment_bound,
    sample_brownian_bridge,
    sample_brownian_path,
    sample_poisson_points,
    slab_hit_probabilities,
    slab_intensity_sum,
    step_count,
    sup_radius,
)

UNIT_SQUARE = Box((0.0, 0.0), (1.0, 1.0))


# ------------------------------------------------------------------ streams


def test_same_labels_same_stream():
    a = derive_stream(7, [("replica", 0)]).generator().integers(0, 2**63, 64)
    b = derive_stream(7, [("replica", 0)]).generator().integers(0, 2**63, 64)
    assert np.array_equal(a, b)


def test_sibling_streams_differ_in_first_64_outputs():
    a = derive_stream(7, [("replica", 0)]).generator().integers(0, 2**63, 64)
    b = derive_stream(7, [("replica", 1)]).generator().integers(0, 2**63, 64)
    assert not np.any(a == b)


def test_label_encoding_is_unambiguous():
    keys = {
        derive_stream(1, [("ab", 0)]).key,
        derive_stream(1, [("a", 0), ("b", 0)]).key,
        derive_stream(1, [("a", 0)]).child("b", 0).key,
        derive_stream(2, [("ab", 0)]).key,
    }
    assert len(keys) == 3  # the explicit child and the two-label path are the same address


def test_empty_label_path_rejected():
    with pytest.raises(InvalidParameter):
        derive_stream(7, [])


def test_seed_range_checked():
    with pytest.raises(InvalidParameter):
        derive_stream(-1, [("x", 0)])
    with pytest.raises(InvalidParameter):
        derive_stream(2**64, [("x", 0)])


def test_algorithm_identifier_is_recorded():
    assert "Philox" in RNG_ALGORITHM


def test_sibling_streams_uncorrelated():
    a = derive_stream(9, [("s", 0)]).generator().random(10_000)
    b = derive_stream(9, [("s", 1)]).generator().random(10_000)
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 3.0 / math.sqrt(10_000)


# ------------------------------------------------------------------ Poisson points


def test_zero_intensity_is_empty():
    assert len(sample_poisson_points(UNIT_SQUARE, 0.0, derive_stream(1, [("p", 0)]))) == 0


def test_negative_intensity_rejected():
    with pytest.raises(InvalidParameter):
        sample_poisson_points(UNIT_SQUARE, -1.0, derive_stream(1, [("p", 0)]))


def test_degenerate_window_rejected():
    with pytest.raises(InvalidParameter):
        sample_poisson_points(Box((0, 0), (1, 0)), 1.0, derive_stream(1, [("p", 0)]))


def test_poisson_same_stream_twice_identical():
    s = derive_stream(3, [("p", 0)])
    a = sample_poisson_points(UNIT_SQUARE, 50.0, s)
    b = sample_poisson_points(UNIT_SQUARE, 50.0, s)
    assert np.array_equal(a.points, b.points)


def test_poisson_count_moments_and_fit():
    base = derive_stream(11, [("poisson", 0)])
    counts = np.array([len(sample_poisson_points(UNIT_SQUARE, 5.0, base.child("r", i))) for i in range(10_000)])
    assert abs(counts.mean() - 5.0) <= 3 * math.sqrt(5.0 / 10_000)
    ks = np.arange(0, 13)
    observed = np.array([np.sum(counts == k) for k in ks[:-1]] + [np.sum(counts >= 12)])
    expected = np.append(stats.poisson.pmf(ks[:-1], 5.0), stats.poisson.sf(11, 5.0)) * counts.size
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_poisson_points_uniform_inside_window():
    w = Box((-2.0, 1.0, 0.0), (3.0, 2.0, 4.0))
    ps = sample_poisson_points(w, 100.0, derive_stream(4, [("u", 0)]))
    assert np.all(w.contains(ps.points))
    lo, hi = w.as_arrays()
    for k in range(3):
        u = (ps.points[:, k] - lo[k]) / (hi[k] - lo[k])
        assert stats.kstest(u, "uniform").pvalue > 0.01


# ------------------------------------------------------------------ Brownian paths


def test_zero_horizon_single_position():
    p = sample_brownian_path((1.0, 2.0), 0.0, 0.01, derive_stream(1, [("b", 0)]))
    assert len(p) == 1
    assert np.array_equal(p.positions[0], [1.0, 2.0])


def test_position_count():
    p = sample_brownian_path((0.0, 0.0), 1.0, 0.01, derive_stream(1, [("b", 0)]))
    assert len(p) == 101
    assert step_count(0.35, 0.01) == 35
    assert step_count(0.015, 0.01) == 2


def test_nonpositive_step_rejected():
    with pytest.raises(InvalidParameter):
        sample_brownian_path((0.0,), 1.0, 0.0, derive_stream(1, [("b", 0)]))
    with pytest.raises(InvalidParameter):
        sample_brownian_path((0.0,), 1.0, -0.1, derive_stream(1, [("b", 0)]))


def test_terminal_variance():
    pos = brownian_positions(np.zeros((10_000, 1)), 1.0, 0.01, derive_stream(2, [("var", 0)]))
    var = pos[:, -1, 0].var()
    assert 0.95 <= var <= 1.05


def test_residual_last_step_variance():
    pos = brownian_positions(np.zeros((20_000, 1)), 0.015, 0.01, derive_stream(2, [("res", 0)]))
    assert pos.shape[1] == 3
    last = pos[:, 2, 0] - pos[:, 1, 0]
    assert abs(last.var() - 0.005) < 5 * 0.005 * math.sqrt(2 / 20_000)


def test_increments_pass_normality():
    pos = brownian_positions(np.zeros((100, 2)), 0.5, 0.01, derive_stream(3, [("norm", 0)]))
    incr = np.diff(pos, axis=1).reshape(-1) / 0.1
    assert incr.size == 10_000
    assert stats.normaltest(incr).pvalue > 0.01
    assert stats.kstest(incr, "norm").pvalue > 0.01


def test_longer_horizon_extends_paths():
    s = derive_stream(5, [("ext", 0)])
    starts = np.array([[0.0, 0.0], [1.0, 1.0]])
    short = brownian_positions(starts, 0.3, 0.01, s)
    long = brownian_positions(starts, 0.9, 0.01, s)
    assert np.array_equal(long[:, : short.shape[1]], short)


def test_paths_start_at_start():
    p = sample_brownian_path((4.0, -1.0, 2.0), 0.2, 0.01, derive_stream(1, [("s", 0)]))
    assert np.array_equal(p.positions[0], p.start)


# ------------------------------------------------------------------ bridges


def test_bridge_pins_endpoint_exactly():
    rng = np.random.default_rng(0)
    for i in range(50):
        a, abar = rng.normal(size=(2, 3))
        delta = float(rng.uniform(0.05, 2.0))
        step = float(rng.uniform(0.001, delta))
        w = sample_brownian_bridge(a, abar, delta, step, derive_stream(1, [("br", i)]))
        assert np.array_equal(w.positions[0], a)
        assert np.array_equal(w.positions[-1], abar)


def test_bridge_mean_and_variance():
    base = derive_stream(8, [("bridge", 0)])
    mids = np.array(
        [sample_brownian_bridge((0.0,), (0.0,), 1.0, 0.01, base.child("r", i)).positions[50, 0] for i in range(10_000)]
    )
    assert abs(mids.mean()) < 3 * math.sqrt(0.25 / 10_000)
    assert 0.25 * 0.95 <= mids.var() <= 0.25 * 1.05


@pytest.mark.parametrize("delta,step", [(0.0, 0.01), (-1.0, 0.01), (1.0, 0.0), (0.1, 0.2)])
def test_bridge_rejects_bad_times(delta, step):
    with pytest.raises(InvalidParameter):
        sample_brownian_bridge((0.0,), (0.0,), delta, step, derive_stream(1, [("b", 0)]))


# ------------------------------------------------------------------ hitting probabilities


def test_hitting_probability_examples():
    assert hitting_probability_halfline(0.0, 1.0) == 1.0
    assert hitting_probability_halfline(1.0, 1.0) == pytest.approx(2 * stats.norm.sf(1.0), abs=1e-12)
    assert hitting_probability_halfline(1.0, 1.0) == pytest.approx(0.31731, abs=1e-5)
    assert hitting_probability_halfline(1.0, 0.0) == 0.0
    assert hitting_probability_halfline(0.0, 0.0) == 1.0
    assert hitting_probability_halfline(1.0, 1e-8) < 1e-100


def test_hitting_probability_rejects_negative():
    with pytest.raises(InvalidParameter):
        hitting_probability_halfline(-1.0, 1.0)
    with pytest.raises(InvalidParameter):
        hitting_probability_halfline(1.0, -1.0)


def test_slab_sum_at_two_pi():
    t = 2 * math.pi
    value, lower = slab_intensity_sum(t, 30)
    assert lower == pytest.approx(1.0, abs=1e-15)
    assert value >= lower
    # the full sum equals E sup = sqrt(2t/pi); cross-check that with discretized suprema
    pos = brownian_positions(np.zeros((4000, 1)), t, 0.0025, derive_stream(1, [("esup", 0)]))
    sup = pos[:, :, 0].max(axis=1)
    # discretization lowers the supremum by about 0.5826 sqrt(step)
    est = sup.mean() + 0.5826 * math.sqrt(0.0025)
    assert abs(est - value) < 4 * sup.std() / math.sqrt(sup.size)


def test_slab_sum_vanishes_as_t_shrinks():
    values = [slab_intensity_sum(t, 10)[0] for t in (1e-2, 1e-4, 1e-6)]
    assert values[0] > values[1] > values[2]
    assert values[2] < 1e-3


def test_slab_probabilities_decrease_in_k():
    p = slab_hit_probabilities(4.0, 40)
    assert np.all(np.diff(p) <= 0)
    assert p[0] <= 1.0


@pytest.mark.parametrize("t", [1.0, 4.0, 25.0])
def test_slab_lower_bound(t):
    value, lower = slab_intensity_sum(t, default_slab_count(t))
    assert value >= lower
    assert value == pytest.approx(math.sqrt(2 * t / math.pi), rel=1e-6)


def test_slab_inputs_checked():
    with pytest.raises(InvalidParameter):
        slab_intensity_sum(0.0, 10)
    with pytest.raises(InvalidParameter):
        slab_intensity_sum(1.0, 0)


# ------------------------------------------------------------------ suprema


def test_sup_radius_examples():
    const = Polyline(np.zeros(2), 0.1, 0.3, np.zeros((4, 2)))
    assert sup_radius(const) == 0.0
    line = Polyline(np.zeros(2), 1.0, 1.0, np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert sup_radius(line) == 5.0


def test_sup_radius_tail_bound_d1():
    pos = brownian_positions(np.zeros((10_000, 1)), 1.0, 0.01, derive_stream(6, [("sup", 0)]))
    sup = np.abs(pos[:, :, 0]).max(axis=1)
    p = float(np.mean(sup >= 2.0))
    bound = (4 / 2) * math.sqrt(1 / (2 * math.pi)) * math.exp(-2)
    assert p <= bound + 3 * math.sqrt(bound * (1 - bound) / sup.size)


def test_reflection_consistency_under_refinement():
    # one-sided supremum over [0, 1] against 2(1 - Phi(1)); the discretization bias scales like sqrt(step)
    analytic = 2 * stats.norm.sf(1.0)
    n = 10_000

    def estimate(step, label):
        pos = brownian_positions(np.zeros((n, 1)), 1.0, step, derive_stream(12, [(label, 0)]))
        return float(np.mean(pos[:, :, 0].max(axis=1) >= 1.0))

    coarse = estimate(0.01, "coarse")
    fine = estimate(0.0025, "fine")
    sigma = math.sqrt(analytic * (1 - analytic) / n)
    assert abs(fine - analytic) < abs(coarse - analytic)
    extrapolated = 2 * fine - coarse
    assert abs(extrapolated - analytic) < 3 * math.sqrt(5) * sigma


# ------------------------------------------------------------------ moment bound and safe intensity


def test_moment_bound_small_t_limit():
    eps = 0.5
    for d in (1, 2, 3):
        assert radius_moment_bound(1e-4, d, eps) == pytest.approx(eps**d, abs=1e-9)


def test_moment_bound_monotone_and_above_floor():
    vals = [radius_moment_bound(t, 2, 0.1) for t in (0.01, 0.1, 1.0, 10.0)]
    assert all(v >= 0.1**2 for v in vals)
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_moment_bound_dominates_monte_carlo():
    eps = 0.1
    pos = brownian_positions(np.zeros((5000, 2)), 1.0, 0.005, derive_stream(13, [("moment", 0)]))
    sup = np.sqrt((pos**2).sum(axis=2)).max(axis=1)
    empirical = np.maximum(sup, eps) ** 2
    bound = radius_moment_bound(1.0, 2, eps)
    assert bound >= empirical.mean() + 3 * empirical.std() / math.sqrt(empirical.size)


def test_moment_bound_inputs_checked():
    with pytest.raises(InvalidParameter):
        radius_moment_bound(0.0, 2, 0.1)
    with pytest.raises(InvalidParameter):
        radius_moment_bound(1.0, 2, 0.0)


def test_safe_intensity():
    assert gouere_safe_intensity(2.0, 1.0) == 0.5
    assert gouere_safe_intensity(1e300, 1.0) < 1e-299
    assert gouere_safe_intensity(4.0, 3.0) == pytest.approx(gouere_safe_intensity(2.0, 3.0) / 2)
    with pytest.raises(InvalidParameter):
        gouere_safe_intensity(0.0, 1.0)
    with pytest.raises(InvalidParameter):
        gouere_safe_intensity(1.0, -1.0)


# ------------------------------------------------------------------ radius laws


def test_deterministic_and_empirical_agree():
    s = derive_stream(1, [("r", 0)])
    assert np.array_equal(Empirical((1.0, 1.0, 1.0)).sample(100, s), Deterministic(1.0).sample(100, s))
    L = np.linspace(0, 2, 21)
    assert np.array_equal(Empirical((1.0, 1.0, 1.0)).tail_array(L), Deterministic(1.0).tail_array(L))


def test_exponential_tail_law():
    law = ExponentialTail(2.0, 0.3)
    x = law.sample(20_000, derive_stream(1, [("exp", 0)]))
    assert np.all(x >= 0.3)
    for L in (0.2, 0.5, 1.0, 2.0):
        emp = float(np.mean(x >= L))
        assert abs(emp - law.tail(L)) < 4 * math.sqrt(max(law.tail(L), 1e-4) / x.size)


def test_sup_of_brownian_tail_bounds_samples():
    law = SupOfBrownian(1.0, 0.5, 2, 0.01)
    x = law.sample(5000, derive_stream(1, [("sob", 0)]))
    assert np.all(x >= 0.5)
    for L in (1.5, 2.5, 3.5):
        assert float(np.mean(x >= L)) <= law.tail(L) + 3 * math.sqrt(law.tail(L) / x.size)


@pytest.mark.parametrize(
    "law",
    [Deterministic(1.5), Empirical((0.0, 1.0, 2.5)), ExponentialTail(1.0, 1.0), SupOfBrownian(0.5, 0.1, 3, 0.02)],
)
def test_radius_law_round_trip(law):
    assert radius_distribution_from_dict(law.to_dict()) == law


def test_radius_law_validation():
    with pytest.raises(InvalidParameter):
        Deterministic(-1.0)
    with pytest.raises(InvalidParameter):
        Empirical((1.0, -0.5))
    with pytest.raises(InvalidParameter):
        ExponentialTail(0.0, 1.0)
    with pytest.raises(InvalidParameter):
        SupOfBrownian(0.0, 0.0, 2)
    with pytest.raises(InvalidParameter):
        radius_distribution_from_dict({"kind": "lognormal"})
