import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from template_null import (Dataset, DesignSpec, TrialRecord, ValidationError, naive_slope, pair_coefficients,
                           slope_ci)

from conftest import from_means, one_subject

means_st = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _pairwise_trial_oracle(y, w):
    """Two-weight estimator written out over trial pairs."""
    T = y.shape[1]
    return sum((y[1, t] - y[0, t]) / (w[1] - w[0]) for t in range(T)) / T


def test_constant_outcomes_give_zero():
    ds = one_subject(np.full((3, 4), 2.7), DesignSpec((0.2, 0.4, 0.7), 4))
    assert naive_slope(ds).value == 0.0


def test_two_weight_example():
    ds = from_means([3.00, 3.35], [250, 500])
    assert naive_slope(ds).value == pytest.approx(1.4, abs=1e-12)


def test_two_weight_matches_trial_pair_sum():
    rng = np.random.default_rng(0)
    y = rng.normal(3.0, 0.3, (2, 5))
    ds = one_subject(y, DesignSpec((0.25, 0.5), 5))
    assert naive_slope(ds).value == pytest.approx(_pairwise_trial_oracle(y, [0.25, 0.5]), abs=1e-12)


def test_three_weight_example_middle_cancels():
    ds = from_means([3.0, 9.9, 3.8], [200, 500, 800])
    res = naive_slope(ds)
    assert res.value == pytest.approx(0.8 / 0.6, abs=1e-12)
    assert res.n_pairs == 3
    assert res.value == pytest.approx(np.mean([t[2] for t in res.per_pair_terms]), abs=1e-15)


@given(st.lists(means_st, min_size=3, max_size=3))
def test_three_equispaced_equals_least_squares(means):
    ds = from_means(means, [200, 500, 800])
    w = np.array([0.2, 0.5, 0.8])
    ols = np.polyfit(w, np.asarray(means), 1)[0]
    assert naive_slope(ds).value == pytest.approx(ols, abs=1e-12)


@given(means_st, means_st, means_st)
def test_two_and_three_equispaced_agree(lo, mid, hi):
    two = naive_slope(from_means([lo, hi], [200, 800])).value
    three = naive_slope(from_means([lo, mid, hi], [200, 500, 800])).value
    assert abs(two - three) <= 1e-12 * max(1.0, abs(two))


@given(st.lists(means_st, min_size=4, max_size=4))
def test_four_equispaced_weights_relation(means):
    # equal pair weighting gives (11A + 3B) / (36 d); least squares gives (3A + B) / (10 d)
    m = np.asarray(means)
    d = 0.2
    A, B = m[3] - m[0], m[2] - m[1]
    ds = from_means(m, [200, 400, 600, 800])
    assert naive_slope(ds).value == pytest.approx((11 * A + 3 * B) / (36 * d), abs=1e-9)
    ols = np.polyfit([0.2, 0.4, 0.6, 0.8], m, 1)[0]
    assert ols == pytest.approx((3 * A + B) / (10 * d), abs=1e-9)


def test_four_weights_differ_from_least_squares_off_a_line():
    m = np.array([0.0, 1.0, 0.0, 0.0])
    ds = from_means(m, [200, 400, 600, 800])
    ols = np.polyfit([0.2, 0.4, 0.6, 0.8], m, 1)[0]
    # A = 0, B = -1, d = 0.2: -3/7.2 versus -1/2
    assert naive_slope(ds).value == pytest.approx(-5 / 12, abs=1e-12)
    assert ols == pytest.approx(-0.5, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(2, 6), st.integers(1, 4), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_shift_and_tilt_invariance(J, T, c, b, seed):
    rng = np.random.default_rng(seed)
    w = np.sort(rng.choice(np.arange(1, 40), J, replace=False)) * 0.05
    design = DesignSpec(tuple(w), T)
    y = rng.normal(0, 1, (J, T))
    base = naive_slope(one_subject(y, design))
    moved = naive_slope(one_subject(y + c + b * design.weights_array[:, None], design))
    assert base.n_pairs == J * (J - 1) // 2
    assert moved.value == pytest.approx(base.value + b, abs=1e-9)
    # trial order inside a condition is irrelevant
    perm = naive_slope(one_subject(y[:, rng.permutation(T)], design))
    assert perm.value == pytest.approx(base.value, abs=1e-12)
    # dot-product form used by simulation code
    assert pair_coefficients(w) @ y.mean(axis=1) == pytest.approx(base.value, abs=1e-12)


def test_unbalanced_uses_condition_means():
    design = DesignSpec((0.25, 0.5), 3)
    recs = ([TrialRecord("s", 0.25, t, y) for t, y in ((1, 3.0), (2, 3.2), (3, 3.4))]
            + [TrialRecord("s", 0.5, 1, 3.6)])
    assert naive_slope(Dataset(tuple(recs), design)).value == pytest.approx((3.6 - 3.2) / 0.25)


def test_precondition_errors():
    design = DesignSpec((0.25, 0.5), 2)
    single = Dataset((TrialRecord("s", 0.25, 1, 1.0), TrialRecord("s", 0.25, 2, 1.1)), design)
    with pytest.raises(ValidationError, match="two conditions"):
        naive_slope(single)
    two = Dataset.from_array(np.zeros((2, 2, 2)), design)
    with pytest.raises(ValidationError, match="one subject"):
        naive_slope(two)
    with pytest.raises(ValidationError):
        pair_coefficients([0.3])


def test_ci_degenerate_and_errors():
    design = DesignSpec((0.25, 0.5), 4)
    flat = one_subject(np.full((2, 4), 1.5), design)
    assert slope_ci(flat) == (0.0, 0.0)
    with pytest.raises(ValidationError, match="n_boot"):
        slope_ci(flat, n_boot=50)
    lone = one_subject(np.array([[1.0], [2.0]]), DesignSpec((0.25, 0.5), 1))
    with pytest.raises(ValidationError, match="two trials"):
        slope_ci(lone)


def test_ci_width_matches_difference_of_means():
    sigma, T, dw = 0.2, 5, 0.25
    expected = 2 * 1.96 * sigma * np.sqrt(2 / T) / dw
    design = DesignSpec((0.25, 0.5), T)
    rng = np.random.default_rng(11)
    widths = []
    for k in range(200):
        y = 3.0 + 1.4 * design.weights_array[:, None] + rng.normal(0, sigma, (2, T))
        lo, hi = slope_ci(one_subject(y, design), n_boot=1000, seed=k)
        assert lo <= naive_slope(one_subject(y, design)).value <= hi
        widths.append(hi - lo)
    assert np.mean(widths) == pytest.approx(expected, rel=0.25)


def test_ci_is_seeded():
    y = np.random.default_rng(1).normal(0, 1, (2, 5))
    ds = one_subject(y, DesignSpec((0.25, 0.5), 5))
    assert slope_ci(ds, seed=4) == slope_ci(ds, seed=4)
    assert slope_ci(ds, seed=4) != slope_ci(ds, seed=5)
