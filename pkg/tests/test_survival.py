import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optsurv import survival
from optsurv.dataset import BinaryDataset
from optsurv.errors import StructureError
from optsurv.survival import StepFunction, TimeGrid, km_estimator, sample_loss
from optsurv.tree import Leaf, Split, SurvivalTree

from oracles import censoring_oracle, double_loop_loss, km_oracle, random_fixture, riemann_loss


def aligned_fixture(seed, n=10):
    """Integer times whose maximum divides 10^4, so Riemann cells never straddle a jump."""
    rng = np.random.default_rng(seed)
    y_max = int(rng.choice([20, 25, 40, 50]))
    times = rng.integers(1, y_max + 1, size=n).astype(float)
    times[0] = y_max
    events = (rng.random(n) < 0.6).astype(int)
    events[1] = 1
    X = (rng.random((n, 3)) < 0.5).astype(np.uint8)
    X[0], X[1] = 0, 1
    return X, times, events


# --- step functions -------------------------------------------------------------------


def test_step_function_right_continuous_and_left_limit():
    f = StepFunction([1.0, 2.0], [0.5, 0.25], 1.0)
    assert f(0.5) == 1.0
    assert f(1.0) == 0.5
    assert f.left(1.0) == 1.0
    assert f(5.0) == 0.25
    assert f.left(2.0) == 0.5
    np.testing.assert_array_equal(f.on_intervals([1.0, 2.0, 3.0]), [1.0, 0.5, 0.25])


def test_step_function_rejects_unsorted_breakpoints():
    with pytest.raises(ValueError):
        StepFunction([2.0, 1.0], [0.5, 0.2])


def test_median():
    assert StepFunction([1.0, 3.0], [0.6, 0.4]).median() == 3.0
    assert math.isinf(StepFunction([1.0], [0.9]).median())


def test_time_grid_lengths_sum_to_ymax():
    g = TimeGrid.from_times([3.0, 1.0, 1.0, 7.5])
    assert g.breakpoints.tolist() == [1.0, 3.0, 7.5]
    assert math.isclose(g.interval_lengths.sum(), 7.5)
    assert np.all(g.interval_lengths > 0)


# --- Kaplan-Meier -----------------------------------------------------------------------


def test_km_all_censored_is_one():
    s = km_estimator([1, 2, 3], [0, 0, 0])
    assert s.breakpoints.size == 0
    assert s(10.0) == 1.0


def test_km_three_samples():
    s = km_estimator([1, 2, 3], [1, 1, 0])
    assert s(0.5) == 1.0
    assert abs(s(1.0) - float(Fraction(2, 3))) <= 1e-12
    assert abs(s(2.5) - float(Fraction(2, 3) * Fraction(1, 2))) <= 1e-12
    assert abs(s(100) - 1 / 3) <= 1e-12


def test_km_four_samples():
    s = km_estimator([1, 2, 3, 4], [1, 0, 1, 1])
    expect = [(0.5, Fraction(1)), (1, Fraction(3, 4)), (2.5, Fraction(3, 4)), (3, Fraction(3, 8)), (4, Fraction(0))]
    for t, v in expect:
        assert abs(s(t) - float(v)) <= 1e-12


def test_censoring_curve_fixture():
    g = survival.censoring_km([1, 2, 3, 4], [1, 0, 1, 1])
    assert g(1.9) == 1.0
    assert abs(g(2.0) - 2 / 3) <= 1e-12
    assert abs(g(50.0) - 2 / 3) <= 1e-12
    assert survival.censoring_km([1, 2], [1, 1])(5.0) == 1.0


def test_censoring_all_censored_is_full_km():
    t = [1.0, 2.0, 2.0, 5.0]
    g = survival.censoring_km(t, [0, 0, 0, 0])
    s = km_estimator(t, [1, 1, 1, 1])
    assert g == s


def test_km_empty_raises():
    with pytest.raises(ValueError):
        km_estimator([], [])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(1, 15), st.integers(0, 1)), min_size=1, max_size=25),
)
def test_km_matches_product_definition(rows):
    times = [t for t, _ in rows]
    events = [e for _, e in rows]
    s = km_estimator(times, events)
    ref = km_oracle(times, events)
    vals = np.asarray(s.values)
    assert np.all(np.diff(vals) <= 1e-15)
    assert np.all((vals >= 0) & (vals <= 1))
    for t in np.arange(0, 17, 0.5):
        assert abs(s(t) - ref(t)) <= 1e-12


def test_km_weights_equal_duplication():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    e = np.array([1, 0, 1, 1])
    w = np.array([2, 0, 1, 3])
    dup = km_estimator(np.repeat(t, w), np.repeat(e, w))
    assert km_estimator(t, e, weights=w) == dup


# --- per-sample loss --------------------------------------------------------------------


def _data(times, events, X=None):
    times = np.asarray(times, float)
    if X is None:
        X = np.zeros((times.size, 1), np.uint8)
        X[0, 0] = 1
    return BinaryDataset(X, times, events, drop_constant=False)


def test_sample_loss_own_curve_is_zero():
    d = _data([3.0, 5.0], [1, 0])
    curve = StepFunction([3.0], [0.0])
    assert sample_loss(curve, 3.0, 1, d.censoring, d.y_max, d.n_samples) == 0.0


def test_sample_loss_constant_one_curve():
    d = _data([2.0, 4.0, 10.0], [1, 0, 1])
    one = StepFunction([], [], 1.0)
    g_own = d.censoring.left(2.0)
    expected = (10.0 - 2.0) / g_own / (10.0 * 3)
    assert math.isclose(sample_loss(one, 2.0, 1, d.censoring, d.y_max, 3), expected, rel_tol=1e-14)


def test_sample_loss_matches_riemann_on_four_samples():
    times = np.array([2.0, 5.0, 8.0, 10.0])
    events = np.array([1, 0, 1, 0])
    d = _data(times, events)
    curve = StepFunction([2.0, 6.0, 8.0], [0.8, 0.55, 0.2])
    G = censoring_oracle(times, events)
    for i in range(4):
        ours = sample_loss(curve, times[i], events[i], d.censoring, d.y_max, 4)
        # integrate the single sample: every other sample gets a zero-weight dummy
        h = 10.0 / 10_000
        mids = (np.arange(10_000) + 0.5) * h
        s = np.array([curve(t) for t in mids])
        g = np.array([G(t) for t in mids])
        alive = mids < times[i]
        val = np.sum(np.where(alive, (s - 1) ** 2 / g, 0.0)) * h
        if events[i]:
            val += np.sum(np.where(~alive, s * s / G(times[i], left=True), 0.0)) * h
        assert abs(ours - val / 40.0) <= 1e-6 * max(1.0, abs(ours))


def test_sample_loss_grid_refinement_invariant():
    d = _data([2.0, 5.0, 7.0], [1, 1, 0])
    curve = StepFunction([2.0, 5.0], [0.6, 0.3])
    refined = StepFunction([1.0, 2.0, 3.3, 5.0, 6.1], [1.0, 0.6, 0.6, 0.3, 0.3])
    for i in range(3):
        a = sample_loss(curve, d.times[i], d.events[i], d.censoring, d.y_max, 3)
        b = sample_loss(refined, d.times[i], d.events[i], d.censoring, d.y_max, 3)
        assert math.isclose(a, b, rel_tol=1e-13, abs_tol=1e-15)


# --- leaf and tree losses -----------------------------------------------------------------


def test_leaf_loss_of_root_equals_single_leaf_tree():
    X, t, e = random_fixture(3)
    d = BinaryDataset(X, t, e)
    tree = SurvivalTree(Leaf(survival.leaf_curve(d, np.ones(d.n_samples)), d.n_samples), d.feature_names)
    assert math.isclose(d.root_loss(), survival.tree_loss(tree, d), rel_tol=1e-12)


def test_singleton_uncensored_leaf_has_zero_loss():
    X, t, e = random_fixture(4)
    d = BinaryDataset(X, t, e)
    first = int(np.argmin(np.where(e == 1, t, np.inf)))
    assert survival.leaf_loss(1 << first, d).loss == 0.0


def test_leaf_loss_empty_support_raises():
    X, t, e = random_fixture(4)
    with pytest.raises(ValueError):
        survival.leaf_loss(0, BinaryDataset(X, t, e))


@pytest.mark.parametrize("seed", range(10))
def test_additivity_random_supports(seed):
    X, t, e = random_fixture(seed)
    d = BinaryDataset(X, t, e)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        members = rng.choice(d.n_samples, size=min(8, d.n_samples), replace=False)
        leaf = survival.leaf_loss(members, d)
        per = [sample_loss(leaf.km_curve, t[i], e[i], d.censoring, d.y_max, d.n_samples) for i in members]
        assert math.isclose(leaf.loss, math.fsum(per), rel_tol=1e-10, abs_tol=1e-15)
        eq = sum(c.loss for c in d.classes if set(c.members) <= set(members.tolist()))
        assert leaf.loss >= eq - 1e-12


def _random_tree(d, rng, depth):
    def rec(mask, depth_left, used):
        feats = [j for j in range(d.n_features) if j not in used]
        if depth_left == 0 or not feats or mask.sum() < 2 or rng.random() < 0.25:
            return Leaf(survival.leaf_curve(d, mask), int(mask.sum()))
        j = int(rng.choice(feats))
        col = d.X[:, j].astype(bool)
        if not (mask & col).any() or not (mask & ~col).any():
            return Leaf(survival.leaf_curve(d, mask), int(mask.sum()))
        return Split(j, d.feature_names[j], rec(mask & ~col, depth_left - 1, used | {j}), rec(mask & col, depth_left - 1, used | {j}))

    return SurvivalTree(rec(np.ones(d.n_samples, bool), depth, frozenset()), d.feature_names)


@pytest.mark.parametrize("seed", range(12))
def test_tree_loss_three_ways(seed):
    X, t, e = random_fixture(100 + seed, integer_times=seed % 2 == 0)
    d = BinaryDataset(X, t, e)
    tree = _random_tree(d, np.random.default_rng(seed), 3)
    curves = tree.predict_curves(d.X)
    direct = survival.tree_loss(tree, d)
    per_sample = math.fsum(sample_loss(curves[i], t[i], e[i], d.censoring, d.y_max, d.n_samples) for i in range(d.n_samples))
    leaves = tree.leaves()
    assignment = tree.apply(d.X)
    by_leaf = math.fsum(survival.leaf_loss(np.nonzero(assignment == k)[0], d).loss for k in range(len(leaves)) if (assignment == k).any())
    oracle = double_loop_loss(curves, t.tolist(), e.tolist())
    for v in (per_sample, by_leaf, oracle):
        assert math.isclose(direct, v, rel_tol=1e-10, abs_tol=1e-15)


def test_tree_loss_with_off_grid_curve():
    X, t, e = aligned_fixture(5)
    d = BinaryDataset(X, t, e, drop_constant=False)
    curve = StepFunction([0.7, 3.3, 11.1], [0.9, 0.5, 0.1])
    tree = SurvivalTree(Leaf(curve, d.n_samples), d.feature_names)
    curves = [curve] * d.n_samples
    oracle = double_loop_loss(curves, t.tolist(), e.tolist(), extra_breaks=curve.breakpoints.tolist())
    assert math.isclose(survival.tree_loss(tree, d), oracle, rel_tol=1e-10)


def test_tree_loss_rejects_unknown_feature():
    X, t, e = random_fixture(1)
    d = BinaryDataset(X, t, e)
    leaf = Leaf(StepFunction([], []), 1)
    tree = SurvivalTree(Split(d.n_features + 3, "ghost", leaf, leaf), [])
    with pytest.raises(StructureError):
        survival.tree_loss(tree, d)


def test_partition_loss_requires_exact_cover():
    X, t, e = random_fixture(2)
    d = BinaryDataset(X, t, e)
    with pytest.raises(StructureError):
        survival.partition_loss([[0, 1], [1, 2]], d)


def test_zero_loss_tree_of_singletons():
    # distinct death times, each sample alone in a leaf
    times = np.array([1.0, 2.0, 3.0, 4.0])
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], np.uint8)
    d = BinaryDataset(X, times, [1, 1, 1, 1])
    assert survival.partition_loss([[0], [1], [2], [3]], d) == 0.0


# --- equivalent loss ----------------------------------------------------------------------


def test_equivalent_loss_singleton_uncensored_is_zero():
    d = _data([2.0, 5.0, 7.0], [1, 1, 0])
    assert survival.equivalent_loss(d.toward_one[0], d.toward_zero[0], d.grid.interval_lengths, d.norm) == 0.0


def test_equivalent_loss_equal_weights_identity():
    a = np.array([1.0, 2.0, 0.0, 3.0])
    lengths = np.array([1.0, 0.5, 2.0, 1.0])
    val = survival.equivalent_loss(a, a, lengths, 0.1)
    assert math.isclose(val, 0.1 * np.sum(lengths * a / 2))


def test_equivalent_loss_grid_search_two_samples():
    d = _data([1.0, 2.0], [1, 0], X=np.zeros((2, 1), np.uint8))
    a = d.toward_one.sum(axis=0)
    b = d.toward_zero.sum(axis=0)
    grid = np.linspace(0, 1, 101)
    best = 0.0
    for k in range(d.n_intervals):
        vals = a[k] * (grid - 1) ** 2 + b[k] * grid**2
        best += d.grid.interval_lengths[k] * vals.min()
    best *= d.norm
    assert abs(survival.equivalent_loss(a, b, d.grid.interval_lengths, d.norm) - best) <= 1e-4


@pytest.mark.parametrize("seed", range(6))
def test_equivalent_loss_below_standalone_leaf(seed):
    X, t, e = random_fixture(seed, m=3)
    d = BinaryDataset(X, t, e)
    for c in d.classes:
        assert c.loss <= survival.leaf_loss(list(c.members), d).loss + 1e-13
        assert c.loss >= 0


def test_ipcw_weights_zero_where_censoring_curve_vanishes():
    # the last observation is censored, so G drops to zero at t=6
    d = _data([2.0, 4.0, 6.0], [1, 1, 0])
    assert d.censoring(6.0) == 0.0
    assert np.all(np.isfinite(d.toward_one))
    assert np.all(np.isfinite(d.toward_zero))


def test_riemann_oracle_agrees_on_aligned_fixture():
    X, t, e = aligned_fixture(0)
    d = BinaryDataset(X, t, e, drop_constant=False)
    curve = survival.leaf_curve(d, np.ones(d.n_samples))
    tree = SurvivalTree(Leaf(curve, d.n_samples), d.feature_names)
    exact = survival.tree_loss(tree, d)
    approx = riemann_loss([curve] * d.n_samples, t.tolist(), e.tolist())
    assert math.isclose(exact, approx, rel_tol=1e-6)
