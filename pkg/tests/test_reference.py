from pathlib import Path

import numpy as np
import pytest

from optsurv import survival
from optsurv.bounds import BoundConfig, guess_floor, initial_lower_bound
from optsurv.dataset import BinaryDataset, load_csv, veterans_recipe
from optsurv.errors import DuplicateIndex, FeatureMismatchError, MissingIndex, NegativeLoss, ReferenceFileError
from optsurv.reference import (
    ReferenceModel,
    average_curves,
    export_losses,
    fit_reference,
    import_losses,
    reference_losses,
)
from optsurv.solver import greedy_tree
from optsurv.survival import StepFunction

from oracles import random_fixture

VETERANS = Path(__file__).resolve().parents[1] / "data" / "veterans.csv"


def data(seed=0, **kw):
    X, t, e = random_fixture(seed, **kw)
    return BinaryDataset(X, t, e)


def test_degenerate_ensemble_is_greedy_tree():
    d = data(1)
    model = fit_reference(d, n_trees=1, max_depth=None, bootstrap=False, subsample=False, min_leaf_size=2)
    g = greedy_tree(d, BoundConfig(0.0, max_depth=None, min_leaf_size=2))
    assert model.trees[0].to_json() == g.to_json()


def test_fixed_seed_is_deterministic():
    d = data(2)
    a = reference_losses(fit_reference(d, 10, 4, seed=5), d)
    b = reference_losses(fit_reference(d, 10, 4, seed=5), d)
    assert np.array_equal(a, b)
    c = reference_losses(fit_reference(d, 10, 4, seed=6), d)
    assert not np.array_equal(a, c)


def test_losses_equal_sample_loss_of_ensemble_curve():
    d = data(3)
    model = fit_reference(d, 5, 3, seed=1)
    losses = reference_losses(model, d)
    for i in range(d.n_samples):
        members = [t.leaves()[t.apply(d.X[i : i + 1])[0]].curve for t in model.trees]
        curve = average_curves(members)
        expect = survival.sample_loss(curve, d.times[i], d.events[i], d.censoring, d.y_max, d.n_samples)
        assert losses[i] == expect
    assert np.all(losses >= 0)


def test_ensemble_curve_monotone_and_clipped():
    c = average_curves([StepFunction([1.0, 3.0], [0.5, 0.1]), StepFunction([2.0], [0.2])])
    assert c.initial_value == 1.0
    assert np.all(np.diff(c.values) <= 0)
    assert np.all((c.values >= 0) & (c.values <= 1))
    assert np.allclose(c.values, [0.75, 0.35, 0.15])


def test_zero_loss_reference():
    times = np.array([1.0, 2.0, 3.0, 4.0])
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], np.uint8)
    d = BinaryDataset(X, times, [1, 1, 1, 1])
    model = fit_reference(d, 1, None, bootstrap=False, subsample=False, min_leaf_size=1)
    assert np.all(reference_losses(model, d) == 0.0)


def test_losses_reproduce_guessed_root_bound():
    d = data(4)
    model = fit_reference(d, 8, 3, seed=0)
    ref = reference_losses(model, d)
    lam = 0.01
    cfg = BoundConfig(lam, min_leaf_size=1, use_equivalent_points=False, use_lookahead=False, reference_losses=ref)
    expected = min(d.root_loss() + lam, guess_floor(ref.sum(), cfg))
    assert initial_lower_bound(d.full_bits, d, cfg) == pytest.approx(expected, rel=1e-12)


def test_feature_space_mismatch():
    d = data(5, m=4)
    other = data(6, m=3)
    model = fit_reference(d, 2, 2, seed=0)
    with pytest.raises(FeatureMismatchError):
        reference_losses(model, other)


def test_model_json_roundtrip():
    d = data(7)
    model = fit_reference(d, 3, 3, seed=0)
    again = ReferenceModel.from_json(model.to_json())
    assert again.n_trees == 3
    assert np.array_equal(reference_losses(again, d), reference_losses(model, d))


def test_n_trees_must_be_positive():
    with pytest.raises(ValueError):
        fit_reference(data(0), n_trees=0)


# --- loss files -------------------------------------------------------------------------------


def test_export_import_bitwise_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    losses = rng.random(30) * 1e-3
    losses[3] = 0.0
    p = tmp_path / "l.csv"
    export_losses(losses, p)
    back = import_losses(p, 30)
    assert back.tobytes() == losses.tobytes()


def test_import_errors(tmp_path):
    p = tmp_path / "l.csv"
    rows = "\n".join(f"{i},0.5" for i in range(10) if i != 5)
    p.write_text("index,loss\n" + rows + "\n")
    with pytest.raises(MissingIndex) as exc:
        import_losses(p, 10)
    assert exc.value.index == 5
    p.write_text("index,loss\n0,0.1\n0,0.2\n1,0.1\n")
    with pytest.raises(DuplicateIndex):
        import_losses(p, 2)
    p.write_text("index,loss\n0,0.1\n1,-0.2\n")
    with pytest.raises(NegativeLoss):
        import_losses(p, 2)
    p.write_text("idx,value\n0,0.1\n")
    with pytest.raises(ReferenceFileError):
        import_losses(p, 1)


def test_external_file_accepted(tmp_path):
    p = tmp_path / "ext.csv"
    p.write_text("index,loss\n2,0.3\n0,0.1\n1,0.2\n")
    assert import_losses(p, 3).tolist() == [0.1, 0.2, 0.3]


def test_bagging_beats_single_member_on_veterans():
    d = veterans_recipe(load_csv(str(VETERANS), "time", "status"))
    wins = 0
    for seed in range(20):
        ens = reference_losses(fit_reference(d, 100, 9, seed=seed), d).mean()
        single = reference_losses(fit_reference(d, 1, 9, seed=seed), d).mean()
        wins += ens <= single
    assert wins >= 16
