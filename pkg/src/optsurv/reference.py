"""Reference models whose per-sample losses feed the guessed lower bound.

The built-in reference is a bagged ensemble of greedy survival trees with
random feature subsampling; any other model can contribute through a loss
file (``index,loss`` CSV).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import survival
from .bounds import BoundConfig
from .errors import DuplicateIndex, FeatureMismatchError, MissingIndex, NegativeLoss, ReferenceFileError
from .solver import greedy_tree
from .survival import StepFunction
from .tree import SurvivalTree


@dataclass(frozen=True)
class ReferenceModel:
    trees: tuple
    max_depth: int | None
    feature_names: tuple

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a reference model needs at least one tree")

    @property
    def n_trees(self):
        return len(self.trees)

    def predict_curves(self, X):
        """Ensemble curve per row: mean of member leaf curves, monotone and clipped."""
        X = np.asarray(X)
        routes = np.column_stack([t.apply(X) for t in self.trees])
        leaves = [t.leaves() for t in self.trees]
        cache, out = {}, []
        for row in map(tuple, routes):
            curve = cache.get(row)
            if curve is None:
                curve = average_curves([leaves[k][i].curve for k, i in enumerate(row)])
                cache[row] = curve
            out.append(curve)
        return out

    def to_json(self):
        return json.dumps([t.to_dict() for t in self.trees]) + "\n"

    @classmethod
    def from_json(cls, text):
        items = json.loads(text)
        trees = tuple(SurvivalTree.from_dict(d) for d in items)
        if not trees:
            raise ValueError("empty reference model file")
        return cls(trees, trees[0].max_depth, tuple(trees[0].feature_names))


def average_curves(curves) -> StepFunction:
    bp = np.unique(np.concatenate([c.breakpoints for c in curves]))
    if bp.size == 0:
        return StepFunction(bp, bp.copy(), 1.0)
    vals = np.mean([np.asarray(c(bp), dtype=float) for c in curves], axis=0)
    vals = np.clip(np.minimum.accumulate(vals), 0.0, 1.0)
    init = float(np.clip(np.mean([c.initial_value for c in curves]), 0.0, 1.0))
    return StepFunction(bp, np.minimum(vals, init), init)


def fit_reference(
    data,
    n_trees=100,
    max_depth=9,
    seed=2023,
    bootstrap=True,
    subsample=True,
    min_leaf_size=3,
    lam=0.0,
) -> ReferenceModel:
    """Bagged greedy survival trees.

    Each member is grown on an N-draw bootstrap (when ``bootstrap``) and
    considers ``ceil(sqrt(M))`` random features per node (when ``subsample``).
    Deterministic for a fixed ``seed``.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    rng = np.random.default_rng(seed)
    config = BoundConfig(lam, max_depth=max_depth, min_leaf_size=min_leaf_size)
    max_features = max(1, math.ceil(math.sqrt(data.n_features))) if subsample else None
    trees = []
    for _ in range(n_trees):
        weights = None
        if bootstrap:
            draws = rng.integers(0, data.n_samples, size=data.n_samples)
            weights = np.bincount(draws, minlength=data.n_samples).astype(float)
        trees.append(greedy_tree(data, config, weights=weights, max_features=max_features, rng=rng))
    return ReferenceModel(tuple(trees), max_depth, tuple(data.feature_names))


def reference_losses(model: ReferenceModel, data) -> np.ndarray:
    """Loss of every sample of ``data`` under the ensemble curve it is routed to."""
    if tuple(model.feature_names) != tuple(data.feature_names):
        raise FeatureMismatchError("reference model was fitted on a different feature space")
    curves = model.predict_curves(data.X)
    return np.array(
        [
            survival.sample_loss(c, t, e, data.censoring, data.y_max, data.n_samples)
            for c, t, e in zip(curves, data.times, data.events)
        ]
    )


def export_losses(losses, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "loss"])
        for i, v in enumerate(np.asarray(losses, dtype=float)):
            w.writerow([i, f"{v:.17g}"])


def import_losses(path, n) -> np.ndarray:
    """Read an ``index,loss`` file covering indices ``0..n-1`` exactly once."""
    out = np.full(n, np.nan)
    seen = np.zeros(n, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "loss"]:
            raise ReferenceFileError("loss file must start with the header 'index,loss'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise ReferenceFileError(f"line {lineno}: expected 'index,loss', got {row!r}") from None
            if not 0 <= i < n:
                raise ReferenceFileError(f"line {lineno}: index {i} outside 0..{n - 1}")
            if seen[i]:
                raise DuplicateIndex(i)
            if not math.isfinite(v):
                raise ReferenceFileError(f"line {lineno}: loss {v} is not finite")
            if v < 0:
                raise NegativeLoss(i, v)
            seen[i] = True
            out[i] = v
    if not seen.all():
        raise MissingIndex(int(np.argmin(seen)))
    return out
