"""Censored-loss mathematics.

Everything here works on the event-time grid of a dataset: the sorted distinct
observation times ``t_1 < ... < t_K`` with ``t_0 = 0``.  Survival curves and the
censoring distribution are right-continuous step functions that only jump on
grid points, so on every interval ``[t_{k-1}, t_k)`` the Brier integrand is
constant and the integrated score reduces to a finite sum.

All losses carry the global normaliser ``1 / (y_max * N)`` so that per-sample,
per-leaf and per-tree values add up and compare directly with the leaf
penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StructureError


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function on ``[0, inf)``.

    ``values[j]`` holds on ``[breakpoints[j], breakpoints[j+1])`` and
    ``initial_value`` on ``[0, breakpoints[0])``.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    initial_value: float = 1.0

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if bp.shape != vals.shape:
            raise ValueError("breakpoints and values differ in length")
        if bp.size > 1 and np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "initial_value", float(self.initial_value))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        out = np.where(idx < 0, self.initial_value, self.values[np.maximum(idx, 0)] if self.values.size else self.initial_value)
        return out if out.ndim else float(out)

    def left(self, t):
        """Left limit ``f(t-)``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        out = np.where(idx < 0, self.initial_value, self.values[np.maximum(idx, 0)] if self.values.size else self.initial_value)
        return out if out.ndim else float(out)

    def on_intervals(self, grid):
        """Value on each interval ``[g_{k-1}, g_k)`` of a grid with ``g_0 = 0``."""
        grid = np.asarray(grid, dtype=float)
        starts = np.concatenate(([0.0], grid[:-1]))
        return np.asarray(self(starts), dtype=float)

    def median(self):
        """Smallest time at which the curve drops to 0.5 or below, else ``inf``."""
        hit = np.nonzero(self.values <= 0.5)[0]
        if self.initial_value <= 0.5:
            return 0.0
        return float(self.breakpoints[hit[0]]) if hit.size else math.inf

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return (
            self.initial_value == other.initial_value
            and np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class TimeGrid:
    breakpoints: np.ndarray
    interval_lengths: np.ndarray
    y_max: float

    @classmethod
    def from_times(cls, times, extra=()):
        bp = np.unique(np.concatenate([np.asarray(times, float), np.asarray(extra, float)]))
        bp = bp[bp > 0]
        y_max = float(np.max(times))
        bp = bp[bp <= y_max]
        lengths = np.diff(np.concatenate(([0.0], bp)))
        return cls(bp, lengths, y_max)

    @property
    def starts(self):
        return np.concatenate(([0.0], self.breakpoints[:-1]))

    def __len__(self):
        return self.breakpoints.size


def km_estimator(times, events, weights=None) -> StepFunction:
    """Product-limit estimate ``S(y) = prod_{t_k <= y} (1 - d_k / n_k)``.

    ``weights`` are optional per-sample multiplicities (bootstrap counts);
    breakpoints are placed only where a death occurs.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if times.size == 0:
        raise ValueError("km_estimator needs at least one observation")
    w = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    times, events, w = times[keep], events[keep], w[keep]
    if times.size == 0:
        raise ValueError("km_estimator needs at least one observation")
    uniq, inv = np.unique(times, return_inverse=True)
    deaths = np.bincount(inv, weights=w * events, minlength=uniq.size)
    at_exit = np.bincount(inv, weights=w, minlength=uniq.size)
    at_risk = np.cumsum(at_exit[::-1])[::-1]
    mask = deaths > 0
    factors = 1.0 - deaths[mask] / at_risk[mask]
    return StepFunction(uniq[mask], np.cumprod(factors), 1.0)


def censoring_km(times, events) -> StepFunction:
    """Kaplan-Meier curve of the censoring times (event indicator flipped)."""
    return km_estimator(times, 1 - np.asarray(events, dtype=float))


def censoring_distribution(data) -> StepFunction:
    return censoring_km(data.times, data.events)


def ipcw_weights(times, events, censoring: StepFunction, grid):
    """Per-sample, per-interval Brier weights.

    Returns ``(toward_one, toward_zero)``, both ``N x K``.  ``toward_one`` weighs
    ``(S - 1)^2`` while the sample is still at risk (``y_i >= t_k``) by
    ``1/G`` on the interval; ``toward_zero`` weighs ``S^2`` after an observed
    death (``t_{k-1} >= y_i``) by ``1/G(y_i-)``.  Intervals where ``G`` is zero
    get weight 0.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    grid = np.asarray(grid, dtype=float)
    starts = np.concatenate(([0.0], grid[:-1]))
    g_int = np.asarray(censoring(starts), dtype=float)
    inv_g = np.divide(1.0, g_int, out=np.zeros_like(g_int), where=g_int > 0)
    alive = times[:, None] >= grid[None, :]
    toward_one = alive * inv_g[None, :]
    g_own = np.asarray(censoring.left(times), dtype=float)
    inv_own = np.divide(events, g_own, out=np.zeros_like(g_own), where=g_own > 0)
    dead = starts[None, :] >= times[:, None]
    toward_zero = dead * inv_own[:, None]
    return toward_one, toward_zero


def sample_loss(curve: StepFunction, time: float, event: int, censoring: StepFunction, y_max: float, n: int) -> float:
    """Integrated censoring-weighted Brier loss of one sample.

    Integrates exactly over the merged breakpoints of ``curve`` and
    ``censoring``; does not use any precomputed weight matrix.
    """
    pts = np.concatenate(([0.0, time, y_max], curve.breakpoints, censoring.breakpoints))
    pts = np.unique(pts[(pts >= 0) & (pts <= y_max)])
    g_own = float(censoring.left(time))
    terms = []
    for a, b in zip(pts[:-1], pts[1:]):
        s = float(curve(a))
        if b <= time:
            g = float(censoring(a))
            if g > 0:
                terms.append((b - a) * (s - 1.0) ** 2 / g)
        elif a >= time and event and g_own > 0:
            terms.append((b - a) * s * s / g_own)
    return math.fsum(terms) / (y_max * n)


@dataclass
class LeafModel:
    support: int
    km_curve: StepFunction
    toward_one: np.ndarray
    toward_zero: np.ndarray
    loss: float
    sample_count: int


def batch_leaf_stats(data, multiplicity):
    """KM curves and losses for many leaves at once.

    ``multiplicity`` is ``b x N`` (0/1 membership or bootstrap counts).
    Returns ``(losses, survival_on_intervals, A, B)``.
    """
    m = np.atleast_2d(np.asarray(multiplicity, dtype=float))
    k = data.n_intervals
    t = m @ data.stats_matrix
    a = t[:, :k]
    b = t[:, k : 2 * k]
    d = t[:, 2 * k : 3 * k]
    n = t[:, 3 * k :]
    haz = np.divide(d, n, out=np.zeros_like(d), where=n > 0)
    after = np.cumprod(1.0 - haz, axis=1)
    s_int = np.empty_like(after)
    s_int[:, 0] = 1.0
    s_int[:, 1:] = after[:, :-1]
    per_int = a * (s_int - 1.0) ** 2 + b * s_int * s_int
    losses = (per_int @ data.grid.interval_lengths) * data.norm
    return losses, s_int, a, b


def leaf_curve(data, mask) -> StepFunction:
    """KM curve of a leaf on the dataset (optionally bootstrap-weighted)."""
    w = np.asarray(mask, dtype=float)
    return km_estimator(data.times, data.events, weights=w)


def leaf_loss(support, data) -> LeafModel:
    """Fit the leaf KM curve on ``support`` and return its summed loss."""
    mask = data.mask(support)
    if not mask.any():
        raise ValueError("leaf support is empty")
    losses, _, a, b = batch_leaf_stats(data, mask[None, :])
    bits = support if isinstance(support, int) else data.bits(mask)
    return LeafModel(
        support=bits,
        km_curve=leaf_curve(data, mask),
        toward_one=a[0],
        toward_zero=b[0],
        loss=float(losses[0]),
        sample_count=int(mask.sum()),
    )


def equivalent_loss(toward_one, toward_zero, interval_lengths, norm) -> float:
    """Smallest loss any step function can reach on a set of aggregated weights.

    Per interval ``A (S-1)^2 + B S^2`` is minimised at ``S = A / (A + B)`` with
    value ``A B / (A + B)``.
    """
    a = np.asarray(toward_one, dtype=float)
    b = np.asarray(toward_zero, dtype=float)
    tot = a + b
    per = np.divide(a * b, tot, out=np.zeros_like(tot), where=tot > 0)
    return float(per @ np.asarray(interval_lengths, dtype=float)) * norm


def curves_loss(curves, assignment, data) -> np.ndarray:
    """Loss contributed by each group of samples sharing a prediction curve.

    ``assignment[i]`` indexes into ``curves``.  Curves may jump off the data
    grid (a tree trained elsewhere); the grid is then refined so integration
    stays exact.
    """
    assignment = np.asarray(assignment)
    extra = np.concatenate([c.breakpoints for c in curves]) if curves else np.empty(0)
    extra = extra[(extra > 0) & (extra < data.grid.y_max)]
    if extra.size and not np.all(np.isin(extra, data.grid.breakpoints)):
        grid = TimeGrid.from_times(data.times, extra)
        w1, w0 = ipcw_weights(data.times, data.events, data.censoring, grid.breakpoints)
    else:
        grid = data.grid
        w1, w0 = data.toward_one, data.toward_zero
    out = np.zeros(len(curves))
    for idx, curve in enumerate(curves):
        members = assignment == idx
        if not members.any():
            continue
        s = curve.on_intervals(grid.breakpoints)
        a = w1[members].sum(axis=0)
        b = w0[members].sum(axis=0)
        out[idx] = math.fsum(grid.interval_lengths * (a * (s - 1.0) ** 2 + b * s * s)) * data.norm
    return out


def tree_loss(tree, data) -> float:
    """Sum of leaf losses of ``tree`` on ``data`` (leaves keep their own curves)."""
    leaves = tree.leaves()
    if any(f >= data.n_features for f in tree.features_used()):
        raise StructureError("tree splits on a feature the dataset does not have")
    assignment = tree.apply(data.X)
    return math.fsum(curves_loss([leaf.curve for leaf in leaves], assignment, data))


def partition_loss(supports, data) -> float:
    """Loss of a tree given directly as a list of leaf supports (KM refit per leaf)."""
    seen = np.zeros(data.n_samples, dtype=int)
    total = []
    for s in supports:
        mask = data.mask(s)
        seen += mask
        total.append(leaf_loss(s, data).loss)
    if np.any(seen != 1):
        raise StructureError("leaf supports overlap or miss samples")
    return math.fsum(total)
