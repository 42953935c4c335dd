"""Lower/upper bounds on subproblem objectives and the pruning predicates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import survival

# slack for bound comparisons; well below any practical leaf penalty
EPS = 1e-12


@dataclass(frozen=True)
class BoundConfig:
    lam: float
    max_depth: int | None = None
    min_leaf_size: int = 7
    use_equivalent_points: bool = True
    use_lookahead: bool = True
    use_incremental_progress: bool = True
    use_leaf_caps: bool = True
    reference_losses: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.reference_losses is not None:
            ref = np.asarray(self.reference_losses, dtype=float)
            if np.any(ref < 0) or not np.all(np.isfinite(ref)):
                raise ValueError("reference losses must be finite and nonnegative")
            object.__setattr__(self, "reference_losses", ref)

    def without_bounds(self):
        """Same problem with every optional bound switched off."""
        return replace(
            self,
            use_equivalent_points=False,
            use_lookahead=False,
            use_incremental_progress=False,
            use_leaf_caps=False,
            reference_losses=None,
        )


@dataclass
class BoundsPair:
    lb: float
    ub: float

    @property
    def solved(self):
        return self.ub - self.lb <= EPS


def _check_size(n, config):
    if n < config.min_leaf_size:
        raise ValueError(f"support of {n} samples is below min_leaf_size={config.min_leaf_size}")


def initial_upper_bound(support, data, config: BoundConfig) -> float:
    """Objective of keeping the subproblem as one leaf."""
    leaf = survival.leaf_loss(support, data)
    _check_size(leaf.sample_count, config)
    return leaf.loss + config.lam


def split_floor(equiv_sum, config: BoundConfig) -> float:
    """Least objective any split of the subproblem can reach.

    A split yields at least two leaves (one without lookahead), and no tree
    separates equivalent points.
    """
    leaves = 2 if config.use_lookahead else 1
    base = leaves * config.lam
    if config.use_equivalent_points:
        base += equiv_sum
    return base


def guess_floor(ref_sum, config: BoundConfig) -> float:
    return config.lam + ref_sum


def combine_lower(ub, equiv_sum, ref_sum, config: BoundConfig) -> float:
    lb = split_floor(equiv_sum, config)
    if config.reference_losses is not None:
        lb = max(lb, guess_floor(ref_sum, config))
    return min(ub, lb)


def initial_lower_bound(support, data, config: BoundConfig) -> float:
    mask = data.mask(support)
    _check_size(int(mask.sum()), config)
    ub = initial_upper_bound(support, data, config)
    equiv = float(data.equiv_share[mask].sum())
    ref = 0.0
    if config.reference_losses is not None:
        if config.reference_losses.size != data.n_samples:
            raise IndexError(
                f"reference losses cover {config.reference_losses.size} samples, dataset has {data.n_samples}"
            )
        ref = float(config.reference_losses[mask].sum())
    return combine_lower(ub, equiv, ref, config)


def lookahead_prune(parent_fixed_loss, leaves, incumbent, config: BoundConfig) -> bool:
    """True when every extension of a partial tree must exceed the incumbent.

    ``parent_fixed_loss + lam * leaves + lam > incumbent`` (strict).
    """
    return parent_fixed_loss + config.lam * leaves + config.lam > incumbent


def incremental_progress_check(parent_loss, left_loss, right_loss, config: BoundConfig) -> bool:
    """A terminal split pair has to buy back at least one leaf penalty."""
    return parent_loss - left_loss - right_loss >= config.lam


def leaf_count_cap(incumbent, lam, n_features, fixed_loss=None, leaves=None) -> int:
    """Largest leaf count an optimal (sub)tree can have.

    Without context: ``min(floor(R/lam), 2^M)``.  With a partial tree's fixed
    loss and current leaf count the parent-specific cap applies.
    """
    hard = 2 ** n_features if n_features < 63 else math.inf
    if lam <= 0:
        return hard
    if fixed_loss is None:
        return min(math.floor(incumbent / lam + 1e-9), hard)
    return min(leaves + math.floor((incumbent - fixed_loss - lam * leaves) / lam + 1e-9), hard)


def fails_bounds(depth_budget, leaf_loss, n, lb, ub, config: BoundConfig, equiv_sum=0.0) -> bool:
    """True when the subproblem must stay a leaf."""
    if depth_budget is not None and depth_budget <= 0:
        return True
    if n < 2 * config.min_leaf_size:
        return True
    if config.use_incremental_progress and leaf_loss < config.lam:
        return True
    if config.use_lookahead and lookahead_prune(equiv_sum if config.use_equivalent_points else 0.0, 1, ub, config):
        return True
    if config.use_leaf_caps and config.lam > 0 and leaf_count_cap(ub, config.lam, 64) < 2:
        return True
    return lb >= ub - EPS
