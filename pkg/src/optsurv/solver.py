"""Dynamic programming with bounds over a dependency graph of subproblems.

A subproblem is the set of samples routed to a node (an integer bitset) plus
the depth still available below it.  Each subproblem keeps a lower and an
upper bound on the best objective of any subtree grown on it; the search
tightens these bounds bottom-up until they meet at the root.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import survival
from .bounds import EPS, BoundConfig, combine_lower, fails_bounds, incremental_progress_check, leaf_count_cap
from .errors import SearchMemoryError
from .tree import Leaf, Split, SurvivalTree

log = logging.getLogger(__name__)

TIME_CHECK_EVERY = 1024
SCHEDULERS = ("priority", "lb", "fifo", "lifo")


class Node:
    __slots__ = (
        "bits",
        "budget",
        "n",
        "leaf_loss",
        "leaf_obj",
        "lb",
        "ub",
        "parents",
        "pairs",
        "version",
        "queued",
    )

    def __init__(self, bits, budget, n, leaf_loss, leaf_obj, lb, ub):
        self.bits = bits
        self.budget = budget
        self.n = n
        self.leaf_loss = leaf_loss
        self.leaf_obj = leaf_obj
        self.lb = lb
        self.ub = ub
        self.parents = set()
        self.pairs = None
        self.version = 0
        self.queued = False

    @property
    def key(self):
        return (self.bits, self.budget)

    @property
    def solved(self):
        return self.ub - self.lb <= EPS

    @property
    def closed_as_leaf(self):
        return self.solved and self.ub >= self.leaf_obj - EPS

    def __repr__(self):
        return f"Node(n={self.n}, budget={self.budget}, lb={self.lb:.6g}, ub={self.ub:.6g})"


@dataclass
class SolveResult:
    tree: SurvivalTree
    objective: float
    lower_bound: float
    upper_bound: float
    proven_optimal: bool
    gap: float
    stats: dict = field(default_factory=dict)


def split_support(support: int, feature: int, data):
    """``(left, right)``: members with the feature at 0 and at 1."""
    if not 0 <= feature < data.n_features:
        raise IndexError(f"feature {feature} out of range")
    right = support & data.column_bits[feature]
    return support ^ right, right


class _Queue:
    def __init__(self, kind):
        if kind not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {kind!r}")
        self.kind = kind
        self.items = [] if kind in ("priority", "lb") else deque()
        self.seq = 0
        self.pushes = 0

    def push(self, node, n_total):
        if node.queued:
            return
        node.queued = True
        node.version += 1
        self.seq += 1
        self.pushes += 1
        entry = (node.version, node)
        if self.kind == "priority":
            heapq.heappush(self.items, (-(node.n / n_total - node.lb), self.seq, entry))
        elif self.kind == "lb":
            heapq.heappush(self.items, (node.lb, self.seq, entry))
        else:
            self.items.append(entry)

    def pop(self):
        """Next live node, or ``None`` when empty; stale copies are skipped."""
        while self.items:
            if self.kind in ("priority", "lb"):
                _, _, (version, node) = heapq.heappop(self.items)
            elif self.kind == "fifo":
                version, node = self.items.popleft()
            else:
                version, node = self.items.pop()
            if version == node.version:
                node.queued = False
                return node
        return None


class Search:
    """State of one optimization run (single writer over the graph)."""

    def __init__(self, data, config: BoundConfig, scheduler="priority", check_invariants=False, max_nodes=None):
        self.data = data
        self.config = config
        self.graph = {}
        self.queue = _Queue(scheduler)
        self.check = check_invariants
        self.max_nodes = max_nodes
        self.lookups = 0
        self.hits = 0
        self.iterations = 0
        self.ref = None
        if config.reference_losses is not None:
            ref = np.asarray(config.reference_losses, dtype=float)
            if ref.size != data.n_samples:
                raise IndexError(f"reference losses cover {ref.size} samples, dataset has {data.n_samples}")
            self.ref = ref

    # node creation -----------------------------------------------------------

    def _create(self, keys):
        data, cfg = self.data, self.config
        masks = data.masks([b for b, _ in keys])
        losses, _, _, _ = survival.batch_leaf_stats(data, masks)
        counts = masks.sum(axis=1)
        equiv = masks @ data.equiv_share
        refs = masks @ self.ref if self.ref is not None else np.zeros(len(keys))
        out = []
        for (bits, budget), loss, n, eq, rf in zip(keys, losses, counts, equiv, refs):
            loss = float(loss)
            ub = loss + cfg.lam
            lb = combine_lower(ub, float(eq), float(rf), cfg)
            if fails_bounds(budget, loss, int(n), lb, ub, cfg, float(eq)):
                lb = ub
            node = Node(bits, budget, int(n), loss, ub, lb, ub)
            self.graph[(bits, budget)] = node
            out.append(node)
        if self.max_nodes is not None and len(self.graph) > self.max_nodes:
            raise SearchMemoryError(f"dependency graph exceeded {self.max_nodes} nodes", self.stats())
        return out

    def root(self):
        budget = self.config.max_depth
        node = self._create([(self.data.full_bits, budget)])[0]
        return node

    def _child_budget(self, node):
        budget = None if node.budget is None else node.budget - 1
        cfg = self.config
        if cfg.use_leaf_caps and cfg.lam > 0:
            cap = leaf_count_cap(node.ub, cfg.lam, self.data.n_features)
            budget = cap - 2 if budget is None else min(budget, cap - 2)
            budget = max(budget, 0)
        return budget

    def _expand(self, node):
        data, cfg = self.data, self.config
        budget = self._child_budget(node)
        s, n = node.bits, node.n
        pending, wanted = [], []
        for j, col in enumerate(data.column_bits):
            right = s & col
            nr = right.bit_count()
            if nr < cfg.min_leaf_size or n - nr < cfg.min_leaf_size:
                continue
            left = s ^ right
            wanted.append((j, (left, budget), (right, budget)))
        seen = set()
        for _, lk, rk in wanted:
            for k in (lk, rk):
                self.lookups += 1
                if k in self.graph:
                    self.hits += 1
                elif k not in seen:
                    seen.add(k)
                    pending.append(k)
        if pending:
            self._create(pending)
        pairs = []
        for j, lk, rk in wanted:
            left, right = self.graph[lk], self.graph[rk]
            left.parents.add(node)
            right.parents.add(node)
            pairs.append((j, left, right))
        node.pairs = pairs

    # bound updates -----------------------------------------------------------

    def _dominated(self, node, left, right):
        return (
            self.config.use_incremental_progress
            and left.closed_as_leaf
            and right.closed_as_leaf
            and not incremental_progress_check(node.leaf_loss, left.leaf_loss, right.leaf_loss, self.config)
        )

    def _update(self, node):
        lb_split = ub_split = math.inf
        for _, left, right in node.pairs:
            if self._dominated(node, left, right):
                continue
            lbs = left.lb + right.lb
            ubs = left.ub + right.ub
            if lbs < lb_split:
                lb_split = lbs
            if ubs < ub_split:
                ub_split = ubs
        new_ub = min(node.ub, ub_split)
        new_lb = max(node.lb, min(new_ub, lb_split))
        if new_ub - new_lb <= EPS:
            new_lb = new_ub
        if self.check:
            assert new_lb >= node.lb - EPS, "lower bound decreased"
            assert new_ub <= node.ub + EPS, "upper bound increased"
            assert new_lb <= new_ub + EPS, "lower bound above upper bound"
        changed = new_lb != node.lb or new_ub != node.ub
        node.lb, node.ub = new_lb, new_ub
        return changed

    def step(self, node):
        """One iteration of the main loop for a popped, unsolved node."""
        n_total = self.data.n_samples
        if node.pairs is None:
            self._expand(node)
        if self._update(node):
            for parent in node.parents:
                if not parent.solved:
                    self.queue.push(parent, n_total)
        if node.solved:
            return
        for _, left, right in node.pairs:
            if self._dominated(node, left, right):
                continue
            lbs = left.lb + right.lb
            ubs = left.ub + right.ub
            if lbs < ubs and lbs <= node.ub:
                if self.check:
                    assert lbs <= node.ub + EPS
                # expanded children already have their own frontier queued
                if not left.solved and left.pairs is None:
                    self.queue.push(left, n_total)
                if not right.solved and right.pairs is None:
                    self.queue.push(right, n_total)

    def stats(self):
        return {
            "iterations": self.iterations,
            "graph_size": len(self.graph),
            "queue_pushes": self.queue.pushes,
            "lookups": self.lookups,
            "lookup_hits": self.hits,
        }

    # extraction ----------------------------------------------------------------

    def extract(self, node) -> Leaf | Split:
        """Certificate subtree: leaf if it matches the best bound, else the first best feature."""
        best = node.leaf_obj
        choice = None
        if node.pairs:
            for j, left, right in node.pairs:
                ubs = left.ub + right.ub
                if ubs < best - EPS:
                    best, choice = ubs, (j, left, right)
        if choice is None:
            mask = self.data.mask(node.bits)
            return Leaf(survival.leaf_curve(self.data, mask), node.n, node.leaf_loss, node.bits)
        j, left, right = choice
        return Split(j, self.data.feature_names[j], self.extract(left), self.extract(right))


def solve(data, config: BoundConfig, time_limit=None, max_nodes=None, scheduler="priority", check_invariants=False) -> SolveResult:
    """Find the tree minimising loss + lam * leaves under the depth and leaf-size limits.

    Stops early when ``time_limit`` seconds pass; the best certificate found so
    far is returned with ``proven_optimal=False`` and the remaining gap.
    """
    start = time.perf_counter()
    search = Search(data, config, scheduler, check_invariants, max_nodes)
    root = search.root()
    queue = search.queue
    if not root.solved:
        queue.push(root, data.n_samples)
    timed_out = False
    while not root.solved:
        if time_limit is not None and search.iterations % TIME_CHECK_EVERY == 0:
            if time.perf_counter() - start > time_limit:
                timed_out = True
                break
        node = queue.pop()
        if node is None:
            raise RuntimeError("queue exhausted before the root converged")
        if node.solved:
            continue
        search.iterations += 1
        search.step(node)

    tree_root = search.extract(root)
    tree = SurvivalTree(
        tree_root,
        list(data.feature_names),
        lam=config.lam,
        max_depth=config.max_depth,
        binarizer=data.binarizer.to_dict() if data.binarizer is not None else None,
    )
    loss = survival.tree_loss(tree, data)
    objective = loss + config.lam * tree.leaf_count
    lb, ub = root.lb, root.ub
    if objective > ub + 1e-9:
        raise AssertionError(f"extracted tree objective {objective} exceeds certificate bound {ub}")
    gap = max(0.0, (ub - lb) / max(ub, 1e-300))
    proven = gap <= 1e-12 and not timed_out
    tree.objective, tree.proven_optimal, tree.gap = objective, proven, gap
    stats = search.stats()
    stats["elapsed"] = time.perf_counter() - start
    stats["timed_out"] = timed_out
    log.info("solve finished: objective=%.6g gap=%.3g %s", objective, gap, stats)
    return SolveResult(tree, objective, lb, ub, proven, gap, stats)


def extract_tree(search: Search, root_key=None) -> SurvivalTree:
    node = search.graph[root_key] if root_key is not None else search.graph[(search.data.full_bits, search.config.max_depth)]
    return SurvivalTree(search.extract(node), list(search.data.feature_names), lam=search.config.lam, max_depth=search.config.max_depth)


# ----------------------------------------------------------------------------
# greedy baseline


def greedy_tree(data, config: BoundConfig, weights=None, max_features=None, rng=None) -> SurvivalTree:
    """Top-down tree: each node takes the feasible split with the lowest child loss.

    Growth stops at the depth limit, when no split keeps ``min_leaf_size``
    samples on both sides, or when the best split reduces loss by less than
    ``lam``.  ``weights`` are bootstrap multiplicities; ``max_features`` draws
    that many candidate features per node from ``rng``.
    """
    m0 = np.ones(data.n_samples) if weights is None else np.asarray(weights, dtype=float)
    X = data.X.astype(float)
    min_leaf = config.min_leaf_size

    def make_leaf(m, loss):
        return Leaf(survival.leaf_curve(data, m), int(np.count_nonzero(m)), loss)

    def grow(m, loss, depth_left):
        if (depth_left is not None and depth_left <= 0) or m.sum() < 2 * min_leaf:
            return make_leaf(m, loss)
        feats = np.arange(data.n_features)
        if max_features is not None and max_features < data.n_features:
            feats = np.sort(rng.choice(data.n_features, size=max_features, replace=False))
        right = m[None, :] * X[:, feats].T
        left = m[None, :] - right
        ok = (right.sum(axis=1) >= min_leaf) & (left.sum(axis=1) >= min_leaf)
        if not ok.any():
            return make_leaf(m, loss)
        feats, left, right = feats[ok], left[ok], right[ok]
        child, _, _, _ = survival.batch_leaf_stats(data, np.vstack([left, right]))
        k = feats.size
        total = child[:k] + child[k:]
        best = int(np.argmin(total))
        if loss - total[best] < config.lam:
            return make_leaf(m, loss)
        nxt = None if depth_left is None else depth_left - 1
        j = int(feats[best])
        return Split(
            j,
            data.feature_names[j],
            grow(left[best], float(child[best]), nxt),
            grow(right[best], float(child[k + best]), nxt),
        )

    root_loss = float(survival.batch_leaf_stats(data, m0[None, :])[0][0])
    root = grow(m0, root_loss, config.max_depth)
    tree = SurvivalTree(
        root,
        list(data.feature_names),
        lam=config.lam,
        max_depth=config.max_depth,
        binarizer=data.binarizer.to_dict() if data.binarizer is not None else None,
    )
    tree.objective = survival.tree_loss(tree, data) + config.lam * tree.leaf_count
    return tree
