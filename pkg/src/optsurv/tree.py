"""Survival tree model, routing, and JSON / DOT export."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .survival import StepFunction


@dataclass
class Leaf:
    curve: StepFunction
    n: int
    loss: float = float("nan")
    support: int | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "n": int(self.n),
            "times": [float(t) for t in self.curve.breakpoints],
            "survival": [float(s) for s in self.curve.values],
        }


@dataclass
class Split:
    feature: int
    name: str
    left: "Leaf | Split"  # feature == 0
    right: "Leaf | Split"  # feature == 1

    def to_dict(self):
        return {"feature": int(self.feature), "name": self.name, "left": self.left.to_dict(), "right": self.right.to_dict()}


def _node_from_dict(d):
    if "feature" in d:
        return Split(int(d["feature"]), d.get("name", f"x{d['feature']}"), _node_from_dict(d["left"]), _node_from_dict(d["right"]))
    return Leaf(StepFunction(np.asarray(d["times"], float), np.asarray(d["survival"], float), 1.0), int(d["n"]))


@dataclass
class SurvivalTree:
    root: Leaf | Split
    feature_names: list
    lam: float = 0.0
    max_depth: int | None = None
    objective: float = float("nan")
    proven_optimal: bool = False
    gap: float = float("nan")
    binarizer: dict | None = None

    def leaves(self):
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    @property
    def leaf_count(self):
        return len(self.leaves())

    def depth(self):
        def rec(node):
            return 0 if isinstance(node, Leaf) else 1 + max(rec(node.left), rec(node.right))

        return rec(self.root)

    def features_used(self):
        out, stack = set(), [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Split):
                out.add(node.feature)
                stack.extend((node.left, node.right))
        return out

    def paths_ok(self):
        """No feature repeats on any root-to-leaf path."""

        def rec(node, seen):
            if isinstance(node, Leaf):
                return True
            if node.feature in seen:
                return False
            seen = seen | {node.feature}
            return rec(node.left, seen) and rec(node.right, seen)

        return rec(self.root, frozenset())

    def apply(self, X):
        """Index (into ``leaves()``) of the leaf each row of ``X`` lands in."""
        X = np.asarray(X)
        leaves = self.leaves()
        pos = {id(l): i for i, l in enumerate(leaves)}
        out = np.empty(X.shape[0], dtype=int)

        def rec(node, rows):
            if rows.size == 0:
                return
            if isinstance(node, Leaf):
                out[rows] = pos[id(node)]
                return
            col = X[rows, node.feature]
            rec(node.left, rows[col == 0])
            rec(node.right, rows[col == 1])

        rec(self.root, np.arange(X.shape[0]))
        return out

    def predict_curves(self, X):
        leaves = self.leaves()
        return [leaves[i].curve for i in self.apply(X)]

    # serialization ----------------------------------------------------------

    def to_dict(self):
        out = {
            "objective": float(self.objective),
            "lambda": float(self.lam),
            "depth": self.max_depth,
            "proven_optimal": bool(self.proven_optimal),
            "gap": float(self.gap),
            "leaves": self.leaf_count,
            "features": list(self.feature_names),
            "tree": self.root.to_dict(),
        }
        if self.binarizer is not None:
            out["binarizer"] = self.binarizer
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(
            root=_node_from_dict(d["tree"]),
            feature_names=list(d.get("features", [])),
            lam=float(d.get("lambda", 0.0)),
            max_depth=d.get("depth"),
            objective=float(d.get("objective", float("nan"))),
            proven_optimal=bool(d.get("proven_optimal", False)),
            gap=float(d.get("gap", float("nan"))),
            binarizer=d.get("binarizer"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dot(self):
        lines = ["digraph survival_tree {", '  node [fontname="Helvetica"];']
        counter = [0]

        def rec(node):
            ident = f"n{counter[0]}"
            counter[0] += 1
            if isinstance(node, Leaf):
                med = node.curve.median()
                med_txt = "inf" if math.isinf(med) else f"{med:g}"
                lines.append(f'  {ident} [shape=box, label="n={node.n}\\nmedian={med_txt}"];')
                return ident
            label = node.name.replace('"', '\\"')
            lines.append(f'  {ident} [shape=ellipse, label="{label}"];')
            left = rec(node.left)
            right = rec(node.right)
            lines.append(f'  {ident} -> {left} [label="false"];')
            lines.append(f'  {ident} -> {right} [label="true"];')
            return ident

        rec(self.root)
        lines.append("}")
        return "\n".join(lines) + "\n"
