"""Evaluation metrics for fitted survival trees on censored data."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import survival
from .errors import NoComparablePairs, NoValidEvalTime, OptSurvError

log = logging.getLogger(__name__)


def _survival_at(predictions, at_times):
    """``P[i, j] = predictions[j](at_times[i])``, evaluating each distinct curve once."""
    at_times = np.asarray(at_times, dtype=float)
    out = np.empty((at_times.size, len(predictions)))
    cache = {}
    for j, curve in enumerate(predictions):
        col = cache.get(id(curve))
        if col is None:
            col = np.asarray(curve(at_times), dtype=float).reshape(-1)
            cache[id(curve)] = col
        out[:, j] = col
    return out


def _concordance(predictions, times, events, pair_weight):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if len(predictions) != times.size:
        raise ValueError("one prediction per sample is required")
    cases = np.nonzero(events == 1)[0]
    P = _survival_at(predictions, times[cases])
    num = den = 0.0
    for row, i in enumerate(cases):
        w = pair_weight[i]
        if w <= 0:
            continue
        later = times > times[i]
        k = int(later.sum())
        if k == 0:
            continue
        own = P[row, i]
        other = P[row, later]
        score = np.count_nonzero(own < other) + 0.5 * np.count_nonzero(own == other)
        num += w * score
        den += w * k
    if den == 0:
        raise NoComparablePairs("no comparable pairs (need an observed death before another observation)")
    return num / den


def harrell_c(predictions, data) -> float:
    """Share of comparable pairs whose predicted survival at the earlier death is ordered correctly."""
    return _concordance(predictions, data.times, data.events, np.ones(data.n_samples))


def uno_c(predictions, data) -> float:
    """Harrell's C with each pair weighted by ``G(y_i-)^-2``; pairs with ``G = 0`` are dropped."""
    g = np.asarray(data.censoring.left(data.times), dtype=float)
    w = np.divide(1.0, g * g, out=np.zeros_like(g), where=g > 0)
    return _concordance(predictions, data.times, data.events, w)


def default_eval_times(data):
    t = np.unique(data.times[data.events == 1])
    return t[(t > data.times.min()) & (t < data.times.max())]


def cumulative_dynamic_auc(predictions, data, eval_times=None):
    """Time-dependent AUC of cumulative cases against dynamic controls.

    Cases at ``y`` died at or before ``y`` and carry ``1/G(y_i-)``; controls
    are still under observation after ``y``.  Returns ``(times, auc, mean)``
    where the mean weights each time by the drop of the pooled KM curve.
    """
    times = np.asarray(data.times, dtype=float)
    events = np.asarray(data.events)
    if eval_times is None:
        eval_times = default_eval_times(data)
    eval_times = np.unique(np.asarray(eval_times, dtype=float))
    g = np.asarray(data.censoring.left(times), dtype=float)
    case_w = np.divide(events.astype(float), g, out=np.zeros_like(g), where=g > 0)
    P = _survival_at(predictions, eval_times)
    kept, aucs = [], []
    for row, y in enumerate(eval_times):
        cw = case_w * (times <= y)
        ctrl = times > y
        if not (cw > 0).any() or not ctrl.any():
            log.info("dropping evaluation time %g: no case or no control", y)
            continue
        s = P[row]
        ci = np.nonzero(cw > 0)[0]
        sc = s[ctrl]
        # count controls with a larger/equal predicted survival for every case
        sc_sorted = np.sort(sc)
        above = sc.size - np.searchsorted(sc_sorted, s[ci], side="right")
        ties = np.searchsorted(sc_sorted, s[ci], side="right") - np.searchsorted(sc_sorted, s[ci], side="left")
        num = float(np.dot(cw[ci], above + 0.5 * ties))
        aucs.append(num / (cw.sum() * sc.size))
        kept.append(y)
    if not kept:
        raise NoValidEvalTime("no evaluation time has both a case and a control")
    kept = np.asarray(kept)
    aucs = np.asarray(aucs)
    km = survival.km_estimator(times, events)
    drops = np.asarray(km.left(kept)) - np.asarray(km(kept))
    if drops.sum() > 0:
        mean = float(np.dot(aucs, drops) / drops.sum())
    else:
        mean = float(aucs.mean())
    return kept, aucs, mean


def ibs_ratio(tree, data) -> float:
    """``1 - loss(tree) / loss(single leaf)`` on ``data`` with its own censoring curve."""
    root = data.root_loss()
    if not root > 0:
        raise OptSurvError("single-leaf loss is zero; the IBS ratio is undefined")
    return 1.0 - survival.tree_loss(tree, data) / root


@dataclass
class EvaluationReport:
    ibs: float
    ibs_ratio: float
    harrell_c: float
    uno_c: float
    mean_auc: float
    leaf_count: int
    auc_times: list = field(default_factory=list)
    auc_values: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def table(self):
        rows = [
            ("ibs", self.ibs),
            ("ibs_ratio", self.ibs_ratio),
            ("harrell_c", self.harrell_c),
            ("uno_c", self.uno_c),
            ("mean_auc", self.mean_auc),
            ("leaf_count", self.leaf_count),
        ]
        return "\n".join(f"{k:<12}{v:.6f}" if isinstance(v, float) else f"{k:<12}{v}" for k, v in rows)


def evaluate(tree, data) -> EvaluationReport:
    """All metric families for ``tree`` on ``data``.

    A metric that is undefined on the data (no comparable pair, no valid
    AUC time) is reported as NaN.
    """
    preds = tree.predict_curves(data.X)
    ibs = survival.tree_loss(tree, data)
    ratio = ibs_ratio(tree, data)
    try:
        hc = harrell_c(preds, data)
        uc = uno_c(preds, data)
    except NoComparablePairs:
        hc = uc = math.nan
    try:
        t, a, mean = cumulative_dynamic_auc(preds, data)
        t, a = [float(x) for x in t], [float(x) for x in a]
    except NoValidEvalTime:
        t, a, mean = [], [], math.nan
    return EvaluationReport(ibs, ratio, hc, uc, mean, tree.leaf_count, t, a)
