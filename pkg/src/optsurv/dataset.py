"""Loading survival tables and turning them into binary training sets."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import survival
from .errors import (
    DegenerateFeaturesError,
    EmptyDatasetError,
    FeatureMismatchError,
    MissingColumnError,
    MissingFileError,
    NoEventsError,
    UnparseableCellError,
    UnparseableEvent,
)

log = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass
class RawDataset:
    """Rows of a survival table, in file order.

    ``columns`` maps each feature name to its cells; numeric columns hold
    floats, everything else strings.
    """

    columns: dict
    time: np.ndarray
    event: np.ndarray
    dropped_rows: int = 0

    @property
    def n_rows(self):
        return int(self.time.size)

    @property
    def feature_names(self):
        return list(self.columns)

    def is_numeric(self, name):
        return all(isinstance(v, float) for v in self.columns[name])

    def rows(self):
        names = self.feature_names
        for i in range(self.n_rows):
            yield {n: self.columns[n][i] for n in names}

    def subset(self, idx):
        idx = list(idx)
        cols = {k: [v[i] for i in idx] for k, v in self.columns.items()}
        return RawDataset(cols, self.time[idx], self.event[idx])


def _as_float(text):
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path, time_column="time", event_column="event", features=None) -> RawDataset:
    """Read a UTF-8 CSV with a header row.

    Rows with a missing cell are dropped (with a warning).  Times must be
    positive reals and events 0/1.
    """
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path} is empty") from None
        body = list(reader)
    for col in (time_column, event_column):
        if col not in header:
            raise MissingColumnError(col)
    if features is None:
        features = [h for h in header if h not in (time_column, event_column)]
    for col in features:
        if col not in header:
            raise MissingColumnError(col)
    ti, ei = header.index(time_column), header.index(event_column)
    fi = [header.index(f) for f in features]

    kept, times, events, dropped = [], [], [], 0
    for rownum, row in enumerate(body, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise UnparseableCellError(rownum, "<row>", ",".join(row))
        cells = [c.strip() for c in row]
        if any(cells[j].lower() in MISSING for j in [ti, ei, *fi]):
            dropped += 1
            continue
        t = _as_float(cells[ti])
        if t is None or t <= 0:
            raise UnparseableCellError(rownum, time_column, cells[ti])
        e = _as_float(cells[ei])
        if e not in (0.0, 1.0):
            raise UnparseableEvent(rownum, event_column, cells[ei])
        kept.append([cells[j] for j in fi])
        times.append(t)
        events.append(int(e))
    if dropped:
        log.warning("dropped %d rows with missing values from %s", dropped, path)
    if not kept:
        raise EmptyDatasetError(f"{path} has no data rows")
    if not any(events):
        raise NoEventsError(f"{path}: every sample is censored")

    columns = {}
    for k, name in enumerate(features):
        raw = [r[k] for r in kept]
        parsed = [_as_float(v) for v in raw]
        columns[name] = parsed if all(p is not None for p in parsed) else raw
    log.info("loaded %d rows, %d feature columns from %s", len(kept), len(features), path)
    return RawDataset(columns, np.asarray(times, float), np.asarray(events, np.int8), dropped)


# --------------------------------------------------------------------------
# binarization


def parse_strategy(strategy):
    """``"all"`` -> all thresholds, ``"width:K"`` -> K equal-width bins."""
    if isinstance(strategy, tuple):
        return strategy
    strategy = str(strategy).strip().lower()
    if strategy in ("all", "all_thresholds", "thresholds"):
        return ("all",)
    if strategy.startswith("width:") or strategy.startswith("equal_width:"):
        bins = int(strategy.split(":", 1)[1])
        if bins < 2:
            raise ValueError("equal-width binarization needs at least 2 bins")
        return ("width", bins)
    if strategy in ("categorical", "onehot", "one_hot"):
        return ("categorical",)
    raise ValueError(f"unknown binarization strategy {strategy!r}")


def _fmt(x):
    return f"{x:.6g}"


@dataclass
class FeatureEncoding:
    """How one raw column becomes binary columns."""

    name: str
    kind: str  # threshold | bins | categorical | binary
    params: list
    columns: list = field(default_factory=list)

    def transform(self, values):
        n = len(values)
        if self.kind == "categorical":
            vals = [str(v) if not isinstance(v, float) else _fmt(v) for v in values]
            return np.array([[v == lvl for lvl in self.params] for v in vals], dtype=np.uint8).reshape(n, -1)
        x = np.asarray(values, dtype=float)
        if self.kind == "binary":
            return (x[:, None] == 1.0).astype(np.uint8)
        if self.kind == "threshold":
            return (x[:, None] <= np.asarray(self.params)[None, :]).astype(np.uint8)
        edges, keep = np.asarray(self.params[0]), self.params[1]
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 2)
        return (idx[:, None] == np.asarray(keep)[None, :]).astype(np.uint8)

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "params": self.params, "columns": self.columns}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["kind"], d["params"], list(d["columns"]))


def _encode_feature(name, values, strategy, drop_first):
    numeric = all(isinstance(v, float) for v in values)
    if numeric and strategy[0] != "categorical":
        x = np.asarray(values, dtype=float)
        uniq = np.unique(x)
        if uniq.size == 2 and uniq[0] == 0.0 and uniq[1] == 1.0:
            return FeatureEncoding(name, "binary", [], [name])
        if strategy[0] == "all":
            mids = ((uniq[:-1] + uniq[1:]) / 2.0).tolist()
            return FeatureEncoding(name, "threshold", mids, [f"{name}<={_fmt(m)}" for m in mids])
        bins = strategy[1]
        lo, hi = float(x.min()), float(x.max())
        edges = np.linspace(lo, hi, bins + 1).tolist() if hi > lo else [lo, hi]
        nb = len(edges) - 1
        keep = list(range(1 if drop_first else 0, nb))
        names = []
        for b in keep:
            close = "]" if b == nb - 1 else ")"
            names.append(f"{name} in [{_fmt(edges[b])}, {_fmt(edges[b + 1])}{close}")
        return FeatureEncoding(name, "bins", [edges, keep], names)
    vals = [str(v) if not isinstance(v, float) else _fmt(v) for v in values]
    levels = sorted(set(vals))
    if len(levels) == 2:
        levels = levels[1:]
    elif drop_first:
        levels = levels[1:]
    return FeatureEncoding(name, "categorical", levels, [f"{name}=={lvl}" for lvl in levels])


@dataclass
class Binarizer:
    """Fitted binarization recipe; re-applies the same columns to new data."""

    encodings: list

    @classmethod
    def fit(cls, raw: RawDataset, strategy="all", overrides=None, drop_first=False):
        base = parse_strategy(strategy)
        overrides = {k: parse_strategy(v) for k, v in (overrides or {}).items()}
        unknown = set(overrides) - set(raw.columns)
        if unknown:
            raise MissingColumnError(sorted(unknown)[0])
        encs = [
            _encode_feature(name, vals, overrides.get(name, base), drop_first)
            for name, vals in raw.columns.items()
        ]
        return cls(encs)

    @property
    def feature_names(self):
        return [c for e in self.encodings for c in e.columns]

    def transform(self, raw: RawDataset):
        blocks = []
        for enc in self.encodings:
            if enc.name not in raw.columns:
                raise FeatureMismatchError(f"evaluation data lacks feature {enc.name!r}")
            if not enc.columns:
                continue
            block = enc.transform(raw.columns[enc.name])
            blocks.append(block)
        if not blocks:
            return np.zeros((raw.n_rows, 0), dtype=np.uint8)
        return np.hstack(blocks)

    def restrict(self, keep_names):
        """Drop columns not in ``keep_names`` (constant columns after fitting)."""
        keep = set(keep_names)
        out = []
        for enc in self.encodings:
            cols = [c for c in enc.columns if c in keep]
            if cols == enc.columns:
                out.append(enc)
                continue
            pos = [i for i, c in enumerate(enc.columns) if c in keep]
            if enc.kind == "threshold":
                params = [enc.params[i] for i in pos]
            elif enc.kind == "bins":
                params = [enc.params[0], [enc.params[1][i] for i in pos]]
            elif enc.kind == "categorical":
                params = [enc.params[i] for i in pos]
            else:
                params = enc.params
            out.append(FeatureEncoding(enc.name, enc.kind, params, cols))
        return Binarizer(out)

    def to_dict(self):
        return {"encodings": [e.to_dict() for e in self.encodings]}

    @classmethod
    def from_dict(cls, d):
        return cls([FeatureEncoding.from_dict(e) for e in d["encodings"]])


# --------------------------------------------------------------------------
# equivalence classes


@dataclass
class EquivalentSet:
    members: tuple
    toward_one: np.ndarray | None = None
    toward_zero: np.ndarray | None = None
    loss: float = 0.0

    def __len__(self):
        return len(self.members)


def equivalence_classes(X, data=None):
    """Partition row indices by identical feature vectors, ordered by first member.

    With ``data`` the aggregated weights and equivalent loss are filled in.
    """
    X = np.asarray(X)
    if X.shape[0] == 0:
        return []
    _, inv = np.unique(X, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    groups = {}
    for i, g in enumerate(inv):
        groups.setdefault(int(g), []).append(i)
    sets = sorted((tuple(v) for v in groups.values()), key=lambda m: m[0])
    if data is None:
        return [EquivalentSet(m) for m in sets]
    out = []
    for m in sets:
        idx = list(m)
        a = data.toward_one[idx].sum(axis=0)
        b = data.toward_zero[idx].sum(axis=0)
        loss = survival.equivalent_loss(a, b, data.grid.interval_lengths, data.norm)
        out.append(EquivalentSet(m, a, b, loss))
    return out


# --------------------------------------------------------------------------
# binary dataset


class BinaryDataset:
    """Binary feature matrix with everything the loss and bounds need precomputed.

    Treated as immutable once built.
    """

    def __init__(self, X, times, events, feature_names=None, drop_constant=True, binarizer=None):
        X = np.asarray(X, dtype=np.uint8)
        times = np.asarray(times, dtype=float).reshape(-1)
        events = np.asarray(events).astype(np.int8).reshape(-1)
        if times.size == 0:
            raise EmptyDatasetError("dataset has no rows")
        if X.ndim != 2 or X.shape[0] != times.size or events.size != times.size:
            raise ValueError("feature matrix, times and events disagree in length")
        if np.any(times <= 0) or not np.all(np.isfinite(times)):
            raise ValueError("observation times must be positive and finite")
        if not np.all((events == 0) | (events == 1)):
            raise ValueError("event indicators must be 0 or 1")
        if not events.any():
            raise NoEventsError("every sample is censored")
        if np.any((X != 0) & (X != 1)):
            raise ValueError("feature matrix must be binary")
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match the matrix")
        if drop_constant and X.shape[1]:
            varying = X.min(axis=0) != X.max(axis=0)
            if not varying.all():
                dropped = [n for n, v in zip(names, varying) if not v]
                log.warning("dropping %d constant feature column(s): %s", len(dropped), ", ".join(dropped))
                X = X[:, varying]
                names = [n for n, v in zip(names, varying) if v]
        if drop_constant and X.shape[1] == 0:
            raise DegenerateFeaturesError("no feature column varies across samples")
        if binarizer is not None:
            binarizer = binarizer.restrict(names)

        self.X = X
        self.X.setflags(write=False)
        self.times = times
        self.events = events
        self.feature_names = names
        self.binarizer = binarizer
        self.n_samples, self.n_features = X.shape
        self.grid = survival.TimeGrid.from_times(times)
        self.y_max = self.grid.y_max
        self.n_intervals = len(self.grid)
        self.norm = 1.0 / (self.y_max * self.n_samples)
        self.censoring = survival.censoring_km(times, events)
        self.toward_one, self.toward_zero = survival.ipcw_weights(
            times, events, self.censoring, self.grid.breakpoints
        )
        at_grid = times[:, None] == self.grid.breakpoints[None, :]
        deaths = at_grid * events[:, None]
        at_risk = times[:, None] >= self.grid.breakpoints[None, :]
        self.stats_matrix = np.hstack([self.toward_one, self.toward_zero, deaths, at_risk]).astype(float)
        self._nbytes = (self.n_samples + 7) // 8
        self.full_bits = (1 << self.n_samples) - 1
        self.column_bits = [self.bits(X[:, j].astype(bool)) for j in range(self.n_features)]
        self.classes = equivalence_classes(X, self)
        self.class_of = np.empty(self.n_samples, dtype=int)
        self.equiv_share = np.zeros(self.n_samples)
        for c, eq in enumerate(self.classes):
            idx = list(eq.members)
            self.class_of[idx] = c
            self.equiv_share[idx] = eq.loss / len(idx)
        self.ipcw_truncated = bool(np.any(self.censoring(self.grid.starts) <= 0))

    # bitset helpers -------------------------------------------------------

    def mask(self, support):
        if isinstance(support, (int, np.integer)) and not isinstance(support, bool):
            raw = int(support).to_bytes(self._nbytes, "little")
            return np.unpackbits(np.frombuffer(raw, np.uint8), bitorder="little", count=self.n_samples).astype(bool)
        arr = np.asarray(support)
        if arr.dtype == bool:
            return arr
        m = np.zeros(self.n_samples, dtype=bool)
        m[arr.astype(int)] = True
        return m

    def bits(self, mask):
        packed = np.packbits(np.asarray(mask, dtype=bool), bitorder="little")
        return int.from_bytes(packed.tobytes(), "little")

    def masks(self, supports):
        if not supports:
            return np.zeros((0, self.n_samples), dtype=bool)
        raw = b"".join(int(s).to_bytes(self._nbytes, "little") for s in supports)
        arr = np.frombuffer(raw, np.uint8).reshape(len(supports), self._nbytes)
        return np.unpackbits(arr, axis=1, bitorder="little", count=self.n_samples).astype(bool)

    def indices(self, support):
        return np.nonzero(self.mask(support))[0]

    # convenience ------------------------------------------------------------

    def subset(self, idx):
        """A new dataset on the given rows (own grid and censoring curve)."""
        idx = np.asarray(idx)
        return BinaryDataset(self.X[idx], self.times[idx], self.events[idx], self.feature_names, drop_constant=False, binarizer=self.binarizer)

    def root_loss(self):
        return survival.leaf_loss(self.full_bits, self).loss

    def report(self):
        """Binarization report: raw feature -> produced columns."""
        out = {"n_samples": self.n_samples, "n_features": self.n_features, "features": {}}
        if self.binarizer is not None:
            for enc in self.binarizer.encodings:
                out["features"][enc.name] = {"kind": enc.kind, "columns": enc.columns, "params": enc.params}
        else:
            out["features"] = {n: {"kind": "binary", "columns": [n]} for n in self.feature_names}
        out["ipcw_truncated"] = self.ipcw_truncated
        out["n_equivalence_classes"] = len(self.classes)
        return out


def binarize(raw: RawDataset, strategy="all", overrides=None, drop_first=False) -> BinaryDataset:
    """Expand raw features into binary columns and precompute loss weights.

    ``strategy`` is ``"all"`` (one ``x <= midpoint`` column per pair of
    consecutive distinct values) or ``"width:K"`` (K equal-width bins, one-hot).
    Non-numeric columns are one-hot encoded; two-level columns get a single
    indicator.  ``overrides`` maps feature names to their own strategy.
    """
    binarizer = Binarizer.fit(raw, strategy, overrides, drop_first)
    X = binarizer.transform(raw)
    return BinaryDataset(X, raw.time, raw.event, binarizer.feature_names, drop_constant=True, binarizer=binarizer)


def apply_binarizer(binarizer: Binarizer, raw: RawDataset) -> BinaryDataset:
    """Encode evaluation data with a training recipe (constant columns kept)."""
    X = binarizer.transform(raw)
    return BinaryDataset(X, raw.time, raw.event, binarizer.feature_names, drop_constant=False, binarizer=binarizer)


VETERANS_CONTINUOUS = ("Age_in_years", "Karnofsky_score", "Months_from_Diagnosis")


def veterans_recipe(raw: RawDataset) -> BinaryDataset:
    """Four equal-width bins for the three continuous veterans columns, one-hot the rest."""
    overrides = {name: "categorical" for name in raw.columns if name not in VETERANS_CONTINUOUS}
    return binarize(raw, "width:4", overrides=overrides, drop_first=False)
