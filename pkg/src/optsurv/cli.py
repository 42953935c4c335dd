"""Command line interface: train, evaluate, export-dot, benchmark, fit-reference."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import metrics, reference
from .bounds import BoundConfig
from .dataset import Binarizer, apply_binarizer, binarize, load_csv
from .errors import DataError, FeatureMismatchError, OptSurvError
from .solver import SCHEDULERS, greedy_tree, solve
from .tree import SurvivalTree

log = logging.getLogger("optsurv")

EXIT_OK, EXIT_USAGE, EXIT_TIMEOUT, EXIT_DATA = 0, 1, 2, 3
DEFAULT_SEED = 2023


class UsageError(Exception):
    pass


# every key a config file may set, with its default and parser
FIELDS = {
    "input": (None, str),
    "time_col": ("time", str),
    "event_col": ("event", str),
    "binarize": ("all", str),
    "lambda": (0.01, float),
    "max_depth": (5, int),
    "min_leaf": (7, int),
    "time_limit": (None, float),
    "reference": ("none", str),
    "out_tree": (None, str),
    "out_dot": (None, str),
    "out_report": (None, str),
    "seed": (DEFAULT_SEED, int),
    "scheduler": ("priority", str),
    "tree": (None, str),
    "lambdas": ("0.1,0.05,0.01,0.005,0.0025,0.001", str),
    "depths": ("2,3,4,5", str),
    "greedy": (True, lambda v: str(v).strip().lower() in ("1", "true", "yes", "on")),
    "out_losses": (None, str),
    "out_model": (None, str),
}


def read_config(path):
    """Flat ``key=value`` file; blank lines and ``#`` comments ignored."""
    out = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELDS:
            raise UsageError(f"{path}:{n}: unknown config key {key!r}")
        try:
            out[key] = FIELDS[key][1](value)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def write_config(values, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key in FIELDS:
            if values.get(key) is not None:
                fh.write(f"{key}={values[key]}\n")


def resolve(args):
    """Defaults, then the config file, then explicit flags."""
    values = {k: d for k, (d, _) in FIELDS.items()}
    if getattr(args, "config", None):
        values.update(read_config(args.config))
    for key in FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


@dataclass
class ReferenceMode:
    kind: str
    n_trees: int = 0
    depth: int = 0
    path: str = ""


def parse_reference(value):
    value = (value or "none").strip()
    if value == "none":
        return ReferenceMode("none")
    if value.startswith("fit:"):
        parts = value.split(":")
        if len(parts) != 3:
            raise UsageError("--reference fit expects fit:N_TREES:DEPTH")
        try:
            n, d = int(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"bad --reference value {value!r}") from None
        if n < 1 or d < 1:
            raise UsageError("reference tree count and depth must be positive")
        return ReferenceMode("fit", n, d)
    if value.startswith("file:"):
        return ReferenceMode("file", path=value[5:])
    raise UsageError(f"unknown --reference mode {value!r}")


def _require(values, *keys):
    for k in keys:
        if values.get(k) is None:
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


def _load_training(values):
    raw = load_csv(values["input"], values["time_col"], values["event_col"])
    try:
        return binarize(raw, values["binarize"])
    except ValueError as exc:
        if isinstance(exc, OptSurvError):
            raise
        raise UsageError(str(exc)) from None


def _config(values, ref_losses=None):
    try:
        return BoundConfig(
            values["lambda"],
            max_depth=values["max_depth"],
            min_leaf_size=values["min_leaf"],
            reference_losses=ref_losses,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _reference_losses(values, data):
    mode = parse_reference(values["reference"])
    if mode.kind == "none":
        return None
    if mode.kind == "file":
        return reference.import_losses(mode.path, data.n_samples)
    model = reference.fit_reference(data, mode.n_trees, mode.depth, seed=values["seed"])
    return reference.reference_losses(model, data)


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# commands -------------------------------------------------------------------


def cmd_train(values):
    _require(values, "input")
    if values["scheduler"] not in SCHEDULERS:
        raise UsageError(f"unknown scheduler {values['scheduler']!r}")
    start = time.perf_counter()
    data = _load_training(values)
    ref = _reference_losses(values, data)
    ref_time = time.perf_counter() - start
    result = solve(data, _config(values, ref), time_limit=values["time_limit"], scheduler=values["scheduler"])
    elapsed = time.perf_counter() - start
    tree = result.tree
    stats = {
        "objective": result.objective,
        "lower_bound": result.lower_bound,
        "upper_bound": result.upper_bound,
        "gap": result.gap,
        "proven_optimal": result.proven_optimal,
        "timed_out": result.stats["timed_out"],
        "leaves": tree.leaf_count,
        "lambda": values["lambda"],
        "depth": values["max_depth"],
        "train_ibs_ratio": metrics.ibs_ratio(tree, data),
        "iterations": result.stats["iterations"],
        "graph_size": result.stats["graph_size"],
        "queue_pushes": result.stats["queue_pushes"],
        "solve_time": result.stats["elapsed"],
        "reference_time": ref_time,
        "wall_time": elapsed,
    }
    if values["out_tree"]:
        _write(values["out_tree"], tree.to_json())
    if values["out_dot"]:
        _write(values["out_dot"], tree.to_dot())
    text = json.dumps(stats, indent=2) + "\n"
    if values["out_report"]:
        _write(values["out_report"], text)
    sys.stdout.write(text)
    return EXIT_OK if result.proven_optimal else EXIT_TIMEOUT


def _load_tree(path):
    try:
        return SurvivalTree.from_json(open(path, encoding="utf-8").read())
    except OSError as exc:
        raise DataError(f"cannot read tree file {path}: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"malformed tree file {path}: {exc}") from None


def cmd_evaluate(values):
    _require(values, "input", "tree")
    tree = _load_tree(values["tree"])
    if tree.binarizer is None:
        raise FeatureMismatchError("tree file carries no binarization recipe")
    binarizer = Binarizer.from_dict(tree.binarizer)
    if binarizer.feature_names != list(tree.feature_names):
        raise FeatureMismatchError("tree features and its binarization recipe disagree")
    raw = load_csv(values["input"], values["time_col"], values["event_col"], features=[e.name for e in binarizer.encodings])
    data = apply_binarizer(binarizer, raw)
    report = metrics.evaluate(tree, data)
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if values["out_report"]:
        _write(values["out_report"], text)
    sys.stdout.write(report.table() + "\n")
    return EXIT_OK


def cmd_export_dot(values):
    _require(values, "tree")
    dot = _load_tree(values["tree"]).to_dot()
    if values["out_dot"]:
        _write(values["out_dot"], dot)
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def cmd_benchmark(values):
    """Frontier over the lambda x depth sweep, optimal and (optionally) greedy rows."""
    _require(values, "input")
    data = _load_training(values)
    lambdas = _floats(values["lambdas"])
    depths = [int(d) for d in _floats(values["depths"])]
    rows, timed_out = [], False
    for depth in depths:
        for lam in lambdas:
            v = dict(values, **{"lambda": lam, "max_depth": depth})
            cfg = _config(v)
            t0 = time.perf_counter()
            res = solve(data, cfg, time_limit=values["time_limit"])
            dt = time.perf_counter() - t0
            timed_out |= not res.proven_optimal
            method = "optimal" if res.proven_optimal else "optimal_timeout"
            rows.append((method, lam, depth, res.tree.leaf_count, metrics.ibs_ratio(res.tree, data), res.objective, dt))
            if values["greedy"]:
                t0 = time.perf_counter()
                g = greedy_tree(data, cfg)
                dt = time.perf_counter() - t0
                rows.append(("greedy", lam, depth, g.leaf_count, metrics.ibs_ratio(g, data), g.objective, dt))
    out = open(values["out_report"], "w", newline="", encoding="utf-8") if values["out_report"] else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "lambda", "depth", "leaves", "train_ibs_ratio", "objective", "time"])
        for method, lam, depth, leaves, ratio, obj, dt in rows:
            w.writerow([method, f"{lam:g}", depth, leaves, f"{ratio:.17g}", f"{obj:.17g}", f"{dt:.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_TIMEOUT if timed_out else EXIT_OK


def cmd_fit_reference(values):
    _require(values, "input")
    mode = parse_reference(values["reference"])
    if mode.kind != "fit":
        raise UsageError("fit-reference needs --reference fit:N_TREES:DEPTH")
    data = _load_training(values)
    model = reference.fit_reference(data, mode.n_trees, mode.depth, seed=values["seed"])
    losses = reference.reference_losses(model, data)
    if values["out_losses"]:
        reference.export_losses(losses, values["out_losses"])
    if values["out_model"]:
        _write(values["out_model"], model.to_json())
    sys.stdout.write(json.dumps({"n_trees": model.n_trees, "depth": mode.depth, "total_loss": float(np.sum(losses))}) + "\n")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "export-dot": cmd_export_dot,
    "benchmark": cmd_benchmark,
    "fit-reference": cmd_fit_reference,
}


def build_parser():
    p = argparse.ArgumentParser(prog="optsurv", description="Optimal sparse survival trees.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file; explicit flags take precedence")
        sp.add_argument("--input", help="training or evaluation CSV")
        sp.add_argument("--time-col", dest="time_col")
        sp.add_argument("--event-col", dest="event_col")
        sp.add_argument("--binarize", help="all | width:K")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-report", dest="out_report")

    def model(sp):
        sp.add_argument("--lambda", dest="lambda", type=float)
        sp.add_argument("--max-depth", dest="max_depth", type=int)
        sp.add_argument("--min-leaf", dest="min_leaf", type=int)
        sp.add_argument("--time-limit", dest="time_limit", type=float)

    sp = sub.add_parser("train", help="fit an optimal tree")
    common(sp)
    model(sp)
    sp.add_argument("--reference", help="none | fit:N:D | file:PATH")
    sp.add_argument("--scheduler", choices=SCHEDULERS)
    sp.add_argument("--out-tree", dest="out_tree")
    sp.add_argument("--out-dot", dest="out_dot")

    sp = sub.add_parser("evaluate", help="score a saved tree on a dataset")
    common(sp)
    sp.add_argument("--tree", required=False)

    sp = sub.add_parser("export-dot", help="render a saved tree as Graphviz DOT")
    sp.add_argument("--config")
    sp.add_argument("--tree")
    sp.add_argument("--out-dot", dest="out_dot")

    sp = sub.add_parser("benchmark", help="sparsity/loss frontier as CSV")
    common(sp)
    model(sp)
    sp.add_argument("--lambdas", help="comma-separated penalties")
    sp.add_argument("--depths", help="comma-separated depth limits")
    sp.add_argument("--no-greedy", dest="greedy", action="store_const", const=False)

    sp = sub.add_parser("fit-reference", help="fit the bagged reference and export per-sample losses")
    common(sp)
    sp.add_argument("--reference", help="fit:N:D")
    sp.add_argument("--out-losses", dest="out_losses")
    sp.add_argument("--out-model", dest="out_model")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        values = resolve(args)
        return COMMANDS[args.command](values)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OptSurvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
