"""Aggregation of repeated runs into the two-block (positive class 1 / 0) layout."""
from __future__ import annotations

import json

import numpy as np

from .anomaly import Metrics

METRIC_NAMES = ("precision", "recall", "accuracy")
PAPER_RUNS = 10


def _select(runs, mode):
    n = len(runs)
    acc = np.array([r.accuracy for r in runs])
    flags = []
    if mode == "standard":
        if n != PAPER_RUNS:
            flags.append(f"aggregated all {n} runs (extremes are dropped only for {PAPER_RUNS})")
            return list(range(n)), [], flags
    elif mode == "all":
        return list(range(n)), [], flags
    elif mode != "drop":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if n < 3:
        raise ValueError(f"dropping best and worst needs at least 3 runs, got {n}")
    if n != PAPER_RUNS:
        flags.append(f"extremes dropped from {n} runs instead of {PAPER_RUNS}")
    best = int(np.argmax(acc))
    worst = int(np.argmin(acc))
    if best == worst:  # all equal: drop the last one as "worst"
        worst = n - 1 if best != n - 1 else n - 2
    dropped = sorted({best, worst})
    return [i for i in range(n) if i not in dropped], dropped, flags


def emit_report(runs, mode="standard", meta=None):
    """Mean and (population) std per metric after dropping the runs with the
    best and worst accuracy.

    ``mode``: "standard" drops extremes only for exactly 10 runs and otherwise
    aggregates everything with a flag; "drop" always drops (needs >= 3 runs);
    "all" never drops.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to report")
    keep, dropped, flags = _select(runs, mode)
    doc = {"n_runs": len(runs), "n_aggregated": len(keep), "dropped_runs": dropped,
           "flags": flags}
    for pos in (1, 0):
        block = {}
        for name in METRIC_NAMES:
            v = np.array([runs[i].block(pos)[name] for i in keep])
            block[name] = {"mean": float(v.mean()), "std": float(v.std())}
        doc[f"positive_{pos}"] = block
    if meta:
        doc["meta"] = meta
    return doc


def render_text(doc, title="results"):
    """Plain-text table with one row per positive-class convention."""
    lines = [title, f"{'':22}{'Precision':>18}{'Recall':>18}{'Accuracy':>18}"]
    for pos in (1, 0):
        b = doc[f"positive_{pos}"]
        cells = "".join(f"{b[m]['mean']:>10.3f} ± {b[m]['std']:<5.3f}" for m in METRIC_NAMES)
        lines.append(f"{'Positive class = ' + str(pos):22}{cells}")
    for f in doc.get("flags", []):
        lines.append(f"note: {f}")
    return "\n".join(lines)


def metrics_from_dict(d):
    p1, p0 = d["positive_1"], d["positive_0"]
    return Metrics(p1["precision"], p1["recall"], p0["precision"], p0["recall"],
                   p1["accuracy"], list(d.get("zero_division", [])))


def dumps(doc):
    return json.dumps(doc, indent=2, sort_keys=True)
