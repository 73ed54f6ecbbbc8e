import json

import numpy as np
import pytest

from tsdigraph.anomaly import Metrics
from tsdigraph.report import dumps, emit_report, metrics_from_dict, render_text


def run(acc, p1=0.9, r1=0.8, p0=0.7, r0=0.6):
    return Metrics(p1, r1, p0, r0, acc)


def test_identical_runs():
    doc = emit_report([run(0.9)] * 10)
    for pos in (1, 0):
        for name in ("precision", "recall", "accuracy"):
            assert doc[f"positive_{pos}"][name]["std"] == 0.0
    assert doc["positive_1"]["precision"]["mean"] == 0.9
    assert doc["positive_0"]["recall"]["mean"] == 0.6


def test_drop_best_and_worst():
    accs = [0.90 + 0.01 * i for i in range(10)]
    order = [3, 9, 0, 5, 1, 8, 2, 7, 4, 6]
    doc = emit_report([run(accs[i]) for i in order])
    assert doc["n_aggregated"] == 8
    assert sorted(doc["dropped_runs"]) == sorted([order.index(0), order.index(9)])
    assert abs(doc["positive_1"]["accuracy"]["mean"] - 0.945) < 1e-12
    middle = np.array(accs[1:9])
    assert abs(doc["positive_0"]["accuracy"]["std"] - middle.std()) < 1e-12


def test_other_metrics_follow_accuracy_ranking():
    runs = [run(0.9 + 0.01 * i, p1=float(i)) for i in range(10)]
    doc = emit_report(runs)
    assert doc["positive_1"]["precision"]["mean"] == np.mean(np.arange(1, 9))


def test_both_blocks_present():
    doc = emit_report([run(0.5)] * 10)
    assert {"positive_1", "positive_0"} <= set(doc)
    text = render_text(doc)
    assert "Positive class = 1" in text and "Positive class = 0" in text


def test_other_run_counts_are_flagged():
    doc = emit_report([run(0.8), run(0.9), run(1.0)])
    assert doc["n_aggregated"] == 3
    assert doc["flags"]
    assert abs(doc["positive_1"]["accuracy"]["mean"] - 0.9) < 1e-12


def test_drop_mode():
    doc = emit_report([run(0.8), run(0.9), run(1.0)], mode="drop")
    assert doc["n_aggregated"] == 1
    assert doc["positive_1"]["accuracy"]["mean"] == 0.9
    with pytest.raises(ValueError):
        emit_report([run(0.8), run(0.9)], mode="drop")


def test_all_mode_and_errors():
    doc = emit_report([run(0.9 + 0.01 * i) for i in range(10)], mode="all")
    assert doc["n_aggregated"] == 10
    with pytest.raises(ValueError):
        emit_report([])
    with pytest.raises(ValueError):
        emit_report([run(0.9)] * 10, mode="median")


def test_metrics_dict_round_trip():
    m = Metrics(0.1, 0.2, 0.3, 0.4, 0.5, ["recall_0"])
    back = metrics_from_dict(json.loads(dumps(m.to_dict())))
    assert back == m
