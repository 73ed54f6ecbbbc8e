import json

import numpy as np
import pytest
from scipy import stats

from tsdigraph.data import (SAMPLE_RATE, SLICE_SAMPLES, Record, RunConfig, build_sequences,
                            minmax_scale, preprocess, preprocess_arrays, read_dataset, smooth,
                            split_by_recording, synth_ecg, write_dataset)


@pytest.fixture(scope="module")
def records():
    return synth_ecg(6, 30, seed=1)


def test_zero_rate_gives_all_good(records):
    recs = synth_ecg(3, 20, anomaly_rate=0.0, seed=2)
    assert all(np.all(r.labels == 1) for r in recs)


def test_anomaly_count_within_binomial_bounds():
    recs = synth_ecg(10, 500, seed=3)
    n = sum(r.num_slices for r in recs)
    bad = sum(int(np.sum(r.labels == 0)) for r in recs)
    assert n == 1000
    lo, hi = stats.binom.interval(0.999, n, 0.18)
    assert lo <= bad <= hi


def test_generation_is_deterministic():
    a, b = synth_ecg(2, 10, seed=4), synth_ecg(2, 10, seed=4)
    for ra, rb in zip(a, b):
        assert ra.samples.tobytes() == rb.samples.tobytes()
        np.testing.assert_array_equal(ra.quality, rb.quality)
    c = synth_ecg(2, 10, seed=5)
    assert not np.array_equal(a[0].samples, c[0].samples)


def test_quality_levels(records):
    q = np.concatenate([r.quality for r in records])
    assert set(np.unique(q)) <= {1, 2, 3}
    np.testing.assert_array_equal(np.concatenate([r.labels for r in records]), (q != 1))


def test_record_validation():
    with pytest.raises(ValueError):
        Record("x", np.zeros(100), np.array([3]))
    with pytest.raises(ValueError):
        Record("x", np.zeros(SLICE_SAMPLES), np.array([4]))
    with pytest.raises(ValueError):
        synth_ecg(1, 7)


# -- preprocessing -----------------------------------------------------------

def test_smooth_is_centred_moving_average():
    x = np.arange(50.0)
    y = smooth(x, 20)
    np.testing.assert_allclose(y[20:30], x[20:30] - 0.5)
    assert y[0] == np.mean(x[:10])
    np.testing.assert_allclose(smooth(np.full(30, 2.0)), 2.0)


def test_sequence_lengths(records):
    x5, sl5 = preprocess_arrays(records[0], "supervised")
    x1, sl1 = preprocess_arrays(records[0], "unsupervised")
    assert x5.shape == (6, 640)
    assert x1.shape == (30, 128)
    np.testing.assert_array_equal(sl1, np.repeat(np.arange(6), 5))
    np.testing.assert_array_equal(sl5, np.arange(6))


def test_scaled_to_unit_interval(records):
    x, _ = preprocess_arrays(records[1], "unsupervised")
    np.testing.assert_array_equal(x.min(axis=1), 0.0)
    np.testing.assert_array_equal(x.max(axis=1), 1.0)


def test_constant_slice_scales_to_zero():
    np.testing.assert_array_equal(minmax_scale(np.full((2, 5), 3.0)), 0.0)
    rec = Record("c", np.full(SLICE_SAMPLES, 0.4), np.array([3]))
    x, _ = preprocess_arrays(rec, "supervised")
    np.testing.assert_array_equal(x, 0.0)


def test_preprocess_builds_graphs(records):
    graphs, labels = preprocess(records[0], "supervised")
    assert len(graphs) == 6 == len(labels)
    assert graphs[0].graph.num_nodes == 640
    assert graphs[0].features.shape == (640, 1)
    g1, l1 = preprocess(records[0], "unsupervised")
    assert g1[0].graph.num_nodes == 128
    assert len(l1) == 30


def test_build_sequences_uses_global_slice_ids(records):
    seq = build_sequences(records[:2], "unsupervised")
    assert len(seq) == 60
    assert seq.slice_ids.max() == 11
    np.testing.assert_array_equal(seq.labels, np.concatenate([r.labels for r in records[:2]]))
    sub = seq.subset(np.arange(5, 10))
    np.testing.assert_array_equal(sub.window_labels, seq.labels[[1] * 5])


def test_unknown_task(records):
    with pytest.raises(ValueError):
        preprocess_arrays(records[0], "semi")


# -- splits ------------------------------------------------------------------

def test_ten_equal_recordings_split_three_four_three():
    recs = synth_ecg(10, 10, seed=6)
    sizes = [len(p) for p in split_by_recording(recs, seed=0)]
    assert sizes == [3, 4, 3]


def test_split_is_partition_and_deterministic(records):
    parts = split_by_recording(records, seed=7)
    ids = [r.recording_id for p in parts for r in p]
    assert sorted(ids) == sorted(r.recording_id for r in records)
    again = split_by_recording(records, seed=7)
    assert [[r.recording_id for r in p] for p in parts] == \
           [[r.recording_id for r in p] for p in again]


def test_split_keeps_label_proportions():
    recs = synth_ecg(40, 250, seed=0)
    rate = np.mean(np.concatenate([r.labels for r in recs]) == 0)
    for part in split_by_recording(recs, seed=0):
        part_rate = np.mean(np.concatenate([r.labels for r in part]) == 0)
        assert abs(part_rate - rate) <= 0.05


def test_split_needs_three_recordings(records):
    with pytest.raises(ValueError):
        split_by_recording(records[:2])


# -- files and configs -------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    recs = synth_ecg(3, 10, seed=8)
    write_dataset(recs, tmp_path / "ds", {"seed": 8})
    back = read_dataset(tmp_path / "ds")
    for a, b in zip(recs, back):
        assert a.recording_id == b.recording_id
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.quality, b.quality)
    header = (tmp_path / "ds" / "labels.csv").read_text().splitlines()[0]
    assert header == "recording_id,slice_index,label"
    first = (tmp_path / "ds" / f"{recs[0].recording_id}.csv").read_text().splitlines()
    assert first[0] == "t,value"
    assert float(first[2].split(",")[0]) == 1 / SAMPLE_RATE


def test_run_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": "TCNAE2", "seed": 3, "clusterer": "dbscan"}))
    cfg = RunConfig.load(path)
    assert (cfg.model, cfg.seed, cfg.epochs, cfg.retrain_epochs) == ("TCNAE2", 3, 75, 200)
    assert RunConfig(**cfg.to_dict()) == cfg
    for bad in ({"model": "x"}, {"approach": "C"}, {"clusterer": "x"}, {"dtype": "int8"}):
        with pytest.raises(ValueError):
            RunConfig(**bad)
