"""Synthetic ECG-like recordings, the smoothing/downsampling/slicing chain,
recording-aware splits and on-disk dataset files."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .digraph import Digraph, FeaturedDigraph, TimeDigraphSpec, build_series_digraph

SAMPLE_RATE = 512
SLICE_SECONDS = 5
SLICE_SAMPLES = SAMPLE_RATE * SLICE_SECONDS
SMOOTH_WINDOW = 20
DOWNSAMPLE = 4
ANOMALY_KINDS = ("noise_burst", "flatline", "dropout")


@dataclass(frozen=True)
class Record:
    """One recording at 512 Hz with a quality label per 5-s slice.

    ``quality`` uses 1 (bad), 2 (medium) and 3 (good); the binary label is 0
    for quality 1 and 1 otherwise.
    """
    recording_id: str
    samples: np.ndarray
    quality: np.ndarray

    def __post_init__(self):
        n = len(self.samples)
        if n == 0 or n % SLICE_SAMPLES:
            raise ValueError(f"recording length {n} is not a positive multiple of {SLICE_SAMPLES}")
        if len(self.quality) != n // SLICE_SAMPLES:
            raise ValueError("need one quality label per 5-s slice")
        if not np.isin(self.quality, (1, 2, 3)).all():
            raise ValueError("quality labels must be 1, 2 or 3")

    @property
    def labels(self):
        return (np.asarray(self.quality) != 1).astype(int)

    @property
    def num_slices(self):
        return len(self.quality)


# -- synthetic generator ----------------------------------------------------

# (amplitude, offset from R peak in s, width in s) of the P, Q, R, S, T waves
_WAVES = np.array([
    [0.12, -0.20, 0.025],
    [-0.15, -0.035, 0.010],
    [1.00, 0.0, 0.012],
    [-0.25, 0.035, 0.012],
    [0.30, 0.26, 0.045],
])


def _clean_ecg(rng, n, amp, bpm):
    t = np.arange(n) / SAMPLE_RATE
    period = 60.0 / bpm
    beats = [rng.uniform(0, period)]
    while beats[-1] < t[-1] + 1.0:
        beats.append(beats[-1] + period * rng.normal(1.0, 0.03))
    beats = np.asarray(beats)
    sig = np.zeros(n)
    for a, off, w in _WAVES:
        centers = beats + off
        # only beats within 5 widths contribute noticeably
        for c in centers:
            lo = max(int((c - 5 * w) * SAMPLE_RATE), 0)
            hi = min(int((c + 5 * w) * SAMPLE_RATE) + 1, n)
            if lo < hi:
                sig[lo:hi] += a * np.exp(-0.5 * ((t[lo:hi] - c) / w) ** 2)
    wander = 0.1 * np.sin(2 * np.pi * 0.25 * t + rng.uniform(0, 2 * np.pi))
    wander += 0.05 * np.sin(2 * np.pi * 0.07 * t + rng.uniform(0, 2 * np.pi))
    return amp * sig + wander


def _corrupt(rng, seg, amp, kind):
    """Damage at least 3 of the 5 seconds of ``seg`` in place."""
    n = len(seg)
    span = int(rng.uniform(0.6, 1.0) * n)
    start = int(rng.integers(0, n - span + 1))
    part = slice(start, start + span)
    if kind == "noise_burst":
        t = np.arange(span) / SAMPLE_RATE
        drift = amp * rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t)
        seg[part] += drift + rng.normal(0, amp * rng.uniform(0.4, 0.8), span)
    elif kind == "flatline":
        seg[part] = seg[start] + rng.normal(0, 0.01 * amp, span)
    elif kind == "dropout":
        seg[part] = seg[part] * rng.uniform(0.03, 0.1) + rng.normal(0, 0.02 * amp, span)
    else:
        raise ValueError(f"unknown anomaly kind {kind!r}")


def synth_record(recording_id, seconds, anomaly_rate, rng):
    if seconds <= 0 or seconds % SLICE_SECONDS:
        raise ValueError(f"seconds must be a positive multiple of {SLICE_SECONDS}")
    n = seconds * SAMPLE_RATE
    amp = rng.uniform(0.8, 1.2)
    sig = _clean_ecg(rng, n, amp, rng.uniform(50, 90))
    n_slices = seconds // SLICE_SECONDS
    bad = rng.random(n_slices) < anomaly_rate
    medium = ~bad & (rng.random(n_slices) < 0.3)
    noise_sd = np.where(medium, 0.05, 0.02) * amp
    sig += np.repeat(noise_sd, SLICE_SAMPLES) * rng.standard_normal(n)
    for s in np.flatnonzero(bad):
        kind = ANOMALY_KINDS[rng.integers(len(ANOMALY_KINDS))]
        _corrupt(rng, sig[s * SLICE_SAMPLES:(s + 1) * SLICE_SAMPLES], amp, kind)
    quality = np.where(bad, 1, np.where(medium, 2, 3))
    return Record(recording_id, sig, quality)


def synth_ecg(n_recordings, seconds_each, anomaly_rate=0.18, seed=0):
    """Quasi-periodic pulse trains with corrupted 5-s slices at ``anomaly_rate``.

    Each recording draws from its own stream seeded by ``(seed, index)``, so
    recordings can be generated independently.
    """
    if n_recordings <= 0:
        raise ValueError("n_recordings must be positive")
    if not 0.0 <= anomaly_rate <= 1.0:
        raise ValueError(f"anomaly rate must lie in [0, 1], got {anomaly_rate}")
    return [synth_record(f"rec{i:03d}", seconds_each, anomaly_rate,
                         np.random.default_rng([seed, i]))
            for i in range(n_recordings)]


# -- preprocessing ----------------------------------------------------------

def smooth(x, window=SMOOTH_WINDOW):
    """Centered moving average; the window is truncated at the edges."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n == 0:
        return x.copy()
    # offset by the first sample so a constant signal stays exactly constant
    ref = x[0]
    c = np.concatenate([[0.0], np.cumsum(x - ref)])
    idx = np.arange(n)
    lo = np.maximum(idx - window // 2, 0)
    hi = np.minimum(idx - window // 2 + window, n)
    return (c[hi] - c[lo]) / (hi - lo) + ref


def minmax_scale(x, axis=-1):
    """Scale each sequence to [0, 1]; constant sequences become zeros."""
    x = np.asarray(x, dtype=float)
    lo = x.min(axis=axis, keepdims=True)
    rng = x.max(axis=axis, keepdims=True) - lo
    return np.divide(x - lo, rng, out=np.zeros_like(x), where=rng > 0)


TASKS = {
    # task: (seconds per sequence, lookback, dilation)
    "supervised": (5, 128, 4),
    "unsupervised": (1, 25, 4),
}


@dataclass
class Sequences:
    """Scaled sequences from one or more recordings.

    ``slice_ids`` maps each sequence to its 5-s slice (a global index into
    ``labels``), so 1-s windows can be averaged back per slice.
    """
    x: np.ndarray
    slice_ids: np.ndarray
    labels: np.ndarray
    recording_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.x)

    def subset(self, idx):
        return Sequences(self.x[idx], self.slice_ids[idx], self.labels, self.recording_ids)

    @property
    def window_labels(self):
        return self.labels[self.slice_ids]


def preprocess_arrays(record: Record, task="supervised"):
    """smooth -> keep every 4th sample -> slice -> per-slice min-max.

    Returns ``(x, slice_index)``: sequences of 640 (supervised) or 128
    (unsupervised) samples and the 5-s slice each came from.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {sorted(TASKS)}")
    seconds = TASKS[task][0]
    rate = SAMPLE_RATE // DOWNSAMPLE
    length = seconds * rate
    if len(record.samples) < SLICE_SAMPLES:
        raise ValueError("record shorter than one slice")
    y = smooth(record.samples)[::DOWNSAMPLE]
    n = len(y) // length
    x = minmax_scale(y[:n * length].reshape(n, length))
    return x, (np.arange(n) * seconds) // SLICE_SECONDS


def preprocess(record: Record, task="supervised", spec: Optional[TimeDigraphSpec] = None):
    """Featured series digraphs plus labels for one recording.

    Supervised: 640-node graphs, lookback 128 with d=4. Unsupervised: 128-node
    graphs, lookback 25 (pass ``spec`` to choose d=8).
    """
    x, sl = preprocess_arrays(record, task)
    if spec is None:
        _, lookback, d = TASKS[task]
        spec = TimeDigraphSpec.from_lookback(lookback, d)
    g: Digraph = build_series_digraph(x.shape[1], spec)
    graphs = [FeaturedDigraph(g, row[:, None]) for row in x]
    return graphs, record.labels[sl]


def build_sequences(records, task="supervised"):
    xs, ids, labels, offset = [], [], [], 0
    for r in records:
        x, sl = preprocess_arrays(r, task)
        xs.append(x)
        ids.append(sl + offset)
        labels.append(r.labels)
        offset += r.num_slices
    return Sequences(np.concatenate(xs), np.concatenate(ids), np.concatenate(labels),
                     [r.recording_id for r in records])


# -- splits -----------------------------------------------------------------

def split_by_recording(records, weights=(0.3, 0.35, 0.35), seed=0):
    """Partition whole recordings into train/valid/test.

    Recordings are visited in a seeded random order and each goes to the
    split furthest below its slice-count target (ties go to the earlier split).
    """
    if len(records) < 3:
        raise ValueError("need at least 3 recordings to split")
    w = np.asarray(weights, dtype=float)
    if len(w) != 3 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be three nonnegative numbers")
    w = w / w.sum()
    total = sum(r.num_slices for r in records)
    deficit = w * total
    order = np.random.default_rng(seed).permutation(len(records))
    parts = ([], [], [])
    for i in order:
        k = int(np.argmax(deficit))
        parts[k].append(records[i])
        deficit[k] -= records[i].num_slices
    return parts


# -- files ------------------------------------------------------------------

LABELS_FILE = "labels.csv"
META_FILE = "dataset.json"


def write_dataset(records, directory, meta=None):
    """One ``<id>.csv`` (``t,value``) per recording plus ``labels.csv``
    (``recording_id,slice_index,label`` with the 1/2/3 quality label)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in records:
        t = np.arange(len(r.samples)) / SAMPLE_RATE
        np.savetxt(directory / f"{r.recording_id}.csv", np.column_stack([t, r.samples]),
                   delimiter=",", header="t,value", comments="", fmt=["%.9f", "%.17g"])
    with open(directory / LABELS_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recording_id", "slice_index", "label"])
        for r in records:
            for i, q in enumerate(r.quality):
                w.writerow([r.recording_id, i, int(q)])
    doc = {"recordings": [r.recording_id for r in records], "sample_rate_hz": SAMPLE_RATE}
    doc.update(meta or {})
    (directory / META_FILE).write_text(json.dumps(doc, indent=2))
    return directory


def read_dataset(directory):
    directory = Path(directory)
    quality = {}
    with open(directory / LABELS_FILE, newline="") as fh:
        for row in csv.DictReader(fh):
            quality.setdefault(row["recording_id"], {})[int(row["slice_index"])] = int(row["label"])
    records = []
    for rid in json.loads((directory / META_FILE).read_text())["recordings"]:
        data = np.loadtxt(directory / f"{rid}.csv", delimiter=",", skiprows=1, ndmin=2)
        q = quality.get(rid, {})
        records.append(Record(rid, data[:, 1], np.array([q[i] for i in sorted(q)], dtype=int)))
    return records


# -- run configuration ------------------------------------------------------

@dataclass
class RunConfig:
    model: str = "TCNAE1"
    dataset: str = ""
    seed: int = 0
    epochs: int = 75
    retrain_epochs: int = 200
    batch_size: int = 64
    approach: str = "A"
    clusterer: str = "kmeans"
    out_dir: str = "runs"
    refine_fraction: float = 0.2
    dtype: str = "float64"
    lr: float = 1e-3

    def __post_init__(self):
        from .models import MODEL_NAMES
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_NAMES}")
        if self.approach not in ("A", "B"):
            raise ValueError("approach must be A or B")
        if self.clusterer not in ("kmeans", "dbscan"):
            raise ValueError("clusterer must be kmeans or dbscan")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self):
        return asdict(self)
