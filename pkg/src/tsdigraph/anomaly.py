"""Reconstruction-error scoring, training-set refinement, clustering of the
errors set, the linear SVM of approach B and binary quality metrics."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

log = logging.getLogger(__name__)


# -- per-window scores ------------------------------------------------------

def rmse_scores(originals, reconstructions):
    """Root mean squared residual of each window (first axis)."""
    a = np.asarray(originals, dtype=float)
    b = np.asarray(reconstructions, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    r = (a - b).reshape(len(a), -1)
    return np.sqrt(np.mean(r * r, axis=1))


def subwindows(residuals, ell=8, stride=4):
    """``(n_windows, n_sub, ell)`` strided views of each residual window."""
    r = np.asarray(residuals, dtype=float).reshape(len(residuals), -1)
    if r.shape[1] < ell:
        raise ValueError(f"windows of length {r.shape[1]} are shorter than ell={ell}")
    return np.lib.stride_tricks.sliding_window_view(r, ell, axis=1)[:, ::stride, :]


@dataclass
class MahalanobisModel:
    mean: np.ndarray
    cov: np.ndarray          # sample covariance, unregularised
    eps: float
    ell: int = 8
    stride: int = 4

    def __post_init__(self):
        self._chol = np.linalg.cholesky(self.cov + self.eps * np.eye(self.ell))

    def distance(self, e):
        """sqrt((e - mu)^T (cov + eps I)^-1 (e - mu)) along the last axis."""
        from scipy.linalg import solve_triangular
        d = np.asarray(e, dtype=float) - self.mean
        flat = d.reshape(-1, self.ell)
        z = solve_triangular(self._chol, flat.T, lower=True)
        return np.sqrt(np.sum(z * z, axis=0)).reshape(d.shape[:-1])


def fit_mahalanobis(samples, ell=8, eps=None, stride=4):
    """Mean and covariance of length-``ell`` residual vectors.

    ``samples`` is ``(n, ell)``. The default regulariser is
    ``1e-6 * trace(cov) / ell``, floored at 1e-12 so a degenerate sample
    still gives a positive definite system.
    """
    s = np.asarray(samples, dtype=float).reshape(-1, ell)
    if len(s) < ell + 1:
        raise ValueError(f"need at least {ell + 1} sub-windows, got {len(s)}")
    mu = s.mean(axis=0)
    cov = np.cov(s, rowvar=False, bias=False).reshape(ell, ell)
    if eps is None:
        eps = max(1e-6 * np.trace(cov) / ell, 1e-12)
    return MahalanobisModel(mu, cov, float(eps), ell, stride)


def fit_mahalanobis_residuals(residuals, ell=8, stride=4, eps=None):
    return fit_mahalanobis(subwindows(residuals, ell, stride).reshape(-1, ell), ell, eps, stride)


def mahalanobis_scores(model: MahalanobisModel, residuals):
    """Mean sub-window Mahalanobis distance of each residual window."""
    return model.distance(subwindows(residuals, model.ell, model.stride)).mean(axis=1)


# -- errors set -------------------------------------------------------------

@dataclass
class Normalizer:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x.min(axis=0), x.max(axis=0))

    def __call__(self, x):
        span = self.hi - self.lo
        span = np.where(span > 0, span, 1.0)
        return (np.asarray(x, dtype=float) - self.lo) / span


@dataclass
class ErrorPoints:
    """One (rmse, mahalanobis) pair per 5-s slice."""
    window_id: np.ndarray
    rmse: np.ndarray
    mahalanobis: np.ndarray
    true_label: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.window_id)

    @property
    def coords(self):
        return np.column_stack([self.rmse, self.mahalanobis])


def aggregate(scores, groups):
    """Mean of per-1s ``scores`` (``(n, k)``) over each group id; returns
    ``(ids, means)`` with ids sorted."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    groups = np.asarray(groups)
    if len(groups) != len(scores):
        raise ValueError("one group id per score required")
    if len(groups) == 0:
        raise ValueError("no scores to aggregate")
    ids, inv = np.unique(groups, return_inverse=True)
    sums = np.zeros((len(ids), scores.shape[1]))
    np.add.at(sums, inv, scores)
    return ids, sums / np.bincount(inv)[:, None]


def aggregate_normalize(rmse, maha, groups, labels=None, normalizer=None):
    """Per-slice means, min-max scaled.

    With ``normalizer=None`` a new one is fitted on these points (the fitting
    set) and returned; otherwise the given one is applied without clamping.
    """
    ids, means = aggregate(np.column_stack([rmse, maha]), groups)
    if normalizer is None:
        normalizer = Normalizer.fit(means)
    z = normalizer(means)
    true = None if labels is None else np.asarray(labels)[ids]
    return ErrorPoints(ids, z[:, 0], z[:, 1], true), normalizer


def write_errors_csv(points: ErrorPoints, pred, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "rmse", "mahalanobis", "true_label", "pred_label"])
        for i in range(len(points)):
            t = "" if points.true_label is None else int(points.true_label[i])
            w.writerow([int(points.window_id[i]), repr(float(points.rmse[i])),
                        repr(float(points.mahalanobis[i])), t, int(pred[i])])


# -- refinement -------------------------------------------------------------

def refine_training_set(losses, fraction=0.2):
    """Indices (ascending) of the ``ceil((1 - fraction) N)`` best-reconstructed items."""
    losses = np.asarray(losses, dtype=float)
    n = len(losses)
    if n == 0:
        raise ValueError("empty training set")
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    keep = math.ceil(round((1.0 - fraction) * n, 9))
    order = np.argsort(losses, kind="stable")
    return np.sort(order[:keep])


# -- clustering -------------------------------------------------------------

@dataclass
class ClusterLabeling:
    cluster: np.ndarray
    labels: Optional[np.ndarray] = None
    mapping: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)


def _canonical(cluster):
    """Renumber non-negative ids in order of each cluster's smallest member."""
    out = np.full_like(cluster, -1)
    seen = {}
    for c in cluster:
        if c >= 0 and c not in seen:
            seen[c] = len(seen)
    for old, new in seen.items():
        out[cluster == old] = new
    return out


def kmeans_objective(x, centers, assign):
    return float(np.sum((x - centers[assign]) ** 2))


def kmeans2(points, seed=0, max_iter=300):
    """Two-cluster Lloyd iterations with k-means++ seeding.

    Accepts an ``ErrorPoints`` or an ``(n, d)`` array. ``info`` holds the
    final centers and the objective after every assignment and update step.
    """
    x = points.coords if isinstance(points, ErrorPoints) else np.asarray(points, dtype=float)
    if len(x) < 2 or np.all(x == x[0]):
        raise ValueError("kmeans needs at least two distinct points")
    rng = np.random.default_rng(seed)
    first = x[rng.integers(len(x))]
    d2 = np.sum((x - first) ** 2, axis=1)
    second = x[rng.choice(len(x), p=d2 / d2.sum())]
    centers = np.stack([first, second])
    assign = None
    history = []
    for it in range(max_iter):
        dist = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        history.append(kmeans_objective(x, centers, new))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for k in range(2):
            if np.any(assign == k):
                centers[k] = x[assign == k].mean(axis=0)
        history.append(kmeans_objective(x, centers, assign))
    cluster = _canonical(assign)
    if cluster[0] != assign[0]:
        centers = centers[::-1]
    return ClusterLabeling(cluster, info={"centers": centers, "objective": history,
                                          "iterations": it + 1})


def dbscan_eps(x):
    """Mean pairwise Euclidean distance plus twice its population std."""
    d = pdist(np.asarray(x, dtype=float))
    if len(d) == 0:
        return 0.0
    return float(d.mean() + 2.0 * d.std())


def dbscan(points, min_pts=4, eps=None):
    """Density clustering with the data-driven ``eps`` of ``dbscan_eps``.

    A point is core when its closed ``eps``-ball holds ``min_pts`` points
    (itself included). Clusters are connected components of core points;
    border points join the cluster of their nearest core point; the rest is
    noise (-1). Ids are numbered by smallest member index.
    """
    x = points.coords if isinstance(points, ErrorPoints) else np.asarray(points, dtype=float)
    n = len(x)
    if n < min_pts:
        raise ValueError(f"dbscan needs at least min_pts={min_pts} points, got {n}")
    if eps is None:
        eps = dbscan_eps(x)
    tree = cKDTree(x)
    # tiny slack so boundary distances computed with rounding still count
    radius = eps * (1 + 1e-12) + 1e-15
    nbrs = tree.query_ball_point(x, radius)
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    cluster = np.full(n, -1)
    cid = 0
    for i in range(n):
        if not core[i] or cluster[i] >= 0:
            continue
        cluster[i] = cid
        stack = [i]
        while stack:
            p = stack.pop()
            for q in nbrs[p]:
                if core[q] and cluster[q] < 0:
                    cluster[q] = cid
                    stack.append(q)
        cid += 1
    for i in np.flatnonzero(~core):
        cand = [q for q in nbrs[i] if core[q]]
        if cand:
            d = np.sum((x[cand] - x[i]) ** 2, axis=1)
            best = min(zip(d, cluster[cand]))  # nearest, then lower id
            cluster[i] = best[1]
    return ClusterLabeling(_canonical(cluster), info={"eps": eps, "core": core})


def label_clusters(clustering: ClusterLabeling, points):
    """Cluster with the highest mean rmse -> 0 (bad), others -> 1, noise -> 0.

    Ties on the mean go to the higher cluster id, so the lower id keeps label 1.
    """
    rmse = points.rmse if isinstance(points, ErrorPoints) else np.asarray(points)[:, 0]
    cl = np.asarray(clustering.cluster)
    if len(cl) == 0:
        raise ValueError("empty clustering")
    ids = sorted(int(c) for c in np.unique(cl) if c >= 0)
    labels = np.ones(len(cl), dtype=int)
    labels[cl < 0] = 0
    mapping = {c: 1 for c in ids}
    if len(ids) == 1 and not np.any(cl < 0):
        warnings.warn("degenerate clustering: one cluster and no noise, all labelled 1")
    elif len(ids) >= 2:
        means = [rmse[cl == c].mean() for c in ids]
        worst = max(range(len(ids)), key=lambda k: (means[k], ids[k]))
        mapping[ids[worst]] = 0
        labels[cl == ids[worst]] = 0
    if np.any(cl < 0):
        mapping[-1] = 0
    clustering.labels = labels
    clustering.mapping = mapping
    return labels


def cluster_and_label(points, clusterer="kmeans", seed=0):
    if clusterer == "kmeans":
        c = kmeans2(points, seed)
    elif clusterer == "dbscan":
        c = dbscan(points)
    else:
        raise ValueError(f"unknown clusterer {clusterer!r}")
    label_clusters(c, points)
    return c


# -- approach B -------------------------------------------------------------

@dataclass
class LinearSVM:
    w: np.ndarray
    b: float

    def decision(self, x):
        return np.asarray(x, dtype=float) @ self.w + self.b

    def predict(self, x):
        return (self.decision(x) >= 0).astype(int)


def svm_fit(x, y, c=1.0, steps=10_000, seed=0):
    """Soft-margin linear SVM, ``0.5|w|^2 + C sum hinge``, by full-batch
    subgradient descent with step ``1 / (lambda (t + 1))`` (lambda = 1/(C n)).
    The returned solution averages the iterates of the second half.

    ``seed`` only breaks the symmetry of the starting point; the run is
    deterministic.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    classes = set(np.unique(y).tolist())
    if not classes or not classes <= {0, 1}:
        raise ValueError("SVM labels must be 0 or 1")
    n, d = x.shape
    if len(classes) == 1:
        # the objective's minimiser: w = 0 and a bias on the one class's side
        warnings.warn("SVM training set holds one class; predicting it everywhere")
        return LinearSVM(np.zeros(d), 1.0 if 1 in classes else -1.0)
    s = np.where(y == 1, 1.0, -1.0)
    lam = 1.0 / (c * n)
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 1e-6, d)
    b = 0.0
    w_avg, b_avg, n_avg = np.zeros(d), 0.0, 0
    for t in range(steps):
        margin = s * (x @ w + b)
        act = margin < 1
        gw = lam * w - (s[act, None] * x[act]).sum(axis=0) / n
        gb = -s[act].sum() / n
        eta = 1.0 / (lam * (t + 1))
        w = w - eta * gw
        b = b - eta * gb
        # Pegasos projection keeps iterates in the ball holding the optimum
        norm = np.linalg.norm(w)
        bound = 1.0 / np.sqrt(lam)
        if norm > bound:
            w *= bound / norm
        if t >= steps // 2:
            w_avg += w
            b_avg += b
            n_avg += 1
    return LinearSVM(w_avg / n_avg, b_avg / n_avg)


def svm_fit_predict(train: ErrorPoints, train_labels, test: ErrorPoints, seed=0, **kw):
    model = svm_fit(train.coords, train_labels, seed=seed, **kw)
    return model.predict(test.coords)


# -- metrics ----------------------------------------------------------------

@dataclass
class Metrics:
    precision_1: float
    recall_1: float
    precision_0: float
    recall_0: float
    accuracy: float
    zero_division: list = field(default_factory=list)

    def block(self, positive):
        if positive == 1:
            return {"precision": self.precision_1, "recall": self.recall_1,
                    "accuracy": self.accuracy}
        return {"precision": self.precision_0, "recall": self.recall_0,
                "accuracy": self.accuracy}

    def to_dict(self):
        return {"positive_1": self.block(1), "positive_0": self.block(0),
                "zero_division": list(self.zero_division)}


def evaluate_binary(pred, truth):
    pred = np.asarray(pred).astype(int)
    truth = np.asarray(truth).astype(int)
    if len(pred) != len(truth):
        raise ValueError("pred and truth differ in length")
    if len(pred) == 0:
        raise ValueError("empty input")
    flags = []
    out = {}
    for pos in (1, 0):
        tp = np.sum((pred == pos) & (truth == pos))
        pp = np.sum(pred == pos)
        ap = np.sum(truth == pos)
        for name, den in (("precision", pp), ("recall", ap)):
            if den == 0:
                flags.append(f"{name}_{pos}")
                out[f"{name}_{pos}"] = 0.0
            else:
                out[f"{name}_{pos}"] = float(tp / den)
    return Metrics(out["precision_1"], out["recall_1"], out["precision_0"], out["recall_0"],
                   float(np.mean(pred == truth)), flags)


# -- full chain -------------------------------------------------------------

@dataclass
class PipelineResult:
    metrics: Metrics
    valid_points: ErrorPoints
    test_points: ErrorPoints
    valid_labels: np.ndarray
    test_labels: np.ndarray
    mahalanobis: MahalanobisModel
    normalizer: Normalizer


def window_scores(reconstruct, x, maha: Optional[MahalanobisModel] = None):
    """Per-1s rmse and residuals of ``x`` under ``reconstruct``."""
    rec = reconstruct(x)
    res = (np.asarray(x, dtype=float) - rec).reshape(len(x), -1)
    rm = np.sqrt(np.mean(res * res, axis=1))
    mh = None if maha is None else mahalanobis_scores(maha, res)
    return rm, res, mh


def run_pipeline(reconstruct, train, valid, test, approach="A", clusterer="kmeans", seed=0,
                 ell=8, stride=4):
    """Score, aggregate, cluster and evaluate.

    ``reconstruct`` maps an ``(n, L)`` array to reconstructions;
    ``train``/``valid``/``test`` are ``data.Sequences``. The Mahalanobis model
    is fitted on the training residuals and the normalisers on Valid.
    """
    if approach not in ("A", "B"):
        raise ValueError("approach must be A or B")
    _, res_tr, _ = window_scores(reconstruct, train.x)
    maha = fit_mahalanobis_residuals(res_tr, ell, stride)
    rm_v, _, mh_v = window_scores(reconstruct, valid.x, maha)
    rm_t, _, mh_t = window_scores(reconstruct, test.x, maha)
    vp, norm = aggregate_normalize(rm_v, mh_v, valid.slice_ids, valid.labels)
    v_lab = cluster_and_label(vp, clusterer, seed).labels
    if approach == "A":
        # the Valid procedure repeated on Test alone, including its own scaling
        tp, _ = aggregate_normalize(rm_t, mh_t, test.slice_ids, test.labels)
        t_lab = cluster_and_label(tp, clusterer, seed).labels
    else:
        tp, _ = aggregate_normalize(rm_t, mh_t, test.slice_ids, test.labels, norm)
        t_lab = svm_fit_predict(vp, v_lab, tp, seed=seed)
    metrics = evaluate_binary(t_lab, tp.true_label)
    log.info("approach %s %s accuracy %.4f", approach, clusterer, metrics.accuracy)
    return PipelineResult(metrics, vp, tp, v_lab, t_lab, maha, norm)


def export_errors(result: PipelineResult, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_errors_csv(result.valid_points, result.valid_labels, directory / "errors_valid.csv")
    write_errors_csv(result.test_points, result.test_labels, directory / "errors_test.csv")
