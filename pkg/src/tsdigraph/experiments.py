"""End-to-end runs on recording lists: supervised classification and the
two-stage autoencoder anomaly pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .anomaly import evaluate_binary, refine_training_set, run_pipeline
from .data import RunConfig, Sequences, build_sequences, split_by_recording
from .models import SUPERVISED, UNSUPERVISED, build_model, named_config
from .training import predict, reconstruction_losses, train

log = logging.getLogger(__name__)


@dataclass
class SupervisedResult:
    model: object
    metrics: object
    history: list
    split_sizes: tuple


def supervised_experiment(records, model="TCNClassifier", seed=0, epochs=20, batch_size=32,
                          lr=1e-3, dtype="float64", split_seed=None):
    if model not in SUPERVISED:
        raise ValueError(f"{model} is not a classifier; choose from {SUPERVISED}")
    tr, va, te = split_by_recording(records, seed=seed if split_seed is None else split_seed)
    s_tr = build_sequences(tr, "supervised")
    s_te = build_sequences(te, "supervised")
    net = build_model(named_config(model), seed)
    res = train(net, s_tr.x, s_tr.window_labels, epochs=epochs, batch_size=batch_size,
                seed=seed, lr=lr, dtype=np.dtype(dtype).type)
    pred = predict(net, s_te.x).argmax(axis=1)
    metrics = evaluate_binary(pred, s_te.window_labels)
    n_va = sum(r.num_slices for r in va)
    return SupervisedResult(net, metrics, res.history, (len(s_tr), n_va, len(s_te)))


@dataclass
class UnsupervisedResult:
    model: object
    results: dict                      # (approach, clusterer) -> PipelineResult
    anomaly_rate_before: float
    anomaly_rate_after: float
    history: list = field(default_factory=list)
    retrain_history: list = field(default_factory=list)


def fit_autoencoder(cfg: RunConfig, train_seq: Sequences):
    """Train, drop the worst-reconstructed windows, retrain from scratch.

    Returns the retrained model, the kept window indices and both loss histories.
    """
    dtype = np.dtype(cfg.dtype).type
    net = build_model(named_config(cfg.model), cfg.seed)
    first = train(net, train_seq.x, epochs=cfg.epochs, batch_size=cfg.batch_size,
                  seed=cfg.seed, lr=cfg.lr, dtype=dtype)
    keep = refine_training_set(reconstruction_losses(net, train_seq.x), cfg.refine_fraction)
    refined = train_seq.subset(keep)
    net = build_model(named_config(cfg.model), cfg.seed)
    second = train(net, refined.x, epochs=cfg.retrain_epochs, batch_size=cfg.batch_size,
                   seed=cfg.seed + 1, lr=cfg.lr, dtype=dtype)
    return net, keep, first.history, second.history


def unsupervised_experiment(records, cfg: RunConfig, combos=None, split_seed=None):
    """``combos`` lists (approach, clusterer) pairs; default is the config's."""
    if cfg.model not in UNSUPERVISED:
        raise ValueError(f"{cfg.model} is not an autoencoder; choose from {UNSUPERVISED}")
    tr, va, te = split_by_recording(records, seed=cfg.seed if split_seed is None else split_seed)
    s_tr, s_va, s_te = (build_sequences(r, "unsupervised") for r in (tr, va, te))
    net, keep, h1, h2 = fit_autoencoder(cfg, s_tr)
    refined = s_tr.subset(keep)
    before = float(np.mean(s_tr.window_labels == 0))
    after = float(np.mean(refined.window_labels == 0))
    log.info("refinement: anomalous windows %.3f -> %.3f", before, after)

    def reconstruct(x):
        return predict(net, x)[..., 0]

    combos = combos or [(cfg.approach, cfg.clusterer)]
    results = {(a, c): run_pipeline(reconstruct, refined, s_va, s_te, a, c, cfg.seed)
               for a, c in combos}
    return UnsupervisedResult(net, results, before, after, h1, h2)
