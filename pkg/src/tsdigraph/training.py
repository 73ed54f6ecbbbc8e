"""Training loops and model persistence."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .models import (Autoencoder, Classifier, build_model, config_from_dict,
                     config_to_dict)
from .nn import Adam

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(model, x, y=None, epochs=10, batch_size=32, seed=0, lr=1e-3, verbose=False,
          dtype=np.float64):
    """Adam training. Autoencoders minimise reconstruction MSE, classifiers
    cross-entropy on integer labels ``y``. Returns per-epoch mean losses.

    ``dtype=np.float32`` runs the whole loop in single precision (about twice
    as fast); parameters are cast back to float64 afterwards.
    Raises ``FloatingPointError`` on a non-finite loss.
    """
    model.astype(dtype)
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[..., None]
    if len(x) == 0:
        raise ValueError("empty training set")
    is_clf = isinstance(model, Classifier)
    if is_clf:
        if y is None:
            raise ValueError("classifier training needs labels")
        y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    model.set_rng(np.random.default_rng(rng.integers(2 ** 63)))
    model.train()
    opt = Adam(model.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(x), batch_size, rng):
            xb = ag.Tensor(x[idx])
            if is_clf:
                loss = ag.cross_entropy(model.logits(xb), y[idx])
            else:
                loss = ag.mse_loss(model(xb), xb)
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch}, batch of {len(idx)}")
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            total += value * len(idx)
        history.append(total / len(x))
        if verbose:
            log.info("epoch %d loss %.6g", epoch, history[-1])
    model.astype(np.float64)
    model.eval()
    return TrainResult(model, history)


def predict(model, x, batch_size=256):
    """Eval-mode outputs: class probabilities or reconstructions."""
    x = np.asarray(x, dtype=np.float64)
    model.astype(np.float64)
    if x.ndim == 2:
        x = x[..., None]
    model.eval()
    outs = [model(ag.Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def reconstruction_losses(model: Autoencoder, x, batch_size=256):
    """Per-series mean squared reconstruction error."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    rec = predict(model, x, batch_size)
    return ((rec - x) ** 2).reshape(len(x), -1).mean(axis=1)


# -- persistence ------------------------------------------------------------

def _arrays(model):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, b in model.named_buffers():
        yield name, b


def save_model(model, directory, extra=None):
    """Write ``model.json`` (config + manifest) and ``params.bin`` (little-endian float64)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest, chunks, offset = [], [], 0
    for name, arr in _arrays(model):
        flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(flat)
        offset += flat.size
    data = np.concatenate(chunks) if chunks else np.zeros(0, "<f8")
    data.tofile(directory / "params.bin")
    doc = {"format_version": FORMAT_VERSION, "model": config_to_dict(model.cfg),
           "manifest": manifest, "extra": extra or {}}
    (directory / "model.json").write_text(json.dumps(doc, indent=2))
    return directory


def load_model(directory):
    directory = Path(directory)
    doc = json.loads((directory / "model.json").read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format_version')}")
    model = build_model(config_from_dict(doc["model"]))
    data = np.fromfile(directory / "params.bin", dtype="<f8")
    targets = dict(_arrays(model))
    for entry in doc["manifest"]:
        arr = targets[entry["name"]]
        size = int(np.prod(entry["shape"]))
        arr[...] = data[entry["offset"]:entry["offset"] + size].reshape(entry["shape"])
    model.eval()
    return model
