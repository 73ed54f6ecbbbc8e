"""Self-checks shared by the test-suite and the command line: the
convolution-as-graph-convolution identity and finite-difference gradients of
whole models."""
from __future__ import annotations

import time

import numpy as np

from . import autograd as ag
from .digraph import Digraph
from .graphconv import GATParams, gat_conv, lemma1_check, message_passing
from .models import Classifier, build_model, named_config
from .nn import finite_diff_check


_GRAPH = Digraph(3, [(0, 1), (1, 2), (2, 0), (0, 2)], [1.0, 2.0, 0.5, 1.5])


def _conv_bn(t, c):
    k = ag.Tensor(np.linspace(-1, 1, 4 * 4 * 2).reshape(4, 4, 2))
    out = ag.conv1d(t, k, c[0], dilation=2)
    out, _, _ = ag.batch_norm_train(out, c[1] + 1.0, c[2])
    return ag.mse_loss(out, c * 0.5)


def _gat(t, c):
    p = GATParams(ag.concat([c, c[:1] * 0.5], 0), c[:2, :2], c[1:, 2:], c[0])
    return (gat_conv(t, _GRAPH, p, "u") * c).sum()


# scalar maps of a (3, 4) input ``t`` and a fixed (3, 4) tensor ``c``
PRIMITIVES = {
    "add": lambda t, c: (t + c).sum(),
    "sub": lambda t, c: (c - t).sum(),
    "mul": lambda t, c: (t * c * t).sum(),
    "div": lambda t, c: (c / (t * t + 1.0)).sum(),
    "power": lambda t, c: ((t * t + 1.0) ** 1.5).sum(),
    "exp": lambda t, c: ag.exp(t * 0.3).sum(),
    "log": lambda t, c: ag.log(t * t + 1.0).sum(),
    "sigmoid": lambda t, c: (ag.sigmoid(t) * c).sum(),
    "silu": lambda t, c: (ag.silu(t) * c).sum(),
    "leaky_relu": lambda t, c: (ag.leaky_relu(t, 0.2) * c).sum(),
    "mean": lambda t, c: (t.mean(axis=0) * c[0]).sum(),
    "reshape_transpose": lambda t, c: (t.reshape(3, 4).transpose() * c.reshape(4, 3)).sum(),
    "getitem": lambda t, c: (t[1:, ::2] * c[1:, ::2]).sum(),
    "concat": lambda t, c: (ag.concat([t, t * 2.0], axis=-1) * ag.concat([c, c], -1)).sum(),
    "matmul": lambda t, c: (t @ c.transpose()).sum() + (ag.linear(t * t, c, c[:, 0])).sum(),
    "softmax": lambda t, c: (ag.softmax(t, axis=-1) * c).sum(),
    "cross_entropy": lambda t, c: ag.cross_entropy(t, [0, 1, 2]),
    "mse": lambda t, c: ag.mse_loss(t, c),
    "pool_avg": lambda t, c: (ag.pool_time(t, 3, "avg") * c[:1]).sum(),
    "pool_max": lambda t, c: (ag.pool_time(t, 3, "max") * c[:1]).sum(),
    "upsample": lambda t, c: (ag.upsample_time(t, 2) * ag.concat([c, c], 0)).sum(),
    "take": lambda t, c: (ag.take(t, [0, 2, 2, 1], 0) * ag.concat([c, c[:1]], 0)).sum(),
    "segment_sum": lambda t, c: (ag.segment_sum(t, [1, 0, 1], 2, 0) * c[:2]).sum(),
    "spmm": lambda t, c: (ag.spmm(np.array([[0, 1.0, 2], [3, 0, 0]]), t) * c[:2]).sum(),
    "pad_time": lambda t, c: (ag.pad_time(t, 2) * ag.concat([c, c[:2]], 0)).sum(),
    "conv1d_batch_norm": _conv_bn,
    "message_passing": lambda t, c: (message_passing(t, _GRAPH, c[:, :4], "h", "sym", c[:, :4],
                                                     2.0, c[0, :3]) * c[:, :3]).sum(),
    "gat_conv": _gat,
}


def primitive_gradchecks(seed=7, h=1e-6):
    """Worst relative finite-difference error of every entry of ``PRIMITIVES``."""
    rng = np.random.default_rng(seed)
    x = ag.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    c = ag.Tensor(rng.normal(size=(3, 4)))
    return {name: finite_diff_check(lambda t: f(t, c), x, h=h) for name, f in PRIMITIVES.items()}



def lemma1_trials(trials=100, seed=0, max_span=8, max_len=64):
    """Random kernels (some dilated, i.e. with interleaved zeros) and signals.

    Returns the worst absolute deviation, the elapsed seconds and the cases.
    """
    rng = np.random.default_rng(seed)
    worst, cases = 0.0, []
    start = time.perf_counter()
    for _ in range(trials):
        dilation = int(rng.integers(1, 4))
        max_taps = (max_span - 1) // dilation + 1
        taps = int(rng.integers(1, max_taps + 1))
        span = dilation * (taps - 1) + 1
        length = int(rng.integers(span, max_len + 1))
        kernel = rng.normal(size=taps)
        x = rng.normal(size=length)
        err = lemma1_check(kernel, x, dilation)
        worst = max(worst, err)
        cases.append({"taps": taps, "dilation": dilation, "length": length, "error": err})
    return {"trials": trials, "max_abs_error": worst,
            "seconds": time.perf_counter() - start, "cases": cases}


def model_gradcheck(name, seed=0, coords_per_tensor=1, max_coords=48, batch=2, length=None,
                    h=1e-6):
    """Finite-difference check of one named model, dropout off, batch-norm in
    training mode. Checks a sample of parameter coordinates plus input
    coordinates; returns the worst relative error."""
    cfg = named_config(name, drop_rate=0.0)
    if length is not None:
        cfg.length = length
    model = build_model(cfg, seed)
    model.train()
    rng = np.random.default_rng(seed + 1)
    x = ag.Tensor(rng.uniform(0, 1, size=(batch, cfg.length, 1)))
    if isinstance(model, Classifier):
        out_shape = (batch, cfg.num_classes)
        forward = model.logits
    else:
        out_shape = (batch, cfg.length, cfg.decoder.out_channels)
        forward = model
    proj = rng.normal(size=out_shape)

    def loss():
        return (forward(x) * proj).sum()

    worst, checked, nonsmooth = 0.0, 0, 0
    params = list(model.named_parameters())
    order = rng.permutation(len(params))
    budget = max_coords
    for k in order:
        if budget <= 0:
            break
        _, p = params[k]
        coords = rng.choice(p.size, size=min(coords_per_tensor, p.size, budget), replace=False)
        res = finite_diff_check(lambda t: loss(), p, h=h, coords=coords, details=True)
        worst = max(worst, res.max_rel_error)
        checked += res.checked
        nonsmooth += len(res.nonsmooth)
        budget -= len(coords)
    xs = rng.choice(x.size, size=4, replace=False)
    res = finite_diff_check(lambda t: loss(), x, h=h, coords=xs, details=True)
    worst = max(worst, res.max_rel_error)
    checked += res.checked
    nonsmooth += len(res.nonsmooth)
    x.requires_grad = False
    return {"model": name, "max_rel_error": worst, "checked": checked,
            "nonsmooth_skipped": nonsmooth}
