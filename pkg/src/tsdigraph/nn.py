"""Layers, normalisation, optimiser and the finite-difference gradient check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def init_uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Base class: parameters are ``Tensor`` attributes with ``requires_grad``,
    children are ``Module`` attributes or lists of modules."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray) and name.startswith("running_"):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Cast parameters in place (buffers keep float64 running statistics)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    def __init__(self, in_ch, out_ch, kernel_size, rng, dilation=1, causal=True):
        fan_in = in_ch * kernel_size
        self.kernel = init_uniform(rng, (out_ch, in_ch, kernel_size), fan_in)
        self.bias = init_uniform(rng, (out_ch,), fan_in)
        self.dilation = dilation
        self.causal = causal

    def forward(self, x):
        return ag.conv1d(x, self.kernel, self.bias, self.dilation, self.causal)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.weight = init_uniform(rng, (out_dim, in_dim), in_dim)
        self.bias = init_uniform(rng, (out_dim,), in_dim) if bias else None

    def forward(self, x):
        return ag.linear(x, self.weight, self.bias)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels, momentum=0.1, eps=1e-5):
        return cls(np.zeros(channels), np.ones(channels), momentum, eps)


def batch_norm(x, state: BatchNormState, training: bool, gamma=None, beta=None):
    """Per-channel normalisation over every axis but the last."""
    x = ag.as_tensor(x)
    c = x.shape[-1]
    if training:
        g = gamma if gamma is not None else np.ones(c, dtype=x.data.dtype)
        b = beta if beta is not None else np.zeros(c, dtype=x.data.dtype)
        out, mean, var = ag.batch_norm_train(x, g, b, state.eps)
        n = x.size // c
        m = state.momentum
        state.running_mean[:] = (1 - m) * state.running_mean + m * mean
        state.running_var[:] = (1 - m) * state.running_var + m * var * (n / max(n - 1, 1))
        return out
    dt = x.data.dtype
    scale = (1.0 / np.sqrt(state.running_var + state.eps)).astype(dt)
    out = (x - state.running_mean.astype(dt)) * scale
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def dropout(x, rate, training, rng):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return ag.as_tensor(x)
    x = ag.as_tensor(x)
    mask = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.data.dtype)
    mask *= 1.0 / (1.0 - rate)
    return x * mask


def norm_dropout(x, mode, bn_state: BatchNormState, drop_rate, rng=None, gamma=None, beta=None):
    """Batch norm followed by inverted dropout; ``mode`` is "train" or "eval"."""
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop rate must lie in [0, 1), got {drop_rate}")
    training = mode == "train"
    out = batch_norm(x, bn_state, training, gamma, beta)
    if training and drop_rate > 0 and rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    return dropout(out, drop_rate, training, rng)


class NormDropout(Module):
    def __init__(self, channels, drop_rate=0.1, rng=None, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps
        self.drop_rate = drop_rate
        self.rng = rng

    def forward(self, x):
        # state object aliases the buffers so running updates land in place
        state = BatchNormState(self.running_mean, self.running_var, self.momentum, self.eps)
        return norm_dropout(x, "train" if self.training else "eval", state,
                            self.drop_rate, self.rng, self.gamma, self.beta)


# -- optimiser --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place on ``params`` (numpy arrays)."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and moments must align")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- gradient check ---------------------------------------------------------

@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    nonsmooth: list


def finite_diff_check(f, x, h=1e-6, coords=None, kink_tol=1e-3, details=False):
    """Compare reverse-mode gradients of scalar ``f(x)`` with central differences.

    ``x`` is perturbed in place and restored. Coordinates where forward and
    backward one-sided slopes disagree by more than ``kink_tol`` are treated as
    non-smooth points and left out. Returns the maximum of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = x if isinstance(x, Tensor) else Tensor(x, requires_grad=True)
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    base = float(loss.data)
    ag.backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst, nonsmooth, checked = 0.0, [], 0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        fwd, bwd = (fp - base) / h, (base - fm) / h
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd), abs(bwd)):
            nonsmooth.append(int(i))
            continue
        numeric = (fp - fm) / (2 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        checked += 1
    if details:
        return GradCheck(worst, checked, nonsmooth)
    return worst
