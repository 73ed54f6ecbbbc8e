"""Skip-connection blocks, encoder/decoder building blocks, classifier and
autoencoder, plus the eight named configurations of the hyperparameter table.

Inputs are batches ``(B, L, C)`` of series sharing one series digraph.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor
from .digraph import Digraph, FeaturedDigraph, TimeDigraphSpec, build_series_digraph
from .graphconv import make_gconv
from .nn import Conv1d, Linear, Module, NormDropout


# -- configs ----------------------------------------------------------------

@dataclass
class GConvSpec:
    kind: str = "sage"      # sage | gcn | gat
    out_dim: int = 16
    heads: int = 2
    merge: str = "concat"   # gat only


@dataclass
class SkipBlockConfig:
    layer_kind: str = "tcn"             # tcn | gnn
    channels: list = field(default_factory=list)
    skip_dims: list = field(default_factory=list)
    kernel_size: int = 7
    dilations: Optional[list] = None    # defaults to 2^0 .. 2^(n-1)
    gconv_kind: str = "sage"
    alpha: str = "t"
    drop_rate: float = 0.1
    norm: bool = True

    def __post_init__(self):
        if len(self.channels) != len(self.skip_dims):
            raise ValueError("one skip dimension per layer required")
        if self.dilations is None:
            self.dilations = [2 ** i for i in range(len(self.channels))]
        if len(self.dilations) != len(self.channels):
            raise ValueError("one dilation per layer required")
        if self.layer_kind == "tcn" and any(
                b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ValueError("TCN dilations must increase")

    @property
    def num_layers(self):
        return len(self.channels)

    @property
    def out_channels(self):
        return int(sum(self.skip_dims))


@dataclass
class EncoderConfig:
    skip: SkipBlockConfig
    in_channels: int = 1
    post_gconvs: list = field(default_factory=list)   # GConvSpec items
    bottleneck: Optional[int] = None                   # 1x1 channel-adjust conv
    final_conv_kernel: Optional[int] = None            # dilation-1 causal conv after gconvs
    pool: str = "avg"                                  # avg | max | graph
    shrink: int = 16
    graph: TimeDigraphSpec = field(default_factory=TimeDigraphSpec)
    gconv_alpha: str = "t"

    def __post_init__(self):
        if self.shrink < 1:
            raise ValueError("shrink factor must be >= 1")
        self.post_gconvs = [GConvSpec(**g) if isinstance(g, dict) else g for g in self.post_gconvs]

    @property
    def out_channels(self):
        if self.bottleneck:
            return self.bottleneck
        if self.post_gconvs:
            return self.post_gconvs[-1].out_dim
        return self.skip.out_channels


@dataclass
class DecoderConfig:
    skip: SkipBlockConfig
    in_channels: int = 2
    out_channels: int = 1
    shrink: int = 16
    gconvs: list = field(default_factory=list)
    final: str = "conv1"     # conv1 (kernel-1 conv) | tcn (final causal dilated conv)
    graph: TimeDigraphSpec = field(default_factory=TimeDigraphSpec)
    gconv_alpha: str = "t"

    def __post_init__(self):
        self.gconvs = [GConvSpec(**g) if isinstance(g, dict) else g for g in self.gconvs]


@dataclass
class ClassifierConfig:
    encoder: EncoderConfig
    length: int = 640
    readout: str = "flatten"   # flatten | mean_pool
    mlp_dims: list = field(default_factory=list)
    num_classes: int = 2

    @property
    def readout_dim(self):
        c = self.encoder.out_channels
        if self.readout == "mean_pool":
            return c
        return (self.length // self.encoder.shrink) * c


@dataclass
class AutoencoderConfig:
    encoder: EncoderConfig
    decoder: DecoderConfig
    length: int = 128


def _skip_from_dict(d):
    return SkipBlockConfig(**d)


def _graph_from_dict(d):
    return TimeDigraphSpec(**d) if isinstance(d, dict) else d


def config_from_dict(d):
    """Rebuild a model config from its ``to_dict`` form."""
    kind = d["kind"]
    body = dict(d["config"])

    def enc(e):
        e = dict(e)
        e["skip"] = _skip_from_dict(e["skip"])
        e["graph"] = _graph_from_dict(e["graph"])
        return EncoderConfig(**e)

    def dec(e):
        e = dict(e)
        e["skip"] = _skip_from_dict(e["skip"])
        e["graph"] = _graph_from_dict(e["graph"])
        return DecoderConfig(**e)

    if kind == "classifier":
        body["encoder"] = enc(body["encoder"])
        return ClassifierConfig(**body)
    if kind == "autoencoder":
        body["encoder"] = enc(body["encoder"])
        body["decoder"] = dec(body["decoder"])
        return AutoencoderConfig(**body)
    raise ValueError(f"unknown config kind {kind!r}")


def config_to_dict(cfg):
    kind = "classifier" if isinstance(cfg, ClassifierConfig) else "autoencoder"
    return {"kind": kind, "config": asdict(cfg)}


# -- table of named models --------------------------------------------------

SUPERVISED = ("TGraphClassifier", "TCNGraphClassifier", "TCNClassifier")
UNSUPERVISED = ("TGraphMixedAE", "TGraphAE", "TCNGraphAE1", "TCNGraphAE2", "TCNAE1", "TCNAE2")
MODEL_NAMES = SUPERVISED + UNSUPERVISED


def _skip(kind, width, n, skip, kernel, drop_rate):
    return SkipBlockConfig(kind, [width] * n, [skip] * n, kernel, drop_rate=drop_rate)


def named_config(name, drop_rate=0.1, supervised_length=640, ae_length=128):
    """Configuration of one named model.

    Supervised rows: kernel 8, 5-s windows (640 steps), lookback 128 with d=4.
    Autoencoders: kernel 7, 1-s windows (128 steps), lookback 25.
    """
    sup_graph = TimeDigraphSpec(d=4, k=32)
    k = 8
    if name == "TGraphClassifier":
        enc = EncoderConfig(_skip("gnn", 32, 4, 16, k, drop_rate),
                            post_gconvs=[GConvSpec("sage", 16)], final_conv_kernel=k,
                            pool="avg", shrink=16, graph=sup_graph)
        return ClassifierConfig(enc, supervised_length, "mean_pool", [])
    if name == "TCNGraphClassifier":
        enc = EncoderConfig(_skip("tcn", 32, 7, 16, k, drop_rate),
                            post_gconvs=[GConvSpec("sage", 2)], pool="avg", shrink=16,
                            graph=sup_graph)
        return ClassifierConfig(enc, supervised_length, "flatten", [])
    if name == "TCNClassifier":
        enc = EncoderConfig(_skip("tcn", 32, 4, 16, k, drop_rate), pool="avg", shrink=16,
                            graph=sup_graph)
        return ClassifierConfig(enc, supervised_length, "flatten", [30, 30])

    k = 7
    g4 = TimeDigraphSpec.from_lookback(25, 4)
    g8 = TimeDigraphSpec.from_lookback(25, 8)
    gat100 = [GConvSpec("gat", 100, 2, "concat")]
    rows = {
        # name: (enc kind, width, n, skip, post gconvs, bottleneck, pool, shrink,
        #        dec gconvs, dec kind, graph)
        "TGraphMixedAE": ("gnn", 64, 7, 32, [GConvSpec("sage", 2)], None, "graph", 16,
                          [GConvSpec("sage", 64)], "tcn", g8),
        "TGraphAE": ("gnn", 64, 4, 32, [GConvSpec("gat", 2, 2, "average")], None, "avg", 16,
                     [GConvSpec("gat", 64, 2, "concat")], "gnn", g8),
        "TCNGraphAE1": ("tcn", 32, 3, 16, gat100, 2, "graph", 32, gat100, "tcn", g4),
        "TCNGraphAE2": ("tcn", 64, 7, 32, gat100, 4, "graph", 32, gat100, "tcn", g4),
        "TCNAE1": ("tcn", 32, 3, 16, [], 2, "max", 32, [], "tcn", g4),
        "TCNAE2": ("tcn", 64, 7, 32, [], 4, "avg", 32, [], "tcn", g4),
    }
    if name not in rows:
        raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
    ekind, width, n, skip, post, bott, pool, s, dgc, dkind, graph = rows[name]
    enc = EncoderConfig(_skip(ekind, width, n, skip, k, drop_rate), post_gconvs=post,
                        bottleneck=bott, pool=pool, shrink=s, graph=graph)
    dec = DecoderConfig(_skip(dkind, width, n, skip, k, drop_rate),
                        in_channels=enc.out_channels, out_channels=1, shrink=s,
                        gconvs=[replace(g) for g in dgc], graph=graph)
    return AutoencoderConfig(enc, dec, ae_length)


# -- graph helpers ----------------------------------------------------------

class _GraphCache:
    """Series digraphs and pooling operators keyed by length."""

    def __init__(self, spec: TimeDigraphSpec):
        self.spec = spec
        self._graphs = {}
        self._pools = {}

    def graph(self, n) -> Digraph:
        if n not in self._graphs:
            self._graphs[n] = build_series_digraph(n, self.spec)
        return self._graphs[n]

    def pool_matrix(self, n, s):
        """Mean of each consecutive group of ``s`` fine nodes, sent to one coarse node."""
        key = (n, s)
        if key not in self._pools:
            rows = np.repeat(np.arange(n // s), s)
            self._pools[key] = sp.csr_matrix((np.full(n, 1.0 / s), (rows, np.arange(n))),
                                             shape=(n // s, n))
        return self._pools[key]


def _series_graph(cache, x):
    return cache.graph(x.shape[-2])


# -- blocks -----------------------------------------------------------------

class SkipBlock(Module):
    """n layers; each feeds a kernel-1 conv whose activated output is stored.
    Stored outputs are concatenated along channels."""

    def __init__(self, cfg: SkipBlockConfig, in_channels, rng):
        self.cfg = cfg
        self.layers, self.skips, self.norms = [], [], []
        drng = np.random.default_rng(rng.integers(2 ** 63))
        c = in_channels
        for width, sd, dil in zip(cfg.channels, cfg.skip_dims, cfg.dilations):
            if cfg.layer_kind == "tcn":
                self.layers.append(Conv1d(c, width, cfg.kernel_size, rng, dilation=dil))
            elif cfg.layer_kind == "gnn":
                self.layers.append(make_gconv(cfg.gconv_kind, c, width, rng, cfg.alpha))
            else:
                raise ValueError(f"unknown layer kind {cfg.layer_kind!r}")
            self.skips.append(Conv1d(width, sd, 1, rng))
            if cfg.norm:
                self.norms.append(NormDropout(width, cfg.drop_rate, drng))
                self.norms.append(NormDropout(sd, cfg.drop_rate, drng))
            c = width

    def set_rng(self, rng):
        for nd in self.norms:
            nd.rng = rng

    def forward(self, x, graph: Optional[Digraph] = None):
        if self.cfg.layer_kind == "gnn":
            if graph is None or graph.num_nodes != x.shape[-2]:
                raise ValueError("graph layers need a digraph with one node per time step")
        stored = []
        h = x
        for i, (layer, skip) in enumerate(zip(self.layers, self.skips)):
            h = layer(h, graph) if self.cfg.layer_kind == "gnn" else layer(h)
            h = ag.silu(h)
            if self.cfg.norm:
                h = self.norms[2 * i](h)
            s = ag.silu(skip(h))
            if self.cfg.norm:
                s = self.norms[2 * i + 1](s)
            stored.append(s)
        if not stored:
            return ag.as_tensor(x)
        return ag.concat(stored, axis=-1)


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        self._graphs = _GraphCache(cfg.graph)
        self.skip = SkipBlock(cfg.skip, cfg.in_channels, rng)
        c = cfg.skip.out_channels if cfg.skip.num_layers else cfg.in_channels
        self.gconvs = []
        for g in cfg.post_gconvs:
            self.gconvs.append(make_gconv(g.kind, c, g.out_dim, rng, cfg.gconv_alpha,
                                          g.heads, g.merge))
            c = g.out_dim
        self.channel_adjust = Conv1d(c, cfg.bottleneck, 1, rng) if cfg.bottleneck else None
        if cfg.bottleneck:
            c = cfg.bottleneck
        self.final_conv = (Conv1d(c, c, cfg.final_conv_kernel, rng, dilation=1)
                           if cfg.final_conv_kernel else None)

    def forward(self, x):
        x = ag.as_tensor(x)
        n = x.shape[-2]
        if n % self.cfg.shrink:
            raise ValueError(f"shrink factor {self.cfg.shrink} does not divide length {n}")
        g = self._graphs.graph(n)
        h = self.skip(x, g)
        for conv in self.gconvs:
            h = ag.silu(conv(h, g))
        if self.channel_adjust is not None:
            h = self.channel_adjust(h)
        if self.final_conv is not None:
            h = self.final_conv(h)
        s = self.cfg.shrink
        if self.cfg.pool == "graph":
            return ag.spmm(self._graphs.pool_matrix(n, s), h)
        return ag.pool_time(h, s, self.cfg.pool)

    def coarse_graph(self, n):
        return self._graphs.graph(n // self.cfg.shrink)


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng):
        self.cfg = cfg
        self._graphs = _GraphCache(cfg.graph)
        c = cfg.in_channels
        self.gconvs = []
        for g in cfg.gconvs:
            self.gconvs.append(make_gconv(g.kind, c, g.out_dim, rng, cfg.gconv_alpha,
                                          g.heads, g.merge))
            c = g.out_dim
        self.skip = SkipBlock(cfg.skip, c, rng)
        c = cfg.skip.out_channels if cfg.skip.num_layers else c
        if cfg.final == "conv1":
            self.final = Conv1d(c, cfg.out_channels, 1, rng)
        elif cfg.final == "tcn":
            self.final = Conv1d(c, cfg.out_channels, cfg.skip.kernel_size, rng)
        else:
            raise ValueError(f"unknown final layer {cfg.final!r}")

    def forward(self, z):
        h = ag.upsample_time(z, self.cfg.shrink)
        g = self._graphs.graph(h.shape[-2])
        for conv in self.gconvs:
            h = ag.silu(conv(h, g))
        h = self.skip(h, g)
        return self.final(h)


class Classifier(Module):
    def __init__(self, cfg: ClassifierConfig, rng):
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder, rng)
        dims = [cfg.readout_dim, *cfg.mlp_dims, cfg.num_classes]
        self.mlp = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def logits(self, x):
        x = ag.as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        h = self.encoder(x)
        if self.cfg.readout == "mean_pool":
            h = h.mean(axis=-2)
        elif self.cfg.readout == "flatten":
            h = h.reshape(h.shape[0], -1)
        else:
            raise ValueError(f"unknown readout {self.cfg.readout!r}")
        for i, layer in enumerate(self.mlp):
            h = layer(h)
            if i < len(self.mlp) - 1:
                h = ag.silu(h)
        return h

    def forward(self, x):
        """Class probabilities, one row per input series."""
        return ag.softmax(self.logits(x), axis=-1)

    def set_rng(self, rng):
        self.encoder.skip.set_rng(rng)


class Autoencoder(Module):
    def __init__(self, cfg: AutoencoderConfig, rng):
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder, rng)
        self.decoder = Decoder(cfg.decoder, rng)

    def forward(self, x):
        return self.decoder(self.encoder(x))

    def set_rng(self, rng):
        self.encoder.skip.set_rng(rng)
        self.decoder.skip.set_rng(rng)


def build_model(cfg, seed=0):
    rng = np.random.default_rng(seed)
    if isinstance(cfg, str):
        cfg = named_config(cfg)
    if isinstance(cfg, ClassifierConfig):
        return Classifier(cfg, rng)
    if isinstance(cfg, AutoencoderConfig):
        return Autoencoder(cfg, rng)
    raise TypeError(f"cannot build a model from {type(cfg).__name__}")


def count_params(cfg_or_model):
    """Total scalar parameter count of a config (built with a throwaway seed) or module."""
    if isinstance(cfg_or_model, Module):
        return cfg_or_model.num_parameters()
    if isinstance(cfg_or_model, SkipBlockConfig):
        return SkipBlock(cfg_or_model, 1, np.random.default_rng(0)).num_parameters()
    return build_model(cfg_or_model).num_parameters()


# -- FeaturedDigraph-level entry points -------------------------------------

def _features(fd):
    return fd.features if isinstance(fd, FeaturedDigraph) else fd


def skip_block_forward(x, cfg: SkipBlockConfig, graph=None, rng=None, in_channels=None):
    x = ag.as_tensor(_features(x))
    block = SkipBlock(cfg, in_channels or x.shape[-1], rng or np.random.default_rng(0))
    return block(x, graph)


def encoder_forward(fd, encoder: Encoder) -> FeaturedDigraph:
    """Coarse featured digraph: series digraph rebuilt on ``len / s`` nodes."""
    x = _features(fd)
    out = encoder(x).data
    return FeaturedDigraph(encoder.coarse_graph(x.shape[-2]), out)


def decoder_forward(fd_coarse, decoder: Decoder):
    return decoder(_features(fd_coarse))


def classifier_forward(fd, model: Classifier):
    return model(_features(fd)).data[0]


def autoencoder_forward(fd, model: Autoencoder):
    return model(_features(fd))
