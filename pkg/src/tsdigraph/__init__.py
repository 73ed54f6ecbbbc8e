"""Graph neural networks on time digraphs built from time series, with a
numpy autodiff engine, TCN/GNN encoders and autoencoders, and a
reconstruction-error anomaly detection pipeline."""
from .autograd import Tensor, backward
from .digraph import (Digraph, FeaturedDigraph, TimeDigraphSpec, TimeSeries,
                      build_grid_digraph, build_series_digraph)
from .models import MODEL_NAMES, SUPERVISED, UNSUPERVISED, build_model, named_config

__all__ = [
    "Tensor", "backward", "Digraph", "FeaturedDigraph", "TimeDigraphSpec", "TimeSeries",
    "build_grid_digraph", "build_series_digraph", "MODEL_NAMES", "SUPERVISED",
    "UNSUPERVISED", "build_model", "named_config",
]
