"""Temporal-aware GNN encoder.

Each layer transforms node states with a shared linear map and aggregates
neighbours with weights that decay exponentially in the publication-time
gap, at a node-specific rate ``softplus(fc(W h_i))``.
"""
import numpy as np

from . import numkit as nk
from .numkit import Tensor


def glorot(rng, fan_in, fan_out, gain=1.0):
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EdgeIndex:
    """Row-sorted COO view of a ViewGraph with absolute time gaps in days."""

    def __init__(self, graph):
        self.num_nodes = graph.node_count
        self.indptr = graph.indptr
        self.rows, self.cols = graph.edges()
        t = graph.timestamps
        self.dt = np.abs(t[self.cols] - t[self.rows])[:, None]


def temporal_attention(decay_rate, time_gaps):
    """Softmax weights exp(-r |dt_j|) / sum_k exp(-r |dt_k|) over one neighbourhood."""
    logits = -decay_rate * np.abs(np.asarray(time_gaps, dtype=np.float64))
    w = np.exp(logits - logits.max())
    return w / w.sum()


class TemporalGnnLayer:
    def __init__(self, d_in, d_out, activation="relu", rng=None, name="layer"):
        rng = rng or np.random.default_rng(0)
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        gain = np.sqrt(2.0) if activation == "relu" else 1.0
        self.W = Tensor(glorot(rng, d_in, d_out, gain), requires_grad=True, name=f"{name}.W")
        self.fc_w = Tensor(glorot(rng, d_out, 1), requires_grad=True, name=f"{name}.fc_w")
        self.fc_b = Tensor(np.zeros(1), requires_grad=True, name=f"{name}.fc_b")

    @property
    def d_in(self):
        return self.W.shape[0]

    @property
    def d_out(self):
        return self.W.shape[1]

    def parameters(self):
        return [self.W, self.fc_w, self.fc_b]

    def decay_rates(self, z):
        return nk.softplus(z @ self.fc_w + self.fc_b)

    def attention(self, edges, z):
        """Edge weights (E, 1); rows of the same node sum to one."""
        r = self.decay_rates(z)
        # the self-loop contributes logit 0 and every other logit is <= 0,
        # so the softmax needs no max shift
        ex = nk.exp(-(r[edges.rows] * edges.dt))
        denom = nk.segment_sum(ex, edges.rows, edges.num_nodes)
        return ex / denom[edges.rows]

    def __call__(self, edges, h):
        z = h @ self.W
        out = nk.temporal_aggregate(self.decay_rates(z), z, edges)
        return nk.relu(out) if self.activation == "relu" else out

    def unfused(self, edges, h):
        """Same layer composed from generic tape ops (reference path for tests)."""
        z = h @ self.W
        a = self.attention(edges, z)
        out = nk.spmm(edges.rows, edges.cols, nk.reshape(a, (-1,)), z, edges.num_nodes)
        return nk.relu(out) if self.activation == "relu" else out


class ViewEncoder:
    """Stack of temporal GNN layers: ReLU between layers, identity on the last."""

    def __init__(self, d_in, hidden_dims=(256, 256), rng=None, name="encoder"):
        rng = rng or np.random.default_rng(0)
        dims = [d_in, *hidden_dims]
        self.layers = [
            TemporalGnnLayer(dims[k], dims[k + 1],
                             activation="identity" if k == len(hidden_dims) - 1 else "relu",
                             rng=rng, name=f"{name}.{k}")
            for k in range(len(hidden_dims))
        ]

    @property
    def out_dim(self):
        return self.layers[-1].d_out

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def encode(graph_or_edges, features, encoder):
    """Raw embeddings z (N x d) for every node of the graph."""
    edges = graph_or_edges if isinstance(graph_or_edges, EdgeIndex) else EdgeIndex(graph_or_edges)
    h = nk.as_tensor(features)
    if h.shape[0] != edges.num_nodes:
        raise ValueError(f"features have {h.shape[0]} rows, graph has {edges.num_nodes} nodes")
    if h.shape[1] != encoder.layers[0].d_in:
        raise ValueError(f"features have {h.shape[1]} columns, encoder expects {encoder.layers[0].d_in}")
    for layer in encoder.layers:
        h = layer(edges, h)
    return h
