"""GCN, NGCF and TransGNN encoders mapping element embeddings to node representations.

Row-vector convention throughout: a layer weight of shape ``(d_in, d_out)``
acts as ``H @ W``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, ParameterError
from .network import interaction_weights, mean_adjacency, normalized_adjacency

ARCHITECTURES = ("GCN", "NGCF", "TransGNN")


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "GCN"
    layers: int = 2
    input_dim: int = 100
    hidden_dim: int = 64
    num_heads: int = 4
    dropout: float = 0.1
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ParameterError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.layers not in (1, 2, 3):
            raise ParameterError(f"layers must be 1, 2 or 3, got {self.layers}")
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ParameterError("input_dim and hidden_dim must be positive")
        if self.architecture == "TransGNN" and self.hidden_dim % self.num_heads:
            raise ParameterError(
                f"hidden_dim={self.hidden_dim} is not divisible by num_heads={self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self):
        return asdict(self)


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class GraphContext:
    """Constant propagation matrices for one network, built once per fold."""

    def __init__(self, net):
        self.n_nodes = net.n_nodes
        self.a_hat = T.Tensor(normalized_adjacency(net))
        self.mean_adj = T.Tensor(mean_adjacency(net))
        self.interaction = T.Tensor(interaction_weights(net))


def _check_rows(H, ctx):
    if H.shape[0] != ctx.n_nodes:
        raise DimensionError(f"{H.shape[0]} feature rows for a {ctx.n_nodes}-node network")


def project_input(X, weight, bias, rate=0.0, training=False, rng=None):
    """Single affine + ReLU map from raw embeddings to the hidden width."""
    return T.dropout(T.relu(T.linear(X, weight, bias)), rate, training, rng)


def gcn_layer(H, a_hat, weight, rate=0.0, training=False, rng=None):
    return T.dropout(T.relu(T.matmul(T.matmul(a_hat, H), weight)), rate, training, rng)


def ngcf_layer(H, interaction, w1, w2, slope=0.01, rate=0.0, training=False, rng=None):
    """Self transform plus degree-normalized, neighbor-averaged Hadamard messages.

    ``interaction`` is :func:`~glassrec.network.interaction_weights`, so
    ``H * (interaction @ H)`` equals the per-node mean of
    ``x_i * x_j / sqrt(d_i d_j)`` over neighbors ``j``.
    """
    own = T.matmul(H, w1)
    messages = T.mul(H, T.matmul(interaction, H))
    out = T.add(own, T.matmul(messages, w2))
    return T.dropout(T.leaky_relu(out, slope), rate, training, rng)


def multi_head_attention(H, params, num_heads):
    d_head = params["wq0"].shape[1]
    scale = 1.0 / np.sqrt(d_head)
    heads = []
    for h in range(num_heads):
        q = T.matmul(H, params[f"wq{h}"])
        k = T.matmul(H, params[f"wk{h}"])
        v = T.matmul(H, params[f"wv{h}"])
        attn = T.softmax_rows(T.mul(T.matmul(q, T.transpose(k)), scale))
        heads.append(T.matmul(attn, v))
    return T.matmul(T.concat_columns(heads), params["wo"])


def transgnn_layer(H, mean_adj, params, num_heads, rate=0.0, training=False, rng=None):
    """Global multi-head attention block followed by a neighbor-mean GNN block."""
    ctx = multi_head_attention(H, params, num_heads)
    h1 = T.layer_norm(T.add(H, T.dropout(ctx, rate, training, rng)),
                      params["ln1_g"], params["ln1_b"])
    ffn = T.matmul(T.relu(T.matmul(h1, params["wf1"])), params["wf2"])
    h_trans = T.layer_norm(T.add(h1, ffn), params["ln2_g"], params["ln2_b"])

    agg = T.dropout(T.matmul(T.matmul(mean_adj, h_trans), params["w2"]), rate, training, rng)
    combined = T.concat_columns([h_trans, agg])
    h_gnn = T.layer_norm(T.relu(T.matmul(combined, params["w1"])),
                         params["ln3_g"], params["ln3_b"])
    return T.dropout(h_gnn, rate, training, rng)


def init_layer_params(config, rng, prefix=""):
    d = config.hidden_dim
    p = {}
    if config.architecture == "GCN":
        p["w"] = xavier_uniform(rng, d, d)
    elif config.architecture == "NGCF":
        p["w1"] = xavier_uniform(rng, d, d)
        p["w2"] = xavier_uniform(rng, d, d)
    else:
        dh = d // config.num_heads
        for h in range(config.num_heads):
            p[f"wq{h}"] = xavier_uniform(rng, d, dh)
            p[f"wk{h}"] = xavier_uniform(rng, d, dh)
            p[f"wv{h}"] = xavier_uniform(rng, d, dh)
        p["wo"] = xavier_uniform(rng, d, d)
        p["wf1"] = xavier_uniform(rng, d, 4 * d)
        p["wf2"] = xavier_uniform(rng, 4 * d, d)
        p["w2"] = xavier_uniform(rng, d, d)
        p["w1"] = xavier_uniform(rng, 2 * d, d)
        for ln in ("ln1", "ln2", "ln3"):
            p[f"{ln}_g"] = np.ones(d)
            p[f"{ln}_b"] = np.zeros(d)
    return {prefix + k: v for k, v in p.items()}


class Encoder:
    """Input projection followed by ``config.layers`` stacked graph layers.

    Parameters are leaf tensors in :attr:`params`, keyed ``proj_w``,
    ``proj_b`` and ``l{k}_<name>`` for layer ``k``.
    """

    def __init__(self, config, params=None):
        self.config = config
        if params is None:
            rng = np.random.default_rng(config.seed)
            raw = {"proj_w": xavier_uniform(rng, config.input_dim, config.hidden_dim),
                   "proj_b": np.zeros(config.hidden_dim)}
            for k in range(config.layers):
                raw.update(init_layer_params(config, rng, prefix=f"l{k}_"))
            params = raw
        self.params = {k: v if isinstance(v, T.Tensor) else T.Tensor(v, requires_grad=True)
                       for k, v in params.items()}

    def layer_params(self, k):
        prefix = f"l{k}_"
        return {name[len(prefix):]: p for name, p in self.params.items()
                if name.startswith(prefix)}

    def apply_layer(self, k, H, ctx, training=False, rng=None):
        cfg = self.config
        p = self.layer_params(k)
        if cfg.architecture == "GCN":
            return gcn_layer(H, ctx.a_hat, p["w"], cfg.dropout, training, rng)
        if cfg.architecture == "NGCF":
            return ngcf_layer(H, ctx.interaction, p["w1"], p["w2"], cfg.leaky_slope,
                              cfg.dropout, training, rng)
        return transgnn_layer(H, ctx.mean_adj, p, cfg.num_heads, cfg.dropout, training, rng)

    def forward(self, X, ctx, training=False, rng=None):
        X = T.as_tensor(X)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"expected embeddings of width {self.config.input_dim}, got shape {X.shape}")
        _check_rows(X, ctx)
        H = project_input(X, self.params["proj_w"], self.params["proj_b"],
                          self.config.dropout, training, rng)
        for k in range(self.config.layers):
            H = self.apply_layer(k, H, ctx, training, rng)
        return H
