"""Scikit-learn style wrapper around encoder + scoring head + BPR training."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import tensor as T
from .exceptions import ConfigurationError, ContractError, DimensionError, FormatError
from .models import Encoder, GraphContext, ModelConfig
from .network import MODES, MaterialNetwork, enumerate_candidates
from .optim import Adam
from .scoring import Scorer, rank_candidates

MAGIC = b"GLASSREC-CHECKPOINT 1\n"
BPR_EPS = 1e-10


def l2_penalty(params):
    total = None
    for p in params:
        sq = T.tensor_sum(T.mul(p, p))
        total = sq if total is None else T.add(total, sq)
    return total


def bpr_loss(pos_scores, neg_scores, params=(), lambda_l2=0.0, eps=BPR_EPS):
    """Summed pairwise ranking loss ``-log(sigmoid(s+ - s-) + eps)`` plus L2.

    The penalty is ``lambda_l2`` times the sum of squared entries of every
    tensor in ``params``.
    """
    pos_scores, neg_scores = T.as_tensor(pos_scores), T.as_tensor(neg_scores)
    if pos_scores.shape != neg_scores.shape:
        raise ContractError(
            f"{pos_scores.shape} positive scores but {neg_scores.shape} negative scores")
    diff = T.sigmoid(T.sub(pos_scores, neg_scores))
    loss = T.mul(T.tensor_sum(T.log(T.add(diff, eps))), -1.0)
    params = list(params)
    if lambda_l2 and params:
        loss = T.add(loss, T.mul(l2_penalty(params), float(lambda_l2)))
    return loss


class GlassRecommender(BaseEstimator):
    """Learns node representations on a material network and scores entities.

    Parameters
    ----------
    architecture : {"GCN", "NGCF", "TransGNN"}, default="GCN"
    scorer : {"PD", "HDM"}, default="PD"
    layers : int, default=2
        Number of stacked graph layers after the input projection.
    hidden_dim : int, default=64
    num_heads : int, default=4
        Attention heads (TransGNN only).
    dropout : float, default=0.1
        Shared rate for every dropout site.
    leaky_slope : float, default=0.01
    hdm_hidden_dim : int or None, default=None
        Width of the HDM head's hidden layer; ``None`` means ``hidden_dim``.
    learning_rate : float, default=1e-2
    lambda_l2 : float, default=1e-4
    epochs : int, default=500
    patience : int, default=50
        Epochs without improvement of the monitored metric before stopping.
    eval_every : int, default=5
        Monitor cadence in epochs.
    random_state : int, default=0
        Seeds initialization; sampling and dropout use ``fit(rng=...)``.

    Attributes
    ----------
    encoder_ : Encoder
    scorer_ : Scorer
    network_ : MaterialNetwork
        The network seen during ``fit`` (training positives only).
    loss_history_ : list of float
    best_epoch_ : int
        Epoch count of the retained parameters.
    """

    def __init__(self, architecture="GCN", scorer="PD", layers=2, hidden_dim=64, num_heads=4,
                 dropout=0.1, leaky_slope=0.01, hdm_hidden_dim=None, learning_rate=1e-2,
                 lambda_l2=1e-4, epochs=500, patience=50, eval_every=5, random_state=0):
        self.architecture = architecture
        self.scorer = scorer
        self.layers = layers
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.dropout = dropout
        self.leaky_slope = leaky_slope
        self.hdm_hidden_dim = hdm_hidden_dim
        self.learning_rate = learning_rate
        self.lambda_l2 = lambda_l2
        self.epochs = epochs
        self.patience = patience
        self.eval_every = eval_every
        self.random_state = random_state

    def model_config(self, input_dim):
        return ModelConfig(architecture=self.architecture, layers=self.layers,
                           input_dim=input_dim, hidden_dim=self.hidden_dim,
                           num_heads=self.num_heads, dropout=self.dropout,
                           leaky_slope=self.leaky_slope, seed=self.random_state)

    def _init_model(self, X, network):
        self.n_features_in_ = X.shape[1]
        self.encoder_ = Encoder(self.model_config(X.shape[1]))
        self.scorer_ = Scorer(self.scorer, self.hidden_dim, self.hdm_hidden_dim,
                              seed=self.random_state)
        self.network_ = network
        self.X_ = X
        self._ctx = GraphContext(network)

    @property
    def parameters_(self):
        return {**self.encoder_.params, **self.scorer_.params}

    def fit(self, X, network, negatives, monitor=None, rng=None):
        """Train with one uniformly resampled negative per positive per epoch.

        Parameters
        ----------
        X : array-like of shape (n_nodes, n_features)
            Initial node embeddings in network node order.
        network : MaterialNetwork
            Training positives and message-passing structure.
        negatives : array-like of shape (n_negatives, arity)
            Negative entities as node indices.
        monitor : callable, optional
            ``monitor(self) -> float`` evaluated before training and every
            ``eval_every`` epochs; the best-scoring parameters are kept and
            training stops after ``patience`` epochs without improvement.
        rng : numpy.random.Generator, optional
            Drives negative sampling and dropout.
        """
        X = check_array(X, dtype=np.float64)
        if X.shape[0] != network.n_nodes:
            raise DimensionError(f"{X.shape[0]} embedding rows for {network.n_nodes} nodes")
        positives = np.asarray(network.positives, dtype=np.intp)
        negatives = np.asarray(negatives, dtype=np.intp)
        if len(positives) == 0:
            raise ConfigurationError("no training positives")
        if negatives.ndim != 2 or len(negatives) == 0:
            raise ConfigurationError("negative pool is empty")
        if negatives.shape[1] != positives.shape[1]:
            raise DimensionError(
                f"negatives have arity {negatives.shape[1]}, positives {positives.shape[1]}")
        if rng is None:
            rng = np.random.default_rng(self.random_state)

        self._init_model(X, network)
        params = self.parameters_
        opt = Adam(params, lr=self.learning_rate)
        self.loss_history_ = []
        self.monitor_history_ = []
        self.best_epoch_ = 0

        best_value, best_state, since_best = -np.inf, None, 0
        if monitor is not None:
            best_value = monitor(self)
            self.monitor_history_.append((0, best_value))
            best_state = self._snapshot()

        for epoch in range(1, self.epochs + 1):
            neg = negatives[rng.integers(len(negatives), size=len(positives))]
            H = self.encoder_.forward(X, self._ctx, training=True, rng=rng)
            loss = bpr_loss(self.scorer_.score(H, positives), self.scorer_.score(H, neg),
                            params.values(), self.lambda_l2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_history_.append(loss.item())
            if not np.isfinite(self.loss_history_[-1]):
                break
            if monitor is not None and epoch % self.eval_every == 0:
                value = monitor(self)
                self.monitor_history_.append((epoch, value))
                if value > best_value:
                    best_value, best_state, since_best = value, self._snapshot(), 0
                    self.best_epoch_ = epoch
                else:
                    since_best += self.eval_every
                    if since_best >= self.patience:
                        break
            elif monitor is None:
                self.best_epoch_ = epoch
        if best_state is not None:
            self._restore(best_state)
        opt.zero_grad()
        return self

    def _snapshot(self):
        return {k: p.data.copy() for k, p in self.parameters_.items()}

    def _restore(self, state):
        for k, p in self.parameters_.items():
            p.data = state[k].copy()

    def transform(self, X=None):
        """Eval-mode node representations, shape ``(n_nodes, hidden_dim)``."""
        check_is_fitted(self, "encoder_")
        X = self.X_ if X is None else check_array(X, dtype=np.float64)
        with T.no_grad():
            return self.encoder_.forward(X, self._ctx, training=False).data

    def decision_function(self, entities, H=None):
        """Raw scores for entities given as node-index tuples."""
        check_is_fitted(self, "encoder_")
        H = self.transform() if H is None else H
        return self.scorer_.score_array(H, entities)

    def recommend(self, query, mode=None, k=None, exclude=None, H=None):
        """Rank the candidates completing ``query``.

        ``exclude`` defaults to the training positives; pass ``()`` to score
        every entity.
        """
        check_is_fitted(self, "encoder_")
        net = self.network_
        if mode is None:
            mode = "third_for_pair" if not isinstance(query, (str, int)) else (
                "partner_for_element" if net.arity == 2 else "pair_for_element")
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}")
        exclude = net.positives if exclude is None else exclude
        candidates = enumerate_candidates(net, mode, query, exclude)
        if not candidates:
            raise ConfigurationError(f"no candidates for query {query!r}")
        result = rank_candidates(self.transform() if H is None else H, candidates,
                                 self.scorer_, query=query)
        if k is not None:
            result = type(result)(result.query, result.entities[:k], result.scores[:k],
                                  result.relevant)
        return result

    def save(self, path, metadata=None):
        """Write a versioned checkpoint: magic line, JSON header, float64 blob."""
        check_is_fitted(self, "encoder_")
        arrays = {"__input__": self.X_, **{k: p.data for k, p in self.parameters_.items()}}
        table, offset = [], 0
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            table.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.size
        header = {
            "estimator": self.get_params(),
            "network": {"nodes": list(self.network_.nodes), "arity": self.network_.arity,
                        "positives": [list(e) for e in self.network_.positives]},
            "tensors": table,
            "metadata": metadata or {},
        }
        with Path(path).open("wb") as fh:
            fh.write(MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for entry in table:
                fh.write(np.ascontiguousarray(arrays[entry["name"]], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if not raw.startswith(MAGIC):
            raise FormatError("not a glassrec checkpoint (bad magic)", path)
        rest = raw[len(MAGIC):]
        nl = rest.index(b"\n")
        header = json.loads(rest[:nl].decode("utf-8"))
        blob = np.frombuffer(rest[nl + 1:], dtype="<f8")
        arrays = {}
        for entry in header["tensors"]:
            size = int(np.prod(entry["shape"], dtype=np.int64))
            arrays[entry["name"]] = blob[entry["offset"]:entry["offset"] + size].reshape(
                entry["shape"]).copy()
        est = cls(**header["estimator"])
        net_info = header["network"]
        net = MaterialNetwork.from_entities(net_info["nodes"], net_info["arity"],
                                            [tuple(e) for e in net_info["positives"]])
        X = arrays.pop("__input__")
        est._init_model(X, net)
        for k, p in est.parameters_.items():
            if k not in arrays or arrays[k].shape != p.data.shape:
                raise FormatError(f"checkpoint tensor {k!r} missing or misshapen", path)
            p.data = arrays[k]
        est.metadata_ = header.get("metadata", {})
        return est
