"""Pair and triple recommendation scores over final node representations.

``PD`` sums inner products of the member rows. ``HDM`` feeds the (summed)
Hadamard products through a small MLP head. Entities are canonicalized to
ascending node order before any arithmetic, so every score is exactly
invariant under permutation of its members.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .exceptions import ContractError, ParameterError
from .metrics import RankedResult
from .models import xavier_uniform

KINDS = ("PD", "HDM")


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "PD"
    hdm_hidden_dim: int = 64
    arity: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"scorer kind must be PD or HDM, got {self.kind!r}")
        if self.arity not in (2, 3):
            raise ParameterError(f"arity must be 2 or 3, got {self.arity}")


class Scorer:
    """Scoring head; holds the trainable HDM parameters when ``kind == 'HDM'``."""

    def __init__(self, kind="PD", hidden_dim=64, hdm_hidden_dim=None, seed=0, params=None):
        if kind not in KINDS:
            raise ParameterError(f"scorer kind must be PD or HDM, got {kind!r}")
        self.kind = kind
        self.hidden_dim = hidden_dim
        self.hdm_hidden_dim = hdm_hidden_dim or hidden_dim
        if params is None:
            params = {}
            if kind == "HDM":
                rng = np.random.default_rng([seed, 1])
                params = {
                    "hdm_w1": xavier_uniform(rng, hidden_dim, self.hdm_hidden_dim),
                    "hdm_b1": np.zeros(self.hdm_hidden_dim),
                    "hdm_w2": xavier_uniform(rng, self.hdm_hidden_dim, 1),
                    "hdm_b2": np.zeros(1),
                }
        self.params = {k: v if isinstance(v, T.Tensor) else T.Tensor(v, requires_grad=True)
                       for k, v in params.items()}

    def head(self, Z):
        p = self.params
        hidden = T.relu(T.linear(Z, p["hdm_w1"], p["hdm_b1"]))
        return T.tensor_sum(T.linear(hidden, p["hdm_w2"], p["hdm_b2"]), axis=1)

    def score(self, H, entities):
        """Scores of a batch of entities, shape ``(B,)``.

        Parameters
        ----------
        H : Tensor of shape (N, d)
        entities : array-like of shape (B, 2) or (B, 3)
            Node indices; member order is irrelevant.
        """
        ent = np.sort(np.asarray(entities, dtype=np.intp).reshape(len(entities), -1), axis=1)
        if ent.shape[1] not in (2, 3):
            raise ContractError(f"entities must have 2 or 3 members, got {ent.shape[1]}")
        rows = [T.take_rows(H, ent[:, c]) for c in range(ent.shape[1])]
        if ent.shape[1] == 2:
            Z = T.mul(rows[0], rows[1])
        else:
            Z = T.add(T.add(T.mul(rows[0], rows[1]), T.mul(rows[0], rows[2])),
                      T.mul(rows[1], rows[2]))
        if self.kind == "PD":
            return T.tensor_sum(Z, axis=1)
        return self.head(Z)

    def score_array(self, H, entities):
        """Graph-free scoring of a numpy ``H``; returns a float array."""
        if len(entities) == 0:
            return np.zeros(0)
        with T.no_grad():
            return self.score(T.as_tensor(H), entities).data


def _distinct(*idx):
    if len(set(idx)) != len(idx):
        raise ContractError(f"entity members must be distinct, got {idx}")


def score_pair(H, i, j, scorer):
    _distinct(i, j)
    return float(scorer.score_array(_data(H), [(i, j)])[0])


def score_triple(H, i, j, k, scorer):
    _distinct(i, j, k)
    return float(scorer.score_array(_data(H), [(i, j, k)])[0])


def _data(H):
    return H.data if isinstance(H, T.Tensor) else np.asarray(H, dtype=np.float64)


def order_by_score(entities, scores):
    """Indices sorting by descending score, ties by ascending entity tuple."""
    return sorted(range(len(entities)), key=lambda n: (-scores[n], entities[n]))


def rank_candidates(H, candidates, scorer, query=None, relevant=()):
    if len(candidates) == 0:
        raise ContractError("no candidates to rank")
    candidates = [tuple(c) for c in candidates]
    scores = scorer.score_array(_data(H), candidates)
    order = order_by_score(candidates, scores)
    return RankedResult(
        query=query,
        entities=tuple(candidates[n] for n in order),
        scores=tuple(float(scores[n]) for n in order),
        relevant=frozenset(tuple(r) for r in relevant),
    )


def minmax(values):
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    return np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)


def pair_score_matrix(H, scorer):
    """Full symmetric N x N score matrix; the diagonal is NaN."""
    n = _data(H).shape[0]
    iu = np.triu_indices(n, 1)
    s = scorer.score_array(_data(H), np.column_stack(iu))
    out = np.full((n, n), np.nan)
    out[iu] = s
    out[iu[1], iu[0]] = s
    return out


def write_ranked_csv(result, net, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "entity", "score"])
        for r, (ent, s) in enumerate(zip(result.entities, result.scores), start=1):
            w.writerow([r, "-".join(net.entity_symbols(ent)), repr(s)])


def write_score_matrix(H, scorer, net, path, arity=2, normalize=True):
    """Heatmap export: N x N matrix for pairs, ``i,j,k,score`` rows for triples."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if arity == 2:
            m = pair_score_matrix(H, scorer)
            if normalize:
                mask = ~np.isnan(m)
                m[mask] = minmax(m[mask])
            w.writerow([""] + list(net.nodes))
            for sym, row in zip(net.nodes, m):
                w.writerow([sym] + ["" if np.isnan(v) else repr(float(v)) for v in row])
        else:
            triples = list(itertools.combinations(range(net.n_nodes), 3))
            s = scorer.score_array(_data(H), triples)
            if normalize:
                s = minmax(s)
            w.writerow(["i", "j", "k", "score"])
            for t, v in zip(triples, s):
                w.writerow(list(net.entity_symbols(t)) + [repr(float(v))])
