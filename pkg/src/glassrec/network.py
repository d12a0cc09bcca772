"""Binary and ternary material networks over element nodes."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, ContractError, UnknownElementError

MODES = ("partner_for_element", "pair_for_element", "third_for_pair")


def _edges_of(entity):
    return itertools.combinations(entity, 2)


@dataclass(frozen=True)
class MaterialNetwork:
    """Elements as nodes; positives are edges (arity 2) or triangles (arity 3).

    ``adjacency`` is the pairwise projection used for message passing: every
    triangle contributes its three edges.
    """

    nodes: tuple
    arity: int
    positives: tuple
    adjacency: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_entities(cls, nodes, arity, entities):
        n = len(nodes)
        positives = tuple(sorted({tuple(sorted(int(i) for i in e)) for e in entities}))
        adj = np.zeros((n, n), dtype=np.int64)
        for ent in positives:
            if len(ent) != arity or len(set(ent)) != arity:
                raise ContractError(f"entity {ent} does not have {arity} distinct nodes")
            for i, j in _edges_of(ent):
                adj[i, j] = adj[j, i] = 1
        adj.setflags(write=False)
        return cls(tuple(nodes), arity, positives, adj)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1)

    @property
    def n_edges(self):
        return int(self.adjacency.sum() // 2)

    @property
    def index(self):
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {s: i for i, s in enumerate(self.nodes)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def node_index(self, symbol):
        if isinstance(symbol, (int, np.integer)):
            if not 0 <= symbol < self.n_nodes:
                raise UnknownElementError(symbol, "node index out of range")
            return int(symbol)
        try:
            return self.index[symbol]
        except KeyError:
            raise UnknownElementError(symbol, "not a node of the network") from None

    def entity(self, symbols):
        return tuple(sorted(self.node_index(s) for s in symbols))

    def entity_symbols(self, entity):
        return tuple(self.nodes[i] for i in entity)

    def neighbors(self, i):
        return np.flatnonzero(self.adjacency[i])

    def with_positives(self, entities):
        """Same node set, different positives (used for training folds)."""
        return MaterialNetwork.from_entities(self.nodes, self.arity, entities)

    def edges(self):
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(self.adjacency)))]


def build_network(records, table=None, nodes=None):
    """Network over the elements occurring in ``records``.

    Node order follows ``nodes`` if given, else the embedding table's order,
    else alphabetical. Passing ``nodes`` keeps elements that have no positive.
    """
    records = list(records)
    if not records:
        raise ConfigurationError("no positive records to build a network from")
    arity = records[0].arity
    if any(r.arity != arity for r in records):
        raise ContractError("records mix binary and ternary systems")
    used = {s for r in records for s in r.elements}
    if nodes is None:
        if table is not None:
            for s in sorted(used):
                if s not in table:
                    raise UnknownElementError(s, "missing from embedding table")
            nodes = [s for s in table.symbols if s in used]
        else:
            nodes = sorted(used)
    else:
        nodes = list(nodes)
        missing = used.difference(nodes)
        if missing:
            raise UnknownElementError(sorted(missing)[0], "not among the requested nodes")
    index = {s: i for i, s in enumerate(nodes)}
    return MaterialNetwork.from_entities(
        nodes, arity, [[index[s] for s in r.elements] for r in records])


def normalized_adjacency(net):
    """Symmetric GCN propagation matrix with self-loops.

    Degrees are taken from ``A + I``, so isolated nodes map to 1.
    """
    a = net.adjacency + np.eye(net.n_nodes)
    d = a.sum(axis=1) ** -0.5
    return d[:, None] * a * d[None, :]


def mean_adjacency(net):
    """Row-normalized adjacency; rows of isolated nodes are zero."""
    a = net.adjacency.astype(np.float64)
    deg = a.sum(axis=1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


def interaction_weights(net):
    """``A_ij / (|N(i)| sqrt(d_i d_j))`` from the self-loop-free adjacency."""
    a = net.adjacency.astype(np.float64)
    deg = a.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (inv * inv_sqrt)[:, None] * a * inv_sqrt[None, :]


def enumerate_candidates(net, mode, query, exclude=()):
    """All entities completing ``query`` in the given mode.

    Returns full entities (sorted node-index tuples that include the query
    nodes), ascending lexicographic, minus anything in ``exclude``.
    """
    if mode not in MODES:
        raise ContractError(f"unknown candidate mode {mode!r}; expected one of {MODES}")
    exclude = {tuple(sorted(e)) for e in exclude}
    n = net.n_nodes
    if mode == "third_for_pair":
        if isinstance(query, str) or len(query) != 2:
            raise ContractError(f"third_for_pair needs a pair query, got {query!r}")
        i, j = (net.node_index(q) for q in query)
        if i == j:
            raise ContractError("pair query must name two distinct nodes")
        fixed = (i, j)
        free = 1
    else:
        fixed = (net.node_index(query),)
        free = 1 if mode == "partner_for_element" else 2
    others = [k for k in range(n) if k not in fixed]
    out = []
    for combo in itertools.combinations(others, free):
        ent = tuple(sorted(fixed + combo))
        if ent not in exclude:
            out.append(ent)
    out.sort()
    return out


def export_entities(net, path):
    """Write positives as ``source,target`` or ``a,b,c`` CSV rows."""
    header = ["source", "target"] if net.arity == 2 else ["a", "b", "c"]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for ent in net.positives:
            writer.writerow(net.entity_symbols(ent))
