"""Cosine/Ward dendrograms and PCA projections of embedding tables."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import EmbeddingTable
from .exceptions import ContractError, DataError


def cosine_distance_matrix(table):
    """``1 - cos`` between every pair of rows, after L2-normalizing each row."""
    vectors = table.vectors if isinstance(table, EmbeddingTable) else np.asarray(table, float)
    symbols = table.symbols if isinstance(table, EmbeddingTable) else range(len(vectors))
    norms = np.linalg.norm(vectors, axis=1)
    for s, n in zip(symbols, norms):
        if n == 0.0:
            raise DataError(f"zero-norm embedding for {s!r}; cosine distance undefined")
    unit = vectors / norms[:, None]
    d = np.clip(1.0 - unit @ unit.T, 0.0, 2.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class Dendrogram:
    """Merge sequence in the usual linkage layout.

    Row ``m`` of :attr:`merges` is ``(a, b, height, size)``; ids below
    ``n_leaves`` are leaves, id ``n_leaves + m`` is the cluster formed at
    step ``m``.
    """

    merges: tuple
    labels: tuple

    @property
    def n_leaves(self):
        return len(self.labels)

    @property
    def heights(self):
        return [m[2] for m in self.merges]

    def linkage_matrix(self):
        return np.array(self.merges, dtype=np.float64)

    def leaves_of(self, cluster):
        n = self.n_leaves
        if cluster < n:
            return [cluster]
        a, b, _, _ = self.merges[cluster - n]
        return self.leaves_of(int(a)) + self.leaves_of(int(b))

    def to_newick(self):
        n = self.n_leaves

        def name(label):
            label = str(label)
            return label if re.fullmatch(r"[A-Za-z0-9_.\-]+", label) else "'" + label.replace("'", "''") + "'"

        def node(cid, parent_height):
            if cid < n:
                return f"{name(self.labels[cid])}:{parent_height:.6g}"
            a, b, h, _ = self.merges[cid - n]
            inner = f"({node(int(a), h)},{node(int(b), h)})"
            return f"{inner}:{parent_height - h:.6g}"

        if not self.merges:
            return f"{name(self.labels[0])};"
        a, b, h, _ = self.merges[-1]
        return f"({node(int(a), h)},{node(int(b), h)});"


def ward_cluster(distances, labels=None):
    """Agglomerative Ward clustering via the Lance-Williams recurrence.

    Ties are broken by the smallest ``(a, b)`` cluster-id pair.
    """
    d = np.array(distances, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ContractError(f"distance matrix must be square, got {d.shape}")
    if n < 2:
        raise ContractError("Ward clustering needs at least two items")
    if not np.allclose(d, d.T) or np.any(d < 0):
        raise ContractError("distance matrix must be symmetric and nonnegative")
    labels = tuple(range(n)) if labels is None else tuple(labels)

    active = {i: i for i in range(n)}  # matrix slot -> cluster id
    size = np.ones(n)
    dist = d.copy()
    merges = []
    for step in range(n - 1):
        slots = sorted(active, key=lambda s: active[s])
        best = None
        for x, si in enumerate(slots):
            for sj in slots[x + 1:]:
                key = (dist[si, sj], min(active[si], active[sj]), max(active[si], active[sj]))
                if best is None or key < best[0]:
                    best = (key, si, sj)
        (height, _, _), si, sj = best
        ni, nj = size[si], size[sj]
        for sk in slots:
            if sk in (si, sj):
                continue
            nk = size[sk]
            val = ((ni + nk) * dist[si, sk] ** 2 + (nj + nk) * dist[sj, sk] ** 2
                   - nk * dist[si, sj] ** 2) / (ni + nj + nk)
            dist[si, sk] = dist[sk, si] = np.sqrt(max(val, 0.0))
        a, b = sorted((active[si], active[sj]))
        merges.append((a, b, float(height), int(ni + nj)))
        size[si] = ni + nj
        active[si] = n + step
        del active[sj]
    return Dendrogram(tuple(merges), labels)


def cluster_table(table):
    return ward_cluster(cosine_distance_matrix(table), table.symbols)


def feature_table(table):
    """Transpose a table so its embedding dimensions become the items."""
    return EmbeddingTable(table.language, tuple(f"f{i}" for i in range(table.dim)),
                          table.vectors.T.copy())


@dataclass(frozen=True)
class PCAResult:
    coordinates: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray

    def reconstruct(self):
        return self.coordinates @ self.components + self.mean


def pca_project(table, components=2):
    """Project mean-centred rows onto the leading covariance eigenvectors.

    Each eigenvector is sign-flipped so its largest-magnitude entry is
    positive.
    """
    X = table.vectors if isinstance(table, EmbeddingTable) else np.asarray(table, float)
    n = X.shape[0]
    if n <= components:
        raise DataError(f"need more than {components} rows, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    tol = max(total, 1.0) * 1e-12
    rank = int(np.sum(evals > tol))
    if rank < components:
        raise DataError(f"data has rank {rank}, fewer than the {components} requested components")
    comps = evecs[:, :components].T.copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1.0
    return PCAResult(Xc @ comps.T, evals[:components] / total, comps, mean)


def write_pca_csv(symbols, result, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element"] + [f"pc{i + 1}" for i in range(result.coordinates.shape[1])])
        for s, row in zip(symbols, result.coordinates):
            w.writerow([s] + [repr(float(v)) for v in row])
