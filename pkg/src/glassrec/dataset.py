"""Embedding tables, alloy records, negative pools and cross-validation folds.

File formats
------------
Embedding file
    UTF-8, tab separated. Column 1 is the element symbol, the remaining
    ``dim`` columns are decimal reals. Lines starting with ``#`` are ignored.
    The language tag is taken from the filename suffix, e.g. ``wiki.eng.tsv``.
Alloy file
    UTF-8 CSV with header ``elements,label``. ``elements`` joins symbols with
    ``-`` (``Al-Mg-Ti``); ``label`` is ``pos`` or ``neg``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigurationError,
    ConflictError,
    ContractError,
    FormatError,
    ParameterError,
    UnknownElementError,
)

LANGUAGES = ("eng", "chn", "japan", "fren", "ger", "span", "ital", "port", "russ", "pol", "dut")
POS, NEG = "pos", "neg"


@dataclass(frozen=True)
class EmbeddingTable:
    """Element symbol -> fixed vector, in file order."""

    language: str
    symbols: tuple
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.symbols):
            raise FormatError(
                f"{len(self.symbols)} symbols but vector block of shape {vectors.shape}")
        if len(set(self.symbols)) != len(self.symbols) or not all(self.symbols):
            raise FormatError("element symbols must be unique and nonempty")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "symbols", tuple(self.symbols))

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    @property
    def _index(self):
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {s: i for i, s in enumerate(self.symbols)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    @property
    def entries(self):
        return {s: self.vectors[i] for i, s in enumerate(self.symbols)}

    def vector(self, symbol):
        try:
            return self.vectors[self._index[symbol]]
        except KeyError:
            raise UnknownElementError(symbol, f"not in {self.language} embedding table") from None

    def matrix(self, symbols):
        """Stack the vectors of ``symbols`` in the given order."""
        return np.stack([self.vector(s) for s in symbols])


def language_from_path(path):
    parts = Path(path).name.split(".")
    return parts[-2] if len(parts) >= 3 else parts[0]


def load_embeddings(path, expected_dim=100, language=None):
    """Read a tab-separated embedding file.

    Raises
    ------
    FormatError
        On ragged rows, duplicate symbols or non-numeric fields; the message
        carries the offending line number.
    """
    path = Path(path)
    symbols, rows, seen = [], [], {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            symbol = fields[0].strip()
            if not symbol:
                raise FormatError("empty element symbol", path, lineno)
            if len(fields) - 1 != expected_dim:
                raise FormatError(
                    f"expected {expected_dim} values for {symbol!r}, found {len(fields) - 1}",
                    path, lineno)
            if symbol in seen:
                raise FormatError(
                    f"duplicate symbol {symbol!r} (first seen on line {seen[symbol]})",
                    path, lineno)
            try:
                values = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise FormatError(f"non-numeric value for {symbol!r}: {exc}", path, lineno) from None
            if not np.all(np.isfinite(values)):
                raise FormatError(f"non-finite value for {symbol!r}", path, lineno)
            seen[symbol] = lineno
            symbols.append(symbol)
            rows.append(values)
    if not rows:
        raise FormatError("no embedding rows", path)
    return EmbeddingTable(language or language_from_path(path), tuple(symbols), np.array(rows))


def save_embeddings(table, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# language={table.language} dim={table.dim}\n")
        for symbol, vec in zip(table.symbols, table.vectors):
            fh.write(symbol + "\t" + "\t".join(repr(float(v)) for v in vec) + "\n")


@dataclass(frozen=True)
class AlloyRecord:
    """An unordered set of 2 or 3 elements with a pos/neg label."""

    elements: frozenset
    label: str = POS

    def __post_init__(self):
        object.__setattr__(self, "elements", frozenset(self.elements))
        if len(self.elements) not in (2, 3):
            raise FormatError(f"alloy arity must be 2 or 3, got {sorted(self.elements)}")
        if self.label not in (POS, NEG):
            raise FormatError(f"label must be 'pos' or 'neg', got {self.label!r}")

    @classmethod
    def parse(cls, text, label=POS):
        symbols = [s.strip() for s in text.split("-")]
        if any(not s for s in symbols):
            raise FormatError(f"empty element in {text!r}")
        if len(set(symbols)) != len(symbols):
            raise FormatError(f"duplicate element in {text!r}")
        return cls(frozenset(symbols), label)

    @property
    def arity(self):
        return len(self.elements)

    @property
    def positive(self):
        return self.label == POS

    @property
    def symbols(self):
        return tuple(sorted(self.elements))

    def __str__(self):
        return "-".join(self.symbols)


def load_alloys(path, table=None):
    """Read an alloy CSV and deduplicate by element set.

    Compositions are not part of the format; rows naming the same element set
    collapse to one record.
    """
    path = Path(path)
    records, labels = [], {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["elements", "label"]:
            raise FormatError("header must be 'elements,label'", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise FormatError(f"expected 2 fields, found {len(row)}", path, lineno)
            try:
                rec = AlloyRecord.parse(row[0], row[1].strip())
            except FormatError as exc:
                raise FormatError(str(exc), path, lineno) from None
            if table is not None:
                for s in rec.symbols:
                    if s not in table:
                        raise UnknownElementError(s, f"{path}:{lineno}")
            prev = labels.get(rec.elements)
            if prev is None:
                labels[rec.elements] = rec.label
                records.append(rec)
            elif prev != rec.label:
                raise ConflictError(f"{path}:{lineno}: {rec} labelled both pos and neg")
    return records


def save_alloys(records, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["elements", "label"])
        for rec in records:
            writer.writerow([str(rec), rec.label])


def split_labels(records):
    return [r for r in records if r.positive], [r for r in records if not r.positive]


def build_negative_pool(positives, nodes, explicit_negatives=(), *, complement=None):
    """Negative entities for BPR sampling.

    Parameters
    ----------
    positives : sequence of AlloyRecord
    nodes : sequence of str
        Ordered node symbols; defines the enumeration order.
    explicit_negatives : sequence of AlloyRecord
        Curated failures. Must not coincide with a positive.
    complement : bool, optional
        Add every entity over ``nodes`` that touches a positive element and
        is not itself positive. Defaults to True only when no explicit
        negatives are given.

    Returns
    -------
    list of AlloyRecord
        Sorted by node-index tuple.
    """
    positives = list(positives)
    if not positives:
        raise ConfigurationError("no positive samples")
    arity = positives[0].arity
    if any(r.arity != arity for r in positives):
        raise ContractError("positive records mix binary and ternary systems")
    index = {s: i for i, s in enumerate(nodes)}
    pos_sets = {r.elements for r in positives}

    pool = set()
    for rec in explicit_negatives:
        if rec.arity != arity:
            raise ContractError(f"negative {rec} has arity {rec.arity}, network arity is {arity}")
        if rec.elements in pos_sets:
            raise ConflictError(f"{rec} is listed as both positive and negative")
        for s in rec.elements:
            if s not in index:
                raise UnknownElementError(s, "negative sample outside the network")
        pool.add(rec.elements)

    if complement is None:
        complement = not explicit_negatives
    if complement:
        touched = {index[s] for r in positives for s in r.elements if s in index}
        for combo in itertools.combinations(range(len(nodes)), arity):
            if touched.isdisjoint(combo):
                continue
            ent = frozenset(nodes[i] for i in combo)
            if ent not in pos_sets:
                pool.add(ent)

    if not pool:
        raise ConfigurationError("negative pool is empty; training is impossible")
    ordered = sorted(pool, key=lambda e: sorted(index[s] for s in e))
    return [AlloyRecord(e, NEG) for e in ordered]


@dataclass(frozen=True)
class FoldSplit:
    """Fold index for each positive, aligned with the positives' order."""

    fold_count: int
    assignments: tuple

    def test_indices(self, fold):
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def train_indices(self, fold):
        return [i for i, f in enumerate(self.assignments) if f != fold]

    def sizes(self):
        return [self.assignments.count(f) for f in range(self.fold_count)]


def _members(entity):
    return entity.elements if isinstance(entity, AlloyRecord) else entity


def stratified_folds(positives, fold_count=5, seed=0, node_index=None):
    """Stratify by lowest node index of each entity, shuffle, deal round-robin.

    ``positives`` may be :class:`AlloyRecord` objects (then ``node_index``
    maps symbols to indices; alphabetical if omitted) or node-index tuples.
    The dealing pointer carries over between strata so overall fold sizes
    differ by at most one.
    """
    positives = list(positives)
    if fold_count < 2:
        raise ConfigurationError(f"fold_count must be >= 2, got {fold_count}")
    if not positives:
        raise ConfigurationError("no positive samples to split")
    if fold_count > len(positives):
        raise ConfigurationError(
            f"{fold_count} folds requested for only {len(positives)} positives")
    if node_index is None:
        if isinstance(positives[0], AlloyRecord):
            node_index = {s: i for i, s in enumerate(
                sorted({s for r in positives for s in r.elements}))}
        else:
            node_index = {}

    strata = {}
    for i, ent in enumerate(positives):
        key = min(node_index.get(m, m) for m in _members(ent))
        strata.setdefault(key, []).append(i)

    rng = np.random.default_rng(seed)
    assignments = [0] * len(positives)
    pointer = 0
    for key in sorted(strata):
        members = strata[key]
        for j in rng.permutation(len(members)):
            assignments[members[j]] = pointer % fold_count
            pointer += 1
    return FoldSplit(fold_count, tuple(assignments))


def synthetic_symbols(n):
    width = max(2, len(str(n - 1)))
    return tuple(f"E{i:0{width}d}" for i in range(n))


def community_of(n_nodes, communities):
    return np.arange(n_nodes) * communities // n_nodes


def generate_synthetic(nodes, communities, p_in, p_out, seed=0, arity=2):
    """Planted-community positives over ``nodes`` synthetic elements.

    Nodes are split into contiguous, near-equal communities. Each candidate
    entity is kept independently with probability ``p_in`` if all of its
    nodes share a community and ``p_out`` otherwise.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ParameterError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if arity not in (2, 3):
        raise ParameterError(f"arity must be 2 or 3, got {arity}")
    if communities < 1 or nodes < arity:
        raise ParameterError(f"need communities >= 1 and nodes >= {arity}")
    symbols = synthetic_symbols(nodes)
    comm = community_of(nodes, communities)
    rng = np.random.default_rng(seed)
    records = []
    for combo in itertools.combinations(range(nodes), arity):
        p = p_in if len({comm[i] for i in combo}) == 1 else p_out
        if rng.random() < p:
            records.append(AlloyRecord(frozenset(symbols[i] for i in combo), POS))
    return records


def synthetic_embeddings(nodes, communities, dim=100, signal=1.0, seed=0, language="syn"):
    """Gaussian vectors around one random centroid per community."""
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((communities, dim))
    comm = community_of(nodes, communities)
    vectors = signal * centroids[comm] + rng.standard_normal((nodes, dim))
    return EmbeddingTable(language, synthetic_symbols(nodes), vectors)


def triangles_of(records):
    """Ternary positives formed by every triangle of a binary record set."""
    adj = {}
    for r in records:
        a, b = r.symbols
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    out = []
    for a in sorted(adj):
        for b in sorted(x for x in adj[a] if x > a):
            for c in sorted(x for x in adj[a] & adj[b] if x > b):
                out.append(AlloyRecord(frozenset((a, b, c)), POS))
    return out
