"""Cross-validated training, task evaluation, grid search and repeated trials.

Tasks
-----
B2B
    Binary network; query an element, rank partner elements.
T2T_pair_for_element
    Ternary network; query an element, rank pairs completing a triangle.
T2T_third_for_pair
    Ternary network; query a pair, rank third elements.
B2T
    Encoder and scorer trained on the binary network; query a pair, rank
    third elements against the ternary positives.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import build_negative_pool, stratified_folds
from .estimator import GlassRecommender
from .exceptions import ConfigurationError, ParameterError
from .metrics import RankedResult, ndcg_at_k, recall_at_k
from .network import build_network, enumerate_candidates

log = logging.getLogger(__name__)

TASKS = ("B2B", "T2T_pair_for_element", "T2T_third_for_pair", "B2T")
TASK_MODES = {
    "B2B": "partner_for_element",
    "T2T_pair_for_element": "pair_for_element",
    "T2T_third_for_pair": "third_for_pair",
    "B2T": "third_for_pair",
}

DEFAULT_GRID = {
    "lambda_l2": [0.01, 0.001, 0.0001],
    "learning_rate": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
    "dropout": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
    "layers": [1, 2, 3],
}
DEFAULT_SEEDS = tuple(range(30))
FINAL_STREAM = 1_000_000  # RNG stream id of the all-data fit, disjoint from fold ids


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of one training trial (architecture, head and optimizer)."""

    task: str = "B2B"
    architecture: str = "GCN"
    scorer: str = "PD"
    layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    dropout: float = 0.1
    leaky_slope: float = 0.01
    hdm_hidden_dim: int | None = None
    learning_rate: float = 1e-2
    lambda_l2: float = 1e-4
    epochs: int = 500
    patience: int = 50
    eval_every: int = 5
    k: int = 10
    fold_count: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.k < 1 or self.epochs < 0 or self.patience < 1 or self.eval_every < 1:
            raise ParameterError("k, patience and eval_every must be >= 1 and epochs >= 0")

    def estimator(self, seed=None):
        return GlassRecommender(
            architecture=self.architecture, scorer=self.scorer, layers=self.layers,
            hidden_dim=self.hidden_dim, num_heads=self.num_heads, dropout=self.dropout,
            leaky_slope=self.leaky_slope, hdm_hidden_dim=self.hdm_hidden_dim,
            learning_rate=self.learning_rate, lambda_l2=self.lambda_l2, epochs=self.epochs,
            patience=self.patience, eval_every=self.eval_every,
            random_state=self.seed if seed is None else seed)

    def to_dict(self):
        return asdict(self)


@dataclass
class TaskSetup:
    """Everything a trial needs, independent of hyperparameters.

    ``network`` holds the training arity's positives. ``eval_entities`` is
    the relevance universe for B2T (ternary positives mapped onto binary
    node indices, absent members kept as symbols); for the other tasks the
    held-out fold itself is the relevance set.
    """

    task: str
    network: object
    X: np.ndarray
    pool: np.ndarray
    language: str = ""
    eval_entities: list = field(default_factory=list)
    skipped_entities: int = 0
    hashes: dict = field(default_factory=dict)

    @property
    def mode(self):
        return TASK_MODES[self.task]


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def prepare_task(task, table, records, ternary_records=None, explicit_negatives=(),
                 hashes=None):
    """Build network, embedding matrix and negative pool for ``task``.

    ``records`` are the positives of the training network (binary for B2B
    and B2T, ternary for T2T). ``ternary_records`` are required for B2T.
    """
    if task not in TASKS:
        raise ParameterError(f"task must be one of {TASKS}, got {task!r}")
    positives = [r for r in records if r.positive]
    want = 3 if task.startswith("T2T") else 2
    if positives and any(r.arity != want for r in positives):
        raise ConfigurationError(f"{task} needs {'ternary' if want == 3 else 'binary'} positives")
    net = build_network(positives, table)
    pool_records = build_negative_pool(positives, net.nodes, explicit_negatives)
    pool = np.array([net.entity(r.elements) for r in pool_records], dtype=np.intp)
    setup = TaskSetup(task, net, table.matrix(net.nodes), pool,
                      language=table.language, hashes=dict(hashes or {}))
    if task == "B2T":
        if not ternary_records:
            raise ConfigurationError("B2T needs ternary positives for evaluation")
        for rec in ternary_records:
            if not rec.positive:
                continue
            if rec.arity != 3:
                raise ConfigurationError(f"B2T evaluation record {rec} is not ternary")
            present = sorted(net.index[s] for s in rec.elements if s in net.index)
            absent = sorted(s for s in rec.elements if s not in net.index)
            if len(present) < 2:
                setup.skipped_entities += 1
                continue
            setup.eval_entities.append(tuple(present) + tuple(absent))
    return setup


def build_queries(mode, relevant_entities):
    """Map each query (element index or index pair) to its relevant entities.

    Entity members that are not node indices (absent elements, stored as
    symbols) make a query invalid when they would be part of the query
    itself; such queries are counted in the second return value.
    """
    queries, skipped = {}, set()
    for ent in relevant_entities:
        idx = [m for m in ent if not isinstance(m, str)]
        if mode in ("partner_for_element", "pair_for_element"):
            keys = [(i,) for i in idx]
        else:
            keys = [pair for pair in itertools.combinations(ent, 2)]
        for key in keys:
            if any(isinstance(m, str) for m in key):
                skipped.add(key)
                continue
            q = key[0] if len(key) == 1 else tuple(sorted(key))
            queries.setdefault(q, set()).add(ent)
    return queries, len(skipped)


@dataclass
class EvalReport:
    recall: float
    ndcg: float
    n_queries: int
    skipped_queries: int
    baseline: float
    per_query: list = field(default_factory=list, repr=False)


def expected_random_recall(n_relevant, n_reachable, n_candidates, k):
    """Expected Recall@K of a uniformly random ranking."""
    if n_candidates == 0 or n_relevant == 0:
        return 0.0
    return n_reachable * min(k, n_candidates) / n_candidates / min(n_relevant, k)


def evaluate_task(H, scorer, net, mode, relevant_entities, exclude=(), k=10, candidates=None):
    """Macro-averaged Recall@K / NDCG@K over every query with a relevant entity.

    Parameters
    ----------
    candidates : dict, optional
        Precomputed ``query -> candidate list``; reused across epochs.
    """
    queries, skipped = build_queries(mode, relevant_entities)
    if candidates is None:
        candidates = candidate_lists(net, mode, queries, exclude)
    recalls, ndcgs, baselines, per_query = [], [], [], []
    for q in sorted(queries, key=lambda x: x if isinstance(x, tuple) else (x,)):
        cands = candidates.get(q, [])
        if not cands:
            skipped += 1
            log.warning("query %r has no candidates; skipped", q)
            continue
        scores = scorer.score_array(H, cands)
        order = np.argsort(-scores, kind="stable")
        ranked = RankedResult(q, tuple(cands[n] for n in order),
                              tuple(float(scores[n]) for n in order), frozenset(queries[q]))
        r, n = recall_at_k(ranked, k), ndcg_at_k(ranked, k)
        reachable = sum(1 for e in queries[q] if not any(isinstance(m, str) for m in e))
        b = expected_random_recall(len(queries[q]), reachable, len(cands), k)
        recalls.append(r)
        ndcgs.append(n)
        baselines.append(b)
        per_query.append((q, r, n, len(queries[q]), len(cands)))
    if not recalls:
        raise ConfigurationError("no evaluable queries")
    return EvalReport(float(np.mean(recalls)), float(np.mean(ndcgs)), len(recalls), skipped,
                      float(np.mean(baselines)), per_query)


def candidate_lists(net, mode, queries, exclude=()):
    """Candidates per query, lexicographically ordered (the tie-break order)."""
    exclude = set(exclude)
    return {q: enumerate_candidates(net, mode, q, exclude) for q in queries}


@dataclass
class FoldResult:
    fold: int
    recall: float
    ndcg: float
    baseline: float
    n_queries: int
    skipped_queries: int
    best_epoch: int
    n_train: int
    n_test: int


@dataclass
class TrialResult:
    config: TrainConfig
    seed: int
    folds: list

    @property
    def recall_at_k(self):
        return float(np.mean([f.recall for f in self.folds]))

    @property
    def ndcg_at_k(self):
        return float(np.mean([f.ndcg for f in self.folds]))

    @property
    def recall_std(self):
        return float(np.std([f.recall for f in self.folds]))

    @property
    def ndcg_std(self):
        return float(np.std([f.ndcg for f in self.folds]))

    @property
    def baseline(self):
        return float(np.mean([f.baseline for f in self.folds]))

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "recall_at_k": self.recall_at_k,
            "ndcg_at_k": self.ndcg_at_k,
            "recall_std": self.recall_std,
            "ndcg_std": self.ndcg_std,
            "random_baseline": self.baseline,
            "folds": [asdict(f) for f in self.folds],
        }


def _fold_eval_spec(setup, train_pos, test_pos):
    if setup.task == "B2T":
        return setup.eval_entities, ()
    return test_pos, train_pos


def train_trial(setup, config, return_models=False):
    """Stratified k-fold training and evaluation of one configuration.

    Each fold trains on the remaining folds' positives (message passing
    uses only those edges), samples negatives from a pool that excludes the
    held-out entities, and keeps the parameters with the best held-out
    Recall@K.
    """
    net = setup.network
    positives = list(net.positives)
    split = stratified_folds(positives, config.fold_count, config.seed)
    folds, models = [], []
    for f in range(config.fold_count):
        test_pos = [positives[i] for i in split.test_indices(f)]
        train_pos = [positives[i] for i in split.train_indices(f)]
        if not test_pos or not train_pos:
            raise ConfigurationError(f"fold {f} is empty")
        fold_net = net.with_positives(train_pos)
        test_set = set(test_pos)
        pool = np.array([e for e in setup.pool if tuple(e) not in test_set], dtype=np.intp)
        if len(pool) == 0:
            raise ConfigurationError(f"fold {f}: negative pool empty after removing test entities")

        relevant, exclude = _fold_eval_spec(setup, train_pos, test_pos)
        queries, _ = build_queries(setup.mode, relevant)
        cands = candidate_lists(fold_net, setup.mode, queries, exclude)

        def monitor(est, relevant=relevant, exclude=exclude, cands=cands, fold_net=fold_net):
            return evaluate_task(est.transform(), est.scorer_, fold_net, setup.mode, relevant,
                                 exclude, config.k, cands).recall

        est = config.estimator()
        est.fit(setup.X, fold_net, pool, monitor=monitor,
                rng=np.random.default_rng([config.seed, f]))
        rep = evaluate_task(est.transform(), est.scorer_, fold_net, setup.mode, relevant,
                            exclude, config.k, cands)
        folds.append(FoldResult(f, rep.recall, rep.ndcg, rep.baseline, rep.n_queries,
                                rep.skipped_queries, est.best_epoch_, len(train_pos),
                                len(test_pos)))
        if return_models:
            models.append(est)
    result = TrialResult(config, config.seed, folds)
    return (result, models) if return_models else result


def train_final(setup, config, epochs):
    """Fit on every positive for a fixed epoch budget (no held-out data)."""
    est = replace(config, epochs=int(epochs)).estimator()
    est.fit(setup.X, setup.network, setup.pool, rng=np.random.default_rng([config.seed, FINAL_STREAM]))
    return est


def _run(args):
    setup, config = args
    return train_trial(setup, config)


def map_trials(setup, configs, jobs=1):
    """Run ``train_trial`` over configs; output order matches input order."""
    configs = list(configs)
    if jobs <= 1:
        return [train_trial(setup, c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run, [(setup, c) for c in configs]))


def grid_points(base, grid):
    """Every combination of ``grid`` applied to ``base``, in key-major order."""
    keys = list(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        yield replace(base, **dict(zip(keys, values)))


def grid_search(setup, base, grid, seeds=(0,), jobs=1):
    """Evaluate every grid point; pick max mean Recall@K, then NDCG@K, then order.

    Returns
    -------
    best : TrainConfig
    report : list of dict
        One entry per grid point with its mean metrics and trial results.
    """
    points = list(grid_points(base, grid))
    if not points:
        raise ConfigurationError("empty grid")
    jobs_list = [replace(p, seed=s) for p in points for s in seeds]
    results = map_trials(setup, jobs_list, jobs)
    report = []
    for n, p in enumerate(points):
        trials = results[n * len(seeds):(n + 1) * len(seeds)]
        report.append({
            "index": n,
            "config": p.to_dict(),
            "recall_at_k": float(np.mean([t.recall_at_k for t in trials])),
            "ndcg_at_k": float(np.mean([t.ndcg_at_k for t in trials])),
            "trials": trials,
        })
    best = max(report, key=lambda r: (r["recall_at_k"], r["ndcg_at_k"], -r["index"]))
    return points[best["index"]], report


def aggregate(trials):
    """Mean/std across trials (of fold means) and across all trial x fold values."""
    tr = np.array([t.recall_at_k for t in trials])
    tn = np.array([t.ndcg_at_k for t in trials])
    fr = np.array([f.recall for t in trials for f in t.folds])
    fn = np.array([f.ndcg for t in trials for f in t.folds])
    return {
        "trials": len(trials),
        "recall_mean": float(tr.mean()), "recall_std": float(tr.std()),
        "ndcg_mean": float(tn.mean()), "ndcg_std": float(tn.std()),
        "recall_mean_folds": float(fr.mean()), "recall_std_folds": float(fr.std()),
        "ndcg_mean_folds": float(fn.mean()), "ndcg_std_folds": float(fn.std()),
        "random_baseline": float(np.mean([t.baseline for t in trials])),
    }


def run_trials(setup, config, seeds=DEFAULT_SEEDS, jobs=1):
    trials = map_trials(setup, [replace(config, seed=s) for s in seeds], jobs)
    return trials, aggregate(trials)


def manifest(setup, config, trials, extra=None):
    """Deterministic run record: no timestamps, sorted keys."""
    body = {
        "format": "glassrec-manifest/1",
        "task": setup.task,
        "language": setup.language,
        "network": {"nodes": setup.network.n_nodes, "arity": setup.network.arity,
                    "positives": len(setup.network.positives),
                    "negative_pool": int(len(setup.pool)),
                    "skipped_eval_entities": setup.skipped_entities},
        "inputs": dict(sorted(setup.hashes.items())),
        "config": config.to_dict(),
        "seeds": [t.seed for t in trials],
        "trials": [t.to_dict() for t in trials],
        "summary": aggregate(trials),
    }
    if extra:
        body.update(extra)
    return json.dumps(body, sort_keys=True, indent=2) + "\n"
