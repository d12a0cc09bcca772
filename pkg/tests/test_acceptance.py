"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""

import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from glassrec import tensor as T
from glassrec.analysis import ward_cluster
from glassrec.cli import main
from glassrec.dataset import AlloyRecord, generate_synthetic, synthetic_embeddings, triangles_of
from glassrec.estimator import bpr_loss, l2_penalty
from glassrec.metrics import RankedResult, ndcg_at_k, recall_at_k
from glassrec.models import (
    Encoder,
    GraphContext,
    ModelConfig,
    gcn_layer,
    init_layer_params,
    ngcf_layer,
    project_input,
    transgnn_layer,
)
from glassrec.network import (
    MaterialNetwork,
    interaction_weights,
    mean_adjacency,
    normalized_adjacency,
)
from glassrec.scoring import Scorer, order_by_score, score_pair, score_triple
from glassrec.training import (
    DEFAULT_GRID,
    DEFAULT_SEEDS,
    TrainConfig,
    grid_points,
    prepare_task,
    train_trial,
)
from helpers import gradient_check
from test_analysis import TWO_BLOBS, euclidean, ward_oracle
from test_metrics import oracle

ROOT = Path(__file__).resolve().parents[1]


def verdict(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


@pytest.fixture
def net4():
    return MaterialNetwork.from_entities(tuple("ABCD"), 2, [(0, 1), (1, 2), (1, 3)])


def test_criterion_01_gradients(capsys, net4):
    start = time.perf_counter()
    rng = np.random.default_rng(11)

    def p(shape, lo=-1.0, hi=1.0):
        return T.Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    errors = {}
    x, w, b, c = p((4, 5)), p((5, 4)), p(4), T.Tensor(rng.uniform(-1, 1, (4, 4)))
    errors["projection"] = gradient_check(
        lambda: T.tensor_sum(T.mul(project_input(x, w, b), c)), [x, w, b])

    a_hat = T.Tensor(normalized_adjacency(net4))
    h, wg = p((4, 4)), p((4, 4))
    errors["GCN"] = gradient_check(lambda: T.tensor_sum(T.mul(gcn_layer(h, a_hat, wg), c)), [h, wg])

    inter = T.Tensor(interaction_weights(net4))
    w1, w2 = p((4, 4)), p((4, 4))
    errors["NGCF"] = gradient_check(
        lambda: T.tensor_sum(T.mul(ngcf_layer(h, inter, w1, w2, 0.1), c)), [h, w1, w2])

    cfg = ModelConfig("TransGNN", input_dim=5, hidden_dim=4, num_heads=2, dropout=0.0)
    tp = {k: T.Tensor(v + rng.uniform(-0.1, 0.1, v.shape), requires_grad=True)
          for k, v in init_layer_params(cfg, rng).items()}
    m = T.Tensor(mean_adjacency(net4))
    errors["TransGNN"] = gradient_check(
        lambda: T.tensor_sum(T.mul(transgnn_layer(h, m, tp, 2), c)), [h, *tp.values()])

    scorer = Scorer("HDM", hidden_dim=4, hdm_hidden_dim=3, seed=2)
    for q in scorer.params.values():
        q.data += rng.uniform(-0.1, 0.1, q.shape)
    z = p((6, 4))
    errors["HDM head"] = gradient_check(lambda: T.tensor_sum(scorer.head(z)),
                                        [z, *scorer.params.values()])

    layer_ok = max(errors.values()) < 1e-4
    e2e = {}
    for arch, kind, layers in itertools.product(("GCN", "NGCF", "TransGNN"), ("PD", "HDM"), (1, 2)):
        enc = Encoder(ModelConfig(arch, layers=layers, input_dim=5, hidden_dim=4, num_heads=2,
                                  dropout=0.0, seed=3))
        sc = Scorer(kind, hidden_dim=4, seed=1)
        params = {**enc.params, **sc.params}
        for q in params.values():
            q.data += rng.uniform(-0.05, 0.05, q.shape)
        ctx, xin = GraphContext(net4), T.Tensor(rng.uniform(-1, 1, (4, 5)))

        def loss(enc=enc, sc=sc, ctx=ctx, xin=xin, params=params):
            hh = enc.forward(xin, ctx)
            return bpr_loss(sc.score(hh, [(0, 1), (1, 2)]), sc.score(hh, [(0, 2), (2, 3)]),
                            list(params.values()), 1e-3)

        e2e[f"{arch}-{kind}-L{layers}"] = gradient_check(loss, params)
    elapsed = time.perf_counter() - start
    ok = layer_ok and max(e2e.values()) < 1e-3 and elapsed < 10
    detail = (", ".join(f"{k} {v:.1e}" for k, v in errors.items())
              + f"; worst end-to-end {max(e2e.values()):.1e}; {elapsed:.1f}s")
    verdict(capsys, "1 gradient correctness", ok, detail)


def test_criterion_02_metric_oracle(capsys):
    rng = np.random.default_rng(7)
    worst_ndcg, recall_equal = 0.0, True
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        scores = rng.integers(0, 6, n).astype(float)
        relevant = set(rng.choice(n, int(rng.integers(1, n + 1)), replace=False).tolist())
        k = int(rng.integers(1, 15))
        order = order_by_score(list(range(n)), scores)
        res = RankedResult("q", tuple(order), tuple(scores[order]), frozenset(relevant))
        r_exp, n_exp = oracle(scores, relevant, k)
        recall_equal &= recall_at_k(res, k) == r_exp
        worst_ndcg = max(worst_ndcg, abs(ndcg_at_k(res, k) - n_exp))
    worked = ndcg_at_k(RankedResult("q", ("a", "b", "c"), (3, 2, 1), frozenset({"a", "c"})), 3)
    ok = recall_equal and worst_ndcg <= 1e-12 and abs(worked - 0.9197) < 5e-5
    verdict(capsys, "2 metric oracle", ok,
            f"recall exact={recall_equal}, max NDCG dev {worst_ndcg:.1e}, rel=[1,0,1] -> {worked:.4f}")


def test_criterion_03_normalization(capsys):
    edge = normalized_adjacency(MaterialNetwork.from_entities("AB", 2, [(0, 1)]))
    k3 = normalized_adjacency(MaterialNetwork.from_entities("ABC", 2, [(0, 1), (0, 2), (1, 2)]))
    rng = np.random.default_rng(3)
    pairs = {tuple(sorted(rng.choice(12, 2, replace=False))) for _ in range(30)}
    rnd = normalized_adjacency(MaterialNetwork.from_entities(range(12), 2, pairs))
    asym = max(np.abs(m - m.T).max() for m in (edge, k3, rnd))
    ok = (np.abs(edge - 0.5).max() < 1e-15 and np.abs(k3 - 1 / 3).max() < 1e-15 and asym <= 1e-15)
    verdict(capsys, "3 adjacency normalization", ok,
            f"edge dev {np.abs(edge - 0.5).max():.1e}, K3 dev {np.abs(k3 - 1 / 3).max():.1e}, "
            f"asymmetry {asym:.1e}")


def test_criterion_04_score_symmetry(capsys):
    rng = np.random.default_rng(5)
    h = rng.normal(size=(7, 6))
    pd, hdm = Scorer("PD", hidden_dim=6), Scorer("HDM", hidden_dim=6, seed=3)
    pair_ok = all(score_pair(h, i, j, pd) == score_pair(h, j, i, pd)
                  for i, j in itertools.combinations(range(7), 2))
    triple_ok = {}
    for name, sc in (("PD", pd), ("HDM", hdm)):
        triple_ok[name] = all(len({score_triple(h, *perm, sc) for perm in itertools.permutations(t)}) == 1
                              for t in itertools.combinations(range(7), 3))
    ok = pair_ok and all(triple_ok.values())
    verdict(capsys, "4 score symmetries", ok,
            f"pair PD exact={pair_ok}, triple PD bitwise={triple_ok['PD']}, "
            f"triple HDM bitwise={triple_ok['HDM']} (35 triples x 6 orders)")


def test_criterion_05_loss_sanity(capsys):
    rng = np.random.default_rng(9)
    # eps inside the log shifts each term by about 2 * eps, so N_pos = 4 is used
    s = rng.normal(size=4)
    base = bpr_loss(s, s).item()
    params = [T.Tensor(rng.normal(size=(4, 3)), requires_grad=True),
              T.Tensor(rng.normal(size=5), requires_grad=True)]
    direct = sum(float(np.sum(q.data ** 2)) for q in params)
    lam = 0.001
    pos, neg = rng.normal(size=6), rng.normal(size=6)
    added = bpr_loss(pos, neg, params, lam).item() - bpr_loss(pos, neg).item()
    dev = abs(base - 4 * math.log(2))
    l2_dev = abs(added - lam * direct)
    ok = dev < 1e-9 and l2_dev < 1e-12 and abs(l2_penalty(params).item() - direct) < 1e-12
    verdict(capsys, "5 loss sanity", ok,
            f"equal scores deviate from 4 ln2 by {dev:.1e}; L2 increment off by {l2_dev:.1e}")


PLANTED = {}


def planted_setup():
    if not PLANTED:
        records = generate_synthetic(30, 2, 0.9, 0.05, seed=0)
        table = synthetic_embeddings(30, 2, signal=0.0, seed=0)
        PLANTED["setup"] = prepare_task("B2B", table, records)
    return PLANTED["setup"]


CRIT6_MODELS = [
    ("GCN", "PD", {}),
    ("NGCF", "PD", {}),
    ("TransGNN", "HDM", {"learning_rate": 1e-3, "dropout": 0.0}),
]


@pytest.fixture(scope="module")
def crit6_results():
    setup = planted_setup()
    out = {}
    for arch, kind, extra in CRIT6_MODELS:
        start = time.perf_counter()
        trial = train_trial(setup, TrainConfig(architecture=arch, scorer=kind, seed=0, **extra))
        out[f"{arch}-{kind}"] = (trial, time.perf_counter() - start)
    return out


def test_criterion_06a_recall_and_runtime(capsys, crit6_results):
    gcn = crit6_results["GCN-PD"][0].recall_at_k
    slowest = max(t for _, t in crit6_results.values())
    ok = gcn >= 0.6 and slowest < 120
    detail = "; ".join(f"{name} Recall@10 {tr.recall_at_k:.3f} in {t:.1f}s"
                       for name, (tr, t) in crit6_results.items())
    verdict(capsys, "6a learning signal: GCN-PD >= 0.6, < 2 min per architecture", ok, detail)


def test_criterion_06b_ratio_over_random(capsys, crit6_results):
    # The fixture's per-query random baseline is above 1/3, so a 3x ratio would
    # need Recall@10 > 1. Kept as stated; see the decisions ledger.
    ratios = {name: tr.recall_at_k / tr.baseline for name, (tr, _) in crit6_results.items()}
    baseline = next(iter(crit6_results.values()))[0].baseline
    ok = all(r >= 3.0 for r in ratios.values())
    detail = (f"random baseline {baseline:.3f} (ceiling ratio {1 / baseline:.2f}); "
              + ", ".join(f"{k} {v:.2f}x" for k, v in ratios.items()))
    verdict(capsys, "6b learning signal: >= 3x random baseline", ok, detail)


def test_criterion_07_protocol(capsys, tmp_path):
    cfg = TrainConfig()
    grid = len(list(grid_points(cfg, DEFAULT_GRID)))
    assert main(["synth", "--nodes", "10", "--dim", "8", "--out", str(tmp_path / "s")]) == 0
    assert main(["train", "--embeddings", str(tmp_path / "s" / "embeddings.syn.tsv"),
                 "--alloys", str(tmp_path / "s" / "alloys.csv"), "--dim", "8", "--epochs", "2",
                 "--hidden-dim", "8", "--out", str(tmp_path / "t")]) == 0
    header = (tmp_path / "t" / "report.csv").read_text().splitlines()[0]
    readme = (ROOT / "README.md").read_text(encoding="utf-8") if (ROOT / "README.md").exists() else ""
    ok = (cfg.fold_count == 5 and DEFAULT_SEEDS == tuple(range(30)) and cfg.k == 10 and grid == 486
          and header == "task,architecture,scorer,language,seed,fold,recall@10,ndcg@10"
          and "0.915" in readme and "0.041" in readme)
    verdict(capsys, "7 protocol and external benchmark", ok,
            f"folds {cfg.fold_count}, seeds {len(DEFAULT_SEEDS)}, K {cfg.k}, grid {grid}, "
            f"report header ok={header.startswith('task,architecture')}, "
            f"benchmark documented={'0.915' in readme}")


def test_criterion_08_determinism(capsys, tmp_path):
    assert main(["synth", "--nodes", "14", "--dim", "8", "--out", str(tmp_path / "s")]) == 0
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--embeddings", str(tmp_path / "s" / "embeddings.syn.tsv"),
                     "--alloys", str(tmp_path / "s" / "alloys.csv"), "--dim", "8",
                     "--hidden-dim", "16", "--epochs", "30", "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    same = {f: (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
            for f in ("manifest.json", "model.ckpt")}
    json.loads((outs[0] / "manifest.json").read_text())
    verdict(capsys, "8 determinism", all(same.values()),
            ", ".join(f"{k} identical={v}" for k, v in same.items()))


def test_criterion_09_ward(capsys):
    dg = ward_cluster(euclidean(TWO_BLOBS))
    blobs = ({0, 1, 2}, {3, 4, 5})
    intra_first = all(any(set(dg.leaves_of(6 + m)) <= b for b in blobs) for m in range(4))
    expected = ward_oracle(TWO_BLOBS)
    matches = all(frozenset(dg.leaves_of(6 + m)) == leaves and abs(dg.merges[m][2] - height) < 1e-10
                  for m, (leaves, height) in enumerate(expected))
    monotone = all(a <= b for a, b in zip(dg.heights, dg.heights[1:]))
    ok = intra_first and matches and monotone
    verdict(capsys, "9 Ward clustering", ok,
            f"intra-blob merges first={intra_first}, oracle agreement={matches}, "
            f"heights nondecreasing={monotone}")


def test_criterion_10_b2t(capsys):
    binary = generate_synthetic(30, 3, 0.6, 0.02, seed=0)
    # one ternary with a single absent element (its pair queries are dropped),
    # one with two absent elements (the entity itself is dropped)
    ternary = triangles_of(binary) + [AlloyRecord.parse("E00-E01-X99"),
                                      AlloyRecord.parse("E00-X98-X99")]
    setup = prepare_task("B2T", synthetic_embeddings(30, 3, signal=0.0, seed=0), binary, ternary)
    trial = train_trial(setup, TrainConfig(task="B2T", architecture="GCN", scorer="PD", seed=0))
    ratio = trial.recall_at_k / trial.baseline
    skipped_q = [f.skipped_queries for f in trial.folds]
    ok = ratio >= 2.0 and setup.skipped_entities == 1 and all(s == 2 for s in skipped_q)
    verdict(capsys, "10 B2T plumbing", ok,
            f"Recall@10 {trial.recall_at_k:.3f} vs baseline {trial.baseline:.3f} ({ratio:.2f}x); "
            f"skipped entities {setup.skipped_entities}, skipped queries per fold {skipped_q}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
