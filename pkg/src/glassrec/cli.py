"""Command-line entry point: ``glassrec <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 input error, 3 query error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import analysis, dataset, training
from .estimator import GlassRecommender
from .exceptions import GlassRecError, UnknownElementError
from .metrics import write_report
from .network import export_entities
from .scoring import write_ranked_csv, write_score_matrix

log = logging.getLogger("glassrec")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_QUERY = 0, 1, 2, 3


class InputError(Exception):
    pass


class QueryError(Exception):
    pass


TRAIN_FLAGS = {
    # flag -> (TrainConfig field, type)
    "task": ("task", str),
    "architecture": ("architecture", str),
    "scorer": ("scorer", str),
    "layers": ("layers", int),
    "hidden_dim": ("hidden_dim", int),
    "num_heads": ("num_heads", int),
    "dropout": ("dropout", float),
    "leaky_slope": ("leaky_slope", float),
    "hdm_hidden_dim": ("hdm_hidden_dim", int),
    "lr": ("learning_rate", float),
    "lambda_l2": ("lambda_l2", float),
    "epochs": ("epochs", int),
    "patience": ("patience", int),
    "eval_every": ("eval_every", int),
    "k": ("k", int),
    "folds": ("fold_count", int),
    "seed": ("seed", int),
}


def _add_train_flags(p):
    g = p.add_argument_group("model and training")
    g.add_argument("--task", choices=training.TASKS)
    g.add_argument("--architecture", choices=("GCN", "NGCF", "TransGNN"))
    g.add_argument("--scorer", choices=("PD", "HDM"))
    for flag, (_, typ) in TRAIN_FLAGS.items():
        if flag in ("task", "architecture", "scorer"):
            continue
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    g.add_argument("--config", type=Path, help="JSON file with any of the flags above")


def _add_data_flags(p, multi_embeddings=False):
    g = p.add_argument_group("data")
    if multi_embeddings:
        g.add_argument("--embeddings", type=Path, nargs="+", required=True)
    else:
        g.add_argument("--embeddings", type=Path, required=True)
    g.add_argument("--dim", type=int, default=100, help="embedding width (default 100)")
    g.add_argument("--alloys", type=Path, required=True,
                   help="training-network alloys (binary for B2B/B2T, ternary for T2T)")
    g.add_argument("--ternary", type=Path, help="ternary alloys evaluated by B2T")
    g.add_argument("--negatives", type=Path, help="explicit negative entities")


def _add_output_flags(p):
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="glassrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="cross-validate one configuration, then fit on all data")
    _add_data_flags(p)
    _add_train_flags(p)
    _add_output_flags(p)

    p = sub.add_parser("recommend", help="rank candidates for a query from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--query", required=True, nargs="+",
                   help="element ('Zr') or pair ('Ag-Mg'); several allowed")
    p.add_argument("--mode", choices=("partner_for_element", "pair_for_element", "third_for_pair"))
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--all", action="store_true", help="do not exclude training positives")
    p.add_argument("--matrix", action="store_true", help="also export the full score matrix")
    p.add_argument("--raw", action="store_true", help="skip min-max normalization of the matrix")
    _add_output_flags(p)

    p = sub.add_parser("evaluate", help="repeated trials over embeddings x architectures")
    _add_data_flags(p, multi_embeddings=True)
    _add_train_flags(p)
    p.add_argument("--models", nargs="+", default=["GCN-PD", "NGCF-PD", "TransGNN-HDM"],
                   help="ARCH-SCORER pairs (default: GCN-PD NGCF-PD TransGNN-HDM)")
    p.add_argument("--trials", type=int, default=30, help="seeds 0..trials-1 (default 30)")
    p.add_argument("--jobs", type=int, default=1)
    _add_output_flags(p)

    p = sub.add_parser("gridsearch", help="exhaustive hyperparameter search")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--grid", type=Path,
                   help="JSON mapping field -> list of values (default: the full 486-point grid)")
    p.add_argument("--trials", type=int, default=1, help="seeds per grid point")
    p.add_argument("--jobs", type=int, default=1)
    _add_output_flags(p)

    p = sub.add_parser("cluster", help="cosine/Ward dendrogram of an embedding table")
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--features", action="store_true", help="cluster embedding dimensions")
    _add_output_flags(p)

    p = sub.add_parser("pca", help="PCA projection of an embedding table")
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--components", type=int, default=2)
    _add_output_flags(p)

    p = sub.add_parser("synth", help="planted-community synthetic dataset")
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--communities", type=int, default=2)
    p.add_argument("--p-in", type=float, default=0.9)
    p.add_argument("--p-out", type=float, default=0.05)
    p.add_argument("--arity", type=int, choices=(2, 3), default=2)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--signal", type=float, default=0.0,
                   help="community signal in the synthetic embeddings (default 0: pure noise)")
    p.add_argument("--languages", nargs="+", default=["syn"])
    p.add_argument("--triangles", action="store_true",
                   help="also write ternary.csv holding every triangle of the binary graph")
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)
    return parser


@contextmanager
def output_dir(path, force):
    """Write into a sibling temp dir, then move it into place in one rename."""
    path = Path(path)
    if path.exists() and not force:
        raise InputError(f"output directory exists (use --force): {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)


def _require(path):
    if path is not None and not Path(path).is_file():
        raise InputError(f"file not found: {path}")
    return path


def train_config(args):
    values = {}
    if getattr(args, "config", None) is not None:
        _require(args.config)
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: invalid JSON: {exc}") from None
        known = {f.name for f in fields(training.TrainConfig)}
        for key, value in cfg.items():
            name = TRAIN_FLAGS.get(key, (key, None))[0]
            if name not in known:
                raise InputError(f"{args.config}: unknown setting {key!r}")
            values[name] = value
    for flag, (name, _) in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    return training.TrainConfig(**values)


def load_setup(args, embeddings_path, task):
    _require(embeddings_path)
    _require(args.alloys)
    _require(args.ternary)
    _require(args.negatives)
    table = dataset.load_embeddings(embeddings_path, args.dim)
    records = dataset.load_alloys(args.alloys, table)
    positives, negatives = dataset.split_labels(records)
    if args.negatives is not None:
        negatives += [r for r in dataset.load_alloys(args.negatives, table) if not r.positive]
    ternary = None
    hashes = {"embeddings": training.file_sha256(embeddings_path),
              "alloys": training.file_sha256(args.alloys)}
    if args.negatives is not None:
        hashes["negatives"] = training.file_sha256(args.negatives)
    if task == "B2T":
        if args.ternary is None:
            raise InputError("B2T needs --ternary")
        ternary = dataset.load_alloys(args.ternary)
        hashes["ternary"] = training.file_sha256(args.ternary)
    return training.prepare_task(task, table, positives, ternary, negatives, hashes)


def _report_rows(trials, setup):
    for t in trials:
        for f in t.folds:
            yield {"task": setup.task, "architecture": t.config.architecture,
                   "scorer": t.config.scorer, "language": setup.language, "seed": t.seed,
                   "fold": f.fold, "recall": f.recall, "ndcg": f.ndcg}


def cmd_train(args):
    config = train_config(args)
    setup = load_setup(args, args.embeddings, config.task)
    trial = training.train_trial(setup, config)
    final_epochs = max(1, int(round(np.mean([f.best_epoch for f in trial.folds]))))
    model = training.train_final(setup, config, final_epochs)
    with output_dir(args.out, args.force) as out:
        (out / "manifest.json").write_text(
            training.manifest(setup, config, [trial], {"final_epochs": final_epochs}),
            encoding="utf-8")
        model.save(out / "model.ckpt", metadata={"task": config.task,
                                                  "language": setup.language})
        write_report(_report_rows([trial], setup), out / "report.csv", config.k)
        export_entities(setup.network, out / "network.csv")
    print(f"{config.task} {config.architecture}-{config.scorer}: "
          f"Recall@{config.k}={trial.recall_at_k:.4f} NDCG@{config.k}={trial.ndcg_at_k:.4f}")
    return EXIT_OK


def _parse_query(model, text):
    parts = [p for p in text.split("-") if p]
    try:
        idx = [model.network_.node_index(p) for p in parts]
    except UnknownElementError as exc:
        raise QueryError(f"query element not in trained network: {exc.symbol}") from None
    if len(idx) == 1:
        return idx[0]
    if len(idx) == 2 and idx[0] != idx[1]:
        return tuple(idx)
    raise QueryError(f"query must be one element or two distinct elements, got {text!r}")


def cmd_recommend(args):
    _require(args.checkpoint)
    model = GlassRecommender.load(args.checkpoint)
    task = model.metadata_.get("task", "")
    H = model.transform()
    exclude = () if args.all else None
    with output_dir(args.out, args.force) as out:
        for text in args.query:
            query = _parse_query(model, text)
            mode = args.mode
            if mode is None and task == "B2T" and isinstance(query, tuple):
                mode = "third_for_pair"
            try:
                result = model.recommend(query, mode=mode, exclude=exclude, H=H)
            except GlassRecError as exc:
                raise QueryError(str(exc)) from None
            if args.k > len(result.entities):
                print(f"warning: K={args.k} exceeds the {len(result.entities)} candidates "
                      f"for {text}; returning all", file=sys.stderr)
            top = type(result)(result.query, result.entities[:args.k], result.scores[:args.k],
                               result.relevant)
            write_ranked_csv(top, model.network_, out / f"recommend_{text}.csv")
        if args.matrix:
            arity = 3 if model.network_.arity == 3 or task == "B2T" else 2
            write_score_matrix(H, model.scorer_, model.network_, out / "scores.csv",
                               arity=arity, normalize=not args.raw)
    return EXIT_OK


def _parse_models(specs):
    out = []
    for spec in specs:
        arch, _, scorer = spec.partition("-")
        if arch not in ("GCN", "NGCF", "TransGNN") or scorer not in ("PD", "HDM"):
            raise InputError(f"bad model spec {spec!r}; expected e.g. GCN-PD")
        out.append((arch, scorer))
    return out


def cmd_evaluate(args):
    base = train_config(args)
    models = _parse_models(args.models)
    seeds = tuple(range(args.trials))
    rows, summary = [], []
    setups = [load_setup(args, path, base.task) for path in args.embeddings]
    for setup in setups:
        for arch, scorer in models:
            config = replace(base, architecture=arch, scorer=scorer)
            trials, agg = training.run_trials(setup, config, seeds, args.jobs)
            rows.extend(_report_rows(trials, setup))
            summary.append({"task": base.task, "architecture": arch, "scorer": scorer,
                            "language": setup.language, **agg})
            log.info("%s %s-%s: recall %.4f", setup.language, arch, scorer, agg["recall_mean"])
    with output_dir(args.out, args.force) as out:
        write_report(rows, out / "report.csv", base.k)
        keys = list(summary[0])
        with (out / "summary.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, keys, lineterminator="\n")
            w.writeheader()
            w.writerows(summary)
        (out / "manifest.json").write_text(json.dumps({
            "format": "glassrec-evaluate/1", "config": base.to_dict(), "models": args.models,
            "seeds": list(seeds), "inputs": [s.hashes for s in setups], "summary": summary,
        }, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for s in summary:
        print(f"{s['language']:>6} {s['architecture']}-{s['scorer']}: "
              f"Recall@{base.k}={s['recall_mean']:.3f}±{s['recall_std']:.3f} "
              f"NDCG@{base.k}={s['ndcg_mean']:.3f}±{s['ndcg_std']:.3f}")
    return EXIT_OK


def cmd_gridsearch(args):
    base = train_config(args)
    setup = load_setup(args, args.embeddings, base.task)
    grid = training.DEFAULT_GRID
    if args.grid is not None:
        _require(args.grid)
        grid = json.loads(args.grid.read_text(encoding="utf-8"))
        unknown = set(grid) - {f.name for f in fields(training.TrainConfig)}
        if unknown:
            raise InputError(f"unknown grid fields: {sorted(unknown)}")
    seeds = tuple(range(args.trials))
    best, report = training.grid_search(setup, base, grid, seeds, args.jobs)
    best_trials = report[[r["config"] for r in report].index(best.to_dict())]["trials"]
    final_epochs = max(1, int(round(np.mean([f.best_epoch for t in best_trials for f in t.folds]))))
    model = training.train_final(setup, best, final_epochs)
    with output_dir(args.out, args.force) as out:
        (out / "manifests").mkdir()
        with (out / "gridsearch.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index"] + list(grid) + [f"recall@{base.k}", f"ndcg@{base.k}"])
            for r in report:
                w.writerow([r["index"]] + [r["config"][k] for k in grid]
                           + [repr(r["recall_at_k"]), repr(r["ndcg_at_k"])])
                (out / "manifests" / f"point_{r['index']:04d}.json").write_text(
                    training.manifest(setup, replace(base, **{k: r["config"][k] for k in grid}),
                                      r["trials"]), encoding="utf-8")
        (out / "best.json").write_text(
            json.dumps({"config": best.to_dict(), "final_epochs": final_epochs},
                       sort_keys=True, indent=2) + "\n", encoding="utf-8")
        model.save(out / "model.ckpt", metadata={"task": best.task, "language": setup.language})
    print(f"best of {len(report)}: " + json.dumps({k: getattr(best, k) for k in grid}))
    return EXIT_OK


def cmd_cluster(args):
    _require(args.embeddings)
    table = dataset.load_embeddings(args.embeddings, args.dim)
    if args.features:
        table = analysis.feature_table(table)
    dendro = analysis.cluster_table(table)
    with output_dir(args.out, args.force) as out:
        (out / "dendrogram.nwk").write_text(dendro.to_newick() + "\n", encoding="utf-8")
        with (out / "linkage.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster_a", "cluster_b", "height", "size"])
            for a, b, h, s in dendro.merges:
                w.writerow([a, b, repr(h), s])
    print(f"{dendro.n_leaves} leaves, {len(dendro.merges)} merges")
    return EXIT_OK


def cmd_pca(args):
    _require(args.embeddings)
    table = dataset.load_embeddings(args.embeddings, args.dim)
    result = analysis.pca_project(table, args.components)
    with output_dir(args.out, args.force) as out:
        analysis.write_pca_csv(table.symbols, result, out / "pca.csv")
        with (out / "explained_variance.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["component", "ratio"])
            for i, r in enumerate(result.explained_variance_ratio, start=1):
                w.writerow([f"pc{i}", repr(float(r))])
    return EXIT_OK


def cmd_synth(args):
    records = dataset.generate_synthetic(args.nodes, args.communities, args.p_in, args.p_out,
                                         args.seed, args.arity)
    with output_dir(args.out, args.force) as out:
        dataset.save_alloys(records, out / "alloys.csv")
        if args.triangles and args.arity == 2:
            dataset.save_alloys(dataset.triangles_of(records), out / "ternary.csv")
        for n, lang in enumerate(args.languages):
            table = dataset.synthetic_embeddings(args.nodes, args.communities, args.dim,
                                                 args.signal, seed=args.seed + 1000 * (n + 1),
                                                 language=lang)
            dataset.save_embeddings(table, out / f"embeddings.{lang}.tsv")
    print(f"{len(records)} positive {'binary' if args.arity == 2 else 'ternary'} records")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "recommend": cmd_recommend, "evaluate": cmd_evaluate,
    "gridsearch": cmd_gridsearch, "cluster": cmd_cluster, "pca": cmd_pca, "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except QueryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUERY
    except (InputError, GlassRecError, FileNotFoundError) as exc:
        msg = f"file not found: {exc.filename}" if isinstance(exc, FileNotFoundError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
