import csv
import json
import re
import shutil
import subprocess

import pytest

from glassrec.cli import main

FAST = ["--hidden-dim", "8", "--layers", "1", "--epochs", "10", "--patience", "5",
        "--dim", "8", "--dropout", "0.0"]


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    out = root / "data"
    assert main(["synth", "--nodes", "12", "--communities", "2", "--p-in", "0.9",
                 "--p-out", "0.05", "--dim", "8", "--triangles", "--languages", "eng", "ger",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth, tmp_path_factory):
    out = tmp_path_factory.mktemp("train") / "run"
    assert main(["train", "--embeddings", str(synth / "embeddings.eng.tsv"),
                 "--alloys", str(synth / "alloys.csv"), *FAST, "--out", str(out)]) == 0
    return out


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


class TestSynth:
    def test_exhaustive(self, tmp_path):
        assert main(["synth", "--nodes", "6", "--communities", "2", "--p-in", "1",
                     "--p-out", "0", "--dim", "4", "--out", str(tmp_path / "s")]) == 0
        rows = read_csv(tmp_path / "s" / "alloys.csv")
        assert rows[0] == ["elements", "label"]
        assert sorted(r[0] for r in rows[1:]) == [
            "E00-E01", "E00-E02", "E01-E02", "E03-E04", "E03-E05", "E04-E05"]

    def test_invalid_probabilities(self, tmp_path, capsys):
        assert main(["synth", "--p-in", "0.1", "--p-out", "0.5", "--out", str(tmp_path / "s")]) == 2
        assert "p_out" in capsys.readouterr().err
        assert not (tmp_path / "s").exists()

    def test_languages(self, synth):
        assert (synth / "embeddings.eng.tsv").is_file() and (synth / "embeddings.ger.tsv").is_file()
        assert (synth / "ternary.csv").is_file()


class TestTrain:
    def test_artifacts(self, trained):
        manifest = json.loads((trained / "manifest.json").read_text())
        assert len(manifest["trials"][0]["folds"]) == 5
        assert set(manifest["inputs"]) == {"embeddings", "alloys"}
        report = read_csv(trained / "report.csv")
        assert report[0] == ["task", "architecture", "scorer", "language", "seed", "fold",
                             "recall@10", "ndcg@10"]
        assert len(report) == 6 and report[1][3] == "eng"
        assert (trained / "model.ckpt").read_bytes().startswith(b"GLASSREC-CHECKPOINT 1\n")

    def test_byte_identical_repeat(self, synth, trained, tmp_path):
        out = tmp_path / "again"
        assert main(["train", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), *FAST, "--out", str(out)]) == 0
        for name in ("manifest.json", "model.ckpt", "report.csv", "network.csv"):
            assert (out / name).read_bytes() == (trained / name).read_bytes()

    def test_missing_embeddings(self, synth, tmp_path, capsys):
        missing = tmp_path / "nope.eng.tsv"
        code = main(["train", "--embeddings", str(missing), "--alloys", str(synth / "alloys.csv"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert f"file not found: {missing}" in capsys.readouterr().err

    def test_refuses_existing_output(self, synth, trained, capsys):
        code = main(["train", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), *FAST, "--out", str(trained)])
        assert code == 2 and "--force" in capsys.readouterr().err

    def test_config_file_and_flag_precedence(self, synth, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"architecture": "NGCF", "epochs": 3, "lr": 0.05}))
        out = tmp_path / "o"
        assert main(["train", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), *FAST, "--config", str(cfg),
                     "--out", str(out)]) == 0
        config = json.loads((out / "manifest.json").read_text())["config"]
        assert config["architecture"] == "NGCF" and config["learning_rate"] == 0.05
        assert config["epochs"] == 10  # flag beats file

    def test_unknown_config_key(self, synth, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert main(["train", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 2


class TestRecommend:
    def test_top_k_rows(self, trained, tmp_path):
        out = tmp_path / "r"
        assert main(["recommend", "--checkpoint", str(trained / "model.ckpt"), "--query", "E00",
                     "--k", "3", "--all", "--matrix", "--out", str(out)]) == 0
        rows = read_csv(out / "recommend_E00.csv")
        assert rows[0] == ["rank", "entity", "score"] and len(rows) == 4
        assert all("E00" in r[1].split("-") for r in rows[1:])
        matrix = read_csv(out / "scores.csv")
        assert len(matrix) == 13 and matrix[1][1] == ""

    def test_saturating_k_warns(self, trained, tmp_path, capsys):
        out = tmp_path / "r"
        assert main(["recommend", "--checkpoint", str(trained / "model.ckpt"), "--query", "E00",
                     "--k", "50", "--all", "--out", str(out)]) == 0
        assert "warning" in capsys.readouterr().err
        assert len(read_csv(out / "recommend_E00.csv")) == 12

    def test_unknown_element(self, trained, tmp_path, capsys):
        code = main(["recommend", "--checkpoint", str(trained / "model.ckpt"), "--query", "Zr",
                     "--out", str(tmp_path / "r")])
        assert code == 3 and "Zr" in capsys.readouterr().err

    def test_pair_query_excludes_members(self, trained, tmp_path):
        out = tmp_path / "r"
        assert main(["recommend", "--checkpoint", str(trained / "model.ckpt"), "--query", "E00-E01",
                     "--mode", "third_for_pair", "--all", "--k", "20", "--out", str(out)]) == 0
        rows = read_csv(out / "recommend_E00-E01.csv")[1:]
        assert len(rows) == 10
        thirds = {next(s for s in r[1].split("-") if s not in ("E00", "E01")) for r in rows}
        assert not thirds & {"E00", "E01"} and len(thirds) == 10


class TestB2T:
    def test_train_and_recommend(self, synth, tmp_path):
        out = tmp_path / "b2t"
        assert main(["train", "--task", "B2T", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), "--ternary", str(synth / "ternary.csv"),
                     *FAST, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["task"] == "B2T" and "ternary" in manifest["inputs"]
        rec_out = tmp_path / "rec"
        assert main(["recommend", "--checkpoint", str(out / "model.ckpt"), "--query", "E00-E01",
                     "--out", str(rec_out)]) == 0
        rows = read_csv(rec_out / "recommend_E00-E01.csv")
        assert all(len(r[1].split("-")) == 3 for r in rows[1:])

    def test_b2t_needs_ternary(self, synth, tmp_path):
        assert main(["train", "--task", "B2T", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), *FAST, "--out", str(tmp_path / "x")]) == 2


class TestEvaluate:
    def test_language_rows(self, synth, tmp_path):
        out = tmp_path / "ev"
        assert main(["evaluate", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     str(synth / "embeddings.ger.tsv"), "--alloys", str(synth / "alloys.csv"),
                     *FAST, "--models", "GCN-PD", "NGCF-PD", "--trials", "2",
                     "--out", str(out)]) == 0
        summary = read_csv(out / "summary.csv")
        assert [(r[1], r[3]) for r in summary[1:]] == [
            ("GCN", "eng"), ("NGCF", "eng"), ("GCN", "ger"), ("NGCF", "ger")]
        assert len(read_csv(out / "report.csv")) == 1 + 2 * 2 * 2 * 5

    def test_bad_model_spec(self, synth, tmp_path):
        assert main(["evaluate", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), "--models", "GAT-PD",
                     "--out", str(tmp_path / "x")]) == 2


class TestGridsearch:
    def test_small_grid(self, synth, tmp_path):
        grid = tmp_path / "g.json"
        grid.write_text(json.dumps({"learning_rate": [0.01, 0.001], "layers": [1, 2]}))
        out = tmp_path / "gs"
        assert main(["gridsearch", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--alloys", str(synth / "alloys.csv"), *FAST, "--grid", str(grid),
                     "--out", str(out)]) == 0
        rows = read_csv(out / "gridsearch.csv")
        assert rows[0][:3] == ["index", "learning_rate", "layers"] and len(rows) == 5
        assert len(list((out / "manifests").glob("point_*.json"))) == 4
        best = json.loads((out / "best.json").read_text())
        recalls = [float(r[3]) for r in rows[1:]]
        assert best["config"]["learning_rate"] == float(rows[1 + recalls.index(max(recalls))][1])


class TestAnalysisCommands:
    def test_cluster_47_leaves(self, tmp_path):
        assert main(["synth", "--nodes", "47", "--dim", "100", "--languages", "eng",
                     "--out", str(tmp_path / "s")]) == 0
        out = tmp_path / "c"
        assert main(["cluster", "--embeddings", str(tmp_path / "s" / "embeddings.eng.tsv"),
                     "--out", str(out)]) == 0
        newick = (out / "dendrogram.nwk").read_text()
        assert len(re.findall(r"[(,](E\d+):", newick)) == 47
        assert len(read_csv(out / "linkage.csv")) == 47

    def test_pca(self, synth, tmp_path):
        out = tmp_path / "p"
        assert main(["pca", "--embeddings", str(synth / "embeddings.eng.tsv"), "--dim", "8",
                     "--out", str(out)]) == 0
        assert read_csv(out / "pca.csv")[0] == ["element", "pc1", "pc2"]
        assert len(read_csv(out / "explained_variance.csv")) == 3

    def test_idempotent(self, synth, tmp_path):
        for name in ("a", "b"):
            assert main(["cluster", "--embeddings", str(synth / "embeddings.eng.tsv"), "--dim", "8",
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "dendrogram.nwk").read_bytes() == \
            (tmp_path / "b" / "dendrogram.nwk").read_bytes()

    def test_wrong_dim_is_input_error(self, synth, tmp_path, capsys):
        assert main(["pca", "--embeddings", str(synth / "embeddings.eng.tsv"),
                     "--out", str(tmp_path / "p")]) == 2
        assert "expected 100 values" in capsys.readouterr().err


def test_console_script():
    exe = shutil.which("glassrec")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("train", "recommend", "evaluate", "gridsearch", "cluster", "pca", "synth"):
        assert name in res.stdout
