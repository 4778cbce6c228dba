import json
from pathlib import Path

import pytest

from detrefine.cli import main

CONFIG_TEXT = """
# tiny profile for CLI tests
num_classes = 4
feature_channels = 8
feature_height = 2
feature_width = 2
head_hidden = 16
down_channels = 4
embed_dim = 4
gcn1_channels = 4
gcn2_channels = 2
star_hidden = 16
mc_passes = 6
dropout_ratio = 0.2
spatial_threshold = 110.0
semantic_threshold = 20.0
edge_weight_mode = diag_over_dist
epochs = 2
batch_scenes = 2
learning_rate = 0.0003
weight_decay = 0.0
seed = 3
confusable_pairs = 0:1
clusters_min = 2
clusters_max = 2
ambiguous_min = 2
ambiguous_max = 2
context_min = 2
context_max = 3
degraded_min = 1
degraded_max = 1
background_min = 2
background_max = 3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(CONFIG_TEXT)
    return root, cfg


@pytest.fixture(scope="module")
def dataset(workdir):
    root, cfg = workdir
    data = root / "tiny.scenes"
    code = main(["gen-synthetic", "--config", str(cfg), "--seed", "9",
                 "--scenes", "4", "--out", str(data)])
    assert code == 0
    return data


@pytest.fixture(scope="module")
def checkpoint(workdir, dataset):
    root, cfg = workdir
    ckpt = root / "model.ckpt"
    metrics = root / "metrics.tsv"
    code = main(["train", "--config", str(cfg), "--dataset", str(dataset),
                 "--checkpoint-out", str(ckpt), "--metrics-out", str(metrics)])
    assert code == 0
    return ckpt


class TestGenSynthetic:
    def test_binary_and_index_written(self, dataset):
        assert dataset.exists()
        assert Path(str(dataset) + ".idx").exists()

    def test_text_variant(self, workdir):
        root, cfg = workdir
        out = root / "tiny.json"
        code = main(["gen-synthetic", "--config", str(cfg), "--seed", "9",
                     "--scenes", "2", "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["format"] == "scene-records"
        assert len(payload["scenes"]) == 2


class TestTrain:
    def test_outputs_exist(self, workdir, checkpoint):
        root, _ = workdir
        assert checkpoint.exists()
        metrics = root / "metrics.tsv"
        assert metrics.exists()
        header, *rows = metrics.read_text().strip().splitlines()
        assert header.split("\t") == ["epoch", "detection_loss",
                                      "refinement_loss", "combined_loss"]
        assert len(rows) == 2
        assert (root / "metrics.png").exists()


class TestEval:
    def test_report_and_figures(self, workdir, dataset, checkpoint):
        root, cfg = workdir
        prefix = root / "reports" / "eval"
        code = main(["eval", "--config", str(cfg), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--report-out", str(prefix)])
        assert code == 0
        txt = (root / "reports" / "eval.txt").read_text()
        assert "map\t" in txt and "baseline_map\t" in txt
        tsv = (root / "reports" / "eval.tsv").read_text()
        assert tsv.startswith("class\tname\tap\tbaseline_ap")
        assert (root / "reports" / "eval_pr_curves.png").exists()
        assert (root / "reports" / "eval_uncertainty.png").exists()

    def test_workers_flag_gives_same_report(self, workdir, dataset, checkpoint):
        root, cfg = workdir
        p1 = root / "reports" / "w1"
        p2 = root / "reports" / "w2"
        assert main(["eval", "--config", str(cfg), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--report-out", str(p1),
                     "--workers", "1"]) == 0
        assert main(["eval", "--config", str(cfg), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--report-out", str(p2),
                     "--workers", "3"]) == 0
        assert (root / "reports" / "w1.txt").read_text() == \
            (root / "reports" / "w2.txt").read_text()


class TestRefine:
    def test_detections_tsv(self, workdir, dataset, checkpoint):
        root, cfg = workdir
        out = root / "dets.tsv"
        code = main(["refine", "--config", str(cfg), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        cols = lines[0].split("\t")
        assert cols[:5] == ["scene_id", "proposal_id", "class_id", "class_name", "score"]
        assert len(lines) > 1
        row = lines[1].split("\t")
        assert row[11] in ("0", "1")
        float(row[4])  # score parses


class TestDumpGraph:
    def test_edges_and_figure(self, workdir, dataset, checkpoint):
        root, cfg = workdir
        prefix = root / "graphs" / "scene0"
        code = main(["dump-graph", "--config", str(cfg), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--scene", "0",
                     "--out", str(prefix)])
        assert code == 0
        edges = (root / "graphs" / "scene0.edges.txt").read_text()
        for line in edges.strip().splitlines():
            parts = line.split(" ")
            assert len(parts) == 5
            int(parts[0]), int(parts[1])
            float(parts[2]), float(parts[3]), float(parts[4])
        assert (root / "graphs" / "scene0.png").exists()

    def test_unknown_scene_is_input_error(self, workdir, dataset, checkpoint):
        root, cfg = workdir
        code = main(["dump-graph", "--config", str(cfg), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--scene", "zzz",
                     "--out", str(root / "g")])
        assert code == 1


class TestExitCodes:
    def test_missing_dataset_is_exit_1(self, workdir, checkpoint):
        root, cfg = workdir
        code = main(["eval", "--config", str(cfg), "--dataset",
                     str(root / "missing.scenes"), "--checkpoint",
                     str(checkpoint), "--report-out", str(root / "r")])
        assert code == 1

    def test_bad_cli_usage_is_exit_1(self):
        assert main(["train"]) == 1  # missing required arguments

    def test_config_checkpoint_mismatch_is_exit_1(self, workdir, dataset, checkpoint):
        root, cfg = workdir
        other = root / "other.cfg"
        other.write_text(CONFIG_TEXT.replace("head_hidden = 16", "head_hidden = 32"))
        code = main(["eval", "--config", str(other), "--dataset", str(dataset),
                     "--checkpoint", str(checkpoint), "--report-out",
                     str(root / "r2")])
        assert code == 1
