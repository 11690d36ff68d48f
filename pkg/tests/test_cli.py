import json
import math

import numpy as np
import pytest

from perturbkit.classify import MarginContext, feasibility_bound
from perturbkit.cli import main, parse_loss, parse_p
from perturbkit.data import make_blobs, make_patterns
from perturbkit.model import (
    Dataset,
    Example,
    forward,
    linear_model,
    load_model,
    save_dataset,
    save_model,
)
from perturbkit.regress import Partition, save_partition
from perturbkit.train import NetSpec, train_toy


@pytest.fixture
def linear_setup(tmp_path):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((2, 3))
    model = linear_model(w)
    examples = []
    for _ in range(12):
        x = rng.standard_normal(3)
        examples.append(Example(x, label=int(np.argmax(w @ x))))
    model_path = tmp_path / "model.json"
    data_path = tmp_path / "data.json"
    save_model(model, model_path)
    save_dataset(Dataset(examples), data_path)
    return model, model_path, data_path, tmp_path


@pytest.fixture
def regression_setup(tmp_path):
    data = make_patterns(6, dim=8, seed=1)
    result = train_toy(NetSpec((8, 4, 8), activation="tanh"), data, 150, 0.1, seed=0)
    model_path = tmp_path / "ae.json"
    data_path = tmp_path / "patterns.json"
    save_model(result.model, model_path)
    save_dataset(data, data_path)
    part_path = tmp_path / "part.json"
    save_partition(Partition.contiguous(8, 2), part_path)
    return model_path, data_path, part_path, tmp_path


class TestParsers:
    def test_parse_p(self):
        assert parse_p("inf") == math.inf
        assert parse_p("2") == 2.0
        assert abs(parse_p("4/3") - 4.0 / 3.0) < 1e-15
        with pytest.raises(ValueError):
            parse_p("0.5")

    def test_parse_loss(self):
        assert parse_loss("cross-entropy") == ("cross_entropy", None)
        assert parse_loss("targeted:3") == ("targeted", 3)
        assert parse_loss(None) == (None, None)
        with pytest.raises(ValueError):
            parse_loss("fancy")


class TestAttackCommand:
    def test_jsonl_one_record_per_example(self, linear_setup, tmp_path):
        _, model_path, data_path, _ = linear_setup
        out = tmp_path / "out.jsonl"
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "gnm", "--p", "inf", "--eps", "0.1", "--seed", "0",
            "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 12
        rec = json.loads(lines[0])
        assert rec["index"] == 0
        assert rec["attack"] == "gnm"
        assert {"eta", "success", "norms", "loss_before", "loss_after"} <= set(rec)

    def test_unknown_attack_lists_names(self, linear_setup, capsys):
        _, model_path, data_path, _ = linear_setup
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "foo",
        ])
        assert code == 2
        err = capsys.readouterr().err
        assert "gnm" in err and "deepfool" in err

    def test_pgd_configuration(self, linear_setup, tmp_path):
        _, model_path, data_path, _ = linear_setup
        out = tmp_path / "pgd.jsonl"
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "pgd", "--T", "10", "--dither", "first=eps",
            "--eps", "0.2", "--out", str(out),
        ])
        assert code == 0
        assert len(out.read_text().strip().split("\n")) == 12

    def test_byte_identical_reruns(self, linear_setup, tmp_path):
        _, model_path, data_path, _ = linear_setup
        args = [
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "pgd", "--T", "5", "--eps", "0.3", "--seed", "7",
        ]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_regression_attack(self, regression_setup, tmp_path):
        model_path, data_path, part_path, _ = regression_setup
        out = tmp_path / "quad.jsonl"
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "quad-l2", "--p", "2", "--eps", "0.05", "--out", str(out),
        ])
        assert code == 0
        rec = json.loads(out.read_text().strip().split("\n")[0])
        assert rec["predicted_class_after"] is None
        assert rec["loss_after"] >= rec["loss_before"]

    def test_subset_attack_requires_partition(self, regression_setup, capsys):
        model_path, data_path, part_path, _ = regression_setup
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "subset-lin", "--eps", "0.05",
        ])
        assert code == 2
        assert "partition" in capsys.readouterr().err

    def test_module_errors_surface_with_example_index(self, regression_setup, tmp_path, capsys):
        model_path, _, part_path, _ = regression_setup
        # no targets and no dither: the gradient is exactly zero at example 0
        data_path = tmp_path / "untargeted.json"
        data_path.write_text(json.dumps({"examples": [{"x": [0.1] * 8}]}))
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "subset-lin", "--partition", str(part_path),
            "--eps", "0.05", "--dither", "none",
        ])
        assert code == 2
        assert "example 0" in capsys.readouterr().err

    def test_multi_subset_with_partition(self, regression_setup, tmp_path):
        model_path, data_path, part_path, _ = regression_setup
        out = tmp_path / "multi.jsonl"
        code = main([
            "attack", "--model", str(model_path), "--data", str(data_path),
            "--attack", "multi-subset", "--partition", str(part_path),
            "--T", "2", "--eps", "0.05", "--out", str(out),
        ])
        assert code == 0
        rec = json.loads(out.read_text().strip().split("\n")[0])
        eta = np.array(rec["eta"])
        assert np.sum(np.abs(eta) == 0.05) == 4  # two subsets of two indices


class TestSweepCommand:
    def test_zero_eps_row_is_zero(self, linear_setup, tmp_path):
        _, model_path, data_path, _ = linear_setup
        out = tmp_path / "sweep.csv"
        code = main([
            "sweep", "--model", str(model_path), "--data", str(data_path),
            "--attack", "gnm,random", "--eps-list", "0,0.5,1.0",
            "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[1] == "attack,eps,fooling_ratio"
        rows = [l.split(",") for l in lines[2:]]
        assert len(rows) == 6
        for row in rows:
            if float(row[1]) == 0.0:
                assert float(row[2]) == 0.0

    def test_regression_sweep_reports_psnr(self, regression_setup, tmp_path):
        model_path, data_path, _, _ = regression_setup
        out = tmp_path / "sweep.csv"
        code = main([
            "sweep", "--model", str(model_path), "--data", str(data_path),
            "--attack", "quad-l2,random", "--p", "2",
            "--eps-list", "0.02,0.1,0.4", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[1] == "attack,eps,mean_psnr_db"
        quad = [l.split(",") for l in lines[2:] if l.startswith("quad-l2")]
        psnrs = [float(r[2]) for r in quad]
        assert psnrs == sorted(psnrs, reverse=True)  # degrades as eps grows


class TestRobustnessCommand:
    def test_linear_fixture_matches_analytic(self, linear_setup, tmp_path):
        model, model_path, data_path, _ = linear_setup
        out = tmp_path / "rob.json"
        code = main([
            "robustness", "--model", str(model_path), "--data", str(data_path),
            "--p", "inf", "--eps-list", "0.1,0.5,1,2,5,20", "--out", str(out),
        ])
        assert code == 0
        summary = json.loads(out.read_text())
        from perturbkit.model import load_dataset, predict

        bounds = []
        loaded = load_dataset(data_path)
        for ex in loaded:
            if predict(model, ex.x) == ex.label:
                bounds.append(feasibility_bound(MarginContext.build(model, ex.x), math.inf))
        assert abs(summary["rho2"] - np.mean(bounds)) <= 1e-9 * max(np.mean(bounds), 1)
        assert summary["min_eps_99"] is not None

    def test_empty_dataset_is_config_error(self, linear_setup, tmp_path):
        _, model_path, _, _ = linear_setup
        empty = tmp_path / "empty.json"
        empty.write_text('{"examples": []}')
        code = main([
            "robustness", "--model", str(model_path), "--data", str(empty),
            "--p", "inf", "--eps-list", "0.1",
        ])
        assert code == 2


class TestTrainCommand:
    def test_trains_and_reports_accuracy(self, tmp_path, capsys):
        data_path = tmp_path / "blobs.json"
        save_dataset(make_blobs(120, n_classes=2, dim=2, seed=0), data_path)
        model_path = tmp_path / "trained.json"
        code = main([
            "train-toy", "--sizes", "2,16,2", "--data", str(data_path),
            "--epochs", "300", "--lr", "0.2", "--seed", "0",
            "--out", str(model_path),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "accuracy=" in printed
        accuracy = float(printed.split("accuracy=")[1].strip())
        assert accuracy >= 0.95
        assert model_path.exists()

    def test_zero_epochs_equals_initialization(self, tmp_path):
        data_path = tmp_path / "blobs.json"
        save_dataset(make_blobs(50, n_classes=2, dim=2, seed=1), data_path)
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (out_a, out_b):
            assert main([
                "train-toy", "--sizes", "2,8,2", "--data", str(data_path),
                "--epochs", "0", "--lr", "0.5", "--seed", "9", "--out", str(out),
            ]) == 0
        a, b = load_model(out_a), load_model(out_b)
        x = np.array([0.4, -0.2])
        assert np.array_equal(forward(a, x), forward(b, x))

    def test_broken_size_chain_is_config_error(self, tmp_path, capsys):
        data_path = tmp_path / "blobs.json"
        save_dataset(make_blobs(20, n_classes=2, dim=2, seed=2), data_path)
        code = main([
            "train-toy", "--sizes", "3,8,2", "--data", str(data_path),
            "--epochs", "5", "--lr", "0.1", "--seed", "0",
            "--out", str(tmp_path / "x.json"),
        ])
        assert code == 2

    def test_divergence_exit_code(self, tmp_path):
        data_path = tmp_path / "blobs.json"
        save_dataset(make_blobs(50, n_classes=2, dim=2, seed=3), data_path)
        code = main([
            "train-toy", "--sizes", "2,8,2", "--data", str(data_path),
            "--epochs", "500", "--lr", "1e9", "--seed", "0",
            "--out", str(tmp_path / "x.json"),
        ])
        assert code == 3
