import json
import os

import numpy as np
import pytest

from coretune.cli import main


@pytest.fixture()
def workdir(tmp_path):
    rng = np.random.default_rng(0)
    n, d = 240, 4
    n_pos = 72
    X = np.vstack([rng.normal(-0.8, 1.0, size=(n - n_pos, d)),
                   rng.normal(0.8, 1.0, size=(n_pos, d))])
    y = np.array([0] * (n - n_pos) + [1] * n_pos)
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    lines = ["f0,f1,f2,f3,label"]
    lines += [",".join(repr(float(v)) for v in row) + f",{label}"
              for row, label in zip(X, y)]
    data_path = tmp_path / "data.csv"
    data_path.write_text("\n".join(lines) + "\n")
    config = {
        "dataset": {"path": str(data_path), "format": "csv",
                    "label_column": "label"},
        "split": {"fractions": [0.7, 0.15, 0.15], "seed": 3},
        "sensitivity": {"provider": "leverage", "params": {"mix": 0.5}},
        "grid": {"coreset_ratios": [0.25, 0.4],
                 "det_ratios": [0.0, 0.2],
                 "weight_strategies": ["inv", "prop"],
                 "class_allocations": ["proportional", {"0": 0.5, "1": 0.5}],
                 "repeats": 1, "base_seed": 11},
        "train": {"loss": "logistic", "regularization": 1.0,
                  "tolerance": 1e-8, "max_iterations": 200,
                  "fit_intercept": True},
        "refine": {"batch_size": 8, "patience": 1, "metric": "f1"},
        "build": {"coreset_ratio": 0.25, "det_ratio": 0.2,
                  "weight_strategy": "inv", "seed": 5},
        "output_dir": str(tmp_path / "run"),
        "workers": 1,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=1))
    return tmp_path, str(config_path), config


def run(config_path, command, *extra):
    return main([command, "--config", config_path, *extra])


class TestPipeline:
    def test_full_pipeline_and_artifacts(self, workdir):
        tmp_path, config_path, config = workdir
        out = tmp_path / "run"
        assert run(config_path, "split") == 0
        assert (out / "splits" / "manifest.json").exists()
        assert (out / "splits" / "train.libsvm").exists()

        assert run(config_path, "score") == 0
        scores_text = (out / "scores.csv").read_text()
        assert scores_text.startswith("# config_hash=")
        assert "point_id,sensitivity,probability" in scores_text

        assert run(config_path, "build") == 0
        coreset_text = (out / "coreset.csv").read_text()
        assert "point_id,class,weight,provenance,count" in coreset_text

        assert run(config_path, "tune") == 0
        assert (out / "trials.csv").exists()
        best = json.loads((out / "best_config.json").read_text())
        assert "sampler" in best and "validation" in best

        assert run(config_path, "refine") == 0
        assert (out / "refined_coreset.csv").exists()
        trace = (out / "refine_trace.csv").read_text()
        assert "round,pool_size,phi_before,phi_after,patience,decision" in trace

        assert run(config_path, "report") == 0
        comparison = (out / "comparison.csv").read_text()
        assert "method,split,balanced_accuracy,f1,roc_auc" in comparison
        assert comparison.count("full,") == 2
        curves = (out / "curves.csv").read_text()
        assert "coreset_ratio,method,split,f1" in curves

    def test_build_is_byte_reproducible(self, workdir):
        tmp_path, config_path, _ = workdir
        out = tmp_path / "run"
        assert run(config_path, "split") == 0
        assert run(config_path, "build") == 0
        first = (out / "coreset.csv").read_bytes()
        assert run(config_path, "build") == 0
        assert (out / "coreset.csv").read_bytes() == first

    def test_tune_is_byte_reproducible(self, workdir):
        tmp_path, config_path, _ = workdir
        out = tmp_path / "run"
        assert run(config_path, "split") == 0
        assert run(config_path, "tune") == 0
        first = (out / "trials.csv").read_bytes()
        assert run(config_path, "tune") == 0
        assert (out / "trials.csv").read_bytes() == first

    def test_config_hash_consistent_across_artifacts(self, workdir):
        tmp_path, config_path, _ = workdir
        out = tmp_path / "run"
        run(config_path, "split")
        run(config_path, "score")
        run(config_path, "build")
        hash_from_scores = (out / "scores.csv").read_text().splitlines()[0]
        hash_from_coreset = (out / "coreset.csv").read_text().splitlines()[0]
        assert hash_from_scores.split("=")[1] == \
            hash_from_coreset.split("=")[1].split()[0]
        manifest = json.loads((out / "splits" / "manifest.json").read_text())
        assert manifest["config_hash"] == hash_from_scores.split("=")[1]


class TestSparseLibsvmPipeline:
    def test_one_hot_data_with_lewis_and_hinge(self, tmp_path):
        import scipy.sparse as sp

        from coretune.data import Dataset, parse_libsvm, write_libsvm

        rng = np.random.default_rng(0)
        n, d = 400, 40
        X = np.zeros((n, d))
        for i in range(n):
            X[i, rng.choice(d, size=5, replace=False)] = 1.0
        logits = X @ rng.normal(size=d) * 0.8 - 0.5
        y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(int)
        data_path = tmp_path / "sparse.libsvm"
        write_libsvm(Dataset(X, y), data_path)
        assert sp.issparse(parse_libsvm(str(data_path)).features)

        config = {
            "dataset": {"path": str(data_path), "format": "libsvm"},
            "split": {"fractions": [0.7, 0.15, 0.15], "seed": 1},
            "sensitivity": {"provider": "lewis", "params": {"mix": 0.5}},
            "grid": {"coreset_ratios": [0.3], "det_ratios": [0.0, 0.2],
                     "weight_strategies": ["inv", "keep"],
                     "class_allocations": ["proportional"],
                     "repeats": 1, "base_seed": 0},
            "train": {"loss": "hinge", "regularization": 1.0,
                      "tolerance": 1e-8, "max_iterations": 200,
                      "fit_intercept": True},
            "refine": {"batch_size": 20, "patience": 1,
                       "metric": "balanced_accuracy"},
            "output_dir": str(tmp_path / "run"),
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        for command in ("split", "score", "build", "tune", "refine", "report"):
            assert run(str(config_path), command) == 0, command


class TestErrorsAndExitCodes:
    def test_report_before_tune(self, workdir, capsys):
        _, config_path, _ = workdir
        assert run(config_path, "split") == 0
        assert run(config_path, "report") == 2
        assert "run the tune command first" in capsys.readouterr().err

    def test_score_before_split(self, workdir, capsys):
        _, config_path, _ = workdir
        assert run(config_path, "score") == 2
        assert "run the split command first" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert main(["split", "--config", "/nonexistent/config.json"]) == 1
        assert "config" in capsys.readouterr().err

    def test_invalid_config_field(self, workdir, capsys):
        tmp_path, config_path, config = workdir
        bad = dict(config)
        bad["dataset"] = {"path": config["dataset"]["path"], "format": "parquet"}
        bad_path = tmp_path / "bad.json"
        bad_path.write_text(json.dumps(bad))
        assert main(["split", "--config", str(bad_path)]) == 1
        assert "dataset.format" in capsys.readouterr().err

    def test_missing_field_names_path(self, workdir, capsys):
        tmp_path, config_path, config = workdir
        bad = {k: v for k, v in config.items() if k != "output_dir"}
        bad_path = tmp_path / "bad2.json"
        bad_path.write_text(json.dumps(bad))
        assert main(["split", "--config", str(bad_path)]) == 1
        assert "output_dir" in capsys.readouterr().err

    def test_usage_error_unknown_command(self, capsys):
        assert main(["tame", "--config", "x.json"]) == 1

    def test_partial_grid_exit_code(self, workdir):
        tmp_path, config_path, config = workdir
        partial = dict(config)
        partial["grid"] = {"coreset_ratios": [0.25],
                           "det_ratios": [0.0],
                           "weight_strategies": ["inv"],
                           "class_allocations": [{"0": 1.0}],
                           "repeats": 1, "base_seed": 11}
        partial_path = tmp_path / "partial.json"
        partial_path.write_text(json.dumps(partial))
        assert run(str(partial_path), "split") == 0
        assert run(str(partial_path), "tune") == 3

    def test_dataset_file_missing(self, workdir, capsys):
        tmp_path, config_path, config = workdir
        bad = dict(config)
        bad["dataset"] = dict(config["dataset"], path=str(tmp_path / "nope.csv"))
        bad_path = tmp_path / "bad3.json"
        bad_path.write_text(json.dumps(bad))
        assert main(["split", "--config", str(bad_path)]) == 1


class TestOverrides:
    def test_override_changes_hash_and_behavior(self, workdir):
        tmp_path, config_path, _ = workdir
        out = tmp_path / "run"
        run(config_path, "split")
        run(config_path, "build")
        base = (out / "coreset.csv").read_text()
        assert run(config_path, "build", "--override",
                   "build.det_ratio=0.4") == 0
        overridden = (out / "coreset.csv").read_text()
        assert base != overridden
        assert base.splitlines()[0] != overridden.splitlines()[0]  # hash moved

    def test_seed_flag_rewrites_seeds(self, workdir):
        tmp_path, config_path, _ = workdir
        out = tmp_path / "run"
        run(config_path, "split")
        run(config_path, "build")
        base = (out / "coreset.csv").read_text()
        assert run(config_path, "build", "--seed", "99") == 0
        assert (out / "coreset.csv").read_text() != base

    def test_override_requires_key_value(self, workdir, capsys):
        _, config_path, _ = workdir
        assert run(config_path, "build", "--override", "det_ratio") == 1
        assert "key=value" in capsys.readouterr().err
