import json

import numpy as np
import pytest
from scipy.special import expit

from coenet import cli
from coenet.cli import ModelFile, main, read_table
from coenet.metrics import auc, brier_skill, cohens_kappa, mse_coefficients
from coenet.vb import predict_probability


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    n, p = 40, 6
    x = rng.standard_normal((n, p)) * 2 + 1
    z = rng.standard_normal(n)
    y = (rng.random(n) < expit(1.5 * x[:, 0] - x[:, 1] + 0.5 * z)).astype(int)
    ids = [f"s{i}" for i in range(n)]
    names = [f"f{j}" for j in range(p)]
    cli.write_matrix(tmp_path / "X.csv", ids, names + ["age"], np.column_stack([x, z]))
    # responses deliberately in a different row order
    order = rng.permutation(n)
    cli.write_table(tmp_path / "y.csv", ["id", "y"], [(ids[i], int(y[i])) for i in order])
    part = {"partitions": [{"name": "prior", "groups": {f: ("a" if j < 3 else "b") for j, f in enumerate(names)}, "monotone": None}]}
    (tmp_path / "p.json").write_text(json.dumps(part))
    return tmp_path


def run_fit(d, *extra):
    return main(
        [
            "fit",
            "--features", str(d / "X.csv"),
            "--response", str(d / "y.csv"),
            "--partitions", str(d / "p.json"),
            "--unpenalized", "age",
            "--folds", "5",
            "--n-lambda", "20",
            "--out", str(d / "model.json"),
            *extra,
        ]
    )


@pytest.fixture
def env(monkeypatch):
    monkeypatch.setenv("COENET_EM_MAX_OUTER", "400")


class TestFit:
    def test_happy_path_and_round_trip(self, files, env):
        assert run_fit(files, "--select", "2") == 0
        text = (files / "model.json").read_text()
        model = ModelFile.read(files / "model.json")
        assert model.dumps() == text
        model.write(files / "again.json")
        assert (files / "again.json").read_bytes() == (files / "model.json").read_bytes()
        assert model.selected["k"] == 2 and model.selected["achieved"] == 2
        assert model.unpenalized_names == ["(intercept)", "age"]
        m = model.partitions[0]
        assert m["labels"] == ["a", "b"]
        assert abs(np.dot(m["sizes"], np.log(m["multipliers"]))) < 1e-8
        assert model.diagnostics["em_converged"] and model.config["seed"] == 0

    def test_deterministic(self, files, env):
        assert run_fit(files) == 0
        first = (files / "model.json").read_bytes()
        assert run_fit(files) == 0
        assert (files / "model.json").read_bytes() == first

    def test_unknown_feature(self, files, env, capsys):
        doc = json.loads((files / "p.json").read_text())
        doc["partitions"][0]["groups"]["ghost"] = "a"
        (files / "p.json").write_text(json.dumps(doc))
        assert run_fit(files) == 2
        assert "ghost" in capsys.readouterr().err

    def test_dimension_mismatch(self, files, env):
        lines = (files / "y.csv").read_text().splitlines()
        (files / "y.csv").write_text("\n".join(lines[:-1]) + "\n")
        assert run_fit(files) == 2

    def test_convergence_failure(self, files, monkeypatch, capsys):
        monkeypatch.setenv("COENET_EM_MAX_OUTER", "1")
        assert run_fit(files) == 3
        assert "diagnostics" in capsys.readouterr().err
        assert (files / "model.json.diagnostics.json").exists()

    def test_bad_environment(self, files, monkeypatch):
        monkeypatch.setenv("COENET_VB_TOL", "tight")
        assert run_fit(files) == 2

    def test_loocv_and_fixed_lambda(self, files, env):
        assert run_fit(files, "--folds", "loo") == 0
        assert run_fit(files, "--lambda", "2.0") == 0
        assert ModelFile.read(files / "model.json").lambda_global == 2.0

    def test_bad_flags(self, files):
        assert main(["fit", "--features", "x"]) == 2
        assert main(["fit", "--features", "nope.csv", "--response", "nope.csv", "--out", "m.json"]) == 2


class TestPredict:
    def test_matches_library(self, files, env):
        assert run_fit(files) == 0
        assert main(["predict", "--model", str(files / "model.json"), "--features", str(files / "X.csv"), "--out", str(files / "pred.csv")]) == 0
        pred = read_table(files / "pred.csv")
        model = ModelFile.read(files / "model.json")
        feats = read_table(files / "X.csv")
        expect = predict_probability(model.to_coefficients(), feats.take(model.feature_names), feats.take(["age"]))
        assert pred.ids == feats.ids
        np.testing.assert_array_equal(pred.column("probability"), expect)

    def test_null_model(self, files, env):
        assert run_fit(files, "--lambda", "1e6") == 0
        model = ModelFile.read(files / "model.json")
        doc = model.to_dict()
        doc["coefficients"]["unpenalized"] = {k: 0.0 for k in doc["coefficients"]["unpenalized"]}
        (files / "null.json").write_text(json.dumps(doc))
        assert main(["predict", "--model", str(files / "null.json"), "--features", str(files / "X.csv"), "--out", str(files / "p.csv")]) == 0
        np.testing.assert_array_equal(read_table(files / "p.csv").column("probability"), 0.5)

    def test_missing_feature(self, files, env):
        assert run_fit(files) == 0
        feats = read_table(files / "X.csv")
        cli.write_matrix(files / "X2.csv", feats.ids, feats.columns[1:], feats.values[:, 1:])
        assert main(["predict", "--model", str(files / "model.json"), "--features", str(files / "X2.csv"), "--out", str(files / "p.csv")]) == 2

    def test_schema_version_checked(self, files, env):
        assert run_fit(files) == 0
        doc = json.loads((files / "model.json").read_text())
        doc["schema_version"] = 99
        (files / "bad.json").write_text(json.dumps(doc))
        assert main(["predict", "--model", str(files / "bad.json"), "--features", str(files / "X.csv"), "--out", str(files / "p.csv")]) == 2


SMALL = {"n": 40, "n_test": 30, "p": 20, "block_size": 5, "group_sizes": [5, 5, 5, 5]}


class TestSimulate:
    def test_deterministic_directory(self, tmp_path, env):
        (tmp_path / "sc.json").write_text(json.dumps(SMALL))
        outs = []
        for k in range(2):
            out = tmp_path / f"sim{k}"
            args = ["simulate", "--scenario", "paper-sec5", "--scenario-json", str(tmp_path / "sc.json"), "--reps", "2", "--seed", "7", "--run-methods", "--folds", "5", "--out", str(out)]
            assert main(args) == 0
            outs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        assert outs[0] == outs[1]
        header = outs[0][next(k for k in outs[0] if k.name == "curves.csv")].decode().splitlines()[0].split(",")
        assert header[:8] == ["repeat", "method", "alpha", "model_size", "kappa", "mse", "auc", "bss"]
        assert {"kappa_loess", "auc_loess"} <= set(header)

    def test_replicate_files_feed_fit(self, tmp_path, env):
        (tmp_path / "sc.json").write_text(json.dumps(SMALL))
        out = tmp_path / "sim"
        assert main(["simulate", "--scenario-json", str(tmp_path / "sc.json"), "--reps", "1", "--out", str(out)]) == 0
        rep = out / "rep000"
        assert main(["fit", "--features", str(rep / "train_features.csv"), "--response", str(rep / "train_response.csv"), "--partitions", str(rep / "partitions.json"), "--folds", "5", "--out", str(tmp_path / "m.json")]) == 0
        assert main(["predict", "--model", str(tmp_path / "m.json"), "--features", str(rep / "test_features.csv"), "--out", str(tmp_path / "p.csv")]) == 0
        assert main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--outcomes", str(rep / "test_response.csv"), "--truth", str(rep / "truth.csv"), "--model", str(tmp_path / "m.json"), "--out", str(tmp_path / "metrics.json")]) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert set(metrics) == {"n", "auc", "bss", "kappa", "mse"}

    def test_random_groups(self, tmp_path, env):
        (tmp_path / "sc.json").write_text(json.dumps({"n": 30, "n_test": 5, "p": 20, "block_size": 5}))
        out = tmp_path / "rg"
        args = ["simulate", "--scenario", "random-groups", "--scenario-json", str(tmp_path / "sc.json"), "--groups", "5,5,10", "--reps", "2", "--folds", "5", "--out", str(out)]
        assert main(args) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["median_multipliers"]) == 3
        assert main(args[:-2] + ["--groups", "5,5", "--out", str(out)]) == 2

    def test_alias_same_output(self, tmp_path):
        (tmp_path / "sc.json").write_text(json.dumps(SMALL))
        outs = []
        for name in ("four-group", "paper-sec5"):
            out = tmp_path / name
            assert main(["simulate", "--scenario", name, "--scenario-json", str(tmp_path / "sc.json"), "--reps", "1", "--out", str(out)]) == 0
            outs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        assert outs[0] == outs[1]

    def test_invalid(self, tmp_path):
        assert main(["simulate", "--reps", "0", "--out", str(tmp_path / "x")]) == 2
        (tmp_path / "sc.json").write_text(json.dumps({"p": 999}))
        assert main(["simulate", "--scenario-json", str(tmp_path / "sc.json"), "--reps", "1", "--out", str(tmp_path / "x")]) == 2
        (tmp_path / "sc.json").write_text(json.dumps({"colour": 1}))
        assert main(["simulate", "--scenario-json", str(tmp_path / "sc.json"), "--reps", "1", "--out", str(tmp_path / "x")]) == 2


class TestEvaluate:
    def write(self, d, prob, y, ids=None):
        ids = ids or [f"r{i}" for i in range(len(y))]
        cli.write_table(d / "pred.csv", ["id", "probability"], zip(ids, map(float, prob)))
        cli.write_table(d / "obs.csv", ["id", "y"], zip([f"r{i}" for i in range(len(y))], y))

    def evaluate(self, d):
        code = main(["evaluate", "--predictions", str(d / "pred.csv"), "--outcomes", str(d / "obs.csv"), "--out", str(d / "m.json")])
        return code, (json.loads((d / "m.json").read_text()) if code == 0 else None)

    def test_perfect(self, tmp_path):
        self.write(tmp_path, [1.0, 0.0, 1.0, 0.0], [1, 0, 1, 0])
        code, m = self.evaluate(tmp_path)
        assert code == 0 and m["auc"] == 1.0 and m["bss"] == 1.0

    def test_reference(self, tmp_path):
        self.write(tmp_path, [0.5] * 4, [1, 0, 1, 0])
        assert self.evaluate(tmp_path)[1]["bss"] == 0.0

    def test_equals_library(self, tmp_path):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 50)
        y[:2] = [0, 1]
        prob = rng.random(50)
        self.write(tmp_path, prob, y)
        m = self.evaluate(tmp_path)[1]
        assert m["auc"] == auc(prob, y) and m["bss"] == brier_skill(prob, y)

    def test_misaligned(self, tmp_path):
        self.write(tmp_path, [0.2, 0.8], [0, 1], ids=["r0", "zz"])
        assert self.evaluate(tmp_path)[0] == 2

    def test_kappa_mse_with_truth(self, files, env):
        assert run_fit(files) == 0
        model = ModelFile.read(files / "model.json")
        beta = np.array([1.0, -1.0, 0.0, 0.0, 0.0, 0.0])
        cli.write_table(files / "truth.csv", ["feature", "beta"], zip(model.feature_names, map(float, beta)))
        assert main(["predict", "--model", str(files / "model.json"), "--features", str(files / "X.csv"), "--out", str(files / "p.csv")]) == 0
        out = cli.evaluate_files(files / "p.csv", files / "y.csv", files / "truth.csv", files / "model.json")
        coef = model.to_coefficients()
        assert out["kappa"] == float(cohens_kappa(coef.active, beta != 0))
        assert out["mse"] == mse_coefficients(coef.raw_penalized(), beta)
        with pytest.raises(cli.ValidationError):
            cli.evaluate_files(files / "p.csv", files / "y.csv", files / "truth.csv")
