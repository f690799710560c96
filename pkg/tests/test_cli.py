"""CLI tests: every subcommand end to end through main(), exit-code
mapping, config file + flag override semantics, and the gradcheck
fault-injection hook."""

import json

import numpy as np
import pytest

from prgdistill.cli import (EXIT_GRADCHECK, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE,
                            RunConfig, main, run_gradcheck_suite)
from prgdistill.errors import ValidationError


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundles") / "synth"
    code = main(["synth", "--out", str(path), "--classes", "3", "--prompts", "2",
                 "--dim", "8", "--input-dim", "10", "--per-class", "20",
                 "--noise", "0.3", "--seed", "5"])
    assert code == EXIT_OK
    return path


def _train_args(bundle_dir, out, extra=()):
    return ["train", "--bundle", str(bundle_dir), "--out", str(out),
            "--epochs", "2", "--batch-size", "16", "--backbone-hidden", "16",
            "--feature-dim", "12", *extra]


class TestSynth:
    def test_writes_valid_bundle(self, bundle_dir):
        manifest = json.loads((bundle_dir / "manifest.json").read_text())
        assert manifest["n_classes"] == 3
        assert manifest["n_prompts"] == 2
        assert manifest["n_samples"] == 60

    def test_bad_noise_exits_2(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path / "b"), "--classes", "3",
                     "--prompts", "2", "--dim", "8", "--input-dim", "10",
                     "--per-class", "5", "--noise", "0", "--seed", "1"])
        assert code == EXIT_USAGE
        assert "noise" in capsys.readouterr().err

    def test_repeat_same_seed_identical_bytes(self, tmp_path):
        args = ["synth", "--classes", "3", "--prompts", "2", "--dim", "8",
                "--input-dim", "10", "--per-class", "5", "--noise", "0.4",
                "--seed", "9"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        for name in ("manifest.json", "inputs.f32", "features.f32",
                     "text_embeddings.f32", "labels.i64"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes())


class TestTrain:
    def test_smoke_two_epochs(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(_train_args(bundle_dir, out)) == EXIT_OK
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert (out / "resolved_config.json").is_file()
        assert (out / "checkpoint" / "params.f64").is_file()
        stdout = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert stdout["epochs"] == 2
        history = json.loads((out / "history.json").read_text())
        assert all(r["label_accuracy"] is not None for r in history)

    def test_missing_bundle_exits_2(self, tmp_path):
        code = main(["train", "--bundle", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_USAGE

    def test_numeric_abort_exits_3(self, bundle_dir, tmp_path):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            code = main(_train_args(bundle_dir, tmp_path / "run",
                                    ["--lr-max", "1e9"]))
        assert code == EXIT_NUMERIC

    def test_config_file_with_flag_override(self, bundle_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochs": 1, "batch_size": 16, "seed": 3,
                                        "backbone_hidden": [16], "feature_dim": 12}))
        out = tmp_path / "run"
        code = main(["train", "--bundle", str(bundle_dir), "--out", str(out),
                     "--config", str(cfg_path), "--epochs", "2"])
        assert code == EXIT_OK
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["epochs"] == 2  # flag wins
        assert resolved["seed"] == 3    # file survives
        assert len((out / "metrics.jsonl").read_text().splitlines()) == 2

    def test_unknown_config_key_rejected(self, bundle_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochz": 1}))
        code = main(["train", "--bundle", str(bundle_dir),
                     "--out", str(tmp_path / "run"), "--config", str(cfg_path)])
        assert code == EXIT_USAGE

    def test_zero_lambda_prg_matches_ce_only_metrics(self, bundle_dir, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(_train_args(bundle_dir, out_a,
                                ["--mode", "prg", "--lambda-node", "0",
                                 "--lambda-edge", "0"])) == EXIT_OK
        assert main(_train_args(bundle_dir, out_b, ["--mode", "ce_only"])) == EXIT_OK
        rows_a = [json.loads(l) for l in (out_a / "metrics.jsonl").read_text().splitlines()]
        rows_b = [json.loads(l) for l in (out_b / "metrics.jsonl").read_text().splitlines()]
        for ra, rb in zip(rows_a, rows_b):
            ra.pop("seconds"), rb.pop("seconds")
            assert ra == rb

    def test_resume_continues_epoch_numbering(self, bundle_dir, tmp_path):
        out = tmp_path / "run"
        assert main(_train_args(bundle_dir, out)) == EXIT_OK
        code = main(["train", "--bundle", str(bundle_dir), "--out", str(out),
                     "--epochs", "4", "--batch-size", "16",
                     "--backbone-hidden", "16", "--feature-dim", "12",
                     "--resume", str(out / "checkpoint")])
        assert code == EXIT_OK
        epochs = [json.loads(l)["epoch"]
                  for l in (out / "metrics.jsonl").read_text().splitlines()]
        assert epochs == [0, 1, 2, 3]


class TestEval:
    def test_eval_prints_json(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(_train_args(bundle_dir, out)) == EXIT_OK
        capsys.readouterr()
        code = main(["eval", "--bundle", str(bundle_dir),
                     "--checkpoint", str(out / "checkpoint")])
        assert code == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert 0.0 <= result["teacher_agreement"] <= 1.0
        assert 0.0 <= result["label_accuracy"] <= 1.0

    def test_eval_train_split(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(_train_args(bundle_dir, out)) == EXIT_OK
        capsys.readouterr()
        code = main(["eval", "--bundle", str(bundle_dir),
                     "--checkpoint", str(out / "checkpoint"), "--split", "train"])
        assert code == EXIT_OK
        assert "teacher_agreement" in json.loads(capsys.readouterr().out)

    def test_missing_checkpoint_exits_2(self, bundle_dir, tmp_path):
        code = main(["eval", "--bundle", str(bundle_dir),
                     "--checkpoint", str(tmp_path / "nope")])
        assert code == EXIT_USAGE


class TestGradcheck:
    def test_quick_run_passes(self, capsys):
        code = main(["gradcheck", "--seeds", "2"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        for name in ("soft_cross_entropy", "node_alignment", "edge_alignment",
                     "total_prg", "kd_baseline"):
            assert name in out

    def test_fault_injection_exits_4(self, capsys):
        code = main(["gradcheck", "--seeds", "1", "--fault-inject"])
        assert code == EXIT_GRADCHECK
        assert "failed" in capsys.readouterr().err

    def test_coarse_step_still_small_error(self):
        errors = run_gradcheck_suite(n_seeds=1, h=1e-3)
        assert all(err < 1e-3 for err in errors.values())


class TestHeatmap:
    def test_writes_csvs_and_summary(self, bundle_dir, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(_train_args(bundle_dir, run)) == EXIT_OK
        out = tmp_path / "heat"
        code = main(["heatmap", "--bundle", str(bundle_dir),
                     "--checkpoint", str(run / "checkpoint"),
                     "--classes", "2", "--per-class", "3", "--out", str(out)])
        assert code == EXIT_OK
        teacher = np.loadtxt(out / "teacher_matrix.csv", delimiter=",")
        student = np.loadtxt(out / "student_matrix.csv", delimiter=",")
        assert teacher.shape == student.shape == (6, 6)
        np.testing.assert_allclose(np.diag(teacher), 1.0, atol=1e-12)
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"classes", "sample_indices",
                                "mean_offdiag_teacher", "mean_offdiag_student"}

    def test_too_many_per_class_exits_2(self, bundle_dir, tmp_path):
        run = tmp_path / "run"
        assert main(_train_args(bundle_dir, run)) == EXIT_OK
        code = main(["heatmap", "--bundle", str(bundle_dir),
                     "--checkpoint", str(run / "checkpoint"),
                     "--classes", "2", "--per-class", "999", "--out",
                     str(tmp_path / "heat")])
        assert code == EXIT_USAGE


class TestRunConfig:
    def test_defaults_match_training_defaults(self):
        cfg = RunConfig().train_config()
        assert cfg.batch_size == 64 and cfg.epochs == 150
        assert cfg.lr_max == 0.03 and cfg.t0 == 10 and cfg.t_mult == 2
        assert cfg.lambda_node == 0.4 and cfg.lambda_edge == 0.2

    def test_backbone_hidden_string_parse(self):
        cfg = RunConfig.from_sources(None, {"backbone_hidden": "32, 16"})
        assert cfg.backbone_hidden == (32, 16)

    def test_unknown_key_raises(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"lr": 0.1}))
        with pytest.raises(ValidationError, match="unknown keys"):
            RunConfig.from_sources(path, {})
