import copy
import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from simkd.checkpoint import read_checkpoint
from simkd.cli import main
from simkd.data import gen_synthetic, write_dataset
from simkd.errors import ConfigurationError, InputError
from simkd.harness import (
    COLUMNS,
    CONFIG_SCHEMA,
    SUMMARY_EPOCH,
    distill_config,
    evaluate_checkpoint,
    export_features,
    format_mean_std,
    format_metrics,
    format_report,
    load_experiment,
    mean_std,
    method_label,
    read_metrics,
    run_experiment,
    run_tag,
    summarize,
    validate_config,
)
from simkd.distill import DistillConfig

ROOT = Path(__file__).resolve().parents[1]

TINY = {
    "data": {
        "generator": {"num_classes": 4, "per_class": 12, "seed": 1},
        "augmentation": {"enabled": True, "hflip_prob": 0.5, "pad": 1},
    },
    "teacher": {"spec": {"arch": "plain_cnn", "widths": [8, 16], "num_classes": 4}, "train": {"epochs": 2, "seed": 9}},
    "student": {"spec": {"arch": "plain_cnn", "widths": [4, 8], "num_classes": 4}},
    "distill": {"method": "simkd", "epochs": 2, "seeds": [0, 1]},
}


def tiny(**distill):
    cfg = copy.deepcopy(TINY)
    cfg["distill"].update(distill)
    return cfg


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


class TestSchema:
    def test_tiny_and_desk_configs_validate(self):
        validate_config(TINY)
        with open(ROOT / "configs" / "desk.json") as fh:
            validate_config(json.load(fh))

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda c: c.update(extra=1),
            lambda c: c["distill"].update(learning_rate=0.1),
            lambda c: c["data"]["generator"].update(noise=0.1),
            lambda c: c["data"].update(train="x.skdd"),
            lambda c: c["data"]["augmentation"].update(vflip=True),
            lambda c: c["teacher"]["train"].update(method="kd"),
            lambda c: c["distill"].update(method="fitnet"),
            lambda c: c["distill"].update(alpha=2),
            lambda c: c.pop("student"),
            lambda c: c["student"]["spec"].update(depth=3),
        ],
    )
    def test_rejects(self, mutate):
        cfg = copy.deepcopy(TINY)
        mutate(cfg)
        with pytest.raises(ConfigurationError):
            validate_config(cfg)

    def test_schema_document_in_sync(self):
        with open(ROOT / "docs" / "experiment_config.schema.json") as fh:
            assert json.load(fh) == CONFIG_SCHEMA

    def test_student_must_fit_data(self):
        cfg = copy.deepcopy(TINY)
        cfg["student"]["spec"]["num_classes"] = 5
        with pytest.raises(ConfigurationError):
            load_experiment(cfg)

    def test_relative_paths_and_explicit_normalization(self, tmp_path):
        train, test = gen_synthetic(4, 5, seed=0)
        (tmp_path / "d").mkdir()
        write_dataset(train, tmp_path / "d" / "train.skdd")
        write_dataset(test, tmp_path / "d" / "test.skdd")
        cfg = copy.deepcopy(TINY)
        cfg["data"] = {"train": "d/train.skdd", "test": "d/test.skdd",
                       "normalization": {"mean": [0.5] * 3, "std": [0.25] * 3}}
        exp = load_experiment(write_config(tmp_path / "c.json", cfg))
        np.testing.assert_allclose(exp.train.x, (train.x - 0.5) / 0.25)
        cfg["data"]["normalization"] = {"mean": [0.5], "std": [1.0]}
        with pytest.raises(ConfigurationError):
            load_experiment(write_config(tmp_path / "c.json", cfg))

    def test_distill_config_fields(self):
        exp = load_experiment(TINY)
        cfg = distill_config(exp, 3, epochs=4, alpha=None)
        assert cfg.seed == 3 and cfg.epochs == 4 and cfg.augment and cfg.pad == 1
        assert cfg.lr_milestones == DistillConfig.desk(4).lr_milestones


class TestLabels:
    @pytest.mark.parametrize(
        "kw, label, tag",
        [
            ({"method": "kd"}, "kd", "kd"),
            ({"method": "simkd"}, "simkd", "simkd_r2"),
            ({"method": "simkd", "projector_kind": "one_conv"}, "simkd:one_conv", "simkd_one_conv_r2"),
            ({"method": "joint", "alpha": 0.5, "r": 4}, "joint", "joint_a0.5_r4"),
            ({"method": "simkd_plus", "k_blocks": 1}, "simkd_plus:k1", "simkd_plus_k1_r2"),
            ({"method": "multi_teacher", "variant": "simkd_v"}, "multi_teacher:simkd_v", "multi_teacher_simkd_v"),
        ],
    )
    def test_label_and_tag(self, kw, label, tag):
        cfg = DistillConfig(**kw)
        assert method_label(cfg) == label and run_tag(cfg) == tag


@pytest.fixture(scope="module")
def simkd_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    exp = load_experiment(TINY, out)
    return out, run_experiment(exp)


class TestMetricsCSV:
    def test_files_written(self, simkd_run):
        out, _ = simkd_run
        assert sorted(p.name for p in out.iterdir()) == ["simkd_r2.csv", "simkd_r2_s0.skdc", "simkd_r2_s1.skdc", "teacher0.skdc"]

    def test_columns_and_rows(self, simkd_run):
        out, results = simkd_run
        with open(out / "simkd_r2.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert tuple(rows[0]) == COLUMNS
        for row in rows:
            for c in COLUMNS:
                if c not in ("run_id", "method"):
                    float(row[c])
        s0 = [r for r in rows if r["run_id"] == "simkd_r2-s0"]
        assert [int(r["epoch"]) for r in s0] == [0, 1, 2, SUMMARY_EPOCH]
        assert s0[0]["train_loss"] == "nan" and s0[0]["alpha"] == "nan"
        assert s0[-1]["test_top1"] == repr(results[0].report.top1)
        assert float(s0[-1]["r"]) == 2

    def test_bitwise_rerun(self, simkd_run, tmp_path):
        out, _ = simkd_run
        run_experiment(load_experiment(TINY, tmp_path))
        assert (tmp_path / "simkd_r2.csv").read_bytes() == (out / "simkd_r2.csv").read_bytes()
        assert (tmp_path / "simkd_r2_s1.skdc").read_bytes() == (out / "simkd_r2_s1.skdc").read_bytes()

    def test_read_metrics_accepts_directories(self, simkd_run):
        out, results = simkd_run
        rows = read_metrics(out)
        assert len(rows) == sum(len(r.rows) for r in results)
        assert all(isinstance(r["test_top1"], float) for r in rows)

    def test_read_metrics_rejects_other_csv(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(InputError):
            read_metrics(tmp_path / "x.csv")

    def test_multi_head_summary_rows(self):
        exp = load_experiment(tiny(method="joint", alpha=0.5, epochs=1))
        rows = run_experiment(exp, [0])[0].rows
        methods = [r["method"] for r in rows if r["epoch"] == SUMMARY_EPOCH]
        assert methods == ["joint@student", "joint@teacher"]
        assert "joint@teacher" in format_metrics(rows)


class TestStatistics:
    @pytest.mark.parametrize("values", [[75.3, 75.9, 75.4, 75.6], [1.0, 2.0], [1e9 + 0.1, 1e9 + 0.3, 1e9 + 0.2]])
    def test_mean_std_matches_numpy(self, values):
        m, s = mean_std(values)
        assert m == pytest.approx(np.mean(values), abs=1e-12, rel=1e-15)
        assert s == pytest.approx(np.std(values, ddof=1), rel=1e-9)

    def test_format(self):
        assert format_mean_std([75.3, 75.9, 75.4, 75.6]) == "75.55 ± 0.26"
        assert format_mean_std([75.25, 75.85, 75.4, 75.75]) == "75.56 ± 0.28"
        assert format_mean_std([60.0]) == "60.00"
        assert math.isnan(mean_std([1.0])[1])
        with pytest.raises(InputError):
            mean_std([])


class TestReport:
    def row(self, method, seed, top1, alpha=math.nan, r=math.nan, pr=0.5):
        return {"run_id": f"{method}-s{seed}", "seed": seed, "method": method, "alpha": alpha, "r": r,
                "epoch": SUMMARY_EPOCH, "train_loss": 0.1, "test_top1": top1, "test_nll": 1.0,
                "test_l2": math.nan, "pruning_ratio": pr}

    def test_groups_nan_keys_together(self):
        rows = [self.row("kd", s, 80.0 + s) for s in range(4)]
        groups = summarize(rows)
        assert list(groups) == [("kd", None, None)]
        assert groups[("kd", None, None)]["seeds"] == [0, 1, 2, 3]

    def test_sections(self):
        rows = [self.row("simkd", s, 70 + s, r=2) for s in range(2)]
        rows += [self.row("simkd_plus:k1", s, 72 + s, r=2, pr=0.4) for s in range(2)]
        rows += [self.row(f"joint@{h}", s, v + s, alpha=0.5, r=2) for h, v in (("student", 60), ("teacher", 65)) for s in range(2)]
        rows += [self.row(f"sequential@{h}", s, v, r=2) for h, v in (("sequential", 50), ("teacher", 70)) for s in range(2)]
        text = format_report(rows)
        assert "mean ± std" in text
        assert "Joint training" in text and "60.50 ± 0.71" in text and "65.50 ± 0.71" in text
        assert "Sequential training" in text and "50.00 ± 0.00" in text
        assert "Reusing more teacher blocks" in text and "0.4000" in text

    def test_empty(self):
        with pytest.raises(InputError):
            format_report([])


class TestFeatures:
    def test_export_model_and_assembly(self, simkd_run):
        out, results = simkd_run
        exp = load_experiment(TINY)
        feats = export_features(results[0].artifact, exp.test)
        assert feats.shape == (len(exp.test), 16)
        with pytest.raises(ConfigurationError):
            export_features(results[0].artifact, exp.test, head="nope")


class TestCLI:
    def test_pruning_ratio_example(self, capsys):
        assert main(["pruning-ratio", "100", "10", "20", "10", "1000"]) == 0
        assert capsys.readouterr().out.strip() == "0.88 (exact 22/25)"
        assert main(["pruning-ratio", "--se", "100", "--proj", "10", "--t", "1000", "--tc", "20", "--sc", "10"]) == 0
        assert capsys.readouterr().out.startswith("0.88")

    def test_check_proposition(self, capsys):
        assert main(["check-proposition", "--ct", "256", "--r", "2"]) == 0
        assert capsys.readouterr().out.strip() == "left: holds, right: holds"
        assert main(["check-proposition", "--ct", "4", "--r", "4"]) == 0
        assert capsys.readouterr().out.strip() == "left: fails, right: holds"

    def test_count_params(self, capsys):
        assert main(["count-params", "--projector", "--cs", "64", "--ct", "256", "--r", "2"]) == 0
        out = capsys.readouterr().out
        assert "189440" in out and "closed form: 189440" in out
        assert main(["count-params", "--spec", json.dumps(TINY["student"]["spec"])]) == 0
        assert "total 456" in capsys.readouterr().out

    @pytest.mark.parametrize(
        "argv, code",
        [
            ([], 2),
            (["frobnicate"], 2),
            (["pruning-ratio", "1", "2"], 2),
            (["pruning-ratio", "--se", "1"], 1),
            (["pruning-ratio", "1", "0", "0", "0", "0"], 1),
            (["distill", "--config", "/nonexistent.json"], 1),
            (["count-params"], 1),
            (["gradcheck", "--instances", "1", "--only", "nothing-matches"], 1),
        ],
    )
    def test_exit_codes(self, argv, code, capsys):
        assert main(argv) == code

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg = tiny()
        cfg["distill"]["bogus"] = 1
        assert main(["distill", "--config", write_config(tmp_path / "c.json", cfg)]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_gradcheck_subset(self, capsys):
        assert main(["gradcheck", "--instances", "3", "--only", "loss/kd"]) == 0
        out = capsys.readouterr().out
        assert "loss/kd_T1" in out and "loss/kd_T4" in out and "FAIL" not in out

    def test_gen_data_and_replay(self, tmp_path, capsys):
        """gen-data -> train-teacher -> distill -> eval reproduces the recorded accuracy."""
        assert main(["gen-data", "--out-dir", str(tmp_path / "data"), "--classes", "4", "--per-class", "10"]) == 0
        cfg = copy.deepcopy(TINY)
        cfg["data"] = {"train": "data/train.skdd", "test": "data/test.skdd", "augmentation": {"enabled": False}}
        cfg["output"] = {"dir": "out"}
        path = write_config(tmp_path / "teach.json", cfg)
        assert main(["train-teacher", "--config", path]) == 0
        assert (tmp_path / "out" / "teacher0.skdc").exists()

        cfg["teacher"] = {"checkpoint": "out/teacher0.skdc"}
        path = write_config(tmp_path / "distill.json", cfg)
        assert main(["distill", "--config", path, "--seeds", "0"]) == 0
        assert "simkd" in capsys.readouterr().out
        summary = [r for r in read_metrics(tmp_path / "out" / "simkd_r2.csv") if r["epoch"] == SUMMARY_EPOCH][0]

        ckpt = str(tmp_path / "out" / "simkd_r2_s0.skdc")
        assert main(["eval", "--config", path, "--checkpoint", ckpt]) == 0
        out = capsys.readouterr().out
        assert out.startswith(f"top-1 {summary['test_top1']:.2f}%")
        exp = load_experiment(path)
        assert evaluate_checkpoint(read_checkpoint(ckpt), exp.test).top1 == summary["test_top1"]
        assert main(["eval", "--config", path, "--checkpoint", ckpt, "--head", "nope"]) == 1

        feats = tmp_path / "f.csv"
        assert main(["export-features", "--config", path, "--checkpoint", ckpt, "--out", str(feats)]) == 0
        lines = feats.read_text().splitlines()
        assert lines[0].endswith(",label") and len(lines) == 41

        assert main(["report", str(tmp_path / "out"), "--out", str(tmp_path / "r.txt")]) == 0
        assert "Top-1 accuracy" in (tmp_path / "r.txt").read_text()
