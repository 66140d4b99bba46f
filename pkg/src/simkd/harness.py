"""Experiment configuration, runner, metrics CSV, reports and feature export.

An experiment is described by a JSON document with the sections ``data``,
``teacher``, ``student``, ``distill`` and ``output``; it is validated against
:data:`CONFIG_SCHEMA` (unknown keys are rejected) before anything runs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .data import Dataset, gen_synthetic, normalize, read_dataset
from .distill import Assembly, DistillConfig, EvalResult, TrainReport, evaluate, run_method, train_model
from .errors import ConfigurationError, InputError
from .network import Model, NetworkSpec

# --------------------------------------------------------------------------
# configuration schema
# --------------------------------------------------------------------------

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}


def _layer(name: str, props: dict, required: Sequence[str] = ()) -> dict:
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["type", *required],
        "properties": {"type": {"const": name}, **props},
    }


_LAYER_SCHEMA = {
    "oneOf": [
        _layer("dense", {"in_features": _POS_INT, "out_features": _POS_INT, "bias": {"type": "boolean"}},
               ["in_features", "out_features"]),
        _layer("conv", {"in_ch": _POS_INT, "out_ch": _POS_INT, "k": _POS_INT, "depthwise": {"type": "boolean"}},
               ["in_ch", "out_ch"]),
        _layer("batchnorm", {"ch": _POS_INT}, ["ch"]),
        _layer("relu", {}),
        _layer("avgpool", {"window": _POS_INT}),
        _layer("globalavgpool", {}),
        _layer("flatten", {}),
    ]
}

_SPEC_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["arch", "widths", "num_classes"],
            "properties": {
                "arch": {"const": "plain_cnn"},
                "widths": {"type": "array", "items": _POS_INT, "minItems": 1},
                "num_classes": {"type": "integer", "minimum": 2},
                "input_shape": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
                "convs_per_block": _POS_INT,
                "pools": {"type": "array", "items": {"type": "boolean"}},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["input_shape", "encoder", "classifier"],
            "properties": {
                "input_shape": {"type": "array", "items": _POS_INT, "minItems": 1},
                "encoder": {"type": "array", "items": _LAYER_SCHEMA},
                "classifier": _LAYER_SCHEMA,
                "blocks": {"type": "array", "items": _POS_INT},
            },
        },
    ]
}

_OPTIM_PROPS = {
    "epochs": _NONNEG_INT,
    "batch_size": _POS_INT,
    "lr": {"type": "number", "minimum": 0},
    "lr_milestones": {"type": "array", "items": _POS_INT},
    "lr_decay": {"type": "number", "exclusiveMinimum": 0},
    "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "nesterov": {"type": "boolean"},
    "weight_decay": {"type": "number", "minimum": 0},
    "seed": _NONNEG_INT,
}

_TEACHER_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["checkpoint"],
            "properties": {"checkpoint": {"type": "string"}},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["spec"],
            "properties": {
                "spec": _SPEC_SCHEMA,
                "train": {"type": "object", "additionalProperties": False, "properties": _OPTIM_PROPS},
            },
        },
    ]
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "SimKD experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["data", "student", "distill"],
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train": {"type": "string"},
                "test": {"type": "string"},
                "generator": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "num_classes": {"type": "integer", "minimum": 2, "maximum": 255},
                        "per_class": _POS_INT,
                        "test_per_class": _POS_INT,
                        "height": _POS_INT,
                        "width": _POS_INT,
                        "channels": _POS_INT,
                        "difficulty": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "seed": _NONNEG_INT,
                        "max_shift": _NONNEG_INT,
                        "mirror": {"type": "boolean"},
                    },
                },
                "normalization": {
                    "oneOf": [
                        {"enum": ["auto", "none"]},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["mean", "std"],
                            "properties": {
                                "mean": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                                "std": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                        "minItems": 1},
                            },
                        },
                    ]
                },
                "augmentation": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "hflip_prob": {"type": "number", "minimum": 0, "maximum": 1},
                        "pad": _NONNEG_INT,
                        "crop": {"type": "boolean"},
                    },
                },
            },
            "oneOf": [
                {"required": ["generator"], "not": {"anyOf": [{"required": ["train"]}, {"required": ["test"]}]}},
                {"required": ["train", "test"], "not": {"required": ["generator"]}},
            ],
        },
        "teacher": {"oneOf": [_TEACHER_SCHEMA, {"type": "array", "items": _TEACHER_SCHEMA, "minItems": 1}]},
        "student": {
            "type": "object",
            "additionalProperties": False,
            "required": ["spec"],
            "properties": {"spec": _SPEC_SCHEMA},
        },
        "distill": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **_OPTIM_PROPS,
                "method": {"enum": ["baseline", "kd", "simkd", "joint", "sequential", "simkd_plus", "multi_teacher"]},
                "seeds": {"type": "array", "items": _NONNEG_INT, "minItems": 1},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                "k_blocks": _NONNEG_INT,
                "variant": {"enum": ["aveg", "simkd", "simkd_v"]},
                "projector_kind": {"enum": ["one_conv", "two_conv", "bottleneck_dw", "bottleneck", "linear_vector"]},
                "r": _POS_INT,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


def validate_config(cfg: dict) -> None:
    """Raise :class:`ConfigurationError` describing the first schema violation."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


@dataclass
class Experiment:
    """A validated config with its data loaded and normalized."""

    config: dict
    base_dir: Path
    train: Dataset
    test: Dataset
    student_spec: NetworkSpec
    out_dir: Path | None = None
    _teachers: list | None = field(default=None, repr=False)


def _spec(d: dict) -> NetworkSpec:
    try:
        return NetworkSpec.from_dict(d)
    except (TypeError, KeyError) as exc:
        raise ConfigurationError(f"invalid network spec: {exc}") from None


def load_data(section: dict, base_dir: Path = Path(".")) -> tuple[Dataset, Dataset]:
    """Read or generate (train, test) and apply the configured normalization."""
    if "generator" in section:
        train, test = gen_synthetic(**section["generator"])
    else:
        train = read_dataset(base_dir / section["train"])
        test = read_dataset(base_dir / section["test"])
    if train.x.shape[1:] != test.x.shape[1:] or train.num_classes != test.num_classes:
        raise InputError("train and test sets disagree on image shape or class count")
    norm = section.get("normalization", "auto")
    if norm == "none":
        return train, test
    if norm == "auto":
        mean, std = train.channel_stats()
    else:
        mean, std = np.asarray(norm["mean"], dtype=float), np.asarray(norm["std"], dtype=float)
        if len(mean) != train.x.shape[1] or len(std) != train.x.shape[1]:
            raise ConfigurationError(f"normalization needs {train.x.shape[1]} means and stds")
    return normalize(train, mean, std), normalize(test, mean, std)


def load_experiment(source, out_dir=None) -> Experiment:
    """Validate a config (dict or JSON file path) and load its data."""
    if isinstance(source, dict):
        cfg, base = source, Path(".")
    else:
        path = Path(source)
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
        base = path.parent
    validate_config(cfg)
    train, test = load_data(cfg["data"], base)
    student = _spec(cfg["student"]["spec"])
    if tuple(student.input_shape) != train.x.shape[1:]:
        raise ConfigurationError(f"student expects inputs {student.input_shape}, data has {train.x.shape[1:]}")
    if student.num_classes != train.num_classes:
        raise ConfigurationError(f"student has {student.num_classes} classes, data has {train.num_classes}")
    if out_dir is None and "output" in cfg and "dir" in cfg["output"]:
        out_dir = base / cfg["output"]["dir"]
    return Experiment(cfg, base, train, test, student, None if out_dir is None else Path(out_dir))


def _augmentation(cfg: dict) -> dict:
    aug = cfg["data"].get("augmentation", {})
    flip = aug.get("hflip_prob", 0.5)
    pad = aug.get("pad", 1) if aug.get("crop", True) else 0
    enabled = aug.get("enabled", True) and (flip > 0 or pad > 0)
    return {"augment": enabled, "flip_prob": flip, "pad": pad}


def _make_config(fields: dict, cfg: dict, **extra) -> DistillConfig:
    fields = {**fields, **_augmentation(cfg), **extra}
    fields.pop("seeds", None)
    epochs = fields.pop("epochs", 60)
    if "lr_milestones" in fields:
        return DistillConfig(epochs=epochs, **fields)
    return DistillConfig.desk(epochs, **fields)


def distill_config(exp: Experiment, seed: int | None = None, **overrides) -> DistillConfig:
    """The student config for one seed; ``overrides`` win over the file."""
    fields = {**exp.config["distill"], **{k: v for k, v in overrides.items() if v is not None}}
    if seed is not None:
        fields["seed"] = seed
    return _make_config(fields, exp.config)


def teacher_entries(exp: Experiment) -> list[dict]:
    t = exp.config.get("teacher", [])
    return t if isinstance(t, list) else [t]


def train_teachers(exp: Experiment) -> list[tuple[Model, TrainReport]]:
    """Train every teacher given by spec (checkpointed teachers are skipped)."""
    out = []
    for entry in teacher_entries(exp):
        if "spec" not in entry:
            continue
        spec = _spec(entry["spec"])
        config = _make_config(entry.get("train", {}), exp.config, method="teacher")
        out.append(train_model(spec, exp.train, exp.test, config))
    return out


def load_teachers(exp: Experiment) -> list[Model]:
    """Read checkpointed teachers and train spec-given ones (once per experiment)."""
    if exp._teachers is None:
        trained = iter(m for m, _ in train_teachers(exp))
        teachers = []
        for entry in teacher_entries(exp):
            if "checkpoint" in entry:
                model = read_checkpoint(exp.base_dir / entry["checkpoint"])
                if not isinstance(model, Model):
                    raise ConfigurationError(f"{entry['checkpoint']} does not hold a full model")
                teachers.append(model)
            else:
                teachers.append(next(trained))
        for t in teachers:
            if t.spec.input_shape != exp.student_spec.input_shape or t.spec.num_classes != exp.student_spec.num_classes:
                raise ConfigurationError("teacher and student disagree on input shape or class count")
        exp._teachers = teachers
    return exp._teachers


def method_label(config: DistillConfig) -> str:
    """Method name with the qualifiers that distinguish report groups."""
    label = config.method
    if config.method == "simkd_plus":
        label += f":k{config.k_blocks}"
    if config.method == "multi_teacher":
        label += f":{config.variant}"
    elif config.method in ("simkd", "simkd_plus", "joint", "sequential") and config.projector_kind != "bottleneck":
        label += f":{config.projector_kind}"
    return label


def run_tag(config: DistillConfig) -> str:
    tag = method_label(config).replace(":", "_")
    if config.method == "joint":
        tag += f"_a{config.alpha:g}"
    if config.method not in ("baseline", "teacher", "kd") and not (
        config.method == "multi_teacher" and config.variant != "simkd"
    ):
        tag += f"_r{config.r}"
    return tag


# --------------------------------------------------------------------------
# metrics CSV
# --------------------------------------------------------------------------

COLUMNS = (
    "run_id", "seed", "method", "alpha", "r", "epoch",
    "train_loss", "test_top1", "test_nll", "test_l2", "pruning_ratio",
)
SUMMARY_EPOCH = -1


def _num(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def report_rows(report: TrainReport, config: DistillConfig, run_id: str | None = None) -> list[dict]:
    """Epoch rows (0 is the initial evaluation) plus one summary row per head."""
    label = method_label(config)
    run_id = run_id or f"{run_tag(config)}-s{config.seed}"
    uses_r = config.method not in ("baseline", "teacher", "kd") and report.r is not None
    base = {
        "run_id": run_id,
        "seed": config.seed,
        "alpha": report.alpha,
        "r": report.r if uses_r else None,
        "pruning_ratio": report.pruning_ratio,
    }
    first = next(iter(report.initial.values()))
    rows = [{**base, "method": label, "epoch": 0, "train_loss": None,
             "test_top1": first.top1, "test_nll": first.nll, "test_l2": first.l2}]
    for rec in report.records:
        rows.append({**base, "method": label, "epoch": rec.epoch, "train_loss": rec.train_loss,
                     "test_top1": rec.test_top1, "test_nll": rec.test_nll, "test_l2": rec.test_l2})
    last_loss = report.records[-1].train_loss if report.records else None
    many = len(report.final) > 1
    for head, res in report.final.items():
        rows.append({**base, "method": f"{label}@{head}" if many else label, "epoch": SUMMARY_EPOCH,
                     "train_loss": last_loss, "test_top1": res.top1, "test_nll": res.nll, "test_l2": res.l2})
    return rows


def format_metrics(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([row[c] if c in ("run_id", "method") else _num(row[c]) for c in COLUMNS])
    return buf.getvalue()


def write_metrics(path, rows: Iterable[dict]) -> None:
    Path(path).write_text(format_metrics(rows))


def read_metrics(paths) -> list[dict]:
    """Parse one or more metrics CSVs (directories contribute every ``*.csv``)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    rows = []
    for f in files:
        with open(f, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COLUMNS:
                raise InputError(f"{f}: not a metrics CSV (columns {reader.fieldnames})")
            for raw in reader:
                try:
                    row = {c: float(raw[c]) for c in COLUMNS if c not in ("run_id", "method")}
                except ValueError as exc:
                    raise InputError(f"{f}: {exc}") from None
                row["run_id"], row["method"] = raw["run_id"], raw["method"]
                rows.append(row)
    return rows


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    config: DistillConfig
    artifact: object
    report: TrainReport
    rows: list


def run_one(exp: Experiment, config: DistillConfig) -> RunResult:
    teachers = load_teachers(exp) if config.method not in ("baseline", "teacher") else []
    artifact, report = run_method(config, exp.student_spec, exp.train, exp.test, teachers)
    return RunResult(config, artifact, report, report_rows(report, config))


def run_experiment(exp: Experiment, seeds: Sequence[int] | None = None, **overrides) -> list[RunResult]:
    """Run the configured method once per seed, writing CSV and checkpoints.

    Outputs go to ``exp.out_dir`` (when set) as ``<tag>.csv`` and
    ``<tag>_s<seed>.skdc``; spec-given teachers are saved as
    ``teacher<j>.skdc``.
    """
    if seeds is None:
        seeds = exp.config["distill"].get("seeds", [exp.config["distill"].get("seed", 0)])
    results = [run_one(exp, distill_config(exp, seed, **overrides)) for seed in seeds]
    if exp.out_dir is not None and results:
        exp.out_dir.mkdir(parents=True, exist_ok=True)
        tag = run_tag(results[0].config)
        write_metrics(exp.out_dir / f"{tag}.csv", [row for r in results for row in r.rows])
        for r in results:
            write_checkpoint(r.artifact, exp.out_dir / f"{tag}_s{r.config.seed}.skdc")
        if exp._teachers is not None:
            for j, (entry, t) in enumerate(zip(teacher_entries(exp), exp._teachers)):
                if "spec" in entry:
                    write_checkpoint(t, exp.out_dir / f"teacher{j}.skdc")
    return results


def run_teacher_training(exp: Experiment) -> list[tuple[Model, TrainReport]]:
    """Train spec-given teachers, saving ``teacher<j>.skdc`` and ``teacher<j>.csv``."""
    entries = [e for e in teacher_entries(exp) if "spec" in e]
    if not entries:
        raise ConfigurationError("config has no teacher given by spec")
    out = train_teachers(exp)
    if exp.out_dir is not None:
        exp.out_dir.mkdir(parents=True, exist_ok=True)
        for j, (model, report) in enumerate(out):
            config = _make_config(entries[j].get("train", {}), exp.config, method="teacher")
            write_checkpoint(model, exp.out_dir / f"teacher{j}.skdc")
            write_metrics(exp.out_dir / f"teacher{j}.csv", report_rows(report, config, f"teacher{j}-s{config.seed}"))
    return out


def evaluate_checkpoint(obj, dataset: Dataset, head: str | None = None) -> EvalResult:
    if isinstance(obj, Assembly) and head is not None and head not in obj.heads:
        raise ConfigurationError(f"unknown head {head!r}; available: {list(obj.heads)}")
    return evaluate(obj, dataset, head)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1 denominator; NaN for n < 2)."""
    n = len(values)
    if n == 0:
        raise InputError("no values to aggregate")
    mean = math.fsum(values) / n
    if n < 2:
        return mean, math.nan
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def format_mean_std(values: Sequence[float], digits: int = 2) -> str:
    m, s = mean_std(values)
    if math.isnan(s):
        return f"{m:.{digits}f}"
    return f"{m:.{digits}f} ± {s:.{digits}f}"


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def _key(v):
    return None if _missing(v) else float(v)


def _fmt(v, spec: str = "g") -> str:
    return "-" if _missing(v) else format(v, spec)


def _table(header: Sequence[str], body: list[list[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]

    def line(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(b) for b in body])


def summarize(rows: Iterable[dict]) -> dict[tuple, dict]:
    """Group summary rows by (method, alpha, r)."""
    groups: dict[tuple, dict] = defaultdict(lambda: {"top1": [], "nll": [], "pr": [], "seeds": []})
    for row in rows:
        if row["epoch"] != SUMMARY_EPOCH:
            continue
        key = (row["method"], _key(row["alpha"]), _key(row["r"]))
        g = groups[key]
        g["top1"].append(float(row["test_top1"]))
        g["nll"].append(float(row["test_nll"]))
        g["pr"].append(_key(row["pruning_ratio"]))
        g["seeds"].append(int(row["seed"]))
    return dict(groups)


def _key_order(key):
    method, alpha, r = key
    return (method, -1 if alpha is None else alpha, -1 if r is None else r)


def format_report(rows: Iterable[dict]) -> str:
    """Mean ± std per method, then the joint, sequential and SimKD+ views."""
    groups = summarize(rows)
    if not groups:
        raise InputError("no summary rows to report")
    out = ["Top-1 accuracy (%) over seeds, mean ± std", ""]
    body = []
    for key in sorted(groups, key=_key_order):
        g = groups[key]
        method, alpha, r = key
        pr = [p for p in g["pr"] if p is not None]
        body.append([method, _fmt(alpha), _fmt(r), str(len(g["top1"])), format_mean_std(g["top1"]),
                     f"{np.mean(pr):.4f}" if pr else "-"])
    out.append(_table(["method", "alpha", "r", "n", "top-1", "pruning ratio"], body))

    joint = defaultdict(dict)
    for (method, alpha, r), g in groups.items():
        if method.startswith("joint") and "@" in method:
            joint[(alpha, r)][method.split("@", 1)[1]] = format_mean_std(g["top1"])
    if joint:
        out += ["", "Joint training: accuracy of both heads across alpha", ""]
        body = [[_fmt(a), _fmt(r), v.get("student", "-"), v.get("teacher", "-")]
                for (a, r), v in sorted(joint.items(), key=lambda kv: _key_order(("",) + kv[0]))]
        out.append(_table(["alpha", "r", "student classifier", "teacher classifier"], body))

    seq = {m.split("@", 1)[1]: g for (m, _, _), g in groups.items() if m.startswith("sequential") and "@" in m}
    if seq:
        out += ["", "Sequential training: fresh classifier vs reused teacher classifier", ""]
        out.append(_table(
            ["fresh classifier", "reused classifier"],
            [[format_mean_std(seq["sequential"]["top1"]) if "sequential" in seq else "-",
              format_mean_std(seq["teacher"]["top1"]) if "teacher" in seq else "-"]],
        ))

    plus = []
    for (m, _, r), g in groups.items():
        if m == "simkd" or m.startswith("simkd_plus:k"):
            k = 0 if m == "simkd" else int(m.split(":k", 1)[1].split(":")[0])
            pr = [p for p in g["pr"] if p is not None]
            plus.append((k, _fmt(r), format_mean_std(g["top1"]), f"{np.mean(pr):.4f}" if pr else "-"))
    if len(plus) > 1 or any(p[0] > 0 for p in plus):
        out += ["", "Reusing more teacher blocks: accuracy vs pruning ratio", ""]
        out.append(_table(["reused blocks", "r", "top-1", "pruning ratio"], [list(map(str, p)) for p in sorted(plus)]))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# feature export
# --------------------------------------------------------------------------


def export_features(obj, dataset: Dataset, head: str | None = None, batch_size: int = 500) -> np.ndarray:
    """Inputs of the final dense layer (the penultimate features) for ``dataset``."""
    if isinstance(obj, Assembly) and head is not None and head not in obj.heads:
        raise ConfigurationError(f"unknown head {head!r}; available: {list(obj.heads)}")
    parts = []
    for i in range(0, len(dataset), batch_size):
        x = dataset.x[i:i + batch_size]
        parts.append(obj.features(x, head) if isinstance(obj, Assembly) else obj.features(x))
    feats = np.concatenate(parts) if parts else np.zeros((0, 0))
    return feats.reshape(len(feats), -1)


def format_features(features: np.ndarray, labels: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i}" for i in range(features.shape[1])] + ["label"])
    for f, y in zip(features, labels):
        w.writerow([repr(float(v)) for v in f] + [int(y)])
    return buf.getvalue()
