"""Command-line entry point: ``simkd <subcommand> ...``.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gradcheck
from .checkpoint import read_checkpoint
from .data import gen_synthetic, write_dataset
from .distill import ParamBudget, pruning_ratio_exact
from .errors import ConfigurationError, SimKDError
from .harness import (
    evaluate_checkpoint,
    export_features,
    format_features,
    format_report,
    load_experiment,
    read_metrics,
    run_experiment,
    run_teacher_training,
    validate_config,
)
from .network import NetworkSpec, param_count
from .numeric import Rng
from .projector import ProjectorSpec, build_projector, check_proposition, projector_param_formula


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError("seeds must be non-negative integers")
    return seeds


def _json_arg(text: str) -> dict:
    """Inline JSON or the path of a JSON file."""
    try:
        if text.lstrip().startswith("{"):
            return json.loads(text)
        return json.loads(Path(text).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"not valid JSON: {exc}") from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen_data(a) -> int:
    train, test = gen_synthetic(
        num_classes=a.classes, per_class=a.per_class, height=a.height, width=a.width,
        channels=a.channels, difficulty=a.difficulty, seed=a.seed,
        test_per_class=a.test_per_class, max_shift=a.max_shift, mirror=not a.no_mirror,
    )
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(train, out / "train.skdd")
    write_dataset(test, out / "test.skdd")
    print(f"wrote {len(train)} training and {len(test)} test images to {out}")
    return 0


def cmd_train_teacher(a) -> int:
    exp = load_experiment(a.config, a.out_dir)
    for j, (_, report) in enumerate(run_teacher_training(exp)):
        print(f"teacher{j}: top-1 {report.top1:.2f}%")
    return 0


def cmd_distill(a) -> int:
    exp = load_experiment(a.config, a.out_dir)
    overrides = {
        "method": a.method, "alpha": a.alpha, "r": a.r, "k_blocks": a.k_blocks,
        "variant": a.variant, "projector_kind": a.projector_kind, "epochs": a.epochs,
    }
    results = run_experiment(exp, a.seeds, **overrides)
    for res in results:
        heads = ", ".join(f"{h} {e.top1:.2f}%" for h, e in res.report.final.items())
        print(f"seed {res.config.seed}: {heads}")
    print()
    print(format_report([row for res in results for row in res.rows]), end="")
    return 0


def _dataset(a):
    exp = load_experiment(a.config)
    return exp.test if a.split == "test" else exp.train


def cmd_eval(a) -> int:
    obj = read_checkpoint(a.checkpoint)
    res = evaluate_checkpoint(obj, _dataset(a), a.head)
    l2 = "-" if res.l2 is None else f"{res.l2:.6g}"
    print(f"top-1 {res.top1:.2f}%  nll {res.nll:.6g}  l2 {l2}")
    return 0


def cmd_count_params(a) -> int:
    if a.projector:
        if a.cs is None or a.ct is None:
            raise ConfigurationError("--projector needs --cs and --ct")
        spec = ProjectorSpec(a.cs, a.ct, a.kind, a.r)
        count = param_count(build_projector(spec, Rng(0)))
        print(f"projector {a.kind} (C_s={a.cs}, C_t={a.ct}, r={a.r}): {count}")
        if a.kind == "bottleneck":
            print(f"closed form: {projector_param_formula(a.cs, a.ct, a.r)}")
        return 0
    specs = []
    if a.spec:
        specs.append(("network", _json_arg(a.spec)))
    if a.config:
        cfg = _json_arg(a.config)
        validate_config(cfg)
        specs.append(("student", cfg["student"]["spec"]))
        entries = cfg.get("teacher", [])
        entries = entries if isinstance(entries, list) else [entries]
        specs += [(f"teacher{j}", e["spec"]) for j, e in enumerate(entries) if "spec" in e]
    if not specs:
        raise ConfigurationError("give --spec, --config or --projector")
    for name, d in specs:
        spec = NetworkSpec.from_dict(d)
        enc, cls = param_count(spec.encoder), param_count((spec.classifier,))
        print(f"{name}: total {enc + cls} (encoder {enc}, classifier {cls})")
    return 0


def cmd_pruning_ratio(a) -> int:
    if a.budget:
        se, proj, tc, sc, t = a.budget
    else:
        missing = [n for n in ("se", "proj", "t", "tc", "sc") if getattr(a, n) is None]
        if missing:
            raise ConfigurationError(f"missing --{', --'.join(missing)} (or give SE PROJ TC SC T)")
        se, proj, t, tc, sc = a.se, a.proj, a.t, a.tc, a.sc
    ratio = pruning_ratio_exact(ParamBudget(se=se, proj=proj, t=t, tc=tc, sc=sc))
    print(f"{float(ratio):.10g} (exact {ratio})")
    return 0


def cmd_check_proposition(a) -> int:
    res = check_proposition(a.ct if a.cs is None else a.cs, a.ct, a.r)
    print(res)
    return 0


def cmd_gradcheck(a) -> int:
    results = gradcheck.run_suite(a.instances, a.seed, a.only)
    if not results:
        raise ConfigurationError(f"no gradient case matches {a.only!r}")
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<26} {r.instances:>4}  max rel err {r.max_rel_error:.2e}  {r.seconds:6.2f}s  {status}")
    return 0 if all(r.passed for r in results) else 1


def cmd_export_features(a) -> int:
    obj = read_checkpoint(a.checkpoint)
    ds = _dataset(a)
    feats = export_features(obj, ds, a.head)
    text = format_features(feats, ds.y)
    if a.out:
        Path(a.out).write_text(text)
        print(f"wrote {feats.shape[0]} x {feats.shape[1]} features to {a.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(a) -> int:
    text = format_report(read_metrics(a.paths))
    if a.out:
        Path(a.out).write_text(text)
    print(text, end="")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simkd", description="Knowledge-distillation lab with teacher-classifier reuse.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="write a synthetic train/test dataset pair")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--test-per-class", type=int)
    g.add_argument("--height", type=int, default=8)
    g.add_argument("--width", type=int, default=8)
    g.add_argument("--channels", type=int, default=3)
    g.add_argument("--difficulty", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-shift", type=int, default=1)
    g.add_argument("--no-mirror", action="store_true", help="do not mirror samples at random")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train-teacher", help="train the teachers given by spec in a config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir")
    t.set_defaults(fn=cmd_train_teacher)

    d = sub.add_parser("distill", help="run the configured method for one or more seeds")
    d.add_argument("--config", required=True)
    d.add_argument("--out-dir")
    d.add_argument("--seeds", type=_seeds)
    d.add_argument("--method", choices=["baseline", "kd", "simkd", "joint", "sequential", "simkd_plus", "multi_teacher"])
    d.add_argument("--alpha", type=float)
    d.add_argument("--r", type=int)
    d.add_argument("--k-blocks", type=int)
    d.add_argument("--variant", choices=["aveg", "simkd", "simkd_v"])
    d.add_argument("--projector-kind", choices=["one_conv", "two_conv", "bottleneck_dw", "bottleneck", "linear_vector"])
    d.add_argument("--epochs", type=int)
    d.set_defaults(fn=cmd_distill)

    for name, fn, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint on the config's data"),
        ("export-features", cmd_export_features, "dump penultimate features and labels as CSV"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--config", required=True, help="experiment config supplying the data")
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--head", help="head of a multi-head checkpoint")
        e.add_argument("--split", choices=["test", "train"], default="test")
        if name == "export-features":
            e.add_argument("--out")
        e.set_defaults(fn=fn)

    c = sub.add_parser("count-params", help="exact parameter counts of networks or projectors")
    c.add_argument("--spec", help="network spec as inline JSON or a file")
    c.add_argument("--config", help="count the student and teachers of a config")
    c.add_argument("--projector", action="store_true")
    c.add_argument("--cs", type=int)
    c.add_argument("--ct", type=int)
    c.add_argument("--r", type=int, default=2)
    c.add_argument("--kind", default="bottleneck",
                   choices=["one_conv", "two_conv", "bottleneck_dw", "bottleneck", "linear_vector"])
    c.set_defaults(fn=cmd_count_params)

    pr = sub.add_parser("pruning-ratio", help="1 - (se + proj + tc - sc) / t, exactly")
    pr.add_argument("budget", nargs="*", type=int, metavar="N", help="SE PROJ TC SC T")
    for n in ("se", "proj", "t", "tc", "sc"):
        pr.add_argument(f"--{n}", type=int)
    pr.set_defaults(fn=cmd_pruning_ratio)

    cp = sub.add_parser("check-proposition", help="test 2F(2r) < F(r) < 4F(2r) exactly")
    cp.add_argument("--ct", type=int, required=True)
    cp.add_argument("--r", type=int, required=True)
    cp.add_argument("--cs", type=int, help="student channels (default: C_t; the result does not depend on it)")
    cp.set_defaults(fn=cmd_check_proposition)

    gc = sub.add_parser("gradcheck", help="finite-difference checks of every layer and loss")
    gc.add_argument("--instances", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--only", help="run cases whose name contains this text")
    gc.set_defaults(fn=cmd_gradcheck)

    rp = sub.add_parser("report", help="aggregate metrics CSVs into mean ± std tables")
    rp.add_argument("paths", nargs="+", help="CSV files or directories of CSVs")
    rp.add_argument("--out")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "pruning-ratio" and args.budget and len(args.budget) != 5:
        parser.print_usage(sys.stderr)
        print("simkd pruning-ratio: error: give exactly five counts SE PROJ TC SC T", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (SimKDError, OSError, KeyError) as exc:
        print(f"simkd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
