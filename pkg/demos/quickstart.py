"""Train a teacher, then compare baseline, KD and SimKD students.

A shortened version of configs/desk.json (fewer epochs and one seed) so it
finishes in well under a minute:

    python demos/quickstart.py
"""

from pathlib import Path

from simkd.harness import format_report, load_experiment, read_metrics, run_experiment, run_teacher_training

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def main(out_dir="runs/quickstart"):
    exp = load_experiment(CONFIG, out_dir)
    run_teacher_training(exp)
    for method in ("baseline", "kd", "simkd"):
        run_experiment(exp, seeds=[0], method=method, epochs=15)
    # one mean ± std table over everything written so far
    print(format_report(read_metrics(out_dir)), end="")


if __name__ == "__main__":
    main()
