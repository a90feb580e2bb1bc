"""Command-line entry points: run experiments, probe mechanisms, plot.

Exit codes: 0 success, 2 configuration error, 3 I/O error.  The output
directory can be overridden with the PRIVATE_LASSO_BANDIT_OUT environment
variable (the --out flag wins over both it and the config file).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (
    ConfigError,
    InsufficientTrials,
    load_config,
    privacy_probe,
    resolve_out_dir,
    run_experiment,
)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    paths = run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_probe(args) -> int:
    rng = np.random.default_rng(args.seed)
    result = privacy_probe(
        args.mechanism,
        args.gap,
        args.trials,
        rng,
        target_epsilon=args.epsilon,
    )
    print(
        f"mechanism={result.mechanism} eps_hat={result.eps_hat:.6g} "
        f"stderr={result.stderr:.3g} target={result.target_epsilon:.6g} "
        f"passed={result.passed}"
    )
    return 0


def _cmd_plot(args) -> int:
    import csv
    from collections import defaultdict
    from pathlib import Path

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    traj = Path(args.indir) / "trajectory.csv"
    curves: dict[tuple, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    with open(traj, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["kind"], row["epsilon"])
            curves[key][int(row["t"])].append(float(row["cum_regret"]))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (kind, eps), per_t in sorted(curves.items()):
        ts = sorted(per_t)
        means = [float(np.mean(per_t[t])) for t in ts]
        label = kind if kind != "private" else f"eps={eps}"
        ax.plot(ts, means, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("mean cumulative regret")
    ax.legend()
    fig.tight_layout()
    out = Path(args.indir) / "regret.png"
    fig.savefig(out, dpi=120)
    print(f"plot: {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="private-lasso-bandit",
        description="Differentially private sparse linear bandit simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True, help="key=value config file")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p_run.set_defaults(func=_cmd_run)

    p_probe = sub.add_parser("probe", help="empirical privacy probe")
    p_probe.add_argument(
        "--mechanism",
        required=True,
        choices=["laplace-scalar", "svt-single-coordinate"],
    )
    p_probe.add_argument("--trials", type=int, default=1_000_000)
    p_probe.add_argument("--gap", type=float, default=1.0)
    p_probe.add_argument("--epsilon", type=float, default=1.0)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.set_defaults(func=_cmd_probe)

    p_plot = sub.add_parser("plot", help="render regret curves from CSVs")
    p_plot.add_argument("--in", dest="indir", required=True)
    p_plot.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InsufficientTrials as exc:
        print(f"probe error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
