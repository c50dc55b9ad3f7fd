"""Command-line entry point: ``hmmfraud <stage> --config run.toml``."""
from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import STAGES, PipelineConfig, Run, StageError, load_config, with_overrides

log = logging.getLogger("hmmfraud")


def _flatten(d: dict, prefix: str = "") -> list[str]:
    lines = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and v and k not in ("params", "grid"):
            lines += _flatten(v, key + ".")
        else:
            lines.append(f"  {key} = {v!r}")
    return lines


def _defaults_epilog() -> str:
    return "configuration keys and defaults (TOML; [generator] may set preset = 'ecommerce' | 'face_to_face'):\n" + \
        "\n".join(_flatten(PipelineConfig().to_dict()))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults below when omitted)")
    common.add_argument("--seed", type=int, help="override the generator and HMM seeds")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hmmfraud", description=__doc__, epilog=_defaults_epilog(),
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write data/transactions.csv (from [generator] or the data file)",
        "split": "assign train/validation/gap/test subsets",
        "train-hmms": "fit the eight perspective HMMs for every (window, states) cell",
        "featurize": "raw, 24h aggregate and HMM features for every transaction",
        "train": "hyperparameter selection on the validation period",
        "evaluate": "fit per seed and score the test period",
        "report": "comparison, sweep and missing-value tables plus the manifest",
    }
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    sub.add_parser("run", parents=[common], help="all stages in order")
    sub.add_parser("sweep", parents=[common], help="all stages, then print the window x hidden-states matrix")
    sub.add_parser("plot", parents=[common], help="PR curves of the comparison (needs matplotlib)")
    return p


def plot_curves(run: Run) -> str:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("plot needs matplotlib: pip install 'artifact[plot]'") from exc
    import pandas as pd

    fig, ax = plt.subplots(figsize=(6, 5))
    seed = run.cfg.seeds[0]
    for _, cell, fs in run.jobs():
        if _ != "comparison":
            continue
        tag = "nohmm" if cell is None else f"w{cell[0]}_k{cell[1]}"
        c = pd.read_csv(run.path("evaluate", "curves", f"{tag}__{fs}_seed{seed}.csv"))
        ax.step(c["recall"], c["precision"], where="post", label=fs)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend()
    out = run.path("report", "pr_curves.png")
    fig.savefig(out, dpi=120)
    return str(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        cfg = with_overrides(cfg, seed=args.seed, out=args.out)
    except Exception as exc:
        print(f"hmmfraud: stage 'config' failed: {exc}", file=sys.stderr)
        return 2
    run = Run(cfg)
    try:
        if args.command in ("run", "sweep"):
            run.run()
            if args.command == "sweep":
                sweep = run.path("report", "sweep.txt")
                print(sweep.read_text() if sweep.exists() else run.path("report", "feature_sets.csv").read_text())
            else:
                print(run.path("report", "comparison.txt").read_text(), end="")
        elif args.command == "plot":
            print(plot_curves(run))
        else:
            run.stage(args.command)
    except StageError as exc:
        print(f"hmmfraud: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"hmmfraud: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
