"""Run the full ablation experiment and print the report table.

Trains the change-point detector, the segment classifier and all three
cascade variants on freshly simulated desk-scale data, evaluates them over
the sequential CV plan, and writes report.csv / report.md next to the saved
models. With --quick everything shrinks to a couple of minutes of CPU time
at the cost of meaningless absolute numbers.
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from faultlab.config import RunConfig, load_run_config, save_run_config
from faultlab.cascade import VARIANTS, save_models
from faultlab.evaluation import render_report
from faultlab.experiment import build_assets, run_variants, train_whole


def shrink(cfg: RunConfig) -> RunConfig:
    cfg.sim.n_points = 6000
    cfg.sim.fault_rate = 0.08
    cfg.cpd.max_epochs = 6
    cfg.cpd.max_train_windows = 1500
    cfg.task2.max_epochs = cfg.task3.max_epochs = 2
    cfg.plan.folds = 3
    cfg.plan.min_valid_folds = 2
    return cfg


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="run config JSON (default: built-in desk scale)")
    ap.add_argument("--out", default="runs/experiment", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the global seed")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS),
                    choices=list(VARIANTS))
    ap.add_argument("--quick", action="store_true", help="tiny smoke-scale run")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = cfg.sim.seed = args.seed
    if args.quick:
        cfg = shrink(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    print("building datasets and shared stages ...", flush=True)
    assets = build_assets(cfg)
    print(f"  done in {time.time() - t0:.0f}s", flush=True)

    for variant in args.variants:
        t1 = time.time()
        models = train_whole(assets, variant)
        save_models(models, out / "models" / variant)
        print(f"trained {variant} in {time.time() - t1:.0f}s", flush=True)

    t2 = time.time()
    reports = run_variants(assets, tuple(args.variants))
    print(f"cross-validated {len(args.variants)} variants in {time.time() - t2:.0f}s\n")

    save_run_config(cfg, out / "config.json")
    render_report(reports, fmt="csv", path=out / "report.csv")
    print(render_report(reports, fmt="markdown", path=out / "report.md"), end="")
    print(f"\nartifacts under {out}/ (total {time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
