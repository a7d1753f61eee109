"""Shared helpers for the experiment scripts."""

import argparse
import logging
from pathlib import Path

import pandas as pd

from dwpom.simulation import MonteCarloConfig, run_monte_carlo


def parser(description, **defaults):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--households", type=int, default=defaults.get("households", 1000))
    p.add_argument("--replicates", type=int, default=defaults.get("replicates", 50))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="directory for replicates.csv and summary.csv")
    return p


def run(cfg: MonteCarloConfig, out: Path | None, metrics) -> pd.DataFrame:
    logging.basicConfig(level=logging.ERROR)
    res = run_monte_carlo(cfg)
    table = (res.summary[res.summary.metric.isin(metrics)]
             .pivot(index="method", columns="metric", values="mean")
             .reindex(columns=list(metrics)))
    print(f"study {cfg.study}, H={cfg.households}, B={cfg.replicates}, seed={cfg.seed}"
          f"; failed replicates: {len(res.failures)}")
    print(table.round(3).to_string())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.per_replicate.to_csv(out / "replicates.csv", index=False)
        res.summary.to_csv(out / "summary.csv", index=False)
    return table
