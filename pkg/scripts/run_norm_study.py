#!/usr/bin/env python3
"""Transition-operator norms over a horizon sweep.

For the configured model, estimates the nested Monte Carlo (p, q) norm at a
range of horizons and, in the drift-free case, compares with the analytic
Hilbert-Schmidt product formula.  Writes a CSV table.

Usage:
    python scripts/run_norm_study.py --config configs/heat8.toml \
        --horizons 0.1 0.2 0.3 0.5 --out norms.csv
"""

import argparse
import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from oubridge.config import ExperimentConfig, load_config
from oubridge.density import estimate_pq_norm
from oubridge.laws import hs_norm_linear
from oubridge.model import TimeGrid
from oubridge.rng import RngStream


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/heat8.toml")
    parser.add_argument("--horizons", type=float, nargs="+",
                        default=[0.1, 0.2, 0.3, 0.5, 1.0])
    parser.add_argument("--out", default="norms.csv")
    parser.add_argument("--seed", type=int)
    args = parser.parse_args()

    cfg = ExperimentConfig.from_dict(load_config(args.config),
                                     base_dir=Path(args.config).resolve().parent)
    if args.seed is not None:
        cfg.seed = args.seed
    model = cfg.model
    rows = []
    for T in args.horizons:
        rng = RngStream(cfg.seed)
        grid = None
        if cfg.nonlinearity.kind != "zero":
            grid = TimeGrid.refined(T, dt_max=T / 300.0, cluster=0.05, epsilon=1e-4 * T)
        est = estimate_pq_norm(model, cfg.nonlinearity, T, cfg.p, cfg.q,
                               cfg.n_x, cfg.n_y, cfg.n_paths, rng, grid=grid)
        row = {
            "T": T,
            "p": cfg.p,
            "q": cfg.q,
            "norm": est.value,
            "std_error": est.std_error,
        }
        if cfg.nonlinearity.kind == "zero" and cfg.p == 2.0 and cfg.q == 2.0:
            analytic = hs_norm_linear(model, T)
            row["analytic_hs"] = analytic
            row["rel_error"] = abs(est.value - analytic) / analytic
        rows.append(row)
        printable = ", ".join(f"{k}={v:.5g}" for k, v in row.items())
        print(printable)

    fields = sorted({k for r in rows for k in r}, key=lambda k: (k != "T", k))
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(f"table written to {args.out}")


if __name__ == "__main__":
    main()
