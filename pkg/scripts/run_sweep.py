#!/usr/bin/env python3
"""Noise-weight sensitivity: replay the fixed simulation scenario for
mu in {1e3, 1e4, 1e5, 1e6} and print final-window RMSE per estimator."""

from pathlib import Path

from ddmhe import harness

ROOT = Path(__file__).resolve().parents[1]

cfg = harness.load_config(ROOT / "configs" / "sweep.ini")
reports = harness.sweep_mu(cfg)
for mu in sorted(reports):
    row = " ".join(
        f"{name}={m.rmse_final:.3e}"
        for name, m in reports[mu].estimators.items()
    )
    print(f"mu={mu:<8g} {row}")
print(f"summary in {cfg.outputs_dir}/sweep.csv")
