#!/usr/bin/env python3
"""Run the four event scenarios (nominal, noise, disturbance,
noise+disturbance) and print one summary line per estimator."""

from pathlib import Path

from ddmhe import harness

ROOT = Path(__file__).resolve().parents[1]

for name in ("nominal", "noise", "disturbance", "noise_disturbance"):
    cfg = harness.load_config(ROOT / "configs" / f"{name}.ini")
    report = harness.run_experiment(cfg)
    print(f"== {report.scenario} ({report.steps} steps, "
          f"{report.wall_clock:.1f} s) -> {report.outputs_dir}")
    for est, m in report.estimators.items():
        line = (f"   {est:<5} rmse_full={m.rmse_full:.3e} "
                f"rmse_final={m.rmse_final:.3e} max={m.max_error:.3e}")
        if m.thm1_rate is not None:
            line += f" thm1={m.thm1_rate:.3f} thm2={m.thm2_rate:.3f}"
        print(line)
