"""Train the power-map operator at desk scale and compare it with the oracle.

With the default 2000 iterations this takes a few minutes on one CPU core;
pass a smaller count for a quick look.

    python demos/train_powermap.py [iterations] [out_dir]
"""
import logging
import sys

from deepoheat.experiments import run_experiment

logging.basicConfig(level=logging.INFO, format="%(message)s")
iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out = sys.argv[2] if len(sys.argv) > 2 else "demo_run"

summary = run_experiment("powermap2d", "desk", seed=0, out_dir=out, iterations=iterations)
print(f"loss {summary['loss_first']:.3e} -> {summary['loss_last']:.3e} in {summary['train_time_s']:.0f} s")
for r in summary["reports"]:
    print(f"{r['name']:>4}  MAPE {r['mape']:.3f}%  PAPE {r['pape']:.3f}%")
b = summary["benchmark"]
print(f"prediction {1e3 * b['pred_time_s']:.2f} ms vs oracle {1e3 * b['oracle_time_s']:.2f} ms")
