"""AL versus coarse P1 on a checkerboard coefficient, with the t=0 ablation.

Runs the harness on small coarse meshes so it finishes in a few minutes,
prints the CSV table, then repeats the finest level with an unrefined ring
to show what the snapshot refinement buys.

    python demos/convergence_study.py            # levels 2 4 8
    python demos/convergence_study.py 4 8 16     # the full study (about an hour)
"""
import sys

from alfem.harness import RunConfig, report_csv, run_convergence

levels = [int(a) for a in sys.argv[1:]] or [2, 4, 8]
config = RunConfig(levels=levels, coefficient={"kind": "checkerboard", "cells": 8, "low": 1.0, "high": 100.0}, f=1.0)
report = run_convergence(config, log=lambda s: print("  " + s, file=sys.stderr))
print(report_csv(report), end="")
for row in report.rows:
    print(f"H={row['H']:.4f}: AL error is {row['err_al'] / row['err_p1']:.3f} x the coarse P1 error")

ablated = run_convergence(RunConfig(**{**config.to_dict(), "t_override": 0}))
print(f"finest level with t=0: err_al = {ablated.rows[-1]['err_al']:.4e} "
      f"(natural t: {report.rows[-1]['err_al']:.4e})")
