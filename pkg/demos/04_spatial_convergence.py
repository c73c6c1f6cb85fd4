"""Backward Euler with tau quartered per mesh level: the experiment behind
the published error table. Pass a maximal level as argument (default 4)."""

import sys
from pathlib import Path

from esfem.experiments import ConvergenceConfig, emit_plot_script, run_convergence_study, write_csv

max_level = int(sys.argv[1]) if len(sys.argv) > 1 else 4
config = ConvergenceConfig(levels=tuple(range(1, max_level + 1)))
table = run_convergence_study(config)
print(table.format())
print("seconds per level:", [round(s, 1) for s in table.timings])

out = Path("demo_output")
out.mkdir(exist_ok=True)
write_csv(table, out / "spatial.csv")
emit_plot_script(table, out / "spatial.gp", order=1.0)
print(f"wrote {out / 'spatial.csv'} and {out / 'spatial.gp'}")
