"""Temporal orders on a fixed mesh. All methods are compared at T = 1 with one
fine-step reference solution of the same spatial discretisation."""

from esfem.experiments import ConvergenceConfig, temporal_convergence_study

level = 2
taus = [1 / 20, 1 / 40, 1 / 80]
names = ["bdf1", "bdf2", "bdf3", "libdf2", "libdf3", "radau2"]
tables = temporal_convergence_study(level, names, taus, ConvergenceConfig(reference_factor=128))
for name, table in tables.items():
    print(f"--- {name}")
    print(table.format())
