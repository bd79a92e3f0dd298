"""
Shrinking the perimeter at fixed area
=====================================

Cells of equal area are moved by a smoothed gradient flow of the total
perimeter of their union.  The union rounds up towards a disk.
"""

import math

from otto.cli import build_setup, driver_config, initial_design, parse_config, shape_metrics
from otto.optimize import run

config = parse_config("""
[problem]
kind = perimeter
[domain]
box = 0 0 1 1
[run]
n = 60
iters = 40
rng_seed = 3
""")

setup = build_setup(config)
seeds, measures, _ = initial_design(config, setup)


def progress(it, state, ev, record):
    if record.accepted and it % 10 == 0:
        print(f"iteration {it:3d}: perimeter {record.objective:.5f}")


history, state, ev = run(setup, seeds, measures, driver_config(config, progress), None)
metrics = shape_metrics(config, setup, ev, state.nu, None)
print(f"final perimeter {metrics['perimeter']:.5f}, "
      f"disk of the same area {2 * math.sqrt(math.pi * metrics['volume']):.5f}")
print(f"isoperimetric ratio {metrics['isoperimetric_ratio']:.4f}")
