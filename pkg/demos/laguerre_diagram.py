"""
Laguerre cells with prescribed areas
====================================

Build a modified Laguerre diagram (cells clipped by balls around their seeds),
then solve for the weights that give every cell the same area.
"""

import numpy as np

from otto.cli import svg_snapshot
from otto.geometry import MODIFIED, Domain
from otto.sdot import init_weights, newton_solve

rng = np.random.default_rng(0)
domain = Domain.box(0.0, 0.0, 1.0, 1.0)

# 60 random seeds; together the cells should cover half of the unit square
seeds = 0.1 + 0.8 * rng.random((60, 2))
target = np.full(60, 0.5 / 60)

# damped Newton on the weights, started from balls of the target area
psi0 = init_weights(seeds, target, domain, MODIFIED)
result = newton_solve(seeds, target, psi0, domain, MODIFIED, tol=1e-10 * target.min())
D = result.diagram
print("Newton iterations:", result.iterations)
print("largest area error:", np.abs(D.areas() - target).max())
print("uncovered area:", D.void_area())

with open("laguerre_diagram.svg", "w") as fh:
    fh.write(svg_snapshot(D))
print("wrote laguerre_diagram.svg")
