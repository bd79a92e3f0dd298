"""
Poisson problem on a polygonal mesh
===================================

Solve -div grad u = f on the unit square with the lowest-order virtual element
method, using the cells of a centroidal Voronoi diagram as elements.
"""

import math

import numpy as np

from otto.diagram_ops import lloyd_mesh_seeds
from otto.geometry import CLASSICAL, Domain, build_diagram, diagram_mesh
from otto.vem import LinearSystem, assemble, body_load, dirichlet_dofs, solve

exact = lambda p: np.sin(math.pi * p[..., 0]) * np.sin(math.pi * p[..., 1])
source = lambda p: 2 * math.pi ** 2 * exact(p)

# every side of the box carries label 1, used for the Dirichlet condition
domain = Domain.box(0.0, 0.0, 1.0, 1.0, labels={k: 1 for k in ("bottom", "right", "top", "left")})

for n in (100, 400, 1600):
    seeds = lloyd_mesh_seeds(n, domain, iterations=30, rng=np.random.default_rng(1))
    mesh = diagram_mesh(build_diagram(seeds, domain, CLASSICAL, psi=np.zeros(n)))
    K = assemble(mesh, "stiffness_scalar")
    M = assemble(mesh, "mass")
    fixed = dirichlet_dofs(mesh, [1])
    u = solve(LinearSystem(K, body_load(mesh, source), fixed, np.zeros(len(fixed))))
    e = u - exact(mesh.points)
    print(f"{n:5d} cells: L2 error {math.sqrt(e @ (M @ e)):.3e}")
