"""
A two-phase cantilever
======================

Run the compliance minimization of a cantilever clamped on its left side and
loaded in the middle of its right side, writing the history, diagram dumps and
SVG snapshots to ./cantilever_out.
"""

from otto.cli import parse_config, run_experiment

config = parse_config("""
[problem]
kind = cantilever_compliance
[domain]
box = 0 0 2 1
dirichlet = left
neumann = right:0.45:0.55
load = 0 -1
[run]
n = 150
iters = 25
vt = 0.7
rng_seed = 1
[cadence]
islands = 5
""")

status = run_experiment(config, "cantilever_out", snapshot_every=5, log=print)
print("exit status", status)
print(open("cantilever_out/summary.txt").read())
