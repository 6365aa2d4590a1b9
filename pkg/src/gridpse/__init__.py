"""Joint parameter-state estimation for power grids.

Builds equivalent-circuit estimation problems from RTU measurements, solves
them exactly as nonconvex NLPs, solves their McCormick convex relaxation,
tightens relaxation bounds sequentially, and benchmarks the three methods
against synthetic ground truth.
"""

__version__ = "0.1.0"
