"""Seven populations on a binary tree.

Population 1 listens to populations 2 and 3; population 2 listens to 4
and 5; population 3 listens to 6 and 7. In the limit each population has
its own common noise, so populations 2 and 3, which share no input, stay
independent, while the root mixes both of their common signals.

With example1 the kernel depends only on the sender's mark, so what
reaches the root is population 2's noise, not population 2's state;
terminal means of a parent and its child are uncorrelated as well.

Run:  python demos/04_multipop_tree.py
"""

import numpy as np

from cmkv import build_multipop, simulate_multipop_limit

spec = build_multipop({"populations": [{"model": "example1", "size": 100}] * 7, "inputs": "tree"})

reps = 100
means = np.array([[b.states[-1].mean() for b in simulate_multipop_limit(spec, 1.0, 0.01, seed=4, replication=r,
                                                                        output_grid=[1.0])]
                  for r in range(reps)])
corr = np.corrcoef(means.T)
print("correlation of terminal population means over", reps, "replications")
print("populations 2 and 3:", f"{corr[1, 2]:+.3f}")
print("populations 1 and 2:", f"{corr[0, 1]:+.3f}")
print("populations 4 and 5:", f"{corr[3, 4]:+.3f}  (leaves have no inputs and never jump)")
spread = means.std(axis=0)
print("std of terminal means by population:", np.array2string(spread, precision=3))
