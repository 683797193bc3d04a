"""Covariation of two tagged particles in the finite system.

A jump of any sender moves both particles 1 and 2 at once. Their jump
terms therefore have a nonzero cross covariation, which tends to
``xi^2 * int_0^t int f dmu^N ds``, while each particle's own covariation
tends to the same integral with ``varsigma^2``.

Run:  python demos/02_covariation.py
"""

from cmkv import build_model, covariation_study

N, T, reps = 100, 1.0, 50

model = build_model("example3")
for pair, label in (((0, 1), "cross [1,2]"), ((0, 0), "self  [1,1]")):
    est = covariation_study(model, N, T, 0.005, seed=2, reps=reps, pair=pair)
    print(f"{label}: realized {est.realized[-1]:.3f} +/- {est.stderr[-1]:.3f}, "
          f"predicted {est.theoretical[-1]:.3f}, ratio {est.endpoint_ratio:.3f}")
