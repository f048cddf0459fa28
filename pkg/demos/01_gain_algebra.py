"""
Building and comparing gain functions
=====================================

Gains are scalar comparison functions: continuous, strictly increasing,
and zero at zero.  This demo builds a few, combines them with max and
composition, and asks the central question of the whole toolkit: does a
combined gain stay strictly below the identity?
"""

import numpy as np

from smallgain import (
    Linear,
    Power,
    SaturatingRational,
    compose,
    less_than_identity,
    pointwise_max,
)

# Three building blocks: a scaling, a power, and a saturating ratio that
# levels off at 0.5 no matter how large its argument grows.
half = Linear(0.5)
square = Power(2.0)
sat = SaturatingRational(0.5, 2.0)

for g in (half, square, sat):
    print(f"{g.to_expr():<22} g(1) = {g(1.0)}")

# Composition chains gains: compose(f, g) applies g first.  Evaluation
# accepts scalars or numpy arrays interchangeably.
chain = compose(sat, compose(Power(3.0), square))
s = np.array([0.5, 1.0, 2.0])
print("\nchain =", chain.to_expr())
print("chain(s) =", chain(s))

# The identity comparison runs on a log-spaced grid with local
# refinement.  A verified verdict carries the worst-case relative
# margin; a violated one carries a concrete witness point.
verdict = less_than_identity(chain)
print(f"\nchain < id?  {verdict.status.value}, margin {verdict.margin:.6g}")

bad = pointwise_max(Linear(0.9), Power(2.0))
verdict = less_than_identity(bad)
print(f"max(0.9s, s^2) < id?  {verdict.status.value}")
print(f"  witness s* = {verdict.witness!r}, g(s*) = {verdict.value!r}")
