"""
Worst-case disturbances through state feedback
==============================================

Asymptotic-gain estimates concern inputs whose size tracks the state:
u(t) = rho(||x_t||) d(t) with |d| <= 1.  Closing a system's input
channels this way turns an external-input model into an autonomous one
whose decay rate reflects the gain margin eaten by the disturbance.
"""

import math

import numpy as np

from smallgain import (
    HistoryFunction,
    InputSignal,
    Linear,
    Subsystem,
    build_auxiliary_system,
    build_interconnection,
    simulate,
)

# A single leaky node driven through one input channel.
node = Subsystem(dim=1, rhs=lambda t, x, z, u: -x + u, input_dim=1)
plant = build_interconnection([node], [])
hist = [HistoryFunction.constant([1.0])]

# Unforced baseline: plain exponential decay.
free = simulate(plant, hist, [InputSignal.zero(1)], T=4.0, h=1e-3)
print(f"unforced x(4) = {free.states[-1][0]:.6f} (exact {math.exp(-4.0):.6f})")

# Close the loop with rho(s) = 0.5 s and the worst constant disturbance
# d = 1.  The node has no delays, so the history-window norm is just
# |x(t)| and the closed dynamics become dx/dt = -0.5 x.
aux = build_auxiliary_system(plant, Linear(0.5), InputSignal.constant([1.0]))
worst = simulate(aux, hist, None, T=4.0, h=1e-3)
print(f"worst-case x(4) = {worst.states[-1][0]:.6f} (exact {math.exp(-2.0):.6f})")

# A sign-flipping disturbance alternately feeds and drains the node;
# the trajectory stays inside the worst-case envelope throughout.
flip = InputSignal.piecewise_constant([0.0, 1.0, 2.0, 3.0], [[1.0], [-1.0], [1.0], [-1.0]])
mixed = simulate(build_auxiliary_system(plant, Linear(0.5), flip), hist, None, T=4.0, h=1e-3)
inside = np.all(np.abs(mixed.grid_states()) <= worst.grid_states() + 1e-12)
print(f"sign-flipping run stays inside the envelope: {inside}")

# Disturbances are normalized by contract.  Anything outside [-1, 1] is
# clamped (with a warning), so an overdriven d changes nothing.
import warnings

with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    clamped = simulate(
        build_auxiliary_system(plant, Linear(0.5), InputSignal.constant([7.0])),
        hist,
        None,
        T=4.0,
        h=1e-3,
    )
print(f"clamp warning issued: {any('clamp' in str(w.message) for w in caught)}")
print(f"clamped run equals d = 1 run: {np.array_equal(clamped.states, worst.states)}")
