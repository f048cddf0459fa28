"""Bundled demo: three scalar subsystems coupled in a delayed ring.

The network is

    x1' = -3 x1   + v2(t - delta)^2 / (1 + v2(t - delta)^2)
    x2' = -1.5 x2 + v3(t - delta)^3
    x3' = -2 x3   + v1(t - delta)^2

with outputs v_i = x_i, so influence flows 2 -> 1 -> 3 -> 2 around a
single ring.  Each subsystem is exponentially contractive on its own and
admits the gain profile

    sigma_1 = 7 s    gamma_12 = s^2 / (2 (1 + s^2))
    sigma_2 = 4 s    gamma_23 = s^3
    sigma_3 = 3 s    gamma_31 = s^2

whose unique simple cycle composes to s^12 / (2 (1 + s^12)), strictly
below the identity, so the ring is certifiably stable for any delay.
This fixture doubles as an end-to-end test bed: the same system ships as
a JSON configuration for the command-line interface.
"""

from __future__ import annotations

import numpy as np

from .gains import Linear, Power, SaturatingRational
from .graph import GainDigraph, build_gain_digraph
from .sim import DelaySystemSpec, Subsystem, build_interconnection

__all__ = ["ring_system", "ring_gains", "ring_config"]


def ring_system(delta: float = 1.0) -> DelaySystemSpec:
    """The ring with all couplings delayed by ``delta`` (> 0)."""
    if not delta > 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    delta = float(delta)

    def rhs1(t, x, z, u):
        w = z[(2, delta)][0]
        return np.array([-3.0 * x[0] + w * w / (1.0 + w * w)])

    def rhs2(t, x, z, u):
        w = z[(3, delta)][0]
        return np.array([-1.5 * x[0] + w * w * w])

    def rhs3(t, x, z, u):
        w = z[(1, delta)][0]
        return np.array([-2.0 * x[0] + w * w])

    subsystems = [
        Subsystem(dim=1, rhs=rhs1, references=((2, delta),), name="node1"),
        Subsystem(dim=1, rhs=rhs2, references=((3, delta),), name="node2"),
        Subsystem(dim=1, rhs=rhs3, references=((1, delta),), name="node3"),
    ]
    return build_interconnection(subsystems, [delta])


def ring_gains() -> GainDigraph:
    """Gain digraph certifying the ring's stability."""
    return build_gain_digraph(
        k=3,
        gains={
            (1, 2): SaturatingRational(0.5, 2.0),
            (2, 3): Power(3.0),
            (3, 1): Power(2.0),
        },
        gs_gains={1: Linear(7.0), 2: Linear(4.0), 3: Linear(3.0)},
    )


def ring_config(delta: float = 1.0, T: float = 20.0, h: float = 0.01) -> dict:
    """The same system as a JSON-ready configuration document."""
    d = float(delta)
    return {
        "name": "delayed-ring-3",
        "k": 3,
        "delays": [d],
        "subsystems": [
            {
                "dim": 1,
                "rhs": [f"-3*x_1 + v_2[-{d!r}]^2/(1+v_2[-{d!r}]^2)"],
            },
            {
                "dim": 1,
                "rhs": [f"-1.5*x_2 + v_3[-{d!r}]^3"],
            },
            {
                "dim": 1,
                "rhs": [f"-2*x_3 + v_1[-{d!r}]^2"],
            },
        ],
        "gains": {
            "edges": {
                "1,2": "s^2/(2*(1+s^2))",
                "2,3": "s^3",
                "3,1": "s^2",
            },
            "sigma": {"1": "7*s", "2": "4*s", "3": "3*s"},
        },
        "simulation": {
            "T": float(T),
            "h": float(h),
            "history": [[1.0], [1.0], [1.0]],
        },
        "checks": {
            "eps": 0.001,
            "tail_fraction": 0.2,
        },
    }
