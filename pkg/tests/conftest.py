"""Shared strategies and helpers for the test suite."""

from hypothesis import strategies as st

from smallgain.gains import (
    Compose,
    Identity,
    Linear,
    Max,
    Power,
    SaturatingRational,
)

# Parameter ranges are chosen so that trees of a handful of leaves stay
# comfortably inside float range on the evaluation grids the tests use.
coefficients = st.floats(min_value=0.01, max_value=100.0, allow_nan=False)
exponents = st.floats(min_value=0.5, max_value=2.0, allow_nan=False)


def gain_leaves(saturating: bool = True):
    options = [
        st.just(Identity()),
        st.builds(Linear, coefficients),
        st.builds(Power, exponents),
    ]
    if saturating:
        options.append(st.builds(SaturatingRational, coefficients, exponents))
    return st.one_of(options)


def gain_trees(saturating: bool = True, max_leaves: int = 5):
    return st.recursive(
        gain_leaves(saturating),
        lambda inner: st.one_of(
            st.builds(Compose, inner, inner),
            st.builds(Max, inner, inner),
        ),
        max_leaves=max_leaves,
    )
