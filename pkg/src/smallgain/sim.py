"""Simulation of interconnected time-delay systems by the method of steps.

Systems are described subsystem by subsystem.  Each subsystem owns a
block of the flat state vector and a right-hand side

    rhs(t, x, z, u) -> dx/dt          (ndarray of the subsystem's dim)

where x is the subsystem's instantaneous state block, z maps declared
references (j, theta) to subsystem j's state at time t - theta, and u is
the subsystem's input block.  The interconnection convention is that a
subsystem's output equals its state, so cross-couplings always read
delayed state blocks of other subsystems.

Integration uses the classical fourth-order Runge-Kutta scheme with a
fixed step h that must divide every delay.  Because every delay is at
least one step, all delayed stage values lie in already-computed
territory: stage times fall on grid nodes or midpoints, where a cubic
Hermite interpolant built from stored states and derivatives is exact to
the method's order.  The same interpolant provides dense output on the
whole time range.

A trajectory whose max-norm exceeds the divergence threshold stops
early and is flagged as blown up together with the escape time.  NaN
appearing in a right-hand side raises SimulationError instead; overflow
to infinity counts as divergence.

State-feedback disturbance closures (for robustness experiments) scale a
bounded disturbance d(t) by a gain of the running history norm; see
build_auxiliary_system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .gains import KFunction

__all__ = [
    "SimulationError",
    "HistoryFunction",
    "InputSignal",
    "Subsystem",
    "StateFeedback",
    "DelaySystemSpec",
    "build_interconnection",
    "build_auxiliary_system",
    "Trajectory",
    "simulate",
    "DEFAULT_DIVERGENCE_THRESHOLD",
]

DEFAULT_DIVERGENCE_THRESHOLD = 1e12


class SimulationError(RuntimeError):
    """Integration could not proceed; carries time and state context."""

    def __init__(self, message: str, t: float | None = None, state: np.ndarray | None = None):
        if t is not None:
            message = f"{message} (t={t!r}"
            if state is not None:
                message += f", state={np.asarray(state).tolist()!r}"
            message += ")"
        super().__init__(message)
        self.t = t
        self.state = None if state is None else np.array(state)


@dataclass(frozen=True)
class HistoryFunction:
    """Initial segment of one subsystem on [-theta, 0]."""

    dim: int
    fn: Callable[[float], np.ndarray]
    kind: str = "callable"

    def __call__(self, t: float) -> np.ndarray:
        out = np.asarray(self.fn(t), dtype=float).reshape(-1)
        if out.shape != (self.dim,):
            raise SimulationError(
                f"history function returned shape {out.shape}, expected ({self.dim},)", t
            )
        return out

    @classmethod
    def constant(cls, values: Sequence[float] | float) -> "HistoryFunction":
        vec = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(dim=vec.size, fn=lambda t, vec=vec: vec, kind="constant")

    @classmethod
    def polynomial(cls, coeffs: Sequence[Sequence[float]]) -> "HistoryFunction":
        """Per-component polynomial in t, coefficients in ascending order."""
        rows = [np.asarray(c, dtype=float) for c in coeffs]

        def fn(t: float) -> np.ndarray:
            return np.array([np.polynomial.polynomial.polyval(t, c) for c in rows])

        return cls(dim=len(rows), fn=fn, kind="polynomial")

    @classmethod
    def table(cls, times: Sequence[float], values: Sequence[Sequence[float]]) -> "HistoryFunction":
        """Linear interpolation through (times, values) samples."""
        ts = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=float)
        if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0):
            raise ValueError("table times must be strictly increasing with at least two entries")
        if vals.shape[0] != ts.size:
            raise ValueError("table values must have one row per time")
        dim = vals.shape[1] if vals.ndim == 2 else 1
        vals = vals.reshape(ts.size, dim)

        def fn(t: float) -> np.ndarray:
            return np.array([np.interp(t, ts, vals[:, c]) for c in range(dim)])

        return cls(dim=dim, fn=fn, kind="table")

    @classmethod
    def from_callable(cls, fn: Callable[[float], np.ndarray], dim: int) -> "HistoryFunction":
        return cls(dim=dim, fn=fn, kind="callable")


@dataclass(frozen=True)
class InputSignal:
    """Measurable, locally bounded input for one subsystem."""

    dim: int
    fn: Callable[[float], np.ndarray]
    kind: str = "callable"
    table_values: tuple | None = None

    def __call__(self, t: float) -> np.ndarray:
        out = np.asarray(self.fn(t), dtype=float).reshape(-1)
        if out.shape != (self.dim,):
            raise SimulationError(f"input signal returned shape {out.shape}, expected ({self.dim},)", t)
        return out

    @classmethod
    def zero(cls, dim: int = 1) -> "InputSignal":
        z = np.zeros(dim)
        return cls(dim=dim, fn=lambda t, z=z: z, kind="zero")

    @classmethod
    def constant(cls, values: Sequence[float] | float) -> "InputSignal":
        vec = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(dim=vec.size, fn=lambda t, vec=vec: vec, kind="constant", table_values=tuple(np.abs(vec)))

    @classmethod
    def piecewise_constant(
        cls, times: Sequence[float], values: Sequence[Sequence[float]] | Sequence[float]
    ) -> "InputSignal":
        """Hold values[i] on [times[i], times[i+1]); the last value persists."""
        ts = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if ts.ndim != 1 or ts.size != vals.shape[0] or np.any(np.diff(ts) <= 0):
            raise ValueError("piecewise_constant needs strictly increasing times, one per value row")

        def fn(t: float) -> np.ndarray:
            idx = int(np.searchsorted(ts, t, side="right")) - 1
            return vals[max(idx, 0)]

        flat_abs = tuple(float(v) for v in np.abs(vals).max(axis=1))
        return cls(dim=vals.shape[1], fn=fn, kind="piecewise", table_values=flat_abs)

    @classmethod
    def from_callable(cls, fn: Callable[[float], np.ndarray], dim: int) -> "InputSignal":
        return cls(dim=dim, fn=fn, kind="callable")

    def sup_norm(self, sample_times: Sequence[float]) -> float:
        """Essential bound of |u| (max-abs): exact for zero / constant /
        piecewise tables, a sample maximum for general callables."""
        if self.kind == "zero":
            return 0.0
        if self.kind in ("constant", "piecewise") and self.table_values is not None:
            return max(self.table_values) if self.table_values else 0.0
        if len(sample_times) == 0:
            raise ValueError("sampled input bound needs at least one sample time")
        return max(float(np.max(np.abs(self(float(t))))) for t in sample_times)


@dataclass(frozen=True)
class Subsystem:
    """One node of the interconnection.

    references declares every delayed block the right-hand side reads,
    as (subsystem index, delay) pairs; the simulator provides exactly
    those entries in z.  Reading own state delayed is declared the same
    way with the subsystem's own index.
    """

    dim: int
    rhs: Callable[[float, np.ndarray, Mapping[tuple[int, float], np.ndarray], np.ndarray], object]
    references: tuple[tuple[int, float], ...] = ()
    input_dim: int = 0
    name: str | None = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"subsystem dimension must be >= 1, got {self.dim}")
        if self.input_dim < 0:
            raise ValueError(f"input dimension must be >= 0, got {self.input_dim}")
        object.__setattr__(
            self, "references", tuple((int(j), float(th)) for j, th in self.references)
        )


@dataclass(frozen=True)
class StateFeedback:
    """Disturbance closure u(t) = rho(||x_t||) * d(t), |d| <= 1 componentwise."""

    rho: KFunction
    d: InputSignal


@dataclass(frozen=True)
class DelaySystemSpec:
    """Complete interconnected system: subsystems, shared delay set,
    optional disturbance closure."""

    subsystems: tuple[Subsystem, ...]
    delays: tuple[float, ...]
    feedback: StateFeedback | None = None

    @property
    def k(self) -> int:
        return len(self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def total_dim(self) -> int:
        return sum(s.dim for s in self.subsystems)

    @property
    def input_dims(self) -> tuple[int, ...]:
        return tuple(s.input_dim for s in self.subsystems)

    @property
    def total_input_dim(self) -> int:
        return sum(s.input_dim for s in self.subsystems)

    @property
    def theta(self) -> float:
        return max(self.delays) if self.delays else 0.0

    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for s in self.subsystems:
            out.append(out[-1] + s.dim)
        return tuple(out)


def build_interconnection(
    subsystems: Sequence[Subsystem], delays: Sequence[float] = ()
) -> DelaySystemSpec:
    """Assemble and validate a DelaySystemSpec.

    Checks that delays are positive, finite and distinct, and that every
    declared reference points at an existing subsystem and a declared
    delay.  Dangling references are rejected here rather than surfacing
    as KeyErrors mid-integration.
    """
    subs = tuple(subsystems)
    if not subs:
        raise ValueError("an interconnection needs at least one subsystem")
    for s in subs:
        if not isinstance(s, Subsystem):
            raise TypeError(f"expected Subsystem, got {type(s).__name__}")
    ds = tuple(sorted(float(d) for d in delays))
    for d in ds:
        if not math.isfinite(d) or d <= 0.0:
            raise ValueError(f"delays must be positive and finite, got {d}")
    if len(set(ds)) != len(ds):
        raise ValueError(f"duplicate delays in {ds}")
    k = len(subs)
    declared = set(ds)
    for idx, s in enumerate(subs, start=1):
        for j, th in s.references:
            if not (1 <= j <= k):
                raise ValueError(
                    f"subsystem {idx} references undeclared subsystem {j} (k={k})"
                )
            if th not in declared:
                raise ValueError(
                    f"subsystem {idx} references delay {th} not in the declared set {ds}"
                )
    return DelaySystemSpec(subs, ds)


def build_auxiliary_system(
    sys: DelaySystemSpec, rho: KFunction, d: InputSignal
) -> DelaySystemSpec:
    """Close the input channels with a norm-scaled bounded disturbance.

    The returned system drives every input channel with
    rho(||x_t||) * d(t), where ||x_t|| is the running history-window
    norm of the state (evaluated on the step grid) and d is clamped into
    [-1, 1] componentwise (with a warning if clamping occurs).  With
    d identically zero this is just the unforced system.
    """
    if not isinstance(rho, KFunction):
        raise TypeError("rho must be a KFunction")
    if sys.feedback is not None:
        raise ValueError("system already carries a disturbance closure")
    m = sys.total_input_dim
    if m == 0:
        raise ValueError("system has no input channels to close")
    if d.dim != m:
        raise ValueError(f"disturbance dimension {d.dim} != total input dimension {m}")
    return replace(sys, feedback=StateFeedback(rho=rho, d=d))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense solution of a simulation run.

    states[j] is the flat state at node times t_nodes[j]; derivs[j] the
    exact right-hand side there, which together define a C^1 cubic
    Hermite interpolant on each step.  hist_times/hist_states cover the
    initial segment on the step grid; interpolation below zero falls
    back to the continuous history functions.
    """

    dims: tuple[int, ...]
    delays: tuple[float, ...]
    h: float
    t_nodes: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    hist_times: np.ndarray
    hist_states: np.ndarray
    history: tuple[HistoryFunction, ...]
    blow_up: bool = False
    escape_time: float | None = None
    requested_T: float = 0.0

    @property
    def t_end(self) -> float:
        return float(self.t_nodes[-1])

    @property
    def theta(self) -> float:
        return max(self.delays) if self.delays else 0.0

    @property
    def total_dim(self) -> int:
        return int(self.states.shape[1])

    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for d in self.dims:
            out.append(out[-1] + d)
        return tuple(out)

    def block(self, i: int) -> slice:
        """Flat-state slice of subsystem i (1-based)."""
        if not (1 <= i <= len(self.dims)):
            raise ValueError(f"subsystem index {i} out of range 1..{len(self.dims)}")
        off = self.offsets()
        return slice(off[i - 1], off[i])

    def grid_times(self, include_history: bool = True) -> np.ndarray:
        """All stored node times, history segment first."""
        if include_history and self.hist_times.size > 1:
            return np.concatenate([self.hist_times[:-1], self.t_nodes])
        return self.t_nodes.copy()

    def grid_states(self, include_history: bool = True) -> np.ndarray:
        if include_history and self.hist_times.size > 1:
            return np.vstack([self.hist_states[:-1], self.states])
        return self.states.copy()

    def _hist_value(self, t: float) -> np.ndarray:
        return np.concatenate([fn(t) for fn in self.history])

    def interpolate(self, t: float) -> np.ndarray:
        """Dense state at time t in [-theta, t_end]."""
        t = float(t)
        if t < -self.theta - 1e-12 or t > self.t_end + 1e-12:
            raise ValueError(f"time {t} outside trajectory range [{-self.theta}, {self.t_end}]")
        if t <= 0.0:
            return self._hist_value(max(t, -self.theta))
        if len(self.t_nodes) == 1:
            return self.states[0].copy()
        t = min(t, self.t_end)
        j = int(np.searchsorted(self.t_nodes, t, side="right")) - 1
        j = min(max(j, 0), len(self.t_nodes) - 2)
        ta, tb = float(self.t_nodes[j]), float(self.t_nodes[j + 1])
        if t == ta:
            return self.states[j].copy()
        if t == tb:
            return self.states[j + 1].copy()
        dt = tb - ta
        u = (t - ta) / dt
        h00 = (1.0 + 2.0 * u) * (1.0 - u) ** 2
        h10 = u * (1.0 - u) ** 2
        h01 = u * u * (3.0 - 2.0 * u)
        h11 = u * u * (u - 1.0)
        return (
            h00 * self.states[j]
            + h10 * dt * self.derivs[j]
            + h01 * self.states[j + 1]
            + h11 * dt * self.derivs[j + 1]
        )

    def interpolate_many(self, times: Sequence[float]) -> np.ndarray:
        return np.vstack([self.interpolate(t) for t in times])

    def node_norms(self, subsystem: int | None = None, include_history: bool = True) -> np.ndarray:
        """Per-node norms: subsystem block Euclidean norm, or the max
        over blocks when subsystem is None."""
        stacked = self.grid_states(include_history)
        return self._block_norms(stacked, subsystem)

    def _block_norms(self, arr: np.ndarray, subsystem: int | None) -> np.ndarray:
        arr = np.atleast_2d(arr)
        off = self.offsets()
        if subsystem is not None:
            blk = self.block(subsystem)
            return np.linalg.norm(arr[:, blk], axis=1)
        norms = np.zeros(arr.shape[0])
        for i in range(len(self.dims)):
            norms = np.maximum(norms, np.linalg.norm(arr[:, off[i] : off[i + 1]], axis=1))
        return norms

    def metadata(self) -> dict:
        return {
            "h": self.h,
            "requested_T": self.requested_T,
            "t_end": self.t_end,
            "delays": list(self.delays),
            "dims": list(self.dims),
            "n_steps": int(len(self.t_nodes) - 1),
            "blow_up": self.blow_up,
            "escape_time": self.escape_time,
        }

    def to_csv(self, fileobj) -> None:
        """Write "t,x_1,...,x_n" rows, history segment first.

        Values use repr formatting, so the file round-trips exactly and
        identical runs produce identical bytes.
        """
        n = self.total_dim
        header = "t," + ",".join(f"x_{c}" for c in range(1, n + 1))
        fileobj.write(header + "\n")
        times = self.grid_times()
        rows = self.grid_states()
        for t, row in zip(times, rows):
            fileobj.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# the integrator


def _resolve_steps(delays: tuple[float, ...], h: float) -> dict[float, int]:
    """Map each delay to its exact step multiple, or fail."""
    out = {}
    for th in delays:
        m_f = th / h
        m = int(round(m_f))
        if m < 1 or abs(m_f - m) > 1e-12 * max(m_f, 1.0):
            raise SimulationError(
                f"step h={h!r} must divide every delay; delay {th!r} is {m_f!r} steps"
            )
        out[th] = m
    return out


def simulate(
    sys: DelaySystemSpec,
    hist: Sequence[HistoryFunction],
    inputs: Sequence[InputSignal] | None,
    T: float,
    h: float,
    *,
    divergence_threshold: float = DEFAULT_DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Integrate the system from its initial segment to time T.

    Fixed-step classical RK4 under the method of steps: h must divide
    every delay (to within 1e-12 relative), which places every delayed
    stage value on an already-computed node or midpoint.  If T is not a
    step multiple, one shortened final step lands exactly on T.

    The run stops early, with blow_up set and the escape time recorded,
    as soon as the state max-norm exceeds divergence_threshold or the
    arithmetic overflows; NaN from a right-hand side raises
    SimulationError.
    """
    if not isinstance(sys, DelaySystemSpec):
        raise TypeError("sys must be a DelaySystemSpec")
    if not (math.isfinite(h) and h > 0.0):
        raise ValueError(f"step h must be positive, got {h!r}")
    if not (math.isfinite(T) and T >= 0.0):
        raise ValueError(f"horizon T must be nonnegative, got {T!r}")

    k = sys.k
    hist = list(hist)
    if len(hist) != k:
        raise ValueError(f"need {k} history functions, got {len(hist)}")
    for i, (fn, sub) in enumerate(zip(hist, sys.subsystems), start=1):
        if fn.dim != sub.dim:
            raise ValueError(f"history {i} has dim {fn.dim}, subsystem has dim {sub.dim}")

    feedback = sys.feedback
    if feedback is not None:
        if inputs is not None:
            raise ValueError("disturbance-closed systems take no separate input signals")
    else:
        if inputs is None:
            inputs = [InputSignal.zero(s.input_dim) if s.input_dim else InputSignal.zero(0) for s in sys.subsystems]
        inputs = list(inputs)
        if len(inputs) != k:
            raise ValueError(f"need {k} input signals, got {len(inputs)}")
        for i, (u, sub) in enumerate(zip(inputs, sys.subsystems), start=1):
            if u.dim != sub.input_dim:
                raise ValueError(f"input {i} has dim {u.dim}, subsystem expects {sub.input_dim}")

    delay_steps = _resolve_steps(sys.delays, h)
    M = max(delay_steps.values(), default=0)
    n = sys.total_dim
    off = sys.offsets()
    in_off = [0]
    for s in sys.subsystems:
        in_off.append(in_off[-1] + s.input_dim)
    m_total = sys.total_input_dim

    # Per-subsystem reference plumbing: (key, delay step count, source slice).
    ref_plumbing: list[list[tuple[tuple[int, float], int, slice]]] = []
    for s in sys.subsystems:
        rows = []
        for j, th in s.references:
            rows.append(((j, th), delay_steps[th], slice(off[j - 1], off[j])))
        ref_plumbing.append(rows)

    # History sampled on the step grid (node 0 duplicates the initial state).
    hist_times = np.array([(j - M) * h for j in range(M + 1)])
    if M == 0:
        hist_times = np.array([0.0])
    hist_states = np.empty((M + 1, n))
    for row, t in enumerate(hist_times):
        vals = np.concatenate([fn(float(t)) for fn in hist])
        if not np.all(np.isfinite(vals)):
            raise SimulationError("history function produced non-finite values", float(t), vals)
        hist_states[row] = vals
    x0 = hist_states[-1].copy()

    N_full = int(math.floor(T / h + 1e-12))
    remainder = T - N_full * h
    if remainder <= 1e-12 * max(T, h):
        remainder = 0.0
    N = N_full + (1 if remainder > 0.0 else 0)

    states = np.empty((N + 1, n))
    derivs = np.zeros((N + 1, n))
    states[0] = x0
    norms_all = np.empty(M + N + 1)

    def block_max_norm(x: np.ndarray) -> float:
        best = 0.0
        for i in range(k):
            v = float(np.linalg.norm(x[off[i] : off[i + 1]]))
            if v > best:
                best = v
        return best

    for row in range(M + 1):
        norms_all[row] = block_max_norm(hist_states[row])

    clamp_warned = False

    def disturbance(t: float) -> np.ndarray:
        nonlocal clamp_warned
        raw = feedback.d(t)
        clipped = np.clip(raw, -1.0, 1.0)
        if not clamp_warned and np.any(clipped != raw):
            warnings.warn(
                f"disturbance exceeded [-1, 1] at t={t!r}; values clamped", stacklevel=2
            )
            clamp_warned = True
        return clipped

    def input_vector(t: float, step: int, frac: float, x_stage: np.ndarray, completed: int) -> np.ndarray:
        if m_total == 0:
            return np.empty(0)
        if feedback is None:
            return np.concatenate([inputs[i](t) if sys.subsystems[i].input_dim else np.empty(0) for i in range(k)])
        # History-window norm on the step grid, stage state included.
        pos = step + frac
        lo = max(int(math.ceil(pos - M - 1e-9)), -M)
        window = norms_all[lo + M : completed + M + 1]
        wnorm = float(window.max(initial=0.0))
        wnorm = max(wnorm, block_max_norm(x_stage))
        scale = feedback.rho(wnorm)
        return scale * disturbance(t)

    def delayed_value(step: int, frac: float, msteps: int, src: slice) -> np.ndarray:
        idx = step - msteps
        if frac == 0.0:
            return states[idx, src] if idx >= 0 else hist_states[idx + M, src]
        if frac == 1.0:
            idx += 1
            return states[idx, src] if idx >= 0 else hist_states[idx + M, src]
        # Midpoint: exact node straddle is impossible, the interval is
        # either fully in history or fully computed.
        if idx + 1 <= 0:
            t_mid = (idx + 0.5) * h
            full = np.concatenate([fn(t_mid) for fn in hist])
            return full[src]
        xa = states[idx, src]
        xb = states[idx + 1, src]
        fa = derivs[idx, src]
        fb = derivs[idx + 1, src]
        return 0.5 * (xa + xb) + (h / 8.0) * (fa - fb)

    def eval_rhs(step: int, frac: float, t: float, x_stage: np.ndarray, completed: int) -> np.ndarray:
        u_full = input_vector(t, step, frac, x_stage, completed)
        dx = np.empty(n)
        for i in range(k):
            sub = sys.subsystems[i]
            z = {key: delayed_value(step, frac, msteps, src) for key, msteps, src in ref_plumbing[i]}
            u_i = u_full[in_off[i] : in_off[i + 1]]
            out = np.asarray(sub.rhs(t, x_stage[off[i] : off[i + 1]], z, u_i), dtype=float).reshape(-1)
            if out.shape != (sub.dim,):
                raise SimulationError(
                    f"subsystem {i + 1} right-hand side returned shape {out.shape}, expected ({sub.dim},)", t
                )
            dx[off[i] : off[i + 1]] = out
        return dx

    def general_eval(step: int, frac: float, t_stage: float, x_stage: np.ndarray, completed: int) -> np.ndarray:
        # Fallback for the shortened final step, where delayed times are
        # no longer node/midpoint aligned.
        u_full = input_vector(t_stage, step, frac, x_stage, completed)
        dx = np.empty(n)
        for i in range(k):
            sub = sys.subsystems[i]
            z = {}
            for key, msteps, src in ref_plumbing[i]:
                tq = t_stage - key[1]
                z[key] = _dense_lookup(tq, h, states, derivs, hist_states, hist, M, completed, src)
            u_i = u_full[in_off[i] : in_off[i + 1]]
            out = np.asarray(sub.rhs(t_stage, x_stage[off[i] : off[i + 1]], z, u_i), dtype=float).reshape(-1)
            if out.shape != (sub.dim,):
                raise SimulationError(
                    f"subsystem {i + 1} right-hand side returned shape {out.shape}, expected ({sub.dim},)", t_stage
                )
            dx[off[i] : off[i + 1]] = out
        return dx

    def checked(stage: np.ndarray, t: float, x_ref: np.ndarray) -> np.ndarray | None:
        """None signals overflow (divergence); NaN raises."""
        if np.all(np.isfinite(stage)):
            return stage
        if np.any(np.isnan(stage)):
            raise SimulationError("NaN in right-hand side evaluation", t, x_ref)
        return None

    t_nodes = np.empty(N + 1)
    t_nodes[0] = 0.0
    blow_up = False
    escape_time: float | None = None
    completed = 0

    step_sizes = [h] * N_full + ([remainder] if remainder > 0.0 else [])
    final = N
    for nstep, hs in enumerate(step_sizes):
        t_n = nstep * h
        x_n = states[nstep]
        mid = hs / 2.0
        if hs == h:
            fr_mid, fr_end = 0.5, 1.0
        else:
            # Shortened final step: stage offsets as fractions of the
            # nominal grid spacing.
            fr_mid, fr_end = mid / h, hs / h

        stage_eval = eval_rhs if hs == h else general_eval

        k1 = stage_eval(nstep, 0.0, t_n, x_n, completed)
        ck = checked(k1, t_n, x_n)
        if ck is None:
            final = nstep
            blow_up, escape_time = True, t_n
            break
        derivs[nstep] = k1

        k2 = stage_eval(nstep, fr_mid, t_n + mid, x_n + mid * k1, completed)
        ck = checked(k2, t_n, x_n)
        if ck is None:
            final = nstep
            blow_up, escape_time = True, t_n
            break
        k3 = stage_eval(nstep, fr_mid, t_n + mid, x_n + mid * k2, completed)
        ck = checked(k3, t_n, x_n)
        if ck is None:
            final = nstep
            blow_up, escape_time = True, t_n
            break
        k4 = stage_eval(nstep, fr_end, t_n + hs, x_n + hs * k3, completed)
        ck = checked(k4, t_n, x_n)
        if ck is None:
            final = nstep
            blow_up, escape_time = True, t_n
            break

        x_next = x_n + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_next = t_n + hs if hs == h else T
        if np.any(np.isnan(x_next)):
            raise SimulationError("NaN in state update", t_next, x_n)
        if not np.all(np.isfinite(x_next)):
            final = nstep
            blow_up, escape_time = True, t_n
            break
        states[nstep + 1] = x_next
        t_nodes[nstep + 1] = t_next
        norms_all[M + nstep + 1] = block_max_norm(x_next)
        completed = nstep + 1
        if norms_all[M + nstep + 1] > divergence_threshold:
            final = nstep + 1
            blow_up, escape_time = True, float(t_next)
            break
    else:
        final = N

    # Derivative at the last stored node, for dense output on the final
    # interval.  Best effort when the run blew up.
    if final >= 0:
        t_fin = float(t_nodes[final])
        on_grid = remainder == 0.0 or final < N
        try:
            if on_grid:
                dfin = eval_rhs(final, 0.0, t_fin, states[final], completed)
            else:
                dfin = general_eval(final, 0.0, t_fin, states[final], completed)
            if np.all(np.isfinite(dfin)):
                derivs[final] = dfin
        except (SimulationError, FloatingPointError, OverflowError):
            pass

    states = states[: final + 1]
    derivs = derivs[: final + 1]
    t_nodes = t_nodes[: final + 1]

    return Trajectory(
        dims=sys.dims,
        delays=sys.delays,
        h=h,
        t_nodes=t_nodes,
        states=states,
        derivs=derivs,
        hist_times=hist_times,
        hist_states=hist_states,
        history=tuple(hist),
        blow_up=blow_up,
        escape_time=escape_time,
        requested_T=T,
    )


def _dense_lookup(
    tq: float,
    h: float,
    states: np.ndarray,
    derivs: np.ndarray,
    hist_states: np.ndarray,
    hist: Sequence[HistoryFunction],
    M: int,
    current: int,
    src: slice,
) -> np.ndarray:
    """General time-based dense lookup used by the shortened final step."""
    if tq <= 0.0:
        full = np.concatenate([fn(tq) for fn in hist])
        return full[src]
    j = int(math.floor(tq / h + 1e-12))
    j = min(j, current - 1)
    ta = j * h
    u = (tq - ta) / h
    if u <= 1e-12:
        return states[j, src]
    if u >= 1.0 - 1e-12:
        return states[j + 1, src]
    h00 = (1.0 + 2.0 * u) * (1.0 - u) ** 2
    h10 = u * (1.0 - u) ** 2
    h01 = u * u * (3.0 - 2.0 * u)
    h11 = u * u * (u - 1.0)
    return (
        h00 * states[j, src]
        + h10 * h * derivs[j, src]
        + h01 * states[j + 1, src]
        + h11 * h * derivs[j + 1, src]
    )
