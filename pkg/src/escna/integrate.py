"""Fixed-step RK4 for dithered closed loops and their averages, plus the
sup-norm comparison of two trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import defaults
from .esc import AveragedSystem, EscController
from .model import DEFAULT_BLOWUP, NonAffineSystem, state_vector

__all__ = [
    "DEFAULT_STEPS_PER_PERIOD",
    "DEFAULT_AVERAGE_STEPS",
    "ComparisonReport",
    "DisjointWindowError",
    "Trajectory",
    "closed_loop_field",
    "compare",
    "integrate",
    "integrate_average",
    "integrate_closed_loop",
    "step_count",
]

DEFAULT_STEPS_PER_PERIOD = defaults.STEPS_PER_PERIOD
DEFAULT_AVERAGE_STEPS = defaults.AVERAGE_STEPS


class DisjointWindowError(ValueError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), dim)
    controls: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    blowup: bool = False
    blowup_reason: str = ""

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        """Header ``t,x1,...,xn[,u]``; 17 significant digits per value."""
        cols = [self.times[:, None], self.states]
        header = ["t"] + [f"x{i + 1}" for i in range(self.dim)]
        if self.controls is not None:
            cols.append(self.controls[:, None])
            header.append("u")
        np.savetxt(path, np.hstack(cols), fmt="%.17g", delimiter=",", header=",".join(header), comments="")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: trajectory CSV must start with a 't' column")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        has_u = header[-1] == "u"
        n = len(header) - 1 - has_u
        controls = data[:, -1].copy() if has_u else None
        return cls(data[:, 0].copy(), data[:, 1 : 1 + n].copy(), controls, {"source": str(path)})


def step_count(T: float, dt: float) -> tuple[int, float]:
    """Number of steps and the length of the last one so the grid ends at T."""
    ratio = T / dt
    n = round(ratio)
    if abs(ratio - n) <= 1e-9 * max(1.0, ratio):
        return max(n, 1), dt
    n = math.ceil(ratio)
    return n, T - (n - 1) * dt


def _rk4(fn, x0: tuple, t0: float, T: float, dt: float, cutoff: float, control=None):
    """Integrate ``x' = fn(t, x)`` with tuples of floats as states."""
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    if not T > 0:
        raise ValueError(f"duration must be positive, got {T}")
    n, last = step_count(T, dt)
    times = [t0]
    states = [x0]
    controls = [] if control is not None else None
    x = x0
    reason = ""
    rng = range(len(x0))
    for i in range(n):
        t = t0 + i * dt
        h = dt if i < n - 1 else last
        try:
            if controls is not None:
                controls.append(control(t, x))
            h2 = 0.5 * h
            k1 = fn(t, x)
            k2 = fn(t + h2, tuple([x[j] + h2 * k1[j] for j in rng]))
            k3 = fn(t + h2, tuple([x[j] + h2 * k2[j] for j in rng]))
            k4 = fn(t + h, tuple([x[j] + h * k3[j] for j in rng]))
            h6 = h / 6.0
            x = tuple([x[j] + h6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in rng])
        except (ArithmeticError, OverflowError) as exc:
            reason = f"arithmetic failure at t={t:.17g}: {exc}"
            break
        if not all(math.isfinite(v) for v in x):
            reason = f"non-finite state at t={t + h:.17g}"
            break
        times.append(t0 + T if i == n - 1 else t0 + (i + 1) * dt)
        states.append(x)
        if max(abs(v) for v in x) > cutoff:
            reason = f"|x| exceeded cutoff {cutoff:g} at t={times[-1]:.17g}"
            break
    if controls is not None:
        # control sampled at the last stored state too
        if len(controls) < len(states):
            try:
                controls.append(control(times[-1], states[-1]))
            except (ArithmeticError, OverflowError):
                controls.append(float("nan"))
        controls = np.array(controls[: len(states)])
    traj = Trajectory(np.array(times), np.array(states, dtype=float), controls)
    traj.blowup = bool(reason)
    traj.blowup_reason = reason
    return traj


def integrate(
    field: Callable,
    x0,
    t0: float = 0.0,
    T: float = 1.0,
    dt: float | None = None,
    *,
    omega: float | None = None,
    steps_per_period: int | None = None,
    cutoff: float = DEFAULT_BLOWUP,
) -> Trajectory:
    """Classical RK4 on ``dx/dt = field(x, t)``.

    Give either ``dt`` or ``omega`` with ``steps_per_period`` (then
    ``dt = 2 pi / (omega S)``).  The last step is shortened so the trajectory
    ends exactly at ``t0 + T``.  Exceeding ``cutoff`` in the sup-norm, or a
    non-finite state, stops the run and sets ``blowup``.
    """
    dt = _resolve_dt(dt, omega, steps_per_period)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def fn(t, xs):
        return tuple(np.asarray(field(np.array(xs), t), dtype=float).reshape(-1))

    return _rk4(fn, tuple(float(v) for v in x0), float(t0), float(T), dt, cutoff)


def _resolve_dt(dt, omega, steps_per_period):
    if dt is not None:
        if not dt > 0:
            raise ValueError(f"step size must be positive, got {dt}")
        return float(dt)
    if omega is None or steps_per_period is None:
        raise ValueError("give dt, or omega together with steps_per_period")
    if not omega > 0 or not steps_per_period > 0:
        raise ValueError("omega and steps_per_period must be positive")
    return 2 * math.pi / (omega * steps_per_period)


def closed_loop_field(sys: NonAffineSystem, c: EscController):
    """``(fn(t, x_tuple) -> tuple, control(t, x_tuple) -> u)`` for the closed loop."""
    kern = sys.kernel()
    amp = c.amplitude
    omega, k, eps = c.omega, c.k, sys.eps
    cos = math.cos
    if c.output_feedback:
        if sys.output is None:
            raise ValueError("output-feedback controller needs a system output map")
        from .exprlang import compile_exprs

        phase_src = compile_exprs(sys.output, sys.variables)
    else:
        phase_src = c.phase_function(sys.dim)

    def control(t, x):
        return amp * cos(omega * t + k * phase_src(t, *x))

    def fn(t, x):
        return kern(t, *x, amp * cos(omega * t + k * phase_src(t, *x)), eps)

    return fn, control


def integrate_closed_loop(
    sys: NonAffineSystem,
    c: EscController,
    x0,
    t0: float = 0.0,
    T: float = 10.0,
    steps_per_period: int = DEFAULT_STEPS_PER_PERIOD,
) -> Trajectory:
    """RK4 on the dithered closed loop; ``u`` is recomputed at every stage."""
    x0 = state_vector(x0, sys.dim)
    fn, control = closed_loop_field(sys, c)
    dt = _resolve_dt(None, c.omega, steps_per_period)
    traj = _rk4(fn, tuple(map(float, x0)), float(t0), float(T), dt, sys.blowup_cutoff, control)
    traj.metadata = {
        "system": sys.name,
        "eps": sys.eps,
        "controller": c.to_config(),
        "dt": dt,
        "steps_per_period": steps_per_period,
    }
    return traj


def integrate_average(
    avg: AveragedSystem,
    x0,
    t0: float = 0.0,
    T: float = 10.0,
    dt: float | None = None,
    cutoff: float = DEFAULT_BLOWUP,
) -> Trajectory:
    """RK4 on an averaged system; ``dt`` defaults to ``T / 5000``."""
    x0 = state_vector(x0, avg.dim)
    if dt is None:
        dt = T / DEFAULT_AVERAGE_STEPS
    kern = avg.kernel

    def fn(t, x):
        return kern(t, *x)

    traj = _rk4(fn, tuple(map(float, x0)), float(t0), float(T), float(dt), cutoff)
    traj.metadata = {"average": avg.provenance, "dt": dt, "constants": dict(avg.constants)}
    return traj


@dataclass
class ComparisonReport:
    sup_error: float
    terminal_error: float
    window: tuple
    resampled: bool
    errors: np.ndarray | None = None

    def to_dict(self, include_errors: bool = False) -> dict:
        out = {
            "sup_error": self.sup_error,
            "terminal_error": self.terminal_error,
            "window": list(self.window),
            "resampled": self.resampled,
        }
        if include_errors and self.errors is not None:
            out["errors"] = self.errors.tolist()
        return out


def compare(a: Trajectory, b: Trajectory) -> ComparisonReport:
    """Sup-norm (infinity norm in state, max over time) gap between two runs.

    ``b`` is linearly interpolated onto ``a``'s samples when the grids differ;
    only the overlapping window is compared.
    """
    if a.dim != b.dim:
        raise ValueError(f"trajectories have different dimensions ({a.dim} vs {b.dim})")
    lo = max(a.times[0], b.times[0])
    hi = min(a.times[-1], b.times[-1])
    if lo > hi:
        raise DisjointWindowError(f"time windows do not overlap ([{lo}, {hi}])")
    same = a.times.shape == b.times.shape and np.array_equal(a.times, b.times)
    if same:
        sa, sb = a.states, b.states
    else:
        mask = (a.times >= lo) & (a.times <= hi)
        ta = a.times[mask]
        sa = a.states[mask]
        sb = np.column_stack([np.interp(ta, b.times, b.states[:, j]) for j in range(b.dim)])
    errs = np.max(np.abs(sa - sb), axis=1)
    return ComparisonReport(float(np.max(errs)), float(errs[-1]), (float(lo), float(hi)), not same, errs)
