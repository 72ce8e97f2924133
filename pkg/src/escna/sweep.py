"""Stability-region sweeps over controller and system parameters.

Every cell of a grid runs the dithered closed loop from ``x0`` for ``T``
seconds and is labelled from ``|x(T)|``:

* ``blowup`` -- the integrator stopped (non-finite state or the system's
  blow-up cutoff);
* ``divergent`` -- ``|x(T)| >= cutoff``;
* ``convergent`` -- ``|x(T)| <= theta_conv``;
* ``indeterminate`` -- anything in between.

Cells sharing an omega share a step size, so a column of cells is integrated
as one vectorized RK4 run.  Columns are independent units of work; with
``jobs > 1`` they go to a process pool and are reassembled in axis order, so
the grid bytes do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import defaults
from .esc import NoRootError, epsilon_bound, equilibrium_boundary_uu, synthesize_controller
from .exprlang import compile_exprs, parse_expr
from .integrate import integrate_closed_loop, step_count
from .model import builtin, load_system

__all__ = [
    "LABELS",
    "SWEEPABLE",
    "Axis",
    "StabilityGrid",
    "SweepSpec",
    "boundary_agreement",
    "classify_terminal",
    "classify_trajectory",
    "large_product_mask",
    "run_sweep",
]

LABELS = ("convergent", "indeterminate", "divergent", "blowup")
SWEEPABLE = ("alpha", "omega", "eps")

DEFAULT_THETA_CONV = defaults.THETA_CONV
DEFAULT_CUTOFF = defaults.SWEEP_CUTOFF
DEFAULT_COUNT = defaults.GRID_COUNT


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    count: int = DEFAULT_COUNT
    scale: str = "linear"

    def __post_init__(self):
        if self.name not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.name!r}; choose from {', '.join(SWEEPABLE)}")
        if int(self.count) != self.count or self.count < 2:
            raise ValueError(f"axis {self.name}: count must be an integer >= 2")
        if not self.min < self.max:
            raise ValueError(f"axis {self.name}: min must be below max")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"axis {self.name}: scale must be 'linear' or 'log'")
        if self.scale == "log" and self.min <= 0:
            raise ValueError(f"axis {self.name}: a log axis needs a positive min")

    @property
    def values(self) -> np.ndarray:
        if self.scale == "log":
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


@dataclass(frozen=True)
class SweepSpec:
    """One sweep.  ``axes[0]`` is the outer (row) axis of the output; a
    boundary curve, when one exists, is a function of ``axes[0]``."""

    system: str
    axes: tuple
    m: int
    k: float
    alpha: float = 1.0
    omega: float = 100.0
    eps: float = 0.0
    V: str = "x1^2"
    x0: float | tuple = defaults.SWEEP_X0
    T: float = defaults.SWEEP_T
    steps_per_period: int = defaults.STEPS_PER_PERIOD
    theta_conv: float = DEFAULT_THETA_CONV
    cutoff: float = DEFAULT_CUTOFF
    x_star: float | None = None
    system_params: tuple = ()
    config: str | None = None  # JSON system config; overrides the builtin named by ``system``

    def __post_init__(self):
        axes = tuple(a if isinstance(a, Axis) else Axis(**a) for a in self.axes)
        if not 1 <= len(axes) <= 2:
            raise ValueError("a sweep has one or two axes")
        if len({a.name for a in axes}) != len(axes):
            raise ValueError("axes must be distinct")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "system_params", tuple(sorted(dict(self.system_params).items())))
        if not (self.T > 0 and self.steps_per_period > 0):
            raise ValueError("T and steps_per_period must be positive")
        if not 0 < self.theta_conv < self.cutoff:
            raise ValueError("need 0 < theta_conv < cutoff")

    @property
    def star(self) -> float:
        return self.theta_conv if self.x_star is None else self.x_star

    @property
    def shape(self) -> tuple:
        return tuple(a.count for a in self.axes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["axes"] = [asdict(a) for a in self.axes]
        d["system_params"] = dict(self.system_params)
        if isinstance(d["x0"], tuple):
            d["x0"] = list(d["x0"])
        return d


@dataclass
class StabilityGrid:
    spec: SweepSpec
    terminal: np.ndarray  # clamped |x(T)|, shape spec.shape
    labels: np.ndarray  # str, shape spec.shape
    boundary: np.ndarray | None = None  # per axes[0] value; nan where undefined
    boundary_side: str | None = None  # "above" or "below": side that converges
    notes: list = field(default_factory=list)

    @property
    def axes(self) -> tuple:
        return self.spec.axes

    def cell_values(self) -> list[np.ndarray]:
        """Per-cell parameter values, one array per axis, shaped like the grid."""
        return list(np.meshgrid(*[a.values for a in self.axes], indexing="ij"))

    def counts(self) -> dict:
        return {lab: int(np.sum(self.labels == lab)) for lab in LABELS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [a.name for a in self.axes]
        w.writerow(names + ["terminal_abs_x", "label"])
        cells = self.cell_values()
        for idx in np.ndindex(*self.spec.shape):
            w.writerow([_num(c[idx]) for c in cells] + [_num(self.terminal[idx]), self.labels[idx]])
        return buf.getvalue()

    def boundary_csv(self) -> str:
        if self.boundary is None:
            raise ValueError("no boundary curve attached")
        a0 = self.axes[0]
        other = self.axes[1].name if len(self.axes) > 1 else "value"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([a0.name, f"{other}_boundary"])
        for x, b in zip(a0.values, self.boundary):
            w.writerow([_num(x), _num(b)])
        return buf.getvalue()

    def summary(self, margin: float = defaults.AGREEMENT_MARGIN, region: np.ndarray | None = None) -> dict:
        out = {"spec": self.spec.to_dict(), "counts": self.counts(), "notes": list(self.notes)}
        if self.boundary is not None:
            out["boundary_side"] = self.boundary_side
            out["margin"] = margin
            out["agreement"] = _json_float(boundary_agreement(self, margin, region))
            if len(self.axes) == 2 and {a.name for a in self.axes} == {"alpha", "omega"}:
                out["agreement_large_alpha_omega"] = _json_float(
                    boundary_agreement(self, margin, large_product_mask(self))
                )
        return out

    def summary_json(self, **kw) -> str:
        return json.dumps(self.summary(**kw), sort_keys=True, indent=2)


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _json_float(v):
    return None if math.isnan(v) else v


# ---------------------------------------------------------------------------
# Classification


def classify_terminal(value: float, blowup: bool, theta_conv: float, cutoff: float) -> tuple[str, float]:
    if blowup or not math.isfinite(value):
        return "blowup", float(cutoff)
    v = abs(value)
    if v >= cutoff:
        return "divergent", float(cutoff)
    if v <= theta_conv:
        return "convergent", v
    return "indeterminate", v


def classify_trajectory(traj, theta_conv: float = DEFAULT_THETA_CONV, cutoff: float = DEFAULT_CUTOFF) -> tuple[str, float]:
    """Label and clamped terminal value ``min(|x(T)|, cutoff)`` of a run."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    return classify_terminal(float(np.max(np.abs(traj.final_state))), traj.blowup, theta_conv, cutoff)


# ---------------------------------------------------------------------------
# Integration of one omega column


def _system(spec: SweepSpec, eps: float):
    if spec.config is not None:
        return load_system(spec.config).with_eps(eps)
    return builtin(spec.system, eps=eps, **dict(spec.system_params))


def _column(spec: SweepSpec, omega: float, alphas: np.ndarray, epss: np.ndarray):
    """Vectorized RK4 over cells with a common omega; returns (|x(T)|, blowup)."""
    if alphas.shape[0] == 1:
        return _single_cell(spec, omega, float(alphas[0]), float(epss[0]))
    sys = _system(spec, float(np.max(np.abs(epss))))
    with_even = bool(sys.even_channels) and bool(np.any(epss != 0))
    kern = sys.kernel("numpy", with_even=with_even)
    phase = compile_exprs(parse_expr(spec.V), sys.variables, "numpy")
    ncell = alphas.shape[0]
    amp = (alphas * omega) ** (1.0 / (2 * (2 * spec.m + 1)))
    k = spec.k
    x0 = np.broadcast_to(np.atleast_1d(np.asarray(spec.x0, dtype=float)), (sys.dim,))
    x = [np.full(ncell, v) for v in x0]
    dead = np.zeros(ncell, dtype=bool)
    limit = sys.blowup_cutoff
    dim = sys.dim

    def f(t, xs):
        ph = np.broadcast_to(phase(t, *xs), (ncell,))
        u = amp * np.cos(omega * t + k * ph)
        out = kern(t, *xs, u, epss)
        return [np.broadcast_to(o, (ncell,)) for o in out]

    dt = 2 * math.pi / (omega * spec.steps_per_period)
    n, last = step_count(spec.T, dt)
    with np.errstate(all="ignore"):
        for i in range(n):
            t = i * dt
            h = dt if i < n - 1 else last
            h2 = 0.5 * h
            k1 = f(t, x)
            k2 = f(t + h2, [x[j] + h2 * k1[j] for j in range(dim)])
            k3 = f(t + h2, [x[j] + h2 * k2[j] for j in range(dim)])
            k4 = f(t + h, [x[j] + h * k3[j] for j in range(dim)])
            h6 = h / 6.0
            new = [x[j] + h6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in range(dim)]
            bad = np.zeros(ncell, dtype=bool)
            for v in new:
                bad |= ~np.isfinite(v) | (np.abs(v) > limit)
            dead |= bad
            # frozen cells keep their last good state so they cannot poison the rest
            x = [np.where(dead, x[j], new[j]) for j in range(dim)]
            if dead.all():
                break
    mag = np.max(np.abs(np.vstack(x)), axis=0)
    return mag, dead


def _single_cell(spec: SweepSpec, omega: float, alpha: float, eps: float):
    # numpy overhead dominates on length-1 arrays; the scalar loop is ~10x faster
    sys = _system(spec, eps)
    c = synthesize_controller(spec.m, alpha, omega, spec.k, spec.V)
    x0 = np.broadcast_to(np.atleast_1d(np.asarray(spec.x0, dtype=float)), (sys.dim,))
    traj = integrate_closed_loop(sys, c, x0, T=spec.T, steps_per_period=spec.steps_per_period)
    return np.array([np.max(np.abs(traj.final_state))]), np.array([traj.blowup])


def _cell_params(spec: SweepSpec):
    grids = np.meshgrid(*[a.values for a in spec.axes], indexing="ij")
    params = {}
    for name in SWEEPABLE:
        params[name] = np.full(spec.shape, float(getattr(spec, name)))
    for a, g in zip(spec.axes, grids):
        params[a.name] = g
    return {k: v.reshape(-1) for k, v in params.items()}


def _run_group(args):
    spec, omega, alphas, epss = args
    return _column(spec, omega, alphas, epss)


def run_sweep(spec: SweepSpec, jobs: int = 1) -> StabilityGrid:
    """Integrate and classify every cell; attach the analytic boundary for
    ``uu`` swept over (omega, alpha) and ``evenpow`` over (omega, eps)."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    _system(spec, spec.eps)  # fail early on bad names or configs
    p = _cell_params(spec)
    omegas = p["omega"]
    if np.any(omegas <= 0) or np.any(p["alpha"] <= 0):
        raise ValueError("alpha and omega must be positive in every cell")
    keys = sorted(set(omegas.tolist()))
    groups = [np.flatnonzero(omegas == w) for w in keys]
    tasks = [(spec, w, p["alpha"][idx], p["eps"][idx]) for w, idx in zip(keys, groups)]
    if jobs == 1 or len(tasks) == 1:
        results = [_run_group(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_group, tasks))
    ncell = omegas.shape[0]
    terminal = np.empty(ncell)
    labels = np.empty(ncell, dtype=object)
    for idx, (mag, dead) in zip(groups, results):
        for j, cell in enumerate(idx):
            lab, val = classify_terminal(float(mag[j]), bool(dead[j]), spec.theta_conv, spec.cutoff)
            labels[cell] = lab
            terminal[cell] = val
    grid = StabilityGrid(spec, terminal.reshape(spec.shape), labels.reshape(spec.shape).astype(str))
    _attach_boundary(grid)
    return grid


def _attach_boundary(grid: StabilityGrid) -> None:
    spec = grid.spec
    names = tuple(a.name for a in spec.axes)
    xs = spec.axes[0].values
    if spec.config is not None:
        return
    if spec.system == "uu" and names == ("omega", "alpha"):
        vals = []
        for w in xs:
            try:
                vals.append(equilibrium_boundary_uu(spec.k, spec.m, spec.eps, float(w), spec.star))
            except (NoRootError, ValueError) as exc:
                grid.notes.append(f"omega={_num(w)}: {exc}")
                vals.append(math.nan)
        grid.boundary = np.array(vals)
        grid.boundary_side = "above"
    elif spec.system == "evenpow" and names == ("omega", "eps") and spec.m in (0, 1):
        grid.boundary = np.array([epsilon_bound(spec.m, spec.k, spec.alpha, float(w)) for w in xs])
        grid.boundary_side = "below"


# ---------------------------------------------------------------------------
# Agreement with the analytic boundary


def large_product_mask(grid: StabilityGrid) -> np.ndarray:
    """Cells whose ``alpha * omega`` is at least the grid median."""
    p = _cell_params(grid.spec)
    prod = (p["alpha"] * p["omega"]).reshape(grid.spec.shape)
    return prod >= np.median(prod)


def boundary_agreement(grid: StabilityGrid, margin: float = defaults.AGREEMENT_MARGIN, region: np.ndarray | None = None) -> float:
    """Fraction of cells on the predicted side of the boundary.

    Cells within ``margin`` relative distance of the boundary
    (``|y - b| <= margin |b|``), cells where the boundary is undefined and
    cells outside ``region`` are skipped.  On the stable side a cell agrees
    when it is convergent; on the other side when it is not.  Returns nan when
    no cell is left to score.
    """
    if grid.boundary is None or len(grid.axes) != 2:
        raise ValueError("grid has no boundary curve attached")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    ys = grid.axes[1].values
    b = grid.boundary[:, None]
    y = ys[None, :]
    with np.errstate(invalid="ignore"):
        usable = np.isfinite(b) & (np.abs(y - b) > margin * np.abs(b))
        stable = y > b if grid.boundary_side == "above" else y < b
    if region is not None:
        usable &= np.asarray(region, dtype=bool)
    conv = grid.labels == "convergent"
    agree = (stable & conv) | (~stable & ~conv)
    n = int(np.sum(usable))
    if n == 0:
        return math.nan
    return float(np.sum(agree & usable)) / n

