"""Numerical oracles for the averaging step.

* :func:`empirical_average_field` measures the mean drift of the full
  dithered closed loop over whole dither periods; it shares nothing with the
  closed-form averages in :mod:`escna.esc` except the plant.
* :func:`verify_uniform_limits` and :func:`verify_weak_limits` check the two
  hypotheses the averaging argument rests on for the dither components
  ``h_{c/s,n,l}(t) = (alpha omega)^(b_n / 2 b_m) C(b_n, l) / 4^n * cos/sin(b_{n,l} omega t)``
  (``b_n = 2n + 1``, ``b_{n,l} = 2n + 1 - 2l``): their running integrals
  ``H`` vanish uniformly and the products ``h H`` converge weakly.

Integrals are composite Simpson on uniform grids with a fixed number of nodes
per dither period.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import defaults
from .esc import EscController
from .integrate import _rk4, closed_loop_field
from .model import BlowUpError, NonAffineSystem, state_vector
from .oddpoly import weak_limit_coeff

__all__ = [
    "DEFAULT_NODES_PER_PERIOD",
    "MIN_NODES_PER_PERIOD",
    "TEST_FUNCTIONS",
    "DitherComponent",
    "LimitItem",
    "LimitReport",
    "dither_components",
    "empirical_average_field",
    "fit_decay_order",
    "pairing_integral",
    "verify_uniform_limits",
    "verify_weak_limits",
]

DEFAULT_NODES_PER_PERIOD = defaults.NODES_PER_PERIOD
MIN_NODES_PER_PERIOD = defaults.MIN_NODES_PER_PERIOD

TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "1": lambda s: np.ones_like(s),
    "tau": lambda s: s,
    "tau^2": lambda s: s**2,
    "cos(2 pi tau)": lambda s: np.cos(2 * np.pi * s),
    "sin(2 pi tau)": lambda s: np.sin(2 * np.pi * s),
}


def empirical_average_field(
    sys: NonAffineSystem,
    c: EscController,
    x,
    t: float,
    periods: int = 10,
    steps_per_period: int = 200,
) -> np.ndarray:
    """Mean displacement rate ``(x(t + P) - x(t)) / P`` of the closed loop,
    ``P = periods * 2 pi / omega``."""
    if periods < 1:
        raise ValueError("periods must be >= 1")
    x = state_vector(x, sys.dim)
    fn, _ = closed_loop_field(sys, c)
    window = periods * 2 * math.pi / c.omega
    dt = window / (periods * steps_per_period)
    traj = _rk4(fn, tuple(map(float, x)), float(t), window, dt, sys.blowup_cutoff)
    if traj.blowup:
        raise BlowUpError(traj.blowup_reason)
    return (traj.final_state - x) / window


# ---------------------------------------------------------------------------
# Dither components and their limits


@dataclass(frozen=True)
class DitherComponent:
    kind: str  # "c" or "s"
    n: int
    l: int
    m: int

    @property
    def multiplier(self) -> int:
        return 2 * self.n + 1 - 2 * self.l

    def amplitude(self, alpha: float, omega: float) -> float:
        b_n, b_m = 2 * self.n + 1, 2 * self.m + 1
        return (alpha * omega) ** (b_n / (2 * b_m)) * math.comb(b_n, self.l) / 2 ** (2 * self.n)

    def __call__(self, t, alpha: float, omega: float):
        trig = np.cos if self.kind == "c" else np.sin
        return self.amplitude(alpha, omega) * trig(self.multiplier * omega * t)

    @property
    def label(self) -> str:
        return f"h_{self.kind},{self.n},{self.l}"


def dither_components(m: int) -> list[DitherComponent]:
    return [DitherComponent(kind, n, l, m) for n in range(m + 1) for l in range(n + 1) for kind in ("c", "s")]


def _grid(t_end: float, omega: float, multiplier: int, nodes_per_period: int) -> np.ndarray:
    if nodes_per_period < MIN_NODES_PER_PERIOD:
        raise ValueError(
            f"{nodes_per_period} nodes per period is below the aliasing guard ({MIN_NODES_PER_PERIOD})"
        )
    period = 2 * math.pi / (multiplier * omega)
    n = max(2, math.ceil(t_end / period * nodes_per_period))
    n += n % 2  # Simpson wants an even number of intervals
    return np.linspace(0.0, t_end, n + 1)


def pairing_integral(f: Callable, phi: Callable, omega: float, nodes_per_period: int = DEFAULT_NODES_PER_PERIOD, top_multiplier: int = 1) -> float:
    """``int_0^1 f(tau) phi(tau) dtau`` by composite Simpson."""
    s = _grid(1.0, omega, top_multiplier, nodes_per_period)
    return float(simpson(f(s) * phi(s), x=s))


def fit_decay_order(omegas: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(value)`` against ``log(omega)``."""
    v = np.asarray(values, dtype=float)
    if np.all(v == 0):
        return -math.inf
    v = np.maximum(v, np.finfo(float).tiny)
    slope, _ = np.polyfit(np.log(np.asarray(omegas, dtype=float)), np.log(v), 1)
    return float(slope)


@dataclass
class LimitItem:
    name: str
    test_function: str | None
    limit: float
    discrepancies: list
    decay_order: float
    bound: float | None
    passed: bool


@dataclass
class LimitReport:
    kind: str  # "uniform" | "weak"
    m: int
    alpha: float
    omegas: list
    items: list = field(default_factory=list)
    l: int | None = None

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        for item in out["items"]:
            if math.isinf(item["decay_order"]):
                item["decay_order"] = None
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _check_omegas(omegas):
    omegas = [float(w) for w in omegas]
    if len(omegas) < 3:
        raise ValueError("need at least three omega values")
    if any(b <= a for a, b in zip(omegas, omegas[1:])):
        raise ValueError("omega values must be strictly increasing")
    return omegas


def verify_uniform_limits(
    m: int,
    omegas: Sequence[float],
    alpha: float,
    t_end: float = 1.0,
    nodes_per_period: int = DEFAULT_NODES_PER_PERIOD,
) -> LimitReport:
    """``max_{t in [0, t_end]} |H(t)|`` per dither component and omega.

    ``H`` is the running integral of the component (cumulative Simpson).  A
    component passes when the maximum decreases along ``omegas`` and the
    fitted order is at most ``b_n / (2 b_m) - 1 + 0.1``.
    """
    omegas = _check_omegas(omegas)
    report = LimitReport("uniform", m, alpha, omegas)
    for comp in dither_components(m):
        maxima = []
        for w in omegas:
            s = _grid(t_end, w, comp.multiplier, nodes_per_period)
            H = cumulative_simpson(comp(s, alpha, w), x=s, initial=0.0)
            maxima.append(float(np.max(np.abs(H))))
        order = fit_decay_order(omegas, maxima)
        bound = (2 * comp.n + 1) / (2 * (2 * m + 1)) - 1.0 + 0.1
        if all(v == 0 for v in maxima):
            ok = True
        else:
            ok = all(b < a for a, b in zip(maxima, maxima[1:])) and order <= bound
        report.items.append(LimitItem(comp.label, None, 0.0, maxima, order, bound, ok))
    return report


def _pair_limit(h: DitherComponent, H: DitherComponent, alpha: float) -> float:
    """Weak limit of ``h * H`` with ``H(t) = int_0^t``.

    Only top-channel components at the same frequency survive: ``s * H_c -> a_{m,l} / b_{m,l}`` and ``c * H_s -> -a_{m,l} / b_{m,l}``.
    """
    if h.n != h.m or H.n != H.m or h.l != H.l or h.kind == H.kind:
        return 0.0
    a = weak_limit_coeff(h.m, h.l, alpha) / h.multiplier
    return a if h.kind == "s" else -a


def verify_weak_limits(
    m: int,
    l: int,
    omegas: Sequence[float],
    alpha: float,
    test_functions: dict | None = None,
    nodes_per_period: int = DEFAULT_NODES_PER_PERIOD,
) -> LimitReport:
    """Weak limits of ``h_s * H_c`` and ``h_c * H_s`` for the top-channel
    component ``(m, l)`` and its cross-frequency partners ``(m, j != l)``.

    Same-frequency pairs converge to ``+-a_{m,l} / b_{m,l}``; cross-frequency
    pairs converge to 0.
    Each pair is tested against every test function on [0, 1]; it passes when
    the log-log fitted decay order of the discrepancy is negative.  Endpoint
    terms like ``sin(b omega) / omega`` make single discrepancies oscillate
    with omega, so spread ``omegas`` over a decade or more.
    """
    if not 0 <= l <= m:
        raise ValueError(f"l must lie in [0, {m}]")
    if nodes_per_period < MIN_NODES_PER_PERIOD:
        raise ValueError(
            f"{nodes_per_period} nodes per period is below the aliasing guard ({MIN_NODES_PER_PERIOD})"
        )
    omegas = _check_omegas(omegas)
    tests = TEST_FUNCTIONS if test_functions is None else test_functions
    comps = dither_components(m)
    top_s = {cmp.l: cmp for cmp in comps if cmp.n == m and cmp.kind == "s"}
    top_c = {cmp.l: cmp for cmp in comps if cmp.n == m and cmp.kind == "c"}
    pairs = [(top_s[l], top_c[l]), (top_c[l], top_s[l])]
    for j in range(m + 1):
        if j != l:
            pairs += [(top_s[l], top_c[j]), (top_c[l], top_s[j])]
    top = 2 * m + 1
    report = LimitReport("weak", m, alpha, omegas, l=l)
    # discrepancies[pair][test] -> list over omega
    table = {(i, name): [] for i in range(len(pairs)) for name in tests}
    for w in omegas:
        s = _grid(1.0, w, top, nodes_per_period)
        values = {}
        running = {}
        for cmp in comps:
            v = cmp(s, alpha, w)
            values[cmp] = v
            running[cmp] = cumulative_simpson(v, x=s, initial=0.0)
        phis = {name: fn(s) for name, fn in tests.items()}
        for i, (h, H) in enumerate(pairs):
            prod = values[h] * running[H]
            limit = _pair_limit(h, H, alpha)
            for name, phi in phis.items():
                integral = simpson(prod * phi, x=s)
                expected = limit * simpson(phi, x=s)
                table[(i, name)].append(float(abs(integral - expected)))
    for i, (h, H) in enumerate(pairs):
        limit = _pair_limit(h, H, alpha)
        for name in tests:
            disc = table[(i, name)]
            order = fit_decay_order(omegas, disc)
            ok = all(d == 0 for d in disc) or order < 0
            report.items.append(
                LimitItem(f"{h.label} * H{H.label[1:]}", name, limit, disc, order, None, ok)
            )
    return report
