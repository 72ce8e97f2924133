"""Extremum-seeking controllers for odd-polynomial input channels and the
closed-form averaged systems they induce.

The controller is

    u(x, t) = (alpha * omega) ** (1 / (2 (2m + 1))) * cos(omega t + k V(x, t))

(or ``k y`` with a measured output ``y`` in place of ``k V``).  The amplitude
exponent makes the ``u^(2m+1)`` channel contribute an omega-free average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import optimize

from .exprlang import Expr, Num, compile_exprs, diff_expr, free_vars, parse_expr, simplify
from .model import NonAffineSystem
from .oddpoly import avg_gain_A, even_gain_B

__all__ = [
    "AveragingError",
    "AveragedSystem",
    "EscController",
    "NoRootError",
    "averaged_system_conjecture",
    "averaged_system_theorem1",
    "control_value",
    "epsilon_bound",
    "epsilon_bound_evenpow",
    "epsilon_bound_heuristic",
    "equilibrium_boundary_uu",
    "synthesize_controller",
    "uu_boundary_residual",
]


class AveragingError(ValueError):
    pass


class NoRootError(ValueError):
    def __init__(self, message, bracket):
        super().__init__(f"{message}; search bracket [{bracket[0]:g}, {bracket[1]:g}]")
        self.bracket = bracket


@dataclass(frozen=True)
class EscController:
    m: int
    alpha: float
    omega: float
    k: float
    V: Expr | None = None
    output_feedback: bool = False

    @property
    def amplitude(self) -> float:
        return (self.alpha * self.omega) ** (1.0 / (2 * (2 * self.m + 1)))

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    def to_config(self) -> dict:
        cfg = {"m": self.m, "alpha": self.alpha, "omega": self.omega, "k": self.k}
        if self.output_feedback:
            cfg["output_feedback"] = True
        else:
            cfg["V"] = str(self.V)
        return cfg

    def phase_function(self, dim: int, backend: str = "math"):
        """Compiled ``V(t, x1..x_dim)``."""
        if self.output_feedback:
            raise AveragingError("output-feedback controllers have no V")
        cache = self.__dict__.setdefault("_phase_cache", {})
        key = (dim, backend)
        if key not in cache:
            cache[key] = compile_exprs(self.V, ["t"] + [f"x{i + 1}" for i in range(dim)], backend)
        return cache[key]


def synthesize_controller(
    m: int,
    alpha: float,
    omega: float,
    k: float,
    V: Expr | str | None = None,
    output_feedback: bool = False,
) -> EscController:
    if int(m) != m or m < 0:
        raise ValueError(f"m must be a nonnegative integer, got {m!r}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega!r}")
    if output_feedback:
        if V is not None:
            raise ValueError("give either V or output_feedback, not both")
        return EscController(int(m), float(alpha), float(omega), float(k), None, True)
    if V is None:
        raise ValueError("a V(x, t) expression is required unless output_feedback is set")
    if isinstance(V, str):
        V = parse_expr(V)
    bad = {v for v in free_vars(V) if v != "t" and not v.startswith("x")}
    if bad:
        raise ValueError(f"V may only depend on t and x1..xn, found {sorted(bad)}")
    return EscController(int(m), float(alpha), float(omega), float(k), V, False)


def control_value(c: EscController, x, t: float, y: float | None = None) -> float:
    if c.output_feedback:
        if y is None:
            raise ValueError("output-feedback controller needs the measured output y")
        phase = c.omega * t + c.k * float(y)
    else:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        phase = c.omega * t + c.k * c.phase_function(x.shape[0])(float(t), *map(float, x))
    return c.amplitude * math.cos(phase)


# ---------------------------------------------------------------------------
# Averaged systems


@dataclass(frozen=True)
class AveragedSystem:
    dim: int
    field: tuple  # expressions in t, x1..xn (x1..xn stand for the averaged state)
    provenance: str  # "theorem1" | "conjecture1"
    constants: dict = dc_field(default_factory=dict, compare=False)

    @cached_property
    def kernel(self):
        return compile_exprs(list(self.field), ["t"] + [f"x{i + 1}" for i in range(self.dim)])

    def evaluate(self, x, t: float) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array(self.kernel(float(t), *map(float, x)))

    def __str__(self):
        return "\n".join(f"d x{i + 1}/dt = {e}" for i, e in enumerate(self.field))


def _gradient(sys: NonAffineSystem, c: EscController) -> list[Expr]:
    if c.output_feedback:
        if sys.output is None:
            raise AveragingError("output-feedback controller needs a system output map psi")
        target = sys.output
    else:
        if c.V is None:
            raise AveragingError("controller has no V")
        target = c.V
    return [diff_expr(target, f"x{i + 1}") for i in range(sys.dim)]


def _correction_gain(k: float, scale: float, n: int) -> float:
    return k * scale * float(avg_gain_A(n)) / 2 ** (4 * n + 1)


def _assemble(sys, g, grad, gain, even=None) -> tuple:
    """``f [+ even] - gain * g (g . grad)`` component-wise, constant-folded."""
    proj = None
    for gj, dj in zip(g, grad):
        term = gj * dj
        proj = term if proj is None else proj + term
    out = []
    for i in range(sys.dim):
        e = sys.drift[i]
        if even is not None:
            e = e + even[i]
        e = e - Num(gain) * g[i] * proj
        out.append(simplify(e))
    return tuple(out)


def averaged_system_theorem1(sys: NonAffineSystem, c: EscController) -> AveragedSystem:
    """``f - k alpha A_m g_m g_m^T grad(V)^T / 2^(4m+1)``."""
    if sys.nonlinearity is not None:
        raise AveragingError("system has a non-polynomial input channel; fit it first")
    if sys.even_channels and sys.eps != 0:
        raise AveragingError("theorem-1 average needs eps = 0 (use the conjecture)")
    if sys.n_o is None:
        raise AveragingError("system has no odd control channel")
    if c.m != sys.n_o:
        raise AveragingError(f"controller m={c.m} does not match dominant channel n_o={sys.n_o}")
    grad = _gradient(sys, c)
    gain = _correction_gain(c.k, c.alpha, c.m)
    fld = _assemble(sys, sys.odd_channel(c.m), grad, gain)
    return AveragedSystem(
        sys.dim,
        fld,
        "theorem1",
        {"A": int(avg_gain_A(c.m)), "m": c.m, "gain": gain, "alpha_exponent": 1.0, "omega_exponent": 0.0},
    )


def averaged_system_conjecture(sys: NonAffineSystem, c: EscController) -> AveragedSystem:
    """Average keeping only the dominant odd (``n_o``) and even (``n_e``) channels.

    Odd part: ``-k alpha^r omega^(r-1) A_{n_o} g g^T grad(V)^T / 2^(4 n_o + 1)``
    with ``r = (2 n_o + 1) / (2m + 1)``; even part:
    ``eps B_{n_e} (alpha omega)^(n_e / (2m + 1)) g_{2 n_e}``.
    """
    if sys.nonlinearity is not None:
        raise AveragingError("system has a non-polynomial input channel; fit it first")
    n_o = sys.n_o
    if n_o is None:
        raise AveragingError("system has no odd control channel")
    ratio = float(Fraction(2 * n_o + 1, 2 * c.m + 1))
    scale = c.alpha**ratio * c.omega ** (ratio - 1.0)
    gain = _correction_gain(c.k, scale, n_o)
    grad = _gradient(sys, c)
    even = None
    consts = {
        "A": int(avg_gain_A(n_o)),
        "n_o": n_o,
        "m": c.m,
        "gain": gain,
        "alpha_exponent": ratio,
        "omega_exponent": ratio - 1.0,
    }
    if sys.even_channels and sys.eps != 0:
        n_e = sys.n_e
        even_exp = float(Fraction(n_e, 2 * c.m + 1))
        coef = sys.eps * float(even_gain_B(n_e)) * (c.alpha * c.omega) ** even_exp
        even = [Num(coef) * gi for gi in sys.even_channel(n_e)]
        consts.update({"B": str(even_gain_B(n_e)), "n_e": n_e, "even_coefficient": coef, "even_exponent": even_exp})
    fld = _assemble(sys, sys.odd_channel(n_o), grad, gain, even)
    return AveragedSystem(sys.dim, fld, "conjecture1", consts)


# ---------------------------------------------------------------------------
# Stability-boundary formulas for the uu and evenpow systems

_UU_ODD_GAIN = 0.1  # g_2 of uu; 2k g^2 = 2k/100
_UU_BRACKET = (1e-6, 1e6)


def _uu_terms(alpha, k, m, eps, omega):
    b_m = 2 * m + 1
    ratio = 5.0 / b_m
    stab = 2 * k * _UU_ODD_GAIN**2 * float(avg_gain_A(2)) / 2**9 * alpha**ratio * omega ** (ratio - 1.0)
    push = eps * float(even_gain_B(2)) * (alpha * omega) ** (4.0 / (2 * b_m))
    return stab, push


def uu_boundary_residual(alpha, k, m, eps, omega, x_star) -> float:
    """``(stab(alpha) - 1) x* - eps B_2 (alpha omega)^(2/(2m+1))``."""
    stab, push = _uu_terms(alpha, k, m, eps, omega)
    return (stab - 1.0) * x_star - push


def equilibrium_boundary_uu(
    k: float,
    m: int,
    eps: float,
    omega: float,
    x_star: float,
    bracket: Sequence[float] = _UU_BRACKET,
) -> float:
    """Smallest alpha for which the conjectured average of ``uu`` settles at
    ``|x| <= x_star``.

    The root is located by a logarithmic sign-change scan over ``bracket``
    followed by bisection down to a few ulps.
    """
    if m not in (0, 1, 2):
        raise ValueError(f"m must be 0, 1 or 2, got {m}")
    if not (k > 0 and omega > 0 and x_star > 0):
        raise ValueError("k, omega and x_star must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lo, hi = map(float, bracket)

    def F(a):
        return uu_boundary_residual(a, k, m, eps, omega, x_star)

    grid = np.geomspace(lo, hi, 2001)
    prev_a, prev_f = grid[0], F(grid[0])
    if prev_f >= 0:
        if prev_f == 0:
            return float(prev_a)
        raise NoRootError("residual already nonnegative at the lower end", (lo, hi))
    for a in grid[1:]:
        fa = F(a)
        if fa == 0:
            return float(a)
        if fa > 0:
            return float(
                optimize.bisect(F, prev_a, a, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=2000)
            )
        prev_a, prev_f = a, fa
    raise NoRootError("no sign change of the boundary residual", (lo, hi))


def epsilon_bound_evenpow(k: float, alpha: float, omega: float) -> float:
    """``(2k (0.1^2) A_1 alpha - 1) / ((alpha omega)^(2/3) B_2)`` for ``evenpow``, m = 1."""
    num = 2 * k * 0.1**2 * float(avg_gain_A(1)) * alpha - 1.0
    return num / ((alpha * omega) ** (2.0 / 3.0) * float(even_gain_B(2)))


def epsilon_bound_heuristic(alpha: float, omega: float) -> float:
    """``1 / sqrt(alpha omega)``: the m = 0 comparison of dominant powers."""
    return 1.0 / math.sqrt(alpha * omega)


def epsilon_bound(m: int, k: float, alpha: float, omega: float) -> float:
    if m == 1:
        return epsilon_bound_evenpow(k, alpha, omega)
    if m == 0:
        return epsilon_bound_heuristic(alpha, omega)
    raise ValueError(f"no epsilon bound for m={m}")
