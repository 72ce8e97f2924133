"""Odd polynomials in a scalar control and the exact constants of the
high-frequency average.

All gains are exact :class:`fractions.Fraction` values; callers convert to
float where they use them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .defaults import FIT_SAMPLES
from .exprlang import Expr, compile_exprs

__all__ = [
    "MAX_INDEX",
    "OddPolynomial",
    "CosineExpansion",
    "SingularFitError",
    "trig_power_expand",
    "avg_gain_A",
    "even_gain_B",
    "weak_limit_fraction",
    "weak_limit_coeff",
    "fit_odd_polynomial",
    "eval_odd_poly",
]

# Largest power index accepted by the exact-constant routines.  Above it the
# float conversions of A_m and 2**(4m+1) lose integer exactness.
MAX_INDEX = 30


class SingularFitError(ValueError):
    pass


def _check_index(n: int, name: str = "n") -> int:
    if int(n) != n or n < 0:
        raise ValueError(f"{name} must be a nonnegative integer, got {n!r}")
    if n > MAX_INDEX:
        raise OverflowError(f"{name}={n} exceeds the supported limit {MAX_INDEX}")
    return int(n)


@dataclass(frozen=True)
class OddPolynomial:
    """``p(u) = sum_n coeffs[n] * u**(2n+1)``."""

    coeffs: tuple
    sup_error: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.coeffs:
            raise ValueError("an odd polynomial needs at least one coefficient")

    @property
    def degree_index(self) -> int:
        return len(self.coeffs) - 1

    @property
    def degree(self) -> int:
        return 2 * self.degree_index + 1

    def __call__(self, u):
        return eval_odd_poly(self, u)


def eval_odd_poly(p: OddPolynomial, u):
    """Horner evaluation in ``u**2`` followed by one multiplication by ``u``,
    so ``p(-u) == -p(u)`` holds bit for bit."""
    u2 = u * u
    acc = p.coeffs[-1]
    for c in reversed(p.coeffs[:-1]):
        acc = acc * u2 + c
    return acc * u


@dataclass(frozen=True)
class CosineExpansion:
    """``cos(theta)**(2n+1) == sum(coef * cos(mult * theta) for mult, coef in terms)``."""

    n: int
    terms: tuple  # ((multiplier, Fraction), ...) ordered by l = 0..n

    def __call__(self, theta):
        return sum(float(c) * np.cos(b * theta) for b, c in self.terms)


def trig_power_expand(n: int) -> CosineExpansion:
    n = _check_index(n)
    b = 2 * n + 1
    scale = 2 ** (2 * n)
    terms = tuple((b - 2 * l, Fraction(math.comb(b, l), scale)) for l in range(n + 1))
    return CosineExpansion(n, terms)


def avg_gain_A(m: int) -> Fraction:
    """``A_m = sum_{l=0}^{m} C(2m+1, l)**2``."""
    m = _check_index(m, "m")
    return Fraction(sum(math.comb(2 * m + 1, l) ** 2 for l in range(m + 1)))


def even_gain_B(n_e: int) -> Fraction:
    """Mean of ``cos(theta)**(2 n_e)``: ``C(2 n_e, n_e) / 4**n_e``."""
    n_e = _check_index(n_e, "n_e")
    return Fraction(math.comb(2 * n_e, n_e), 2 ** (2 * n_e))


def weak_limit_fraction(m: int, l: int) -> Fraction:
    """``C(2m+1, l)**2 / 2**(4m+1)``, i.e. the weak-limit constant at unit
    dither strength."""
    m = _check_index(m, "m")
    if not 0 <= l <= m:
        raise ValueError(f"l must lie in [0, {m}], got {l}")
    return Fraction(math.comb(2 * m + 1, l) ** 2, 2 ** (4 * m + 1))


def weak_limit_coeff(m: int, l: int, alpha: float) -> float:
    return alpha * float(weak_limit_fraction(m, l))


def _as_vector_fn(h) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(h, Expr):
        fn = compile_exprs(h, ["u"], backend="numpy")
        return lambda u: np.broadcast_to(np.asarray(fn(u), dtype=float), u.shape)

    def call(u):
        try:
            out = np.asarray(h(u), dtype=float)
            if out.shape == u.shape:
                return out
        except (TypeError, ValueError):
            pass
        return np.array([float(h(float(v))) for v in u])

    return call


def fit_odd_polynomial(h, m: int, U: float, samples: int = FIT_SAMPLES) -> OddPolynomial:
    """Least-squares fit of ``u, u^3, ..., u^(2m+1)`` to ``h`` on ``[-U, U]``.

    The sample grid is uniform and symmetric.  The result carries the sup-norm
    error measured on a grid ten times denser (``sup_error``).  Coefficients
    below 1e-14 of the largest are round-off and are zeroed; trailing zeros
    are trimmed.
    """
    m = _check_index(m, "m")
    if samples < 2 * (m + 1):
        raise ValueError(f"need at least {2 * (m + 1)} samples for m={m}")
    if not U > 0:
        raise SingularFitError(f"fit interval half-width must be positive, got {U}")
    fn = _as_vector_fn(h)
    u = np.linspace(-U, U, samples)
    s = u / U
    basis = np.stack([s ** (2 * j + 1) for j in range(m + 1)], axis=1)
    scaled, _, rank, _ = np.linalg.lstsq(basis, fn(u), rcond=None)
    if rank < m + 1:
        raise SingularFitError(f"odd basis is rank deficient ({rank} < {m + 1})")
    coeffs = scaled / U ** (2 * np.arange(m + 1) + 1)
    big = np.max(np.abs(coeffs))
    coeffs[np.abs(coeffs) <= 1e-14 * big] = 0.0
    keep = len(coeffs)
    while keep > 1 and coeffs[keep - 1] == 0.0:
        keep -= 1
    poly = OddPolynomial(tuple(coeffs[:keep]))
    dense = np.linspace(-U, U, 10 * samples)
    err = float(np.max(np.abs(eval_odd_poly(poly, dense) - fn(dense))))
    return OddPolynomial(poly.coeffs, sup_error=err)
