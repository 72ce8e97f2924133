"""Systems non-affine in a scalar control.

A :class:`NonAffineSystem` describes

    dx/dt = f(x, t) + sum_n g_n(x, t) u^(2n+1) + eps * sum_i g_2i(x, t) u^(2i)
            + c(x, t) h(u)

where the last term is an optional channel through a scalar input
nonlinearity ``h``.  Every field is an expression over ``t, x1..xn``.

Config files are JSON objects::

    {
      "name": "uu",                                   # optional
      "dim": 1,
      "drift": ["x1"],
      "odd_channels": [{"power_index": 0, "exprs": ["0.1"]}, ...],
      "even_channels": {"strength": 0.05,             # optional
                        "items": [{"power_index": 1, "exprs": ["1"]}, ...]},
      "nonlinearity": {"exprs": ["2*cos(20*t)"],      # optional
                       "h": {"kind": "deadzone_saturation"}},
      "output": "x1^2",                               # optional
      "blowup_cutoff": 1e6                            # optional
    }

``power_index`` n of an odd channel multiplies ``u^(2n+1)``; ``power_index`` i
of an even channel multiplies ``u^(2i)`` (i >= 1).  ``h`` is either
``{"kind": "deadzone_saturation"}``,
``{"kind": "deadzone_saturation_plus_even", "eps": 0.1}`` or
``{"kind": "expression", "expr": "..."}`` in the variable ``u``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import defaults
from .exprlang import Expr, Num, Var, compile_exprs, free_vars, parse_expr

__all__ = [
    "BUILTINS",
    "DEFAULT_BLOWUP",
    "BlowUpError",
    "ConfigError",
    "DimensionMismatchError",
    "NonAffineSystem",
    "ScalarNonlinearity",
    "builtin",
    "deadzone_saturation",
    "load_system",
    "load_system_file",
    "rhs",
]

DEFAULT_BLOWUP = defaults.BLOWUP_CUTOFF

BUILTINS = ("example1", "example1_approx", "uu", "evenpow", "nonlfinal")


class ConfigError(ValueError):
    pass


class DimensionMismatchError(ConfigError):
    pass


class BlowUpError(ArithmeticError):
    pass


def deadzone_saturation(u: float) -> float:
    """Deadzone below 0.5, quadratic ramp up to 2, odd-symmetric saturation
    at 2.25 beyond."""
    a = abs(u)
    if a < 0.5:
        return 0.0
    s = 1.0 if u > 0 else -1.0
    if a <= 2.0:
        return s * (a - 0.5) ** 2
    return s * 2.25


# Same map written in the expression language (bitwise equal to the function
# above for finite u): min/max clip |u|-0.5 to [0, 1.5] before squaring.
DEADZONE_SOURCE = "sgn(u)*min(max(abs(u) - 0.5, 0), 1.5)^2"


@dataclass(frozen=True)
class ScalarNonlinearity:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("expression", "deadzone_saturation", "deadzone_saturation_plus_even"):
            raise ConfigError(f"unknown nonlinearity kind {self.kind!r}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "ScalarNonlinearity":
        kind = cfg.get("kind")
        if kind == "expression":
            if "expr" not in cfg:
                raise ConfigError("expression nonlinearity needs 'expr'")
            return cls(kind, (("expr", str(cfg["expr"])),))
        if kind == "deadzone_saturation_plus_even":
            return cls(kind, (("eps", float(cfg.get("eps", 0.0))),))
        return cls(str(kind))

    def to_config(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}

    @cached_property
    def expr(self) -> Expr:
        p = dict(self.params)
        if self.kind == "expression":
            e = parse_expr(p["expr"], variables=("u",))
        else:
            e = parse_expr(DEADZONE_SOURCE, variables=("u",))
            if self.kind == "deadzone_saturation_plus_even":
                e = e + Num(p["eps"]) * parse_expr("u^2 + u^4")
        return e

    @cached_property
    def _fn(self):
        return compile_exprs(self.expr, ["u"])

    def __call__(self, u: float) -> float:
        if self.kind == "deadzone_saturation":
            return deadzone_saturation(u)
        return self._fn(u)


def _state_names(dim: int) -> list[str]:
    return [f"x{i + 1}" for i in range(dim)]


@dataclass(frozen=True)
class NonAffineSystem:
    dim: int
    drift: tuple
    odd_channels: tuple = ()  # ((n, (g_1..g_dim)), ...), sorted by n
    even_channels: tuple = ()  # ((i, (g_1..g_dim)), ...), sorted by i
    eps: float = 0.0
    nonlinearity: tuple | None = None  # ((c_1..c_dim), ScalarNonlinearity)
    output: Expr | None = None
    name: str = "system"
    blowup_cutoff: float = DEFAULT_BLOWUP
    params: tuple = field(default=(), compare=False)

    @property
    def variables(self) -> list[str]:
        return ["t"] + _state_names(self.dim)

    @property
    def n_o(self) -> int | None:
        """Index of the dominant odd channel (None without odd channels)."""
        return self.odd_channels[-1][0] if self.odd_channels else None

    @property
    def n_e(self) -> int | None:
        return self.even_channels[-1][0] if self.even_channels else None

    def odd_channel(self, n: int) -> tuple:
        for k, g in self.odd_channels:
            if k == n:
                return g
        raise KeyError(f"system {self.name!r} has no odd channel with power index {n}")

    def even_channel(self, i: int) -> tuple:
        for k, g in self.even_channels:
            if k == i:
                return g
        raise KeyError(f"system {self.name!r} has no even channel with power index {i}")

    def rhs_exprs(self, with_even: bool = True) -> list[Expr]:
        """Right-hand side as expressions in ``t, x.., u, eps``."""
        u = Var("u")
        out = []
        for j in range(self.dim):
            e = self.drift[j]
            for n, g in self.odd_channels:
                e = e + g[j] * u ** Num(2 * n + 1)
            if self.nonlinearity is not None:
                chan, h = self.nonlinearity
                e = e + chan[j] * h.expr
            if with_even and self.even_channels:
                even = None
                for i, g in self.even_channels:
                    term = g[j] * u ** Num(2 * i)
                    even = term if even is None else even + term
                e = e + Var("eps") * even
            out.append(e)
        return out

    def kernel(self, backend: str = "math", with_even: bool | None = None):
        """Compiled ``fn(t, x1, ..., xn, u, eps) -> tuple`` of derivatives.

        Even channels are compiled out when ``eps == 0`` unless forced, so a
        zero strength evaluates exactly like an absent even part.
        """
        if with_even is None:
            with_even = bool(self.even_channels) and self.eps != 0
        key = (backend, with_even)
        cache = self.__dict__.setdefault("_kernels", {})
        if key not in cache:
            cache[key] = compile_exprs(
                self.rhs_exprs(with_even), self.variables + ["u", "eps"], backend
            )
        return cache[key]

    def with_eps(self, eps: float) -> "NonAffineSystem":
        from dataclasses import replace

        return replace(self, eps=float(eps))

    def rhs(self, x, t: float, u: float) -> np.ndarray:
        return rhs(self, x, t, u)


def rhs(sys: NonAffineSystem, x, t: float, u: float) -> np.ndarray:
    """Evaluate the vector field at state ``x``, time ``t`` and control ``u``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != sys.dim:
        raise DimensionMismatchError(f"state has length {x.shape[0]}, system dim is {sys.dim}")
    try:
        out = sys.kernel()(float(t), *map(float, x), float(u), float(sys.eps))
    except (OverflowError, ZeroDivisionError) as exc:
        raise BlowUpError(str(exc)) from exc
    out = np.array(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite vector field value")
    return out


# ---------------------------------------------------------------------------
# Config ingestion


def _parse_vector(items, dim: int, what: str, names) -> tuple:
    if isinstance(items, (str, int, float)):
        items = [items]
    if not isinstance(items, Sequence):
        raise ConfigError(f"{what} must be a list of expression strings")
    if len(items) != dim:
        raise DimensionMismatchError(f"{what} has {len(items)} entries, expected dim={dim}")
    out = []
    for s in items:
        e = parse_expr(str(s), variables=names)
        out.append(e)
    return tuple(out)


def _parse_channels(entries, dim, what, names, min_index) -> tuple:
    if not isinstance(entries, Sequence) or isinstance(entries, str):
        raise ConfigError(f"{what} must be a list of {{power_index, exprs}} objects")
    seen = {}
    for entry in entries:
        if not isinstance(entry, Mapping) or "power_index" not in entry or "exprs" not in entry:
            raise ConfigError(f"each {what} entry needs 'power_index' and 'exprs'")
        n = entry["power_index"]
        if not isinstance(n, int) or isinstance(n, bool) or n < min_index:
            raise ConfigError(f"{what} power_index must be an integer >= {min_index}, got {n!r}")
        if n in seen:
            raise ConfigError(f"duplicate {what} power_index {n}")
        seen[n] = _parse_vector(entry["exprs"], dim, f"{what}[{n}]", names)
    return tuple(sorted(seen.items()))


_KNOWN_KEYS = {
    "name",
    "dim",
    "drift",
    "odd_channels",
    "even_channels",
    "nonlinearity",
    "output",
    "blowup_cutoff",
    "params",
}


def load_system(config) -> NonAffineSystem:
    """Build a validated system from a JSON string or an already-decoded dict."""
    if isinstance(config, (str, bytes)):
        try:
            config = json.loads(config)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(config, Mapping):
        raise ConfigError("system config must be a JSON object")
    unknown = set(config) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown system config keys: {sorted(unknown)}")
    for key in ("dim", "drift"):
        if key not in config:
            raise ConfigError(f"system config is missing {key!r}")
    dim = config["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ConfigError(f"dim must be a positive integer, got {dim!r}")
    names = ["t"] + _state_names(dim)
    drift = _parse_vector(config["drift"], dim, "drift", names)
    odd = _parse_channels(config.get("odd_channels", []), dim, "odd_channels", names, 0)

    eps = 0.0
    even: tuple = ()
    if config.get("even_channels") is not None:
        ev = config["even_channels"]
        if not isinstance(ev, Mapping) or "items" not in ev:
            raise ConfigError("even_channels must be an object with 'strength' and 'items'")
        eps = float(ev.get("strength", 0.0))
        even = _parse_channels(ev["items"], dim, "even_channels", names, 1)

    nonlin = None
    if config.get("nonlinearity") is not None:
        nl = config["nonlinearity"]
        if not isinstance(nl, Mapping) or "exprs" not in nl or "h" not in nl:
            raise ConfigError("nonlinearity must be an object with 'exprs' and 'h'")
        chan = _parse_vector(nl["exprs"], dim, "nonlinearity", names)
        nonlin = (chan, ScalarNonlinearity.from_config(nl["h"]))
        nonlin[1].expr  # parse eagerly so errors surface at load time

    if not odd and nonlin is None:
        raise ConfigError("system has no control channel")

    output = None
    if config.get("output") is not None:
        output = parse_expr(str(config["output"]), variables=names)

    cutoff = float(config.get("blowup_cutoff", DEFAULT_BLOWUP))
    if not cutoff > 0:
        raise ConfigError("blowup_cutoff must be positive")
    params = tuple(sorted(dict(config.get("params", {})).items()))
    return NonAffineSystem(
        dim=dim,
        drift=drift,
        odd_channels=odd,
        even_channels=even,
        eps=eps,
        nonlinearity=nonlin,
        output=output,
        name=str(config.get("name", "system")),
        blowup_cutoff=cutoff,
        params=params,
    )


def load_system_file(path) -> NonAffineSystem:
    return load_system(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Built-in systems


def builtin_config(name: str, eps: float = 0.0, a1: float = 0.05, a3: float = 0.25) -> dict:
    """Config dict of a built-in system (see :func:`builtin`)."""
    if name == "example1":
        return {
            "name": "example1",
            "dim": 1,
            "drift": ["0.5*cos(2*t)*x1^2"],
            "nonlinearity": {"exprs": ["2*cos(20*t)"], "h": {"kind": "deadzone_saturation"}},
        }
    if name == "example1_approx":
        return {
            "name": "example1_approx",
            "dim": 1,
            "drift": ["0.5*cos(2*t)*x1^2"],
            "odd_channels": [
                {"power_index": 0, "exprs": [f"{a1!r}*2*cos(20*t)"]},
                {"power_index": 1, "exprs": [f"{a3!r}*2*cos(20*t)"]},
            ],
            "params": {"a1": a1, "a3": a3},
        }
    if name == "uu":
        return {
            "name": "uu",
            "dim": 1,
            "drift": ["x1"],
            "odd_channels": [{"power_index": n, "exprs": ["0.1"]} for n in range(3)],
            "even_channels": {
                "strength": eps,
                "items": [{"power_index": 1, "exprs": ["1"]}, {"power_index": 2, "exprs": ["1"]}],
            },
        }
    if name == "evenpow":
        return {
            "name": "evenpow",
            "dim": 1,
            "drift": ["0"],
            "odd_channels": [{"power_index": n, "exprs": ["0.1"]} for n in range(2)],
            "even_channels": {"strength": eps, "items": [{"power_index": 2, "exprs": ["1"]}]},
        }
    if name == "nonlfinal":
        return {
            "name": "nonlfinal",
            "dim": 1,
            "drift": ["x1"],
            "nonlinearity": {"exprs": ["1"], "h": {"kind": "deadzone_saturation"}},
            "even_channels": {
                "strength": eps,
                "items": [{"power_index": 1, "exprs": ["1"]}, {"power_index": 2, "exprs": ["1"]}],
            },
        }
    raise ConfigError(f"unknown builtin {name!r} (choose from {', '.join(BUILTINS)})")


def builtin(name: str, eps: float = 0.0, **params) -> NonAffineSystem:
    """Named systems:

    * ``example1`` -- ``0.5 cos(2t) x^2 + 2 cos(20t) h(u)`` with the deadzone /
      saturation ``h``;
    * ``example1_approx`` -- same plant with ``h`` replaced by
      ``a1 u + a3 u^3`` (defaults 0.05, 0.25);
    * ``uu`` -- ``x + 0.1 (u + u^3 + u^5) + eps (u^2 + u^4)``;
    * ``evenpow`` -- ``0.1 u + 0.1 u^3 + eps u^4``;
    * ``nonlfinal`` -- ``x + h(u) + eps (u^2 + u^4)``.
    """
    return load_system(builtin_config(name, eps=eps, **params))


def state_vector(x0, dim: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (dim,):
        raise DimensionMismatchError(f"initial state has shape {x.shape}, expected ({dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    return x


def is_finite_state(x) -> bool:
    return all(math.isfinite(v) for v in x)
