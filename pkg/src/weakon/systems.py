"""System models: a DSL vector field plus its compact domain box."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .dsl import VectorFieldExpr, parse
from .errors import ConfigError

__all__ = [
    "SystemModel", "from_dsl", "from_json", "pendulum", "vanderpol", "linear",
    "rotation", "builtin", "BUILTINS",
]


def _as_box(box, n: int) -> np.ndarray:
    b = np.array(box, dtype=float)
    if b.shape != (n, 2):
        raise ValueError(f"box must have shape ({n}, 2), got {b.shape}")
    if not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("box bounds must be finite with lo < hi on every axis")
    b.setflags(write=False)
    return b


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Vector field ``f(x, t)`` with exact Jacobian and domain box.

    ``metric`` is the metric transformation the system was declared with
    (``None`` means identity); interconnections use it to check that
    subsystems share a metric.
    """

    name: str
    expr: VectorFieldExpr
    box: np.ndarray
    metric: Any = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "box", _as_box(self.box, self.expr.n))

    @property
    def n(self) -> int:
        return self.expr.n

    @property
    def autonomous(self) -> bool:
        return self.expr.autonomous

    @property
    def params(self) -> Mapping[str, float]:
        return self.expr.params

    def f(self, x, t=0.0) -> np.ndarray:
        return self.expr.eval(x, t)

    def jac(self, x, t=0.0) -> np.ndarray:
        return self.expr.jacobian(x, t)

    def f_and_jac(self, x, t=0.0):
        v, p = self.expr.eval_with_partials(x, t)
        return v, p[..., : self.n]

    def divergence(self, x, t=0.0):
        return np.trace(self.jac(x, t), axis1=-2, axis2=-1)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.box[:, 0]) & (x <= self.box[:, 1]), axis=-1)

    def with_params(self, **values: float) -> SystemModel:
        return SystemModel(self.name, self.expr.with_params(**values), self.box,
                           self.metric, dict(self.meta))

    def with_box(self, box) -> SystemModel:
        return SystemModel(self.name, self.expr, box, self.metric, dict(self.meta))

    def with_metric(self, metric) -> SystemModel:
        return SystemModel(self.name, self.expr, self.box, metric, dict(self.meta))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "autonomous": self.autonomous,
            "params": dict(self.params),
            "source": self.expr.to_source(),
            "box": self.box.tolist(),
        }


def from_dsl(src: str, name: str = "system", box=None, params=None) -> SystemModel:
    expr = parse(src, params)
    if box is None:
        box = [[-1.0, 1.0]] * expr.n
    return SystemModel(name, expr, box)


def from_json(doc: str | Mapping) -> SystemModel:
    """Load ``{name, params, equations: [..], box?}``."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        equations = doc["equations"]
    except (KeyError, TypeError):
        raise ConfigError("system document needs an 'equations' list") from None
    if isinstance(equations, str) or not all(isinstance(e, str) for e in equations):
        raise ConfigError("'equations' must be a list of strings")
    params = {k: float(v) for k, v in (doc.get("params") or {}).items()}
    decl = "\n".join(f"param {k} = {v!r}" for k, v in params.items())
    return from_dsl(decl + "\n" + "\n".join(equations), doc.get("name", "system"),
                    doc.get("box"))


_PENDULUM = """
param b = 0.5
dx0 = x1
dx1 = -sin(x0) - b*x1
"""

_VANDERPOL = """
param mu = 1.0
dx0 = x1
dx1 = mu*(1 - x0^2)*x1 - x0
"""


def pendulum(b: float = 0.5, box=None) -> SystemModel:
    """Damped pendulum on the unrolled angle line.

    The default box spans three wells either side of the origin; trajectories
    started in ``[-2pi, 2pi] x [-4, 4]`` stay inside it.
    """
    if box is None:
        box = [[-6 * np.pi, 6 * np.pi], [-6.0, 6.0]]
    return from_dsl(_PENDULUM, "pendulum", box, {"b": b})


def vanderpol(mu: float = 1.0, box=None) -> SystemModel:
    if box is None:
        box = [[-6.0, 6.0], [-8.0, 8.0]]
    return from_dsl(_VANDERPOL, "vanderpol", box, {"mu": mu})


def linear(A, box=None, name: str = "linear") -> SystemModel:
    """Linear field ``x' = A x`` expressed in the DSL."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("linear system needs a square matrix")
    n = A.shape[0]
    lines = []
    for i in range(n):
        terms = [f"{float(A[i, j])!r}*x{j}" for j in range(n) if A[i, j] != 0.0]
        lines.append(f"dx{i} = " + (" + ".join(terms) if terms else "0"))
    if box is None:
        box = [[-5.0, 5.0]] * n
    return from_dsl("\n".join(lines), name, box)


def rotation(box=None) -> SystemModel:
    """Pure rotation ``x' = [[0, 1], [-1, 0]] x``; volume preserving."""
    if box is None:
        box = [[-2.0, 2.0]] * 2
    return from_dsl("dx0 = x1\ndx1 = -x0", "rotation", box)


BUILTINS = {
    "pendulum": pendulum,
    "vanderpol": vanderpol,
    "linear": linear,
    "rotation": rotation,
}


def builtin(name: str, **kwargs) -> SystemModel:
    try:
        ctor = BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown builtin system {name!r}; known: {sorted(BUILTINS)}") from None
    return ctor(**kwargs)
