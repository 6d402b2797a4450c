"""Metric transformations and the generalized Jacobian ``F = (Theta J + dTheta/dt) Theta^-1``.

All metric objects evaluate on a single point ``x`` of shape ``(n,)`` or on a
batch ``(N, n)`` with times broadcast against the batch.  ``Theta^-1`` is
never formed explicitly: ``F`` comes from one LU solve with partial pivoting
against ``Theta^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dsl import ScalarExpr, parse_scalar
from .errors import MetricError
from .spectra import sym_part

__all__ = [
    "MetricTransform", "IdentityMetric", "ConstantMetric", "BlockScalingMetric",
    "StateTimeMetric", "StorageFunction", "AugmentedMetric", "GeneralizedJacobian",
    "augment_storage", "theta_dot", "generalized_jacobian", "generalized_jacobians",
    "feedback_metric", "hierarchical_metric", "same_metric",
    "DEFAULT_CONDITION_CAP", "DEFAULT_PD_FLOOR", "DEFAULT_FD_STEP",
]

DEFAULT_CONDITION_CAP = 1e8
DEFAULT_PD_FLOOR = 1e-12
DEFAULT_FD_STEP = 1e-5


def _batch(x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    return np.broadcast_to(x, shape + x.shape[-1:]), np.broadcast_to(t, shape), shape


class MetricTransform:
    """Base class; subclasses provide ``theta`` and ``theta_dot``."""

    kind = "abstract"
    n: int
    condition_cap: float = DEFAULT_CONDITION_CAP
    pd_floor: float = DEFAULT_PD_FLOOR
    #: True when Theta does not depend on x or t
    constant = False

    def theta(self, x, t=0.0) -> np.ndarray:
        raise NotImplementedError

    def theta_dot(self, x, t, xdot) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "n": self.n}

    def check(self, Theta: np.ndarray) -> None:
        """Raise :class:`MetricError` if any Theta in the stack is unusable."""
        if not np.all(np.isfinite(Theta)):
            raise MetricError("metric has non-finite entries")
        sv = np.linalg.svd(Theta, compute_uv=False)
        smin = sv[..., -1]
        if np.any(smin == 0.0):
            raise MetricError("metric transformation is singular")
        cond = sv[..., 0] / smin
        if np.any(cond > self.condition_cap):
            raise MetricError(
                f"metric condition number {float(np.max(cond)):.3g} exceeds cap {self.condition_cap:.3g}")
        if np.any(smin * smin < self.pd_floor):
            raise MetricError("Theta^T Theta falls below the positive-definiteness floor")


class IdentityMetric(MetricTransform):
    kind = "identity"
    constant = True

    def __init__(self, n: int):
        self.n = int(n)

    def theta(self, x, t=0.0):
        _, _, shape = _batch(x, t)
        return np.broadcast_to(np.eye(self.n), shape + (self.n, self.n)).copy()

    def theta_dot(self, x, t, xdot):
        _, _, shape = _batch(x, t)
        return np.zeros(shape + (self.n, self.n))

    def check(self, Theta):
        pass


class ConstantMetric(MetricTransform):
    kind = "constant"
    constant = True

    def __init__(self, matrix, condition_cap: float = DEFAULT_CONDITION_CAP,
                 pd_floor: float = DEFAULT_PD_FLOOR):
        M = np.array(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise MetricError("constant metric needs a square matrix")
        M.setflags(write=False)
        self.matrix = M
        self.n = M.shape[0]
        self.condition_cap = condition_cap
        self.pd_floor = pd_floor
        self.check(M)

    def theta(self, x, t=0.0):
        _, _, shape = _batch(x, t)
        return np.broadcast_to(self.matrix, shape + (self.n, self.n)).copy()

    def theta_dot(self, x, t, xdot):
        _, _, shape = _batch(x, t)
        return np.zeros(shape + (self.n, self.n))

    def describe(self):
        return {"kind": self.kind, "n": self.n, "matrix": self.matrix.tolist()}


class BlockScalingMetric(ConstantMetric):
    """``diag(s_1 I_{d_1}, s_2 I_{d_2}, ...)`` from ``(dim, scale)`` pairs."""

    kind = "block_scaling"

    def __init__(self, blocks: Sequence[tuple[int, float]],
                 condition_cap: float = DEFAULT_CONDITION_CAP,
                 pd_floor: float = DEFAULT_PD_FLOOR):
        blocks = [(int(d), float(s)) for d, s in blocks]
        if not blocks or any(d < 1 for d, _ in blocks):
            raise MetricError("block dimensions must be positive")
        if any(s == 0.0 or not np.isfinite(s) for _, s in blocks):
            raise MetricError("block scales must be finite and non-zero")
        self.blocks = tuple(blocks)
        diag = np.concatenate([np.full(d, s) for d, s in blocks])
        super().__init__(np.diag(diag), condition_cap, pd_floor)

    def describe(self):
        return {"kind": self.kind, "n": self.n, "blocks": [list(b) for b in self.blocks]}


class StateTimeMetric(MetricTransform):
    """``Theta(x, t)`` from a callable, with derivative suppliers or finite differences.

    ``theta_fn(x, t)`` maps one point to an ``n x n`` matrix.  ``dtheta_dt(x, t)``
    returns an ``n x n`` matrix and ``dtheta_dx(x, t)`` an ``(n, n, n)`` array
    whose ``[i]`` slice is ``dTheta/dx_i``.  With ``finite_difference=True`` the
    suppliers are replaced by central differences with relative step ``fd_step``.
    """

    kind = "state_time"

    def __init__(self, n: int, theta_fn: Callable, dtheta_dt: Callable | None = None,
                 dtheta_dx: Callable | None = None, *, finite_difference: bool = False,
                 fd_step: float = DEFAULT_FD_STEP, condition_cap: float = DEFAULT_CONDITION_CAP,
                 pd_floor: float = DEFAULT_PD_FLOOR, label: str = "theta(x,t)"):
        if not finite_difference and dtheta_dt is None and dtheta_dx is None:
            raise MetricError("state-time metric needs derivative suppliers or finite_difference=True")
        self.n = int(n)
        self.theta_fn = theta_fn
        self.dtheta_dt = dtheta_dt
        self.dtheta_dx = dtheta_dx
        self.finite_difference = finite_difference
        self.fd_step = fd_step
        self.condition_cap = condition_cap
        self.pd_floor = pd_floor
        self.label = label

    def _one(self, x, t) -> np.ndarray:
        M = np.asarray(self.theta_fn(np.asarray(x, dtype=float), float(t)), dtype=float)
        if M.shape != (self.n, self.n):
            raise MetricError(f"theta_fn returned shape {M.shape}, expected {(self.n, self.n)}")
        return M

    def theta(self, x, t=0.0):
        xb, tb, shape = _batch(x, t)
        out = np.empty(shape + (self.n, self.n))
        for idx in np.ndindex(*shape):
            out[idx] = self._one(xb[idx], tb[idx])
        return out

    def _dot_one(self, x, t, xdot) -> np.ndarray:
        n = self.n
        if self.finite_difference:
            ht = self.fd_step * max(1.0, abs(t))
            dt = (self._one(x, t + ht) - self._one(x, t - ht)) / (2 * ht)
            dx = np.empty((n, n, n))
            for i in range(n):
                h = self.fd_step * max(1.0, abs(x[i]))
                e = np.zeros(n)
                e[i] = h
                dx[i] = (self._one(x + e, t) - self._one(x - e, t)) / (2 * h)
        else:
            dt = np.zeros((n, n)) if self.dtheta_dt is None else np.asarray(self.dtheta_dt(x, t), float)
            dx = np.zeros((n, n, n)) if self.dtheta_dx is None else np.asarray(self.dtheta_dx(x, t), float)
        out = dt + np.einsum("ijk,i->jk", dx, xdot)
        if not np.all(np.isfinite(out)):
            raise MetricError("metric derivative supplier returned non-finite entries")
        return out

    def theta_dot(self, x, t, xdot):
        xb, tb, shape = _batch(x, t)
        xd = np.broadcast_to(np.asarray(xdot, dtype=float), shape + (self.n,))
        out = np.empty(shape + (self.n, self.n))
        for idx in np.ndindex(*shape):
            out[idx] = self._dot_one(xb[idx], tb[idx], xd[idx])
        return out

    def describe(self):
        return {"kind": self.kind, "n": self.n, "theta": self.label,
                "finite_difference": self.finite_difference}


@dataclass(frozen=True, eq=False)
class StorageFunction:
    """Bounded scalar ``gamma(x, t)`` with its total derivative along the flow.

    ``gamma(x, t)`` and ``gamma_dot(x, t, xdot)`` both accept batches.
    ``bound`` is the declared ``B`` with ``|gamma| <= B`` on the domain.
    """

    gamma: Callable
    gamma_dot: Callable
    bound: float
    label: str = "gamma"

    def __post_init__(self):
        if self.bound is None or not np.isfinite(self.bound) or self.bound < 0:
            raise MetricError("storage function needs a finite non-negative bound B")

    @classmethod
    def from_dsl(cls, src: str, n: int, bound: float | None, params=None) -> StorageFunction:
        if bound is None:
            raise MetricError("storage function needs a declared bound B")
        expr: ScalarExpr = parse_scalar(src, n, params)

        def gamma(x, t=0.0):
            return expr.eval(x, t)

        def gamma_dot(x, t, xdot):
            _, g = expr.gradient(x, t)
            return g[..., -1] + np.einsum("...i,...i->...", g[..., :n], np.asarray(xdot, float))

        return cls(gamma, gamma_dot, float(bound), src)

    def check(self, x, t) -> None:
        g = np.asarray(self.gamma(x, t), dtype=float)
        if np.any(np.abs(g) > self.bound * (1 + 1e-12) + 1e-300):
            raise MetricError(
                f"storage function exceeds declared bound {self.bound} "
                f"(max |gamma| = {float(np.max(np.abs(g))):.6g})")

    def describe(self) -> dict:
        return {"gamma": self.label, "bound": self.bound}


class AugmentedMetric(MetricTransform):
    """``Theta_e = exp(gamma) Theta``; adds ``gamma_dot * I`` to the generalized Jacobian."""

    kind = "storage"

    def __init__(self, base: MetricTransform, storage: StorageFunction):
        self.base = base
        self.storage = storage
        self.n = base.n
        self.condition_cap = base.condition_cap
        self.pd_floor = 0.0  # scalar factor exp(gamma) only rescales; floor applies to base

    def theta(self, x, t=0.0):
        g = np.asarray(self.storage.gamma(x, t), dtype=float)
        return np.exp(g)[..., None, None] * self.base.theta(x, t)

    def theta_dot(self, x, t, xdot):
        g = np.asarray(self.storage.gamma(x, t), dtype=float)
        gd = np.asarray(self.storage.gamma_dot(x, t, xdot), dtype=float)
        th = self.base.theta(x, t)
        return np.exp(g)[..., None, None] * (gd[..., None, None] * th + self.base.theta_dot(x, t, xdot))

    def check(self, Theta):
        MetricTransform.check(self, Theta)

    def describe(self):
        return {"kind": self.kind, "n": self.n, "base": self.base.describe(),
                "storage": self.storage.describe()}


def augment_storage(metric: MetricTransform, storage: StorageFunction) -> AugmentedMetric:
    if not isinstance(storage, StorageFunction):
        raise MetricError("augment_storage needs a StorageFunction with a declared bound")
    return AugmentedMetric(metric, storage)


def theta_dot(metric: MetricTransform, x, t, xdot) -> np.ndarray:
    return metric.theta_dot(x, t, xdot)


def feedback_metric(n: int, m: int, gain: float) -> BlockScalingMetric:
    """``diag(I_n, sqrt(k) I_m)``: makes the symmetric part of ``[[Ja, kG], [-G^T, Jb]]`` block-diagonal."""
    return BlockScalingMetric([(n, 1.0), (m, float(np.sqrt(gain)))])


def hierarchical_metric(n: int, m: int, eps: float) -> BlockScalingMetric:
    """``diag(eps I_n, I_m)``: scales the coupling block of ``[[Ja, G], [0, Jb]]`` to ``eps G``."""
    # cap and floor follow eps so the whole search family stays admissible
    return BlockScalingMetric([(n, float(eps)), (m, 1.0)],
                              condition_cap=max(DEFAULT_CONDITION_CAP, 4.0 / eps),
                              pd_floor=min(DEFAULT_PD_FLOOR, 0.25 * eps * eps))


def same_metric(a: MetricTransform | None, b: MetricTransform | None, n: int) -> bool:
    a = a or IdentityMetric(n)
    b = b or IdentityMetric(n)
    if a is b:
        return True
    if isinstance(a, StateTimeMetric) or isinstance(b, StateTimeMetric):
        return False
    return a.describe() == b.describe()


@dataclass(frozen=True, eq=False)
class GeneralizedJacobian:
    F: np.ndarray
    F_s: np.ndarray
    x: np.ndarray
    t: float


def generalized_jacobians(system, metric: MetricTransform | None, X, T=0.0, *,
                          J=None, fx=None) -> np.ndarray:
    """Generalized Jacobians for a batch of points; shape ``(..., n, n)``."""
    if metric is None or isinstance(metric, IdentityMetric):
        if J is None:
            J = system.jac(X, T)
        return J
    if metric.n != system.n:
        raise MetricError(f"metric dimension {metric.n} does not match system dimension {system.n}")
    if J is None or (fx is None and not metric.constant):
        fx, J = system.f_and_jac(X, T)
    Theta = metric.theta(X, T)
    metric.check(Theta)
    lhs = Theta @ J
    if not metric.constant:
        lhs = lhs + metric.theta_dot(X, T, fx)
    # F Theta = lhs  <=>  Theta^T F^T = lhs^T
    F = np.swapaxes(np.linalg.solve(np.swapaxes(Theta, -1, -2), np.swapaxes(lhs, -1, -2)), -1, -2)
    if not np.all(np.isfinite(F)):
        raise MetricError("generalized Jacobian has non-finite entries")
    return F


def generalized_jacobian(system, metric: MetricTransform | None, x, t=0.0) -> GeneralizedJacobian:
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n,):
        raise ValueError(f"state must have length {system.n}")
    F = generalized_jacobians(system, metric, x[None, :], np.asarray([t], float))[0]
    return GeneralizedJacobian(F, sym_part(F), x, float(t))
