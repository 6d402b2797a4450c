"""Parallel, skew-symmetric feedback and hierarchical interconnections.

Composites are built by rewriting the subsystems' expression trees, so a
composite is an ordinary :class:`SystemModel` whose Jacobian comes from the
same dual-number pass as any other field.  :func:`block_jacobian` assembles
the textbook block form from the subsystem Jacobians and the coupling
independently, for cross-checking.

The coupled field uses the coupling linearly: for feedback

    xa' = fa(xa) + k G xb,     xb' = fb(xb) - G^T xa

and for the hierarchy ``xa' = fa(xa) + G xb``.  When ``G`` depends on the
state the true Jacobian picks up extra ``dG/dx`` terms; the block form is
exact for couplings that depend on time only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .dsl import BinOp, Node, Num, ScalarExpr, VectorFieldExpr, Var, inline_params
from .dsl import parse_scalar, shift_vars, sum_nodes
from .errors import CombineError
from .metrics import (MetricTransform, feedback_metric, generalized_jacobians,
                      hierarchical_metric, same_metric)
from .sampling import Sampler
from .spectra import spectra, sym_part
from .systems import SystemModel

__all__ = [
    "Coupling", "CompositeSystem", "FeedbackCondition", "parallel", "feedback",
    "hierarchical", "block_jacobian", "check_feedback_condition",
    "check_hierarchical_condition", "coupling",
]


@dataclass(frozen=True, eq=False)
class Coupling:
    """``n x m`` coupling matrix: constants or scalar DSL expressions.

    Expressions are written over the composite state ``x0..x(n+m-1)`` and ``t``.
    """

    n: int
    m: int
    entries: tuple  # n rows of m entries, each float or ScalarExpr

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)

    @property
    def state_dependent(self) -> bool:
        return any(isinstance(e, ScalarExpr) and e.depends_on_state
                   for row in self.entries for e in row)

    def node(self, i: int, j: int) -> Node:
        e = self.entries[i][j]
        if isinstance(e, ScalarExpr):
            return inline_params(e.node, e.params)
        return Num(float(e))

    def is_zero(self, i: int, j: int) -> bool:
        e = self.entries[i][j]
        return not isinstance(e, ScalarExpr) and float(e) == 0.0

    def value(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(t))
        out = np.empty(shape + (self.n, self.m))
        for i in range(self.n):
            for j in range(self.m):
                e = self.entries[i][j]
                out[..., i, j] = e.eval(x, t) if isinstance(e, ScalarExpr) else float(e)
        return out

    def describe(self):
        return [[e.to_source() if isinstance(e, ScalarExpr) else float(e) for e in row]
                for row in self.entries]


def coupling(G, n: int, m: int, params=None) -> Coupling:
    """Build a coupling from a nested list of numbers and/or DSL strings."""
    if isinstance(G, Coupling):
        if G.shape != (n, m):
            raise CombineError(f"coupling has shape {G.shape}, expected {(n, m)}")
        return G
    if G is None or (np.ndim(G) == 0 and not isinstance(G, str) and float(G) == 0.0):
        return Coupling(n, m, tuple((0.0,) * m for _ in range(n)))
    rows = G if isinstance(G, (list, tuple)) else np.asarray(G).tolist()
    if len(rows) != n or any(not isinstance(r, (list, tuple)) or len(r) != m for r in rows):
        raise CombineError(f"coupling must have shape {(n, m)}")
    entries = []
    for row in rows:
        out = []
        for e in row:
            if isinstance(e, str):
                out.append(parse_scalar(e, n + m, params))
            else:
                v = float(e)
                if not np.isfinite(v):
                    raise CombineError("coupling entries must be finite")
                out.append(v)
        entries.append(tuple(out))
    return Coupling(n, m, tuple(entries))


@dataclass(frozen=True, eq=False)
class CompositeSystem(SystemModel):
    """An interconnection; ``recommended_metric`` is the metric its theorem uses."""

    kind: str = ""
    dims: tuple = ()
    subsystems: tuple = ()
    coupling: Coupling | None = None
    gain: float = 1.0
    weights: tuple = ()
    recommended_metric: MetricTransform | None = None
    metric_family: Callable[[float], MetricTransform] | None = field(default=None, repr=False)

    def describe(self) -> dict:
        d = super().describe()
        d["interconnection"] = {
            "kind": self.kind,
            "dims": list(self.dims),
            "subsystems": [s.name for s in self.subsystems],
        }
        if self.coupling is not None:
            d["interconnection"]["G"] = self.coupling.describe()
        if self.kind == "feedback":
            d["interconnection"]["gain"] = self.gain
        if self.kind == "parallel":
            d["interconnection"]["alpha"], d["interconnection"]["beta"] = self.weights
        if self.recommended_metric is not None:
            d["interconnection"]["metric"] = self.recommended_metric.describe()
        return d


def _inlined(sys: SystemModel, offset: int = 0) -> list[Node]:
    return [shift_vars(inline_params(e, sys.params), offset) for e in sys.expr.exprs]


def _scaled(c: float, node: Node) -> Node:
    if c == 1.0:
        return node
    return BinOp("*", Num(c), node)


def parallel(fa: SystemModel, fb: SystemModel, alpha: float, beta: float,
             name: str | None = None) -> CompositeSystem:
    """``x' = alpha fa(x) + beta fb(x)``; both systems must share a declared metric."""
    if fa.n != fb.n:
        raise CombineError(f"parallel needs equal dimensions, got {fa.n} and {fb.n}")
    alpha, beta = float(alpha), float(beta)
    if not (alpha >= 0 and beta >= 0 and alpha + beta > 0):
        raise CombineError("parallel weights need alpha, beta >= 0 and alpha + beta > 0")
    if not same_metric(fa.metric, fb.metric, fa.n):
        raise CombineError("parallel interconnection needs both subsystems under the same metric")
    ea, eb = _inlined(fa), _inlined(fb)
    exprs = []
    for i in range(fa.n):
        terms = []
        if alpha != 0.0:
            terms.append(_scaled(alpha, ea[i]))
        if beta != 0.0:
            terms.append(_scaled(beta, eb[i]))
        exprs.append(sum_nodes(terms))
    lo = np.maximum(fa.box[:, 0], fb.box[:, 0])
    hi = np.minimum(fa.box[:, 1], fb.box[:, 1])
    if np.any(lo >= hi):
        raise CombineError("subsystem boxes do not overlap")
    return CompositeSystem(
        name or f"parallel({fa.name},{fb.name})",
        VectorFieldExpr(fa.n, tuple(exprs)),
        np.stack([lo, hi], axis=1),
        metric=fa.metric,
        kind="parallel", dims=(fa.n,), subsystems=(fa, fb),
        weights=(alpha, beta), recommended_metric=fa.metric,
    )


def _coupled(fa: SystemModel, fb: SystemModel, G: Coupling, gain: float, skew: bool):
    n, m = fa.n, fb.n
    ea, eb = _inlined(fa), _inlined(fb, n)
    exprs = []
    for i in range(n):
        terms = [ea[i]]
        for j in range(m):
            if not G.is_zero(i, j):
                terms.append(_scaled(gain, BinOp("*", G.node(i, j), Var(n + j))))
        exprs.append(sum_nodes(terms))
    for j in range(m):
        node = eb[j]
        if skew:
            for i in range(n):
                if not G.is_zero(i, j):
                    node = BinOp("-", node, BinOp("*", G.node(i, j), Var(i)))
        exprs.append(node)
    box = np.concatenate([fa.box, fb.box], axis=0)
    return VectorFieldExpr(n + m, tuple(exprs)), box


def feedback(fa: SystemModel, fb: SystemModel, G=None, k: float = 1.0,
             name: str | None = None, params=None) -> CompositeSystem:
    """Skew-symmetric feedback with Jacobian ``[[Ja, kG], [-G^T, Jb]]``.

    The composite carries ``diag(I_n, sqrt(k) I_m)`` as its recommended metric.
    """
    k = float(k)
    if not k > 0:
        raise CombineError("feedback loop gain must be positive")
    Gc = coupling(G, fa.n, fb.n, params)
    expr, box = _coupled(fa, fb, Gc, k, skew=True)
    return CompositeSystem(
        name or f"feedback({fa.name},{fb.name})", expr, box,
        kind="feedback", dims=(fa.n, fb.n), subsystems=(fa, fb), coupling=Gc, gain=k,
        recommended_metric=feedback_metric(fa.n, fb.n, k),
    )


def hierarchical(fa: SystemModel, fb: SystemModel, G=None,
                 name: str | None = None, params=None) -> CompositeSystem:
    """Cascade with Jacobian ``[[Ja, G], [0, Jb]]``; metric family ``diag(eps I_n, I_m)``."""
    Gc = coupling(G, fa.n, fb.n, params)
    expr, box = _coupled(fa, fb, Gc, 1.0, skew=False)
    n, m = fa.n, fb.n
    return CompositeSystem(
        name or f"hierarchical({fa.name},{fb.name})", expr, box,
        kind="hierarchical", dims=(n, m), subsystems=(fa, fb), coupling=Gc,
        metric_family=lambda eps: hierarchical_metric(n, m, eps),
    )


def block_jacobian(comp: CompositeSystem, x, t=0.0) -> np.ndarray:
    """Composite Jacobian assembled from subsystem Jacobians and the coupling value."""
    x = np.asarray(x, dtype=float)
    fa, fb = comp.subsystems
    if comp.kind == "parallel":
        a, b = comp.weights
        return a * fa.jac(x, t) + b * fb.jac(x, t)
    n, m = comp.dims
    shape = np.broadcast_shapes(x.shape[:-1], np.shape(t))
    J = np.zeros(shape + (n + m, n + m))
    G = comp.coupling.value(x, t)
    J[..., :n, :n] = fa.jac(x[..., :n], t)
    J[..., n:, n:] = fb.jac(x[..., n:], t)
    if comp.kind == "feedback":
        J[..., :n, n:] = comp.gain * G
        J[..., n:, :n] = -np.swapaxes(G, -1, -2)
    else:
        J[..., :n, n:] = G
    return J


@dataclass(frozen=True)
class FeedbackCondition:
    """Outcome of the subsystem eigenvalue tests on a set of samples.

    ``margin`` is ``-sup(l1a + l1b)``.  ``holds`` additionally needs one
    subsystem weakly contracting (``S_2 < 0``) and the other contracting
    (``l1 < 0``) on the samples.  ``refined_margin`` is ``-sup`` of the sum of
    the two largest of ``{l1a, l2a, l1b, l2b}``, which at each sample is the
    ``S_2`` of the decoupled block-diagonal symmetric part.
    """

    holds: bool
    margin: float
    refined: bool
    refined_margin: float
    weak_margin_a: float
    weak_margin_b: float
    contraction_margin_a: float
    contraction_margin_b: float
    worst_index: int
    samples: int

    @property
    def guaranteed_margin(self) -> float:
        """Lower bound on the composite's S_2 margin implied by the subsystem tests."""
        return min(self.margin, self.weak_margin_a, self.weak_margin_b)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["guaranteed_margin"] = self.guaranteed_margin
        return d


def _sub_spectra(sys: SystemModel, metric, X, T):
    F = generalized_jacobians(sys, metric if metric is not None else sys.metric, X, T)
    return spectra(sym_part(F)).eigenvalues


def check_feedback_condition(fa: SystemModel, fb: SystemModel, sampler: Sampler,
                             metric_a: MetricTransform | None = None,
                             metric_b: MetricTransform | None = None) -> FeedbackCondition:
    """Evaluate the interconnection eigenvalue conditions pointwise on composite samples.

    ``sampler`` ranges over the composite box (``fa.n + fb.n`` axes); each
    sample ``(xa, xb, t)`` pairs the subsystem spectra at the same point.
    """
    n, m = fa.n, fb.n
    if sampler.dim != n + m:
        raise CombineError(f"sampler has {sampler.dim} axes, expected {n + m}")
    X, T = sampler.samples()
    if len(X) == 0:
        raise CombineError("empty sample set")
    la = _sub_spectra(fa, metric_a, X[:, :n], T)
    lb = _sub_spectra(fb, metric_b, X[:, n:], T)
    plain = la[:, 0] + lb[:, 0]
    top2 = np.sort(np.concatenate([la[:, :2], lb[:, :2]], axis=1), axis=1)[:, ::-1][:, :2].sum(axis=1)
    s2a = la[:, :2].sum(axis=1) if n >= 2 else np.full(len(X), -np.inf)
    s2b = lb[:, :2].sum(axis=1) if m >= 2 else np.full(len(X), -np.inf)
    worst = int(np.argmax(plain))
    margin = -float(plain[worst])
    wa, wb = -float(np.max(s2a)), -float(np.max(s2b))
    ca, cb = -float(np.max(la[:, 0])), -float(np.max(lb[:, 0]))
    roles = (wa > 0 and cb > 0) or (wb > 0 and ca > 0)
    refined_margin = -float(np.max(top2))
    return FeedbackCondition(
        holds=bool(margin > 0 and roles), margin=margin,
        refined=bool(refined_margin > 0), refined_margin=refined_margin,
        weak_margin_a=wa, weak_margin_b=wb,
        contraction_margin_a=ca, contraction_margin_b=cb,
        worst_index=worst, samples=len(X),
    )


check_hierarchical_condition = check_feedback_condition


def composite_from_spec(spec: dict, resolve: Callable[[Any], SystemModel]) -> CompositeSystem:
    """Build a composite from a config mapping (``kind``, ``a``, ``b``, weights, ``G``)."""
    kind = spec.get("kind")
    try:
        a, b = resolve(spec["a"]), resolve(spec["b"])
    except KeyError as exc:
        raise CombineError(f"combine spec is missing {exc.args[0]!r}") from None
    name = spec.get("name")
    if kind == "parallel":
        return parallel(a, b, spec.get("alpha", 1.0), spec.get("beta", 1.0), name)
    if kind == "feedback":
        return feedback(a, b, spec.get("G"), spec.get("gain", 1.0), name, spec.get("params"))
    if kind == "hierarchical":
        return hierarchical(a, b, spec.get("G"), name, spec.get("params"))
    raise CombineError(f"unknown interconnection kind {kind!r}")

