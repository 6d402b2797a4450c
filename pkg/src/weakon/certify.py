"""Sampling-based certification of eigenvalue-sum conditions.

A certificate records the supremum of ``S_k`` of the symmetric part of the
generalized Jacobian over a finite sample set.  That is evidence, not proof:
every certificate says so, together with the sampling metadata and the
assumptions (forward invariance of the box, finite time window) that were
not verified.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .combine import CompositeSystem, FeedbackCondition, check_hierarchical_condition
from .errors import CertificationError, WeakonError
from .metrics import IdentityMetric, MetricTransform, StorageFunction, generalized_jacobians
from .sampling import Sampler
from .spectra import spectra, sym_part
from .systems import SystemModel

__all__ = [
    "ContractionCertificate", "DimensionBoundReport", "EpsilonSearchResult",
    "certify_weak_contraction", "certify_transverse", "epsilon_search",
    "dimension_bound", "evaluate_sample", "default_sampler", "CERT_TOL", "max_workers",
]

#: margin a certificate must exceed to count as holding
CERT_TOL = 1e-9
CHUNK = 4096

ASSUMPTIONS = (
    "sampled evidence only: the supremum is taken over a finite sample set",
    "forward invariance of the domain box is assumed, not verified",
)
TIME_WINDOW_NOTE = "finite time window under-approximates the condition for all t >= 0"


def max_workers() -> int:
    """Thread cap from ``WEAKON_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("WEAKON_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ContractionCertificate:
    order: int
    alpha: float
    holds: bool
    worst_x: tuple
    worst_t: float
    worst_value: float
    worst_index: int
    samples_evaluated: int
    mode: str
    system: str
    metric: dict
    sampler: dict
    storage: dict | None = None
    notes: tuple = ASSUMPTIONS
    evidence: str = "sampled"

    def as_dict(self) -> dict:
        return {
            "system": self.system,
            "mode": self.mode,
            "k": self.order,
            "alpha": self.alpha,
            "holds": self.holds,
            "evidence": self.evidence,
            "worst_sample": {"x": list(self.worst_x), "t": self.worst_t,
                             "value": self.worst_value, "index": self.worst_index},
            "samples": self.samples_evaluated,
            "metric": self.metric,
            "grid_meta": self.sampler,
            "storage_meta": self.storage,
            "notes": list(self.notes),
        }


def default_sampler(system: SystemModel, budget: int = 20_000) -> Sampler:
    """Grid over the system box with about ``budget`` points (101 per axis in 2-D)."""
    per_axis = max(3, min(101, int(np.floor(budget ** (1.0 / system.n)))))
    if per_axis % 2 == 0:
        per_axis += 1
    return Sampler("grid", system.box, per_axis)


def _sample_set(system: SystemModel, sampler: Sampler, storage) -> tuple[np.ndarray, np.ndarray]:
    if sampler.dim != system.n:
        raise CertificationError(f"sampler has {sampler.dim} axes, system has {system.n}")
    if not system.autonomous and sampler.time_window is None:
        raise CertificationError("non-autonomous system: the sampler needs an explicit time window")
    X, T = sampler.samples()
    if len(X) == 0:
        raise CertificationError("empty sample set")
    return X, T


def _chunk_values(system, metric, X, T, storage, reducer):
    fx, J = system.f_and_jac(X, T)
    F = generalized_jacobians(system, metric, X, T, J=J, fx=fx)
    spec = spectra(sym_part(F))
    shift = None
    if storage is not None:
        storage.check(X, T)
        shift = np.asarray(storage.gamma_dot(X, T, fx), dtype=float)
    return reducer(spec, shift)


def _evaluate(system, metric, X, T, storage, reducer) -> np.ndarray:
    try:
        chunks = [(X[i:i + CHUNK], T[i:i + CHUNK]) for i in range(0, len(X), CHUNK)]
        workers = min(max_workers(), len(chunks))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(
                    lambda c: _chunk_values(system, metric, c[0], c[1], storage, reducer), chunks))
        else:
            parts = [_chunk_values(system, metric, x, t, storage, reducer) for x, t in chunks]
    except WeakonError:
        raise
    except np.linalg.LinAlgError as exc:
        raise CertificationError(f"metric solve failed: {exc}") from None
    return np.concatenate(parts)


def _weak_reducer(k: int):
    def reduce(spec, shift):
        v = spec.cumulative[..., k - 1]
        # spectral shift identity: S_k(F_s + c I) = S_k(F_s) + k c
        return v if shift is None else v + k * shift
    return reduce


def _transverse_reducer(spec, shift):
    v = spec.eigenvalues[..., 1]
    return v if shift is None else v + shift


def _certificate(system, metric, sampler, storage, X, T, values, k, mode) -> ContractionCertificate:
    worst = int(np.argmax(values))  # first index on ties: deterministic
    sup = float(values[worst])
    alpha = -sup
    notes = ASSUMPTIONS + ((TIME_WINDOW_NOTE,) if sampler.time_window is not None else ())
    metric = metric if metric is not None else IdentityMetric(system.n)
    return ContractionCertificate(
        order=k, alpha=alpha, holds=bool(alpha > CERT_TOL),
        worst_x=tuple(float(v) for v in X[worst]), worst_t=float(T[worst]),
        worst_value=sup, worst_index=worst, samples_evaluated=len(values), mode=mode,
        system=system.name, metric=metric.describe(), sampler=sampler.describe(),
        storage=None if storage is None else storage.describe(), notes=notes,
    )


def certify_weak_contraction(system: SystemModel, metric: MetricTransform | None, k: int,
                             sampler: Sampler, storage: StorageFunction | None = None,
                             *, return_values: bool = False):
    """Certify ``sup S_k(F_s) (+ k gamma_dot) < 0`` over the samples.

    ``k=1`` is ordinary contraction, ``k=2`` weak contraction.  With
    ``return_values`` the per-sample values are returned alongside.
    """
    if not 1 <= k <= system.n:
        raise CertificationError(f"k must lie in [1, {system.n}], got {k}")
    X, T = _sample_set(system, sampler, storage)
    values = _evaluate(system, metric, X, T, storage, _weak_reducer(k))
    cert = _certificate(system, metric, sampler, storage, X, T, values, k,
                        "contraction" if k == 1 else "weak" if k == 2 else f"S_{k}")
    return (cert, values) if return_values else cert


def certify_transverse(system: SystemModel, metric: MetricTransform | None, sampler: Sampler,
                       storage: StorageFunction | None = None, *, return_values: bool = False):
    """Spectral check ``sup lambda_2(F_s) < 0``; no topological conclusion is drawn."""
    if system.n < 2:
        raise CertificationError("transverse check needs n >= 2")
    X, T = _sample_set(system, sampler, storage)
    values = _evaluate(system, metric, X, T, storage, _transverse_reducer)
    cert = _certificate(system, metric, sampler, storage, X, T, values, 2, "transverse")
    return (cert, values) if return_values else cert


def evaluate_sample(system: SystemModel, metric: MetricTransform | None, k: int, x, t=0.0,
                    storage: StorageFunction | None = None, mode: str = "weak") -> float:
    """Recompute the certified quantity at one sample through the same batch path."""
    X = np.asarray(x, dtype=float).reshape(1, system.n)
    T = np.asarray([t], dtype=float)
    reducer = _transverse_reducer if mode == "transverse" else _weak_reducer(k)
    return float(_chunk_values(system, metric, X, T, storage, reducer)[0])


@dataclass(frozen=True)
class EpsilonSearchResult:
    found: bool
    epsilon: float | None
    certificate: ContractionCertificate
    hypothesis: FeedbackCondition
    tried: tuple

    def as_dict(self) -> dict:
        return {
            "found": self.found,
            "epsilon": self.epsilon,
            "certificate": self.certificate.as_dict(),
            "hypothesis": self.hypothesis.as_dict(),
            "tried": [{"epsilon": e, "alpha": a} for e, a in self.tried],
        }


def epsilon_search(composite: CompositeSystem, k: int, sampler: Sampler,
                   max_halvings: int = 40) -> EpsilonSearchResult:
    """Largest ``eps`` in ``1, 1/2, ..., 2^-max_halvings`` certifying the hierarchy.

    Each candidate uses the metric ``diag(eps I_n, I_m)``, which turns the
    coupling block ``G`` into ``eps G``.  Returns the best certificate found
    when the search is exhausted.
    """
    if not isinstance(composite, CompositeSystem) or composite.kind != "hierarchical":
        raise CertificationError("epsilon_search needs a hierarchical composite")
    fa, fb = composite.subsystems
    hyp = check_hierarchical_condition(fa, fb, sampler)
    tried = []
    best = None
    for p in range(max_halvings + 1):
        eps = 2.0 ** -p
        cert = certify_weak_contraction(composite, composite.metric_family(eps), k, sampler)
        tried.append((eps, cert.alpha))
        if best is None or cert.alpha > best[1].alpha:
            best = (eps, cert)
        if cert.holds:
            return EpsilonSearchResult(True, eps, cert, hyp, tuple(tried))
    return EpsilonSearchResult(False, None, best[1], hyp, tuple(tried))


_INTERPRETATION = {
    1: "contracting (in this metric): unique equilibrium",
    2: "weakly contracting: all bounded trajectories converge to equilibria, attractor dimension zero",
}


@dataclass(frozen=True)
class DimensionBoundReport:
    k_star: int | None
    alphas: tuple
    certificates: tuple = field(repr=False)
    interpretation: str = ""
    higher_orders_certified: bool = True

    def as_dict(self) -> dict:
        return {
            "k_star": self.k_star if self.k_star is not None else "none",
            "margins": {str(k + 1): a for k, a in enumerate(self.alphas)},
            "interpretation": self.interpretation,
            "higher_orders_certified": self.higher_orders_certified,
        }


def dimension_bound(system: SystemModel, metric: MetricTransform | None, sampler: Sampler,
                    storage: StorageFunction | None = None) -> DimensionBoundReport:
    """Certify ``S_k`` for every ``k`` and report the smallest certified order."""
    certs = tuple(certify_weak_contraction(system, metric, k, sampler, storage)
                  for k in range(1, system.n + 1))
    alphas = tuple(c.alpha for c in certs)
    held = [c.order for c in certs if c.holds]
    k_star = held[0] if held else None
    if k_star is None:
        text = f"no order up to n={system.n} certified"
    else:
        text = _INTERPRETATION.get(k_star, f"attractor Hausdorff dimension < {k_star}")
    # checked on the samples, not assumed
    higher = k_star is None or all(c.holds for c in certs[k_star - 1:])
    return DimensionBoundReport(k_star, alphas, certs, text, higher)
