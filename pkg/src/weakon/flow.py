"""Trajectories, variational flows, volume decay and Lyapunov spectra.

Integration is explicit: classical RK4 with a fixed step, or the
Runge-Kutta-Fehlberg 4(5) pair with step-size control.  Tangent frames are
co-integrated with the state and re-orthonormalized Benettin-style; the
logarithms of the triangular factors are accumulated so volumes never
underflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import IntegrationError
from .metrics import MetricTransform, generalized_jacobians
from .sampling import Sampler
from .spectra import spectra, sym_part
from .systems import SystemModel

__all__ = [
    "SolverConfig", "Trajectory", "VolumeDecayRecord", "LyapunovSpectrum", "CensusSummary",
    "integrate", "variational_flow", "lyapunov_spectrum", "equilibrium_census",
    "fit_rate", "lambda1_integrals", "write_csv",
]

CONVERGED = "converged-to-equilibrium"
MOVING = "still-moving"
LEFT = "left-domain"


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    step: float = 0.01
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 10_000_000
    horizon: float = 100.0
    eq_tol: float = 1e-6
    drift_tol: float = 1e-6
    reorth_interval: int = 10
    record_every: int = 1
    tail_fraction: float = 0.5

    def __post_init__(self):
        if self.method not in ("rk4", "rkf45"):
            raise ValueError(f"unknown method {self.method!r}; use 'rk4' or 'rkf45'")
        if not (self.step > 0 and self.rtol > 0 and self.atol > 0 and self.horizon > 0):
            raise ValueError("step, tolerances and horizon must be positive")
        if self.reorth_interval < 1 or self.record_every < 1 or self.max_steps < 1:
            raise ValueError("intervals and max_steps must be >= 1")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")


# --------------------------------------------------------------------------
# steppers

def _rk4(fun, t, y, h):
    k1 = fun(t, y)
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Fehlberg 4(5) tableau
_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)


def _rkf45(fun, t, y, h):
    ks = []
    for c, row in zip(_C, _A):
        yi = y
        for a, k in zip(row, ks):
            yi = yi + (h * a) * k
        ks.append(fun(t + c * h, yi))
    y5 = y + h * sum(b * k for b, k in zip(_B5, ks))
    y4 = y + h * sum(b * k for b, k in zip(_B4, ks))
    return y5, y5 - y4


def _drive(fun, y0, t0: float, duration: float, cfg: SolverConfig,
           after_step: Callable[[int, float, np.ndarray], np.ndarray | None]):
    """Step ``y' = fun(t, y)`` over ``[t0, t0 + duration]``.

    ``after_step(i, t, y)`` runs after every accepted step; it may return a
    replacement state or raise StopIteration to end early.
    """
    t, y = t0, np.array(y0, dtype=float)
    t_end = t0 + duration
    if cfg.method == "rk4":
        nsteps = max(1, int(round(duration / cfg.step)))
        if nsteps > cfg.max_steps:
            raise IntegrationError(f"{nsteps} steps exceed max_steps={cfg.max_steps}")
        h = duration / nsteps
        for i in range(1, nsteps + 1):
            y = _rk4(fun, t, y, h)
            t = t0 + i * h
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at t={t:.6g}")
            try:
                r = after_step(i, t, y)
            except StopIteration:
                return t, y
            if r is not None:
                y = r
        return t, y

    h = min(cfg.step, duration)
    h_min = 1e-14 * max(1.0, abs(t_end))
    i = 0
    while t < t_end:
        if i >= cfg.max_steps:
            raise IntegrationError(f"max_steps={cfg.max_steps} reached at t={t:.6g}")
        h = min(h, t_end - t)
        y_new, err = _rkf45(fun, t, y, h)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        e = float(np.sqrt(np.mean((err / scale) ** 2))) if np.all(np.isfinite(err)) else np.inf
        if e <= 1.0:
            t = t + h if t_end - t > h else t_end
            y = y_new
            i += 1
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at t={t:.6g}")
            try:
                r = after_step(i, t, y)
            except StopIteration:
                return t, y
            if r is not None:
                y = r
            fac = 5.0 if e == 0 else min(5.0, max(0.2, 0.9 * e ** -0.2))
        else:
            fac = 0.2 if not np.isfinite(e) else max(0.2, 0.9 * e ** -0.25)
        h = h * fac
        if h < h_min and t < t_end:
            raise IntegrationError(f"step size underflow at t={t:.6g}")
    return t, y


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    terminal: str
    equilibrium: np.ndarray | None
    final_speed: float
    drift: float

    @property
    def converged(self) -> bool:
        return self.terminal == CONVERGED

    def summary(self) -> dict:
        return {
            "terminal": self.terminal,
            "equilibrium": None if self.equilibrium is None else self.equilibrium.tolist(),
            "final_state": self.states[-1].tolist(),
            "final_time": float(self.times[-1]),
            "final_speed": self.final_speed,
            "tail_drift": self.drift,
            "steps_recorded": len(self.times),
        }

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        write_csv(path, ["t"] + [f"x{i}" for i in range(n)],
                  np.column_stack([self.times, self.states]))


def _classify(system, x_final, t_final, tail_states, cfg: SolverConfig, left: bool):
    speed = float(np.linalg.norm(system.f(x_final, t_final)))
    drift = float(np.max(np.linalg.norm(tail_states - x_final, axis=-1))) if len(tail_states) else 0.0
    if left:
        return LEFT, None, speed, drift
    if speed < cfg.eq_tol and drift < cfg.drift_tol:
        return CONVERGED, np.array(x_final, dtype=float), speed, drift
    return MOVING, None, speed, drift


def integrate(system: SystemModel, x0, t0: float = 0.0,
              cfg: SolverConfig = SolverConfig()) -> Trajectory:
    """Integrate to ``t0 + cfg.horizon`` or until the state leaves the box.

    The terminal state counts as an equilibrium when ``|f| < eq_tol`` and the
    state moved less than ``drift_tol`` over the last 10% of the horizon.
    """
    x0 = np.array(x0, dtype=float)
    if x0.shape != (system.n,):
        raise IntegrationError(f"initial state must have length {system.n}")
    if not system.contains(x0):
        raise IntegrationError(f"initial state {x0.tolist()} lies outside the domain box")
    times, states = [t0], [x0.copy()]
    left = False

    def after(i, t, y):
        nonlocal left
        if i % cfg.record_every == 0 or t >= t0 + cfg.horizon:
            times.append(t)
            states.append(y.copy())
        if not system.contains(y):
            left = True
            if times[-1] != t:
                times.append(t)
                states.append(y.copy())
            raise StopIteration

    _drive(lambda t, y: system.f(y, t), x0, t0, cfg.horizon, cfg, after)
    times_a, states_a = np.array(times), np.array(states)
    t_tail = t0 + 0.9 * cfg.horizon
    tail = states_a[times_a >= t_tail]
    term, eq, speed, drift = _classify(system, states_a[-1], times_a[-1], tail, cfg, left)
    return Trajectory(times_a, states_a, term, eq, speed, drift)


def _integrate_batch(system: SystemModel, X0: np.ndarray, t0: float, cfg: SolverConfig):
    """Fixed-step RK4 on many initial states at once; returns terminal data per state."""
    X = np.array(X0, dtype=float)
    N = len(X)
    active = system.contains(X).copy()
    if not np.all(active):
        raise IntegrationError("initial states outside the domain box")
    nsteps = max(1, int(round(cfg.horizon / cfg.step)))
    h = cfg.horizon / nsteps
    tail_start = int(math.floor(0.9 * nsteps))
    tail = []
    fun = lambda t, y: system.f(y, t)  # noqa: E731
    t = t0
    with np.errstate(all="ignore"):
        for i in range(1, nsteps + 1):
            Y = _rk4(fun, t, X, h)
            t = t0 + i * h
            ok = np.all(np.isfinite(Y), axis=1) & system.contains(Y)
            X = np.where((active & ok)[:, None], Y, X)
            active &= ok
            if i >= tail_start:
                tail.append(X.copy())
    tail = np.stack(tail, axis=1) if tail else np.empty((N, 0, system.n))
    return X, t, tail, ~active


# --------------------------------------------------------------------------
# variational flow


def fit_rate(times, values, tail_fraction: float = 0.5) -> float:
    """Least-squares slope over the last ``tail_fraction`` of the time span."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t_start = times[-1] - tail_fraction * (times[-1] - times[0])
    mask = times >= t_start
    if mask.sum() < 2:
        raise ValueError("tail window holds fewer than two records")
    return float(np.polyfit(times[mask], values[mask], 1)[0])


def _log_r(M: np.ndarray) -> np.ndarray:
    r = np.abs(np.diagonal(np.linalg.qr(M, mode="r")))
    if np.any(r == 0) or not np.all(np.isfinite(r)):
        raise IntegrationError("tangent frame collapsed; shorten reorth_interval")
    return np.log(r)


def _tangent_flow(system: SystemModel, x0, Phi0, t0: float, duration: float,
                  cfg: SolverConfig, record: Callable | None = None):
    """Co-integrate state and tangent frame; returns final state, frame and log-stretch sums."""
    n = system.n
    i_cols = Phi0.shape[1]
    acc = np.zeros(i_cols)
    t_end = t0 + duration

    def fun(t, y):
        fx, J = system.f_and_jac(y[:n], t)
        return np.concatenate([fx, (J @ y[n:].reshape(n, i_cols)).ravel()])

    def after(step, t, y):
        nonlocal acc
        x = y[:n]
        if not system.contains(x):
            raise IntegrationError(f"trajectory left the domain box at t={t:.6g}")
        Phi = y[n:].reshape(n, i_cols)
        if cfg.method == "rk4":
            due = step % cfg.reorth_interval == 0
        else:
            due = abs(float(np.sum(_log_r(Phi)))) > 30.0
        out = None
        if due:
            q, r = np.linalg.qr(Phi)
            d = np.diag(r)
            if np.any(d == 0) or not np.all(np.isfinite(d)):
                raise IntegrationError("tangent frame collapsed; shorten reorth_interval")
            acc = acc + np.log(np.abs(d))
            Phi = q * np.sign(d)
            out = np.concatenate([x, Phi.ravel()])
        if record is not None and (step % cfg.record_every == 0 or t >= t_end):
            record(t, x, Phi, acc)
        return out

    y0 = np.concatenate([np.asarray(x0, float), np.asarray(Phi0, float).ravel()])
    t, y = _drive(fun, y0, t0, duration, cfg, after)
    return t, y[:n], y[n:].reshape(n, i_cols), acc


@dataclass(frozen=True, eq=False)
class VolumeDecayRecord:
    order: int
    times: np.ndarray
    log_volume: np.ndarray
    fitted_rate: float
    tail_window: tuple
    mean_divergence: float
    bound: float | None = None
    tolerance: float | None = None
    bound_satisfied: bool | None = None

    def summary(self) -> dict:
        return {
            "order": self.order,
            "fitted_rate": self.fitted_rate,
            "tail_window": list(self.tail_window),
            "mean_divergence": self.mean_divergence,
            "bound": self.bound,
            "tolerance": self.tolerance,
            "bound_satisfied": self.bound_satisfied,
        }

    def to_csv(self, path) -> None:
        write_csv(path, ["t", f"log_vol_{self.order}"],
                  np.column_stack([self.times, self.log_volume]))


def _default_frame(n: int, i: int, seed: int) -> np.ndarray:
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return q[:, :i]


def variational_flow(system: SystemModel, metric: MetricTransform | None, x0, frame0=None,
                     cfg: SolverConfig = SolverConfig(), *, order: int | None = None,
                     t0: float = 0.0, bound: float | None = None, seed: int = 0) -> VolumeDecayRecord:
    """Track ``log |dz_1 ^ ... ^ dz_i|`` with ``dz = Theta(x, t) dx`` along a trajectory.

    ``frame0`` is an ``n x i`` matrix with independent columns; by default the
    first ``order`` columns of a seeded random orthogonal matrix.  When
    ``bound`` (a certified ``sup S_i``) is given the record states whether the
    fitted rate respects it within ``0.05 |bound| + 1e-3``.
    """
    n = system.n
    if frame0 is None:
        frame0 = _default_frame(n, order or n, seed)
    frame0 = np.asarray(frame0, dtype=float)
    if frame0.ndim != 2 or frame0.shape[0] != n or not 1 <= frame0.shape[1] <= n:
        raise ValueError(f"frame must be n x i with 1 <= i <= {n}")
    if np.linalg.matrix_rank(frame0) < frame0.shape[1]:
        raise ValueError("frame columns must be independent")
    i_cols = frame0.shape[1]
    times, xs, frames, accs = [t0], [np.asarray(x0, float)], [frame0.copy()], [np.zeros(i_cols)]

    def record(t, x, Phi, acc):
        times.append(t)
        xs.append(x.copy())
        frames.append(Phi.copy())
        accs.append(acc.copy())

    if not system.contains(x0):
        raise IntegrationError("initial state lies outside the domain box")
    _tangent_flow(system, x0, frame0, t0, cfg.horizon, cfg, record)
    times_a = np.array(times)
    X = np.array(xs)
    Theta = (metric.theta(X, times_a) if metric is not None
             else np.broadcast_to(np.eye(n), (len(X), n, n)))
    Z = Theta @ np.array(frames)
    logv = np.array([float(np.sum(a)) + float(np.sum(_log_r(z))) for a, z in zip(accs, Z)])
    rate = fit_rate(times_a, logv, cfg.tail_fraction)
    t_start = times_a[-1] - cfg.tail_fraction * (times_a[-1] - times_a[0])
    mask = times_a >= t_start
    div = system.divergence(X[mask], times_a[mask])
    mean_div = float(np.trapezoid(div, times_a[mask]) / (times_a[mask][-1] - times_a[mask][0]))
    tol = sat = None
    if bound is not None:
        tol = 0.05 * abs(bound) + 1e-3
        sat = bool(rate <= bound + tol)
    return VolumeDecayRecord(i_cols, times_a, logv, rate, (float(t_start), float(times_a[-1])),
                             mean_div, bound, tol, sat)


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: tuple
    horizon: float
    reorth_interval: int
    transient: float = 0.0

    @property
    def partial_sums(self) -> tuple:
        return tuple(float(v) for v in np.cumsum(self.exponents))

    def summary(self) -> dict:
        return {"exponents": list(self.exponents), "partial_sums": list(self.partial_sums),
                "horizon": self.horizon, "reorth_interval": self.reorth_interval,
                "transient": self.transient}


def lyapunov_spectrum(system: SystemModel, x0, order: int | None = None,
                      cfg: SolverConfig = SolverConfig(), *, t0: float = 0.0,
                      transient: float = 0.0, seed: int | None = None) -> LyapunovSpectrum:
    """Benettin estimate of the ``order`` largest Lyapunov exponents.

    The frame starts at the first ``order`` coordinate axes, or at a seeded
    random orthonormal frame when ``seed`` is given.  The first ``transient``
    time units relax the state and align the frame without contributing to
    the averages.
    """
    n = system.n
    order = n if order is None else order
    if not 1 <= order <= n:
        raise ValueError(f"order must lie in [1, {n}]")
    x = np.asarray(x0, dtype=float)
    if not system.contains(x):
        raise IntegrationError("initial state lies outside the domain box")
    Phi = np.eye(n)[:, :order] if seed is None else _default_frame(n, order, seed)
    t = t0
    if transient > 0:
        t, x, Phi, _ = _tangent_flow(system, x, Phi, t, transient, cfg)
    t, x, Phi, acc = _tangent_flow(system, x, Phi, t, cfg.horizon, cfg)
    acc = acc + _log_r(Phi)
    exps = np.sort(acc / cfg.horizon)[::-1]
    if not np.all(np.isfinite(exps)):
        raise IntegrationError("non-finite growth rates")
    return LyapunovSpectrum(tuple(float(v) for v in exps), cfg.horizon, cfg.reorth_interval,
                            transient)


# --------------------------------------------------------------------------
# census


@dataclass(frozen=True, eq=False)
class CensusSummary:
    initial: np.ndarray
    terminal: np.ndarray
    classes: tuple
    equilibria: np.ndarray
    labels: np.ndarray

    @property
    def fraction_converged(self) -> float:
        return sum(c == CONVERGED for c in self.classes) / len(self.classes)

    def counts(self) -> dict:
        out = {CONVERGED: 0, MOVING: 0, LEFT: 0}
        for c in self.classes:
            out[c] += 1
        return out

    def summary(self) -> dict:
        return {"trajectories": len(self.classes), "fraction_converged": self.fraction_converged,
                "counts": self.counts(), "equilibria": self.equilibria.tolist()}


def _cluster(points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    centers: list[np.ndarray] = []
    labels = np.full(len(points), -1)
    for idx, p in enumerate(points):
        for c, ctr in enumerate(centers):
            if np.linalg.norm(p - ctr) <= radius:
                labels[idx] = c
                break
        else:
            centers.append(p)
            labels[idx] = len(centers) - 1
    return (np.array(centers) if centers else np.empty((0, points.shape[1] if points.ndim == 2 else 0))), labels


def equilibrium_census(system: SystemModel, sampler: Sampler, cfg: SolverConfig = SolverConfig(),
                       *, cluster_tol: float = 1e-3, t0: float = 0.0) -> CensusSummary:
    """Integrate every sampled initial state and cluster the equilibria reached."""
    X0, _ = sampler.samples()
    if cfg.method == "rk4":
        XT, tT, tails, left = _integrate_batch(system, X0, t0, cfg)
        classes, terms = [], []
        for j in range(len(X0)):
            c, _, _, _ = _classify(system, XT[j], tT, tails[j], cfg, bool(left[j]))
            classes.append(c)
            terms.append(XT[j])
    else:
        trajs = [integrate(system, x, t0, cfg) for x in X0]
        classes = [tr.terminal for tr in trajs]
        terms = [tr.states[-1] for tr in trajs]
    terms = np.array(terms)
    conv = np.array([c == CONVERGED for c in classes])
    centers, lab = _cluster(terms[conv], cluster_tol)
    labels = np.full(len(classes), -1)
    labels[conv] = lab
    return CensusSummary(X0, terms, tuple(classes), centers, labels)


# --------------------------------------------------------------------------
# storage-function invariance


def lambda1_integrals(system: SystemModel, metric: MetricTransform | None,
                      augmented: MetricTransform, traj: Trajectory) -> tuple[float, float]:
    """Trapezoid integrals of ``lambda_1`` of both metrics' ``F_s`` along a trajectory."""
    X, T = traj.states, traj.times
    fx, J = system.f_and_jac(X, T)
    out = []
    for m in (metric, augmented):
        F = generalized_jacobians(system, m, X, T, J=J, fx=fx)
        lam1 = spectra(sym_part(F)).eigenvalues[:, 0]
        out.append(float(np.trapezoid(lam1, T)))
    return out[0], out[1]


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
