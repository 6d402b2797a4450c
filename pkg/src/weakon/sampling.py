"""Deterministic grid and seeded random samplers over a box (and a time window)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Sampler", "grid", "uniform"]


@dataclass(frozen=True, eq=False)
class Sampler:
    """Sample points ``(X, T)`` covering a box, optionally times in a window.

    Grid samples are ordered with time outermost, then the state axes in
    row-major order (first axis slowest).  Random samples draw states first,
    then times, from ``numpy.random.default_rng(seed)``.
    """

    kind: str
    box: np.ndarray
    points: int | tuple = 11
    count: int = 1000
    seed: int | None = None
    time_window: tuple | None = None
    time_samples: int = 1

    def __post_init__(self):
        box = np.array(self.box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or box.shape[0] < 1:
            raise ValueError(f"box must have shape (d, 2), got {box.shape}")
        if not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
            raise ValueError("box bounds must be finite with lo < hi on every axis")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)
        if self.kind == "grid":
            pts = self.points
            pts = (int(pts),) * box.shape[0] if np.ndim(pts) == 0 else tuple(int(p) for p in pts)
            if len(pts) != box.shape[0] or min(pts) < 1:
                raise ValueError("grid needs >= 1 point per axis for every axis")
            object.__setattr__(self, "points", pts)
        elif self.kind == "random":
            if self.count < 1:
                raise ValueError("random sampler needs count >= 1")
            if self.seed is None:
                raise ValueError("random sampler needs an explicit seed")
        else:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.time_window is not None:
            t0, t1 = (float(v) for v in self.time_window)
            if not (np.isfinite(t0) and np.isfinite(t1)) or t1 < t0:
                raise ValueError("time window must be finite with t0 <= t1")
            object.__setattr__(self, "time_window", (t0, t1))
            if self.time_samples < 1:
                raise ValueError("time_samples must be >= 1")

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    @property
    def total(self) -> int:
        nt = self.time_samples if self.time_window is not None else 1
        if self.kind == "grid":
            return int(np.prod(self.points)) * nt
        return self.count

    def _axis(self, i: int) -> np.ndarray:
        lo, hi = self.box[i]
        p = self.points[i]
        return np.array([0.5 * (lo + hi)]) if p == 1 else np.linspace(lo, hi, p)

    def _times(self) -> np.ndarray:
        if self.time_window is None:
            return np.zeros(1)
        t0, t1 = self.time_window
        return np.linspace(t0, t1, self.time_samples) if self.time_samples > 1 else np.array([t0])

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "grid":
            axes = [self._axis(i) for i in range(self.dim)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            times = self._times()
            X = np.tile(mesh, (len(times), 1))
            T = np.repeat(times, len(mesh))
            return X, T
        rng = np.random.default_rng(self.seed)
        lo, hi = self.box[:, 0], self.box[:, 1]
        X = lo + (hi - lo) * rng.random((self.count, self.dim))
        if self.time_window is None:
            T = np.zeros(self.count)
        else:
            t0, t1 = self.time_window
            T = t0 + (t1 - t0) * rng.random(self.count)
        return X, T

    def refined(self) -> Sampler:
        """Grid with halved spacing; contains every point of this grid."""
        if self.kind != "grid":
            raise ValueError("only grid samplers can be refined")
        nt = self.time_samples if self.time_samples == 1 else 2 * self.time_samples - 1
        return Sampler("grid", self.box, tuple(2 * p - 1 if p > 1 else 1 for p in self.points),
                       time_window=self.time_window, time_samples=nt)

    def with_box(self, box) -> Sampler:
        box = np.asarray(box, dtype=float)
        pts = self.points
        if self.kind == "grid" and len(pts) != len(box):
            pts = pts[0]
        return Sampler(self.kind, box, pts, self.count, self.seed,
                       self.time_window, self.time_samples)

    def describe(self) -> dict:
        d = {"kind": self.kind, "box": self.box.tolist(), "total": self.total}
        if self.kind == "grid":
            d["points"] = list(self.points)
        else:
            d["count"] = self.count
            d["seed"] = self.seed
        if self.time_window is not None:
            d["time_window"] = list(self.time_window)
            d["time_samples"] = self.time_samples
        return d


def grid(box, points=11, time_window=None, time_samples=1) -> Sampler:
    return Sampler("grid", box, points, time_window=time_window, time_samples=time_samples)


def uniform(box, count: int, seed: int, time_window=None) -> Sampler:
    return Sampler("random", box, count=count, seed=seed, time_window=time_window)
