"""Symmetric eigen kernels: ranked spectra, top-k eigenvalue sums, Ky Fan frames.

The eigensolver is a cyclic Jacobi method vectorized over a stack of small
matrices.  Every matrix in a stack sees exactly the same sequence of
floating-point operations it would see on its own, so results do not depend
on batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

__all__ = [
    "SymSpectrum", "OrthonormalFrame", "sym_part", "jacobi_eigh", "spectrum",
    "spectra", "sum_top_k", "random_frame", "top_frame", "ky_fan_trace", "ky_fan_max",
    "DEFAULT_MAX_SWEEPS", "DEFAULT_SEED",
]

DEFAULT_MAX_SWEEPS = 100
DEFAULT_SEED = 20140101


def sym_part(M) -> np.ndarray:
    """Return ``(M + M^T)/2``, bit-symmetric; works on stacks ``(..., n, n)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"square matrix required, got shape {M.shape}")
    # a + b is commutative in IEEE arithmetic, so (i,j) and (j,i) agree exactly
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def jacobi_eigh(H, *, max_sweeps: int = DEFAULT_MAX_SWEEPS, vectors: bool = False):
    """Cyclic Jacobi diagonalization of one symmetric matrix or a stack.

    Returns the unsorted diagonal (and the accumulated rotation with
    eigenvectors in its columns when ``vectors`` is set).  Off-diagonal
    entries that can no longer change either diagonal entry are set to zero,
    and a matrix is converged once its off-diagonal part is exactly zero.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise ValueError(f"square matrix required, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("matrix has non-finite entries")
    lead = H.shape[:-2]
    n = H.shape[-1]
    A = H.reshape((-1, n, n)).copy()
    N = A.shape[0]
    V = np.broadcast_to(np.eye(n), (N, n, n)).copy() if vectors else None
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    offmask = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps + 1):
        if not np.any(A[:, offmask]):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            app = A[:, p, p]
            aqq = A[:, q, q]
            g = 100.0 * np.abs(apq)
            negligible = (np.abs(app) + g == np.abs(app)) & (np.abs(aqq) + g == np.abs(aqq))
            rot = (apq != 0.0) & ~negligible
            if not rot.any():
                A[:, p, q] = A[:, q, p] = 0.0
                continue
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                theta = np.where(rot, (aqq - app) / (2.0 * apq), 0.0)
                big = np.abs(theta) > 1e150
                tt = np.where(
                    big, 0.5 / np.where(big, theta, 1.0),
                    np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)))
            tt = np.where(theta == 0.0, 1.0, tt)
            tt = np.where(rot, tt, 0.0)
            c = 1.0 / np.sqrt(tt * tt + 1.0)
            s = tt * c
            new_pp = app - tt * apq
            new_qq = aqq + tt * apq
            gp = A[:, :, p].copy()
            gq = A[:, :, q].copy()
            cp = c[:, None]
            sp = s[:, None]
            col_p = cp * gp - sp * gq
            col_q = sp * gp + cp * gq
            A[:, :, p] = col_p
            A[:, p, :] = col_p
            A[:, :, q] = col_q
            A[:, q, :] = col_q
            A[:, p, p] = new_pp
            A[:, q, q] = new_qq
            A[:, p, q] = A[:, q, p] = 0.0
            if V is not None:
                vp = V[:, :, p].copy()
                vq = V[:, :, q].copy()
                V[:, :, p] = cp * vp - sp * vq
                V[:, :, q] = sp * vp + cp * vq
    else:
        raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    d = np.diagonal(A, axis1=1, axis2=2).copy().reshape(lead + (n,))
    if vectors:
        return d, V.reshape(lead + (n, n))
    return d


@dataclass(frozen=True, eq=False)
class SymSpectrum:
    """Eigenvalues ranked non-increasing and their running sums ``S_k``."""

    eigenvalues: np.ndarray
    cumulative: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[-1]

    def S(self, k: int):
        if not 1 <= k <= self.n:
            raise ValueError(f"k must lie in [1, {self.n}], got {k}")
        return self.cumulative[..., k - 1]

    def lam(self, j: int):
        """The j-th largest eigenvalue (1-based)."""
        return self.eigenvalues[..., j - 1]


def _rank(d: np.ndarray) -> np.ndarray:
    order = np.argsort(-d, axis=-1, kind="stable")
    return np.take_along_axis(d, order, axis=-1)


def spectra(H, *, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SymSpectrum:
    """Ranked spectra of a stack ``(..., n, n)`` of symmetric matrices."""
    ev = _rank(jacobi_eigh(H, max_sweeps=max_sweeps))
    return SymSpectrum(ev, np.cumsum(ev, axis=-1))


def spectrum(H, *, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SymSpectrum:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError("spectrum() takes a single matrix; use spectra() for stacks")
    if not np.array_equal(H, H.T):
        raise ValueError("matrix is not symmetric")
    return spectra(H, max_sweeps=max_sweeps)


def sum_top_k(H, k: int) -> float:
    """Sum of the k largest eigenvalues of a symmetric matrix."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    return float(spectrum(H).cumulative[k - 1])


@dataclass(frozen=True, eq=False)
class OrthonormalFrame:
    """k x n matrix with orthonormal rows."""

    rows: np.ndarray

    def __post_init__(self):
        V = np.array(self.rows, dtype=float)
        if V.ndim != 2 or not 1 <= V.shape[0] <= V.shape[1]:
            raise ValueError(f"frame must be k x n with 1 <= k <= n, got {V.shape}")
        if np.max(np.abs(V @ V.T - np.eye(V.shape[0]))) > 1e-10:
            raise ValueError("frame rows are not orthonormal")
        V.setflags(write=False)
        object.__setattr__(self, "rows", V)

    @property
    def k(self) -> int:
        return self.rows.shape[0]


def _orth_rows(G: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(G.T)
    # fix signs so the factorization is unique
    sgn = np.where(np.diag(r) < 0, -1.0, 1.0)
    return (q * sgn).T


def random_frame(n: int, k: int, rng: np.random.Generator) -> OrthonormalFrame:
    """Orthonormalized rows of a k x n standard-normal matrix."""
    return OrthonormalFrame(_orth_rows(rng.standard_normal((k, n))))


def top_frame(H, k: int) -> OrthonormalFrame:
    """Frame spanned by eigenvectors of the k largest eigenvalues."""
    d, V = jacobi_eigh(H, vectors=True)
    order = np.argsort(-d, kind="stable")[:k]
    return OrthonormalFrame(V[:, order].T)


def ky_fan_trace(H, V: OrthonormalFrame) -> float:
    """``Tr(V H V^T)`` for a frame with orthonormal rows."""
    H = np.asarray(H, dtype=float)
    rows = V.rows
    if rows.shape[1] != H.shape[0]:
        raise ValueError("frame and matrix dimensions differ")
    return float(np.einsum("ij,jk,ik->", rows, H, rows))


def _gershgorin_floor(H: np.ndarray) -> float:
    radius = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
    return float(np.min(np.diag(H) - radius))


def _refine(H: np.ndarray, V: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    """Shifted orthogonal iteration started from the rows of ``V``."""
    n = H.shape[0]
    # shift so the matrix is positive semidefinite without knowing its spectrum
    A = H - _gershgorin_floor(H) * np.eye(n)
    best = float(np.einsum("ij,jk,ik->", V, H, V))
    stalled = 0
    for _ in range(max_iter):
        V = _orth_rows(V @ A)
        tr = float(np.einsum("ij,jk,ik->", V, H, V))
        if tr - best <= tol * (1.0 + abs(best)):
            stalled += 1
            if stalled >= 3:
                best = max(best, tr)
                break
        else:
            stalled = 0
        best = max(best, tr)
    return V


def ky_fan_max(H, k: int, samples: int, *, seed: int = DEFAULT_SEED,
               refine: bool = True, max_iter: int = 100_000, tol: float = 1e-15) -> float:
    """Lower-bound estimate of ``S_k(H)`` from random frames plus local refinement.

    Draws ``samples`` random orthonormal frames, keeps the one with the
    largest trace, then (when ``refine``) runs a shifted orthogonal
    iteration seeded at that frame.  Uses no eigendecomposition, so it is an
    independent check on :func:`sum_top_k`.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not np.any(H):
        return 0.0
    rng = np.random.default_rng(seed)
    best_rows, best = None, -np.inf
    for _ in range(samples):
        V = random_frame(n, k, rng)
        tr = ky_fan_trace(H, V)
        if tr > best:
            best_rows, best = V.rows, tr
    if refine:
        V = _refine(H, best_rows, max_iter, tol)
        best = max(best, float(np.einsum("ij,jk,ik->", V, H, V)))
    return best
