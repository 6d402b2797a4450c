"""Shared generators and oracles for the test suite."""

import numpy as np

from weakon.dsl import BinOp, Call, Neg, Num, Pow, Time, Var, unparse


def random_node(rng, n, depth=3, with_time=False):
    """Random polynomial/trig expression, smooth on all of R^n."""
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if with_time and r < 0.15:
            return Time()
        if r < 0.7:
            return Var(int(rng.integers(n)))
        return Num(float(np.round(rng.uniform(-2, 2), 3)))
    kind = rng.integers(7)
    a = random_node(rng, n, depth - 1, with_time)
    if kind == 0:
        return BinOp("+", a, random_node(rng, n, depth - 1, with_time))
    if kind == 1:
        return BinOp("-", a, random_node(rng, n, depth - 1, with_time))
    if kind == 2:
        return BinOp("*", a, random_node(rng, n, depth - 1, with_time))
    if kind == 3:
        return Pow(a, int(rng.integers(0, 4)))
    if kind == 4:
        # denominator bounded away from zero
        den = BinOp("+", Num(2.0), Pow(random_node(rng, n, depth - 1, with_time), 2))
        return BinOp("/", a, den)
    if kind == 5:
        return Neg(a)
    return Call(str(rng.choice(["sin", "cos", "tanh"])), a)


def random_field_source(rng, n, depth=3, with_time=False):
    return "\n".join(f"dx{i} = {unparse(random_node(rng, n, depth, with_time))}" for i in range(n))


def fd_jacobian(f, x, t=0.0, h=1e-6):
    """Central finite differences with a relative step."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        hj = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = hj
        cols.append((f(x + e, t) - f(x - e, t)) / (2 * hj))
    return np.stack(cols, axis=-1)


def charpoly_eigenvalues(H):
    """Eigenvalues of a symmetric matrix from its characteristic polynomial.

    Faddeev-LeVerrier gives the coefficients, numpy.roots the roots; the
    spectrum is real so imaginary round-off is dropped.
    """
    H = np.asarray(H, dtype=float)
    n = len(H)
    coeffs = [1.0]
    M = np.zeros_like(H)
    eye = np.eye(n)
    for k in range(1, n + 1):
        M = H @ M + coeffs[-1] * eye
        coeffs.append(-np.trace(H @ M) / k)
    return np.sort(np.roots(coeffs).real)[::-1]


def random_symmetric(rng, n, scale=1.0):
    A = rng.normal(scale=scale, size=(n, n))
    return 0.5 * (A + A.T)
