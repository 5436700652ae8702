"""Finite-difference kernels shared by the solvers and the diagnostics."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numba import njit


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], k: int) -> np.ndarray:
    """Weights w_j with sum_j w_j f(x + j h) ~ h^k f^{(k)}(x)."""
    off = np.asarray(offsets, dtype=float)
    n = off.size
    a = np.vander(off, n, increasing=True).T
    b = np.zeros(n)
    fact = 1.0
    for i in range(2, k + 1):
        fact *= i
    b[k] = fact
    return np.linalg.solve(a, b)


_CENTRAL = {1: 3, 2: 3, 3: 4, 4: 4, 5: 5}


def central_derivative(f: np.ndarray, h: float, k: int = 1, half_width: int | None = None) -> np.ndarray:
    """k-th derivative with centred weights; the m end nodes on each side use
    shifted stencils of the same width."""
    m = _CENTRAL[k] if half_width is None else half_width
    n = f.size
    if n < 2 * m + 1:
        raise ValueError("grid shorter than the stencil")
    w = fd_weights(tuple(range(-m, m + 1)), k)
    out = np.zeros(n)
    core = slice(m, n - m)
    for j, c in enumerate(w):
        if c != 0.0:
            out[core] += c * f[j:j + n - 2 * m]
    for i in range(m):
        wl = fd_weights(tuple(range(-i, 2 * m + 1 - i)), k)
        out[i] = np.dot(wl, f[:2 * m + 1])
        # mirrored stencil at the right end
        out[n - 1 - i] = (-1) ** k * np.dot(wl, f[::-1][:2 * m + 1])
    return out / h ** k


@njit(cache=True)
def upwind5(u, a, inv_h, out):
    """Fifth-order upwind-biased first derivative, biased against the sign of a."""
    n = u.size
    for i in range(n):
        im3 = i - 3 if i >= 3 else 0
        im2 = i - 2 if i >= 2 else 0
        im1 = i - 1 if i >= 1 else 0
        ip1 = i + 1 if i + 1 < n else n - 1
        ip2 = i + 2 if i + 2 < n else n - 1
        ip3 = i + 3 if i + 3 < n else n - 1
        if a[i] >= 0.0:
            d = (-2.0 * u[im3] + 15.0 * u[im2] - 60.0 * u[im1] + 20.0 * u[i]
                 + 30.0 * u[ip1] - 3.0 * u[ip2])
        else:
            d = (2.0 * u[ip3] - 15.0 * u[ip2] + 60.0 * u[ip1] - 20.0 * u[i]
                 - 30.0 * u[im1] + 3.0 * u[im2])
        out[i] = d * inv_h / 60.0
    return out


# one-sided 7-point first-derivative weights (times 60) for the three end nodes
_EDGE6 = np.array([[-147.0, 360.0, -450.0, 400.0, -225.0, 72.0, -10.0],
                   [-10.0, -77.0, 150.0, -100.0, 50.0, -15.0, 2.0],
                   [2.0, -24.0, -35.0, 80.0, -30.0, 8.0, -1.0]])


@njit(cache=True)
def central6(u, inv_h, out):
    """Sixth-order centred first derivative; the three end nodes on each side
    use one-sided 7-point stencils (needs at least 7 nodes)."""
    n = u.size
    for i in range(3, n - 3):
        out[i] = (u[i + 3] - 9.0 * u[i + 2] + 45.0 * u[i + 1] - 45.0 * u[i - 1]
                  + 9.0 * u[i - 2] - u[i - 3]) * inv_h / 60.0
    for i in range(3):
        a = 0.0
        b = 0.0
        for j in range(7):
            a += _EDGE6[i, j] * u[j]
            b += _EDGE6[i, j] * u[n - 1 - j]
        out[i] = a * inv_h / 60.0
        out[n - 1 - i] = -b * inv_h / 60.0
    return out


def local_taylor(xs: np.ndarray, f: np.ndarray, x0: float, max_order: int, npts: int = 8) -> np.ndarray:
    """Derivatives 0..max_order at x0 from the interpolating polynomial on the
    npts nodes nearest to x0."""
    h = xs[1] - xs[0]
    n = xs.size
    c = int(np.floor((x0 - xs[0]) / h))
    lo = c - npts // 2 + 1
    lo = min(max(lo, 0), n - npts)
    t = (xs[lo:lo + npts] - x0) / h
    v = np.vander(t, npts, increasing=True)
    coef = np.linalg.solve(v, f[lo:lo + npts])
    out = np.empty(max_order + 1)
    fact = 1.0
    for k in range(max_order + 1):
        if k > 0:
            fact *= k
        out[k] = coef[k] * fact / h ** k
    return out


def local_poly_sample(xs: np.ndarray, f: np.ndarray, xq: np.ndarray, max_order: int,
                      npts: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives 0..max_order at every query point, each from the
    interpolating polynomial on its npts nearest nodes (the rule used by
    ``local_taylor``).  Returns an array of shape (max_order + 1, len(xq))
    and the outside-grid mask."""
    h = xs[1] - xs[0]
    n = xs.size
    xq = np.asarray(xq, dtype=float)
    pos = (xq - xs[0]) / h
    outside = (pos < 0.0) | (pos > n - 1)
    lo = np.clip(np.floor(pos).astype(np.int64) - npts // 2 + 1, 0, n - npts)
    idx = lo[:, None] + np.arange(npts)
    t = (xs[idx] - xq[:, None]) / h
    v = t[:, :, None] ** np.arange(npts)
    coef = np.linalg.solve(v, f[idx][:, :, None])[:, :, 0]
    out = np.empty((max_order + 1, xq.size))
    fact = 1.0
    for k in range(max_order + 1):
        if k > 0:
            fact *= k
        out[k] = coef[:, k] * fact / h ** k
    return out, outside


def cubic_sample(xs: np.ndarray, f: np.ndarray, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Four-point Lagrange interpolation on a uniform grid.

    Returns samples and a mask flagging query points outside the grid.
    """
    h = xs[1] - xs[0]
    n = xs.size
    pos = (np.asarray(xq, dtype=float) - xs[0]) / h
    outside = (pos < 0.0) | (pos > n - 1)
    i = np.clip(np.floor(pos).astype(np.int64), 1, n - 3)
    t = np.clip(pos, 0.0, n - 1) - i
    fm1, f0, f1, f2 = f[i - 1], f[i], f[i + 1], f[i + 2]
    val = (-t * (t - 1.0) * (t - 2.0) / 6.0 * fm1
           + (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0 * f0
           - (t + 1.0) * t * (t - 2.0) / 2.0 * f1
           + (t + 1.0) * t * (t - 1.0) / 6.0 * f2)
    return val, outside
