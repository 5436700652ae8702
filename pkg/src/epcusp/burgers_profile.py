"""Stable self-similar Burgers profile.

The profile is the real root of ``y + W + W**3 = 0``.  Derivatives follow
from implicit differentiation, so every quantity here is closed form up to
the root solve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

_NEWTON_SWITCH = 1e6


class ProfileDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileEval:
    y: float
    w: float
    d1: float
    d2: float = math.nan
    d3: float = math.nan
    d4: float = math.nan


def _check_finite(y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)):
        raise ProfileDomainError("profile argument must be finite")


def _newton_polish(t: np.ndarray, a: np.ndarray, sweeps: int) -> np.ndarray:
    # t solves t^3 + t = a with a >= 0; f is convex for t >= 0 so Newton from
    # above converges monotonically.
    for _ in range(sweeps):
        t = t - (t * t * t + t - a) / (3.0 * t * t + 1.0)
    return t


def profile_value(y):
    """Real root W of W^3 + W + y = 0, vectorised over ``y``."""
    arr = np.asarray(y, dtype=float)
    _check_finite(arr)
    a = np.abs(arr)
    t = np.empty_like(a)

    small = a <= _NEWTON_SWITCH
    if np.any(small):
        asm = a[small]
        # Cardano in the cancellation-free branch: t = u - 1/(3u)
        u = np.cbrt(0.5 * asm + np.sqrt(0.25 * asm * asm + 1.0 / 27.0))
        t0 = u - 1.0 / (3.0 * u)
        # tiny |y|: the subtraction above loses relative accuracy
        t0 = np.where(asm < 1e-4, asm * (1.0 - asm * asm), t0)
        t[small] = _newton_polish(np.maximum(t0, 0.0), asm, 2)
    big = ~small
    if np.any(big):
        abig = a[big]
        t[big] = _newton_polish(np.cbrt(abig), abig, 6)

    out = -np.sign(arr) * t
    if np.ndim(y) == 0:
        return float(out)
    return out


def _derivs(w: np.ndarray):
    d1 = -1.0 / (1.0 + 3.0 * w * w)
    d2 = 6.0 * w * d1 ** 3
    d3 = 6.0 * d1 ** 4 + 18.0 * w * d1 ** 2 * d2
    d4 = 42.0 * d1 ** 3 * d2 + 36.0 * w * d1 * d2 ** 2 + 18.0 * w * d1 ** 2 * d3
    return d1, d2, d3, d4


def profile_derivatives(y: float, max_order: int = 4) -> ProfileEval:
    if max_order not in (1, 2, 3, 4):
        raise ValueError("max_order must be 1, 2, 3 or 4")
    w = profile_value(float(y))
    d = _derivs(np.float64(w))
    vals = [float(v) for v in d[:max_order]] + [math.nan] * (4 - max_order)
    return ProfileEval(float(y), w, *vals)


def profile_arrays(y) -> tuple[np.ndarray, ...]:
    """(W, W', W'', W''', W'''') on an array of points."""
    w = np.asarray(profile_value(np.asarray(y, dtype=float)), dtype=float)
    return (w,) + _derivs(w)


def w_over_y(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """W/y with the removable value W'(0) = -1 at the origin."""
    out = np.full_like(w, -1.0)
    nz = y != 0.0
    out[nz] = w[nz] / y[nz]
    return out


def _y_minus_atan(a: np.ndarray) -> np.ndarray:
    # |y| - atan|y| without cancellation near 0
    out = a - np.arctan(a)
    sm = a < 1e-2
    x = a[sm]
    x2 = x * x
    out[sm] = x * x2 * (1.0 / 3.0 - x2 * (1.0 / 5.0 - x2 * (1.0 / 7.0 - x2 / 9.0)))
    return out


def int_inv_cube8(a: np.ndarray) -> np.ndarray:
    """Closed form of the integral of 1/(t^{2/3}+8) over [0, a], a >= 0."""
    u = np.cbrt(a)
    r8 = math.sqrt(8.0)
    return 3.0 * (u - r8 * np.arctan(u / r8))


# Constants for the two decay bounds whose constant is left implicit.
# C1 = 2^{1/3}: |W'| <= 1 on |y| <= 1, and |W'| <= 1/(1+3 b^2 y^{2/3}) with
# b^3 + b = 1 beyond, which is below 2^{1/3} (1+y^2)^{-1/3}.
DECAY1_CONST = 2.0 ** (1.0 / 3.0)
# C2 = 4 from |W''| <= 6 |y|^{1/3} / (27 b^6 y^2) on |y| >= 1 and a direct
# bound on |y| <= 1.
DECAY2_CONST = 4.0


@dataclass
class MarginRow:
    inequality_id: str
    y: float
    lhs: float
    rhs: float
    margin: float


@dataclass
class MarginTable:
    """Per-inequality minimum margin over a grid plus the full pointwise data."""

    lam: float
    rows: dict[str, dict[str, np.ndarray]]

    def min_margin(self, ineq: str) -> float:
        m = self.rows[ineq]["margin"]
        return float(np.min(m)) if m.size else math.inf

    def argmin_y(self, ineq: str) -> float:
        r = self.rows[ineq]
        return float(r["y"][int(np.argmin(r["margin"]))])

    def summary(self) -> dict[str, float]:
        return {k: self.min_margin(k) for k in self.rows}

    def iter_rows(self) -> Iterable[MarginRow]:
        for k, r in self.rows.items():
            for y, l, rh, m in zip(r["y"], r["lhs"], r["rhs"], r["margin"]):
                yield MarginRow(k, float(y), float(l), float(rh), float(m))

    def to_csv(self, path, stride: int = 1) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["inequality_id", "y", "lhs", "rhs", "margin"])
            for k, r in self.rows.items():
                for i in range(0, r["y"].size, stride):
                    wr.writerow([k, repr(float(r["y"][i])), repr(float(r["lhs"][i])),
                                 repr(float(r["rhs"][i])), repr(float(r["margin"][i]))])


def _row(y, lhs, rhs, margin=None):
    if margin is None:
        margin = rhs - lhs
    return {"y": y, "lhs": lhs, "rhs": rhs, "margin": margin}


def _ineq_table(y: np.ndarray, lam: float) -> dict[str, Callable[[], dict]]:
    w, d1, d2, _, _ = profile_arrays(y)
    a = np.abs(y)
    y2 = y * y
    wy = w_over_y(y, w)
    c8 = np.cbrt(y2) + 8.0

    def envelope():
        low = -1.0 / (1.0 + 3.0 * y2 / np.cbrt(3.0 * y2 + 1.0) ** 2)
        return _row(y, d1, np.zeros_like(y), np.minimum(d1 - low, -d1))

    def w_lt_y():
        return _row(y, np.abs(w), a)

    def decay1():
        return _row(y, np.abs(d1), DECAY1_CONST * (1.0 + y2) ** (-1.0 / 3.0))

    def decay2():
        return _row(y, np.abs(d2), DECAY2_CONST * (1.0 + y2) ** (-5.0 / 6.0))

    def m3():
        lhs = 1.0 + 2.0 * d1 + 2.0 / (1.0 + y2) * (1.5 + wy)
        rhs = y2 / (5.0 * (1.0 + y2)) + 16.0 * y2 / (5.0 * (1.0 + 8.0 * y2))
        return _row(y, lhs, rhs, lhs - rhs)

    def m5():
        lhs = 2.5 + 3.0 * d1 + 1.0 / (1.0 + y2) * (1.5 + wy)
        rhs = 2.0 * y2 / (3.0 * (1.0 + y2))
        return _row(y, lhs, rhs, lhs - rhs)

    def m4():
        # (1+y^2)/y^2 (|y| - atan|y|) -> |y|/3 at 0
        ratio = np.zeros_like(y)
        nz = a > 0
        ratio[nz] = (1.0 + y2[nz]) / y2[nz] * _y_minus_atan(a[nz])
        lhs = np.abs(d2) * ratio
        rhs = 3.0 * y2 / (1.0 + 8.0 * y2) + y2 / (30.0 * (1.0 + y2))
        return _row(y, lhs, rhs, rhs - lam * lhs)

    far = a >= 3.0
    yf, wf, d1f, d2f = y[far], w[far], d1[far], d2[far]
    c8f = c8[far]
    intf = int_inv_cube8(np.abs(yf))
    # (1/y) times the signed integral from 0 to y equals I(|y|)/|y|
    bracket = 1.5 + wf / yf + intf / np.abs(yf)
    lhs7 = np.abs(d2f) * c8f * intf

    def m7():
        rhs = 1.0 - 1.0 / c8f + 2.0 * d1f - 2.0 * np.cbrt(yf * yf) / (3.0 * c8f) * bracket
        return _row(yf, lhs7, rhs, rhs - lam * lhs7)

    def m7p():
        rhs = 1.0 - 1.0 / c8f + d1f - 2.0 * np.cbrt(yf * yf) / (3.0 * c8f) * bracket
        return _row(yf, lam * lhs7, rhs, rhs - lam * lhs7)

    def far_w():
        return far_band(y, 3.0, 0.84, w)

    return {
        "y-w-y2": envelope,
        "W<y": w_lt_y,
        "y-w-y": decay1,
        "Wyybar_bdd": decay2,
        "0605_m_3": m3,
        "0605_m_5": m5,
        "0605_m_4": m4,
        "0605_m_7": m7,
        "0605_m_7p": m7p,
        "far_W": far_w,
    }


def far_band(y: np.ndarray, a: float, b: float, w: np.ndarray | None = None) -> dict:
    """Band b|y|^{1/3} <= |W| <= |y|^{1/3} on |y| >= a (needs b^3 + b a^{-2/3} <= 1)."""
    if w is None:
        w = np.asarray(profile_value(y))
    sel = np.abs(y) >= a
    ys, ws = y[sel], np.abs(w[sel])
    c = np.cbrt(np.abs(ys))
    margin = np.minimum(ws - b * c, c - ws)
    return _row(ys, ws, c, margin)


def verify_profile_inequalities(y_grid, lam: float = 1.005) -> MarginTable:
    """Evaluate every profile inequality on ``y_grid``.

    Margins are oriented so that nonnegative means the inequality holds.
    """
    y = np.asarray(y_grid, dtype=float)
    _check_finite(y)
    if y.ndim != 1 or np.any(np.diff(y) < 0):
        raise ValueError("y_grid must be a sorted 1-D array")
    if not lam > 1.0:
        raise ValueError("lambda must exceed 1")
    table = _ineq_table(y, lam)
    return MarginTable(lam, {k: fn() for k, fn in table.items()})


def standard_inequality_grid(n: int = 100_000, ymax: float = 1e8) -> np.ndarray:
    """Symmetric grid: linear core on [-10, 10] and log-spaced tails out to ymax."""
    n_lin = n // 5
    n_log = (n - n_lin) // 2
    lin = np.linspace(-10.0, 10.0, n_lin)
    tail = np.logspace(-6, math.log10(ymax), n_log)
    g = np.concatenate([-tail[::-1], lin, tail])
    return np.unique(g)
