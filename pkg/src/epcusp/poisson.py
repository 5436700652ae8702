"""Nonlinear screened Poisson solver for -phi_xx = rho - e^phi on the line.

The solve follows the lagged contraction

    (1 - d_xx) phi_{n+1} = f - (e^{phi_n} - 1 - phi_n),

with the linear operator inverted by a factorised tridiagonal system.  Far
field closures available: homogeneous Dirichlet at the grid ends, the exact
decaying exterior solution (phi' = -phi on the right, phi' = phi on the
left) or prescribed edge values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from numba import njit
from scipy.linalg import lapack

# contraction constant of the lagged iteration under |Phi_n| <= 1/4
C1_CONTRACTION = max(
    1.0 - 2.0 * math.exp(-0.25) * (1.0 - math.exp(-0.5)),
    -2.0 * math.exp(0.25) * (1.0 - math.exp(0.5)) - 1.0,
)
SUP_I_BOUND = 3.5


class IterationDiverged(RuntimeError):
    def __init__(self, msg: str, ratios: list[float]):
        super().__init__(msg)
        self.ratios = ratios


class PoissonDomainError(ValueError):
    pass


class BoundaryConditionError(ValueError):
    pass


@dataclass
class GridField:
    xs: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.vals = np.asarray(self.vals, dtype=float)
        if self.xs.shape != self.vals.shape or self.xs.size < 8:
            raise ValueError("GridField needs matching arrays of length >= 8")
        d = np.diff(self.xs)
        if not (d[0] > 0 and np.allclose(d, d[0], rtol=1e-9, atol=0.0)):
            raise ValueError("GridField grid must be uniform and increasing")
        if not np.all(np.isfinite(self.vals)):
            raise ValueError("GridField values must be finite")

    @property
    def h(self) -> float:
        return float(self.xs[1] - self.xs[0])

    @property
    def n(self) -> int:
        return int(self.xs.size)

    @classmethod
    def uniform(cls, half_width: float, n: int, vals=None) -> "GridField":
        xs = np.linspace(-half_width, half_width, n)
        return cls(xs, np.zeros(n) if vals is None else vals)

    def with_vals(self, vals) -> "GridField":
        return GridField(self.xs, vals)


@dataclass
class PoissonSolveReport:
    phi: GridField
    iterations: int
    contraction_estimate: float
    residual_linf: float
    ratio_history: list[float] = field(default_factory=list)
    admissible: bool = True
    c_f: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "contraction_estimate": self.contraction_estimate,
            "residual_linf": self.residual_linf,
            "ratio_history": list(self.ratio_history),
            "admissible": self.admissible,
            "c_f": self.c_f,
        }


@njit(cache=True)
def _thomas_factor(lower, diag, upper):
    n = diag.size
    inv = np.empty(n)
    cp = np.empty(n - 1)
    inv[0] = 1.0 / diag[0]
    for i in range(n - 1):
        cp[i] = upper[i] * inv[i]
        inv[i + 1] = 1.0 / (diag[i + 1] - lower[i] * cp[i])
    return inv, cp


@njit(cache=True)
def _thomas_solve(lower, inv, cp, r):
    # no pivoting: the operator is strictly diagonally dominant
    n = r.size
    x = np.empty(n)
    x[0] = r[0] * inv[0]
    for i in range(1, n):
        x[i] = (r[i] - lower[i - 1] * x[i - 1]) * inv[i]
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


class HelmholtzSolver:
    """Factorised discrete (1 - d_xx) on a uniform grid.

    ``bc`` is ``"dirichlet"`` (phi = 0 on the two end nodes), ``"decay"``
    (exterior solution e^{-|x|} matched through a ghost node) or ``"values"``
    (end nodes prescribed per call).
    """

    def __init__(self, n: int, h: float, bc: str = "decay"):
        if bc not in ("dirichlet", "decay", "values"):
            raise ValueError(f"unknown boundary closure {bc!r}")
        self.n, self.h, self.bc = n, h, bc
        ih2 = 1.0 / (h * h)
        diag = np.full(n, 1.0 + 2.0 * ih2)
        lower = np.full(n - 1, -ih2)
        upper = np.full(n - 1, -ih2)
        if bc == "decay":
            g = math.exp(-h)
            diag[0] -= g * ih2
            diag[-1] -= g * ih2
        else:
            diag[0] = diag[-1] = 1.0
            upper[0] = 0.0
            lower[-1] = 0.0
        self.diag, self.lower, self.upper = diag, lower, upper
        self._inv, self._cp = _thomas_factor(lower, diag, upper)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        out = self.diag * phi
        out[:-1] += self.upper * phi[1:]
        out[1:] += self.lower * phi[:-1]
        return out

    def solve(self, rhs: np.ndarray, edge=(0.0, 0.0)) -> np.ndarray:
        r = np.array(rhs, dtype=float)
        if self.bc != "decay":
            r[0], r[-1] = edge if self.bc == "values" else (0.0, 0.0)
        return _thomas_solve(self.lower, self._inv, self._cp, r)

    def residual(self, phi: np.ndarray, f: np.ndarray, edge=(0.0, 0.0)) -> float:
        res = self.apply(phi) - f + (np.expm1(phi) - phi)
        if self.bc != "decay":
            res[0] = phi[0] - (edge[0] if self.bc == "values" else 0.0)
            res[-1] = phi[-1] - (edge[1] if self.bc == "values" else 0.0)
        return float(np.max(np.abs(res)))

    def newton(self, f: np.ndarray, phi: np.ndarray, tol: float, max_iter: int,
               edge=(0.0, 0.0)) -> tuple[np.ndarray, int, list[float]]:
        ratios: list[float] = []
        prev = None
        for it in range(1, max_iter + 1):
            g = self.apply(phi) - f + (np.expm1(phi) - phi)
            d = self.diag + np.expm1(phi)
            if self.bc != "decay":
                g[0] = phi[0] - (edge[0] if self.bc == "values" else 0.0)
                g[-1] = phi[-1] - (edge[1] if self.bc == "values" else 0.0)
                d[0] = d[-1] = 1.0
            _, _, _, dx, info = lapack.dgtsv(self.lower.copy(), d, self.upper.copy(), g)
            if info != 0:
                raise np.linalg.LinAlgError("Newton step failed")
            phi = phi - dx
            step = float(np.max(np.abs(dx)))
            if prev:
                ratios.append(step / prev)
            prev = step
            if step <= tol:
                return phi, it, ratios
        raise IterationDiverged("Newton iteration did not converge", ratios)


def weighted_sup(xs: np.ndarray, f: np.ndarray) -> float:
    return float(np.max((1.0 + np.cbrt(xs * xs)) * np.abs(f)))


def rounding_floor(solver: HelmholtzSolver, phi: np.ndarray) -> float:
    # (1 - d_xx) is an M-matrix with inverse bounded by 1 in sup norm, so
    # successive iterates settle to a few ulps of |phi| whatever h is
    return 64.0 * np.finfo(float).eps * max(float(np.max(np.abs(phi))), 1e-300)


def fixed_point(solver: HelmholtzSolver, f: np.ndarray, tol: float, max_iter: int,
                phi0: np.ndarray | None = None, edge=(0.0, 0.0)):
    """Lagged contraction; returns (phi, iterations, ratio history)."""
    if phi0 is None:
        phi = solver.solve(f, edge)
    else:
        phi = solver.solve(f - (np.expm1(phi0) - phi0), edge)
    it = 1
    ratios: list[float] = []
    ref = phi if phi0 is None else phi - phi0
    prev = float(np.max(np.abs(ref)))
    if prev <= tol:
        return phi, it, ratios
    grow = 0
    while it < max_iter:
        new = solver.solve(f - (np.expm1(phi) - phi), edge)
        it += 1
        diff = float(np.max(np.abs(new - phi)))
        phi = new
        floor = rounding_floor(solver, phi)
        if not math.isfinite(diff):
            break
        # ratios near the rounding floor are noise, keep only the geometric phase
        if prev > 100.0 * floor:
            ratios.append(diff / prev)
            grow = grow + 1 if ratios[-1] >= 1.0 else 0
        if diff <= tol or diff <= 10.0 * floor:
            return phi, it, ratios
        if grow >= 3:
            break
        prev = diff
    raise IterationDiverged("screened Poisson iteration did not converge", ratios)


def solve_screened(f: GridField, tol: float = 1e-12, max_iter: int = 200,
                   bc: str = "dirichlet", newton: bool = False,
                   phi0: np.ndarray | None = None,
                   solver: HelmholtzSolver | None = None,
                   edge=(0.0, 0.0)) -> PoissonSolveReport:
    """Solve (1 - d_xx) phi + (e^phi - 1 - phi) = f."""
    if solver is None:
        solver = HelmholtzSolver(f.n, f.h, bc)
    fv = f.vals
    c_f = weighted_sup(f.xs, fv)
    sup_i = SUP_I_BOUND
    admissible = c_f * sup_i <= 0.25 and math.exp(0.25) * c_f * sup_i ** 2 <= 2.0
    if not admissible:
        warnings.warn("forcing outside the proven contraction regime", RuntimeWarning,
                      stacklevel=2)
    if newton:
        start = solver.solve(fv, edge) if phi0 is None else phi0
        phi, it, ratios = solver.newton(fv, start, tol, max_iter, edge)
    else:
        phi, it, ratios = fixed_point(solver, fv, tol, max_iter, phi0, edge)
    contraction = max(ratios) if ratios else 0.0
    return PoissonSolveReport(
        phi=f.with_vals(phi),
        iterations=it,
        contraction_estimate=float(min(max(contraction, 0.0), 1.0 - 1e-16)),
        residual_linf=solver.residual(phi, fv, edge),
        ratio_history=ratios,
        admissible=admissible,
        c_f=c_f,
    )


def check_density(xs: np.ndarray, rho: np.ndarray, edge_tol: float = 1e-6) -> None:
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise PoissonDomainError("density must be positive (vacuum encountered)")
    n = rho.size
    k = max(1, int(0.05 * n))
    outer = np.concatenate([rho[:k], rho[-k:]])
    if np.max(np.abs(outer - 1.0)) >= edge_tol:
        raise BoundaryConditionError("density does not relax to 1 on the outer 5% of the grid")


def solve_physical(rho: GridField, tol: float = 1e-12, max_iter: int = 200,
                   bc: str = "dirichlet", newton: bool = False,
                   phi0: np.ndarray | None = None,
                   solver: HelmholtzSolver | None = None,
                   edge_tol: float = 1e-6) -> PoissonSolveReport:
    """Potential for -phi_xx = rho - e^phi (forcing f = rho - 1)."""
    check_density(rho.xs, rho.vals, edge_tol)
    f = rho.with_vals(rho.vals - 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_screened(f, tol, max_iter, bc, newton, phi0, solver)


# ---------------------------------------------------------------- kernel I(y)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)
_T_MAX = 40.0  # e^{-40} < 1e-17


def _panels(c: float) -> np.ndarray:
    # breakpoints on [0, T_MAX] graded geometrically toward the cusp at t = c
    pts = [0.0, _T_MAX]
    if 0.0 <= c < _T_MAX:
        pts.append(c)
        for k in range(40):
            d = 2.0 ** (-k)
            for p in (c - d, c + d):
                if 0.0 < p < _T_MAX:
                    pts.append(p)
    # the integrand also has a kink where y - t or y + t crosses 0 only at t = c
    for k in range(1, 12):
        pts.append(min(_T_MAX, 2.0 ** k))
    return np.unique(np.array(pts))


def kernel_weight_I(y: float) -> float:
    """I(y) = (|y|^{2/3}+1) * int e^{-|y-y'|} / (1+|y'|^{2/3}) dy'."""
    y = abs(float(y))
    br = _panels(y)
    a, b = br[:-1], br[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    t = mid[:, None] + half[:, None] * _GL_X[None, :]
    wts = half[:, None] * _GL_W[None, :]
    g = 1.0 / (1.0 + np.cbrt((y + t) ** 2)) + 1.0 / (1.0 + np.cbrt((y - t) ** 2))
    total = float(np.sum(wts * np.exp(-t) * g))
    return (np.cbrt(y * y) + 1.0) * total


def kernel_weight_I_quad(y: float) -> float:
    """Independent adaptive-quadrature evaluation of I(y)."""
    g = lambda v: math.exp(-abs(y - v)) / (1.0 + abs(v) ** (2.0 / 3.0))
    pts = sorted({0.0, y})
    parts = [integrate.quad(g, -np.inf, pts[0], epsabs=1e-13, epsrel=1e-13, limit=400)[0]]
    if len(pts) == 2:
        parts.append(integrate.quad(g, pts[0], pts[1], epsabs=1e-13, epsrel=1e-13, limit=400)[0])
    parts.append(integrate.quad(g, pts[-1], np.inf, epsabs=1e-13, epsrel=1e-13, limit=400)[0])
    return (abs(y) ** (2.0 / 3.0) + 1.0) * sum(parts)


def sup_I(y_grid) -> float:
    return max(kernel_weight_I(v) for v in np.asarray(y_grid, dtype=float))


# ---------------------------------------------------------- potential bounds

def _u(tau: float) -> float:
    # (tau-1)e^tau + 1, written to avoid cancellation near 0
    if abs(tau) < 1e-3:
        return tau * tau * (0.5 + tau * (1.0 / 3.0 + tau / 8.0))
    return (tau - 1.0) * math.exp(tau) + 1.0


def _sqrt2u(tau: float) -> float:
    return math.sqrt(max(2.0 * _u(tau), 0.0))


def v_plus(z: float) -> float:
    return integrate.quad(_sqrt2u, 0.0, z, epsabs=1e-14, epsrel=1e-12)[0]


def v_minus(z: float) -> float:
    return integrate.quad(_sqrt2u, z, 0.0, epsabs=1e-14, epsrel=1e-12)[0]


def _invert(fn, target: float, sign: float) -> float:
    if target <= 0.0:
        return 0.0
    hi = 1.0
    while fn(sign * hi) < target:
        hi *= 2.0
        if hi > 1e3:
            raise ValueError("energy level too large to invert")
    return sign * optimize.brentq(lambda z: fn(sign * z) - target, 0.0, hi, xtol=1e-14,
                                  rtol=1e-13)


@lru_cache(maxsize=256)
def amplitude_bounds(H0: float, rho_floor: float) -> tuple[float, float]:
    """(C1, theta0): potential amplitude bound and the density equivalence constant."""
    if H0 < 0:
        raise ValueError("H0 must be nonnegative")
    if rho_floor <= 0:
        raise ValueError("rho_floor must be positive")
    c1 = max(_invert(v_plus, H0, 1.0), -_invert(v_minus, H0, -1.0))
    if rho_floor < 1.0:
        theta0 = (1.0 - rho_floor) / (-math.log(rho_floor))
    else:
        theta0 = 1.0
    return c1, theta0


def phi_x_bound(H0: float, K: float, c1: float) -> float:
    """C2 with phi_x^2 <= 4H/K + 2H + 2(e^{C1} - C1 - 1), valid while |rho-1| < 1."""
    return math.sqrt(4.0 * H0 / K + 2.0 * H0 + 2.0 * (math.expm1(c1) - c1))
