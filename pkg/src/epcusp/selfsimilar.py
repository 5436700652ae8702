"""Modulated self-similar frame.

With d = tau - t and s = -log d the fields are written as

    w(x, t) = e^{-s/2} W(y, s) + kappa,  z = Z(y, s),  phi = Phi(y, s),
    y = (x - xi) e^{3s/2}.

In the common Riemann form (see ``euler_poisson``) the renormalized system is

    W_s - W/2 + U^W W_y = -(q e^s Phi_y + kappa_dot e^{-s/2}) / (1 - tau_dot)
    Z_s + U^Z Z_y       = -q e^{s/2} Phi_y / (1 - tau_dot)
    -e^{3s} Phi_yy      = rho - e^Phi

    U^W = e^{s/2} (kappa - xi_dot + r Z + c) / (1 - tau_dot) + 3y/2 + W / (1 - tau_dot)
    U^Z = e^{s/2} (r kappa - xi_dot + Z - c) / (1 - tau_dot) + 3y/2 + r W / (1 - tau_dot)

and the modulation rates keep W(0) = 0, W_y(0) = -1, W_yy(0) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .burgers_profile import profile_value
from .euler_poisson import ClosureModel, PhysState
from .poisson import HelmholtzSolver, fixed_point
from .stencils import central_derivative, cubic_sample, fd_weights, local_poly_sample, local_taylor, upwind5


class ModulationDegenerate(RuntimeError):
    """Third derivative of W at the origin too small to solve for the rates."""


class FrameError(RuntimeError):
    pass


CLAMP_FLOOR = 1e-8


@dataclass
class ModulationState:
    t: float
    tau: float
    kappa: float
    xi: float
    tau_dot: float = 0.0
    kappa_dot: float = 0.0
    xi_dot: float = 0.0

    @property
    def d(self) -> float:
        return self.tau - self.t

    @property
    def s(self) -> float:
        if not self.d > 0:
            raise FrameError("tau - t must be positive")
        return -math.log(self.d)

    def rates(self) -> tuple[float, float, float]:
        return self.tau_dot, self.kappa_dot, self.xi_dot

    def with_rates(self, rates) -> "ModulationState":
        return replace(self, tau_dot=float(rates[0]), kappa_dot=float(rates[1]),
                       xi_dot=float(rates[2]))

    def to_dict(self) -> dict:
        return {"t": self.t, "tau": self.tau, "kappa": self.kappa, "xi": self.xi,
                "tau_dot": self.tau_dot, "kappa_dot": self.kappa_dot,
                "xi_dot": self.xi_dot, "s": self.s}


@dataclass
class SelfSimState:
    ys: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    Phi: np.ndarray
    modulation: ModulationState
    closure: ClosureModel
    truncated: bool = False
    # optional derivative arrays keyed by (field, order), e.g. ("W", 3)
    derivs: dict = field(default_factory=dict)

    @property
    def s(self) -> float:
        return self.modulation.s

    @property
    def dy(self) -> float:
        return float(self.ys[1] - self.ys[0])

    @property
    def i0(self) -> int:
        return int(np.argmin(np.abs(self.ys)))

    def deriv(self, name: str, k: int) -> np.ndarray:
        if k == 0:
            return getattr(self, name)
        key = (name, k)
        if key not in self.derivs:
            self.derivs[key] = central_derivative(getattr(self, name), self.dy, k)
        return self.derivs[key]

    def rho(self) -> np.ndarray:
        m = self.modulation
        w = math.exp(-0.5 * self.s) * self.W + m.kappa
        return self.closure.rho(w, self.Z)

    def copy(self) -> "SelfSimState":
        return SelfSimState(self.ys.copy(), self.W.copy(), self.Z.copy(), self.Phi.copy(),
                            replace(self.modulation), self.closure, self.truncated, {})


def standard_y_grid(Y: float = 50.0, n: int = 4097) -> np.ndarray:
    if n % 2 == 0:
        raise ValueError("y-grid needs an odd point count so that y = 0 is a node")
    return np.linspace(-Y, Y, n)


# ------------------------------------------------------------ point stencils

def _at_origin(ys: np.ndarray, f: np.ndarray, k: int, half: int = 3) -> float:
    i0 = int(np.argmin(np.abs(ys)))
    if abs(ys[i0]) > 1e-12 * (ys[1] - ys[0]):
        raise FrameError("y = 0 must be a grid node")
    w = fd_weights(tuple(range(-half, half + 1)), k)
    h = ys[1] - ys[0]
    return float(np.dot(w, f[i0 - half:i0 + half + 1]) / h ** k)


def origin_derivs(state: SelfSimState, name: str, kmax: int) -> np.ndarray:
    out = np.empty(kmax + 1)
    arr = getattr(state, name)
    for k in range(kmax + 1):
        if (name, k) in state.derivs:
            out[k] = state.derivs[(name, k)][state.i0]
        elif k == 0:
            out[k] = arr[state.i0]
        else:
            out[k] = _at_origin(state.ys, arr, k)
    return out


def constraint_residuals(state: SelfSimState) -> tuple[float, float, float]:
    """(W(0), W_y(0) + 1, W_yy(0))."""
    w = origin_derivs(state, "W", 2)
    return float(w[0]), float(w[1] + 1.0), float(w[2])


def modulation_rates(state: SelfSimState, forcing: bool = True) -> tuple[float, float, float]:
    """(tau_dot, kappa_dot, xi_dot) from the fields at y = 0."""
    cl = state.closure
    r, c, q = cl.r, cl.c, cl.q
    m = state.modulation
    es = 1.0 / m.d
    es2 = math.sqrt(es)
    w = origin_derivs(state, "W", 3)
    z = origin_derivs(state, "Z", 2)
    if abs(w[3]) < 1.0:
        raise ModulationDegenerate(f"|W_yyy(0)| = {abs(w[3]):.3g} < 1")
    if forcing:
        p = origin_derivs(state, "Phi", 3)
    else:
        p = np.zeros(4)
    tau_dot = r * es2 * z[1] - q * es * p[2]
    kappa_dot = (-q * es * es2 * p[3] + r * es * z[2]) / w[3] - q * es * es2 * p[1]
    xi_dot = r * z[0] + c + (q * es2 * p[3] - r * z[2]) / w[3] + m.kappa
    return float(tau_dot), float(kappa_dot), float(xi_dot)


def transport_speeds(state: SelfSimState, rates=None) -> tuple[np.ndarray, np.ndarray, float]:
    """(U^W, U^Z, 1 - tau_dot) with the clamp applied."""
    cl = state.closure
    m = state.modulation
    tau_dot, _, xi_dot = m.rates() if rates is None else rates
    one = max(1.0 - tau_dot, CLAMP_FLOOR)
    es2 = 1.0 / math.sqrt(m.d)
    r, c = cl.r, cl.c
    y = state.ys
    uw = es2 / one * (m.kappa - xi_dot + r * state.Z + c) + 1.5 * y + state.W / one
    uz = es2 / one * (r * m.kappa - xi_dot + state.Z - c) + 1.5 * y + r * state.W / one
    return uw, uz, one


def sigma(state: SelfSimState, rates=None) -> np.ndarray:
    cl = state.closure
    m = state.modulation
    tau_dot, _, xi_dot = m.rates() if rates is None else rates
    one = max(1.0 - tau_dot, CLAMP_FLOOR)
    return (m.kappa - xi_dot + cl.r * state.Z + cl.c) / (math.sqrt(m.d) * one)


def sigma_margin(state: SelfSimState) -> np.ndarray:
    """2|y|e^{-s} + 2e^{-s/3} - |sigma|."""
    s = state.s
    return 2.0 * np.abs(state.ys) * math.exp(-s) + 2.0 * math.exp(-s / 3.0) - np.abs(sigma(state))


# ------------------------------------------------------------ frame changes

def _far_law(y_edge, w_edge, yq):
    # continue along W + W^3 = -lam y with lam fixed by the edge value; exact
    # for the profile itself and ~ -sign(y)|y|^{1/3} far out
    lam = -(w_edge + w_edge ** 3) / y_edge
    return np.asarray(profile_value(lam * np.asarray(yq, dtype=float)))


def _sample_with_far_law(ys, W, yq):
    vals, outside = cubic_sample(ys, W, yq)
    if np.any(outside):
        lo = yq < ys[0]
        hi = yq > ys[-1]
        vals[lo] = _far_law(ys[0], W[0], yq[lo])
        vals[hi] = _far_law(ys[-1], W[-1], yq[hi])
    return vals, outside


def _sample_const(ys, f, yq):
    vals, outside = cubic_sample(ys, f, yq)
    vals[yq < ys[0]] = f[0]
    vals[yq > ys[-1]] = f[-1]
    return vals, outside


def to_selfsimilar(phys: PhysState, mod, ys: np.ndarray | None = None,
                   with_derivs: int = 0, forcing: bool = True) -> SelfSimState:
    """Resample a physical state into the frame (tau, kappa, xi).

    ``mod`` is a ModulationState or a (tau, kappa, xi) triple; xi is measured
    in the coordinates of ``phys.xs``.  With ``with_derivs = k`` the y-derivatives
    of W and Z up to order k are taken on the physical grid and resampled,
    which keeps them accurate where cubic interpolation would not be.
    Rates are computed from the resampled fields.
    """
    if not isinstance(mod, ModulationState):
        tau, kappa, xi = (float(v) for v in mod)
        mod = ModulationState(phys.t, tau, kappa, xi)
    if not mod.d > 0:
        raise FrameError("tau - t must be positive")
    ys = standard_y_grid() if ys is None else np.asarray(ys, dtype=float)
    d = mod.d
    scale = d ** 1.5
    xq = mod.xi + ys * scale
    es2 = 1.0 / math.sqrt(d)
    w, out_w = cubic_sample(phys.xs, phys.w, xq)
    z, _ = cubic_sample(phys.xs, phys.z, xq)
    phi, _ = cubic_sample(phys.xs, phys.phi, xq)
    state = SelfSimState(ys, es2 * (w - mod.kappa), z, phi, mod, phys.closure,
                         truncated=bool(np.any(out_w)))
    if with_derivs:
        # values and derivatives from the same local polynomials that define
        # the exact frame, so the constraints carry over node for node
        wk, _ = local_poly_sample(phys.xs, phys.w, xq, with_derivs)
        zk, _ = local_poly_sample(phys.xs, phys.z, xq, with_derivs)
        pk, _ = local_poly_sample(phys.xs, phys.phi, xq, min(with_derivs, 3))
        state.W = es2 * (wk[0] - mod.kappa)
        state.Z = zk[0]
        state.Phi = pk[0]
        for k in range(1, with_derivs + 1):
            state.derivs[("W", k)] = es2 * scale ** k * wk[k]
            state.derivs[("Z", k)] = scale ** k * zk[k]
        for k in range(1, min(with_derivs, 3) + 1):
            state.derivs[("Phi", k)] = scale ** k * pk[k]
    try:
        state.modulation = mod.with_rates(modulation_rates(state, forcing))
    except ModulationDegenerate:
        pass
    return state


def from_selfsimilar(state: SelfSimState, xs: np.ndarray,
                     fill: PhysState | None = None) -> tuple[PhysState, np.ndarray]:
    """Map back onto physical nodes ``xs``.

    Returns the state and a mask of nodes covered by the y-window.  Nodes
    outside take their values from ``fill`` when given, otherwise the edge
    values (W by the far-field law).
    """
    m = state.modulation
    d = m.d
    y = (np.asarray(xs, dtype=float) - m.xi) / d ** 1.5
    W, outside = _sample_with_far_law(state.ys, state.W, y)
    Z, _ = _sample_const(state.ys, state.Z, y)
    P, _ = _sample_const(state.ys, state.Phi, y)
    w = math.sqrt(d) * W + m.kappa
    inside = ~outside
    if fill is not None:
        w = np.where(inside, w, fill.w)
        Z = np.where(inside, Z, fill.z)
        P = np.where(inside, P, fill.phi)
    return PhysState(m.t, np.asarray(xs, dtype=float), w, Z, P, state.closure), inside


def reframe(state: SelfSimState) -> tuple[SelfSimState, dict]:
    """Exact re-centring: move xi to the nearby zero of W_yy, rescale so that
    W_y(0) = -1 and shift kappa so that W(0) = 0."""
    ys = state.ys
    m = state.modulation
    yc = 0.0
    for _ in range(30):
        c = local_taylor(ys, state.W, yc, 3, 8)
        step = -c[2] / c[3]
        yc += step
        if abs(step) < 1e-13:
            break
    else:
        raise FrameError("inflection point search did not converge")
    c = local_taylor(ys, state.W, yc, 1, 8)
    if not c[1] < 0:
        raise FrameError("cannot re-centre: W_y >= 0 at the inflection point")
    d = m.d
    # W_y = (tau - t) w_x, so the new clock is d / |W_y|
    d_new = d / (-c[1])
    xi_new = m.xi + yc * d ** 1.5
    kappa_new = m.kappa + math.sqrt(d) * c[0]
    new_mod = ModulationState(m.t, m.t + d_new, kappa_new, xi_new)
    # y in the old frame of each new node
    yold = yc + ys * (d_new / d) ** 1.5
    W, outside = _sample_with_far_law(ys, state.W, yold)
    # the same local polynomials that located the inflection point, so the
    # constraints survive resampling beyond cubic accuracy
    W[~outside] = local_poly_sample(ys, state.W, yold[~outside], 0)[0][0]
    Z, _ = _sample_const(ys, state.Z, yold)
    P, _ = _sample_const(ys, state.Phi, yold)
    Wn = math.sqrt(d / d_new) * (W - c[0])
    new = SelfSimState(ys.copy(), Wn, Z, P, new_mod, state.closure, state.truncated, {})
    info = {"s": state.s, "shift_y": yc, "scale": d_new / d, "dkappa": kappa_new - m.kappa}
    return new, info


def renormalize_snapshot(xs: np.ndarray, w: np.ndarray, t: float, T_star: float,
                         x_star: float, kappa_star: float,
                         ys: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """W_hat(y) = (T* - t)^{-1/2} (w(x* + y (T* - t)^{3/2}) - kappa*).

    The ex-post frame uses fitted blow-up data rather than the co-integrated
    modulation.  Returns the samples and a truncation flag.
    """
    d = T_star - t
    if not d > 0:
        raise FrameError("snapshot time must precede T*")
    ys = standard_y_grid() if ys is None else ys
    vals, outside = cubic_sample(xs, w, x_star + ys * d ** 1.5)
    return (vals - kappa_star) / math.sqrt(d), bool(np.any(outside))


# ------------------------------------------------------------ renormalized evolution

BoundaryProvider = Callable[[float, float, float], dict]


class RecordedBoundary:
    """Boundary provider interpolating stored physical states in time.

    States live on a grid moving with ``frame_velocity`` from time ``t0``;
    queries are in the fixed coordinates of that grid at ``t0``.
    """

    def __init__(self, t0: float, frame_velocity: float = 0.0):
        self.t0 = t0
        self.v = frame_velocity
        self.times: list[float] = []
        self.states: list[PhysState] = []

    def add(self, state: PhysState) -> None:
        if self.times and state.t <= self.times[-1]:
            return
        self.times.append(state.t)
        self.states.append(state)

    def _at(self, st: PhysState, x: float, t: float) -> tuple[float, float]:
        xg = np.array([x - self.v * (t - self.t0)])
        z, out = cubic_sample(st.xs, st.z, xg)
        p, _ = cubic_sample(st.xs, st.phi, xg)
        if out[0]:
            raise FrameError("boundary query outside the recorded grid")
        return float(z[0]), float(p[0])

    def __call__(self, t: float, xl: float, xr: float) -> dict:
        ts = self.times
        if not ts or t < ts[0] - 1e-14 or t > ts[-1] + 1e-14:
            raise FrameError("boundary query outside the recorded time span")
        j = int(np.clip(np.searchsorted(ts, t) - 1, 0, max(len(ts) - 2, 0)))
        if len(ts) == 1:
            a, b, th = self.states[0], self.states[0], 0.0
        else:
            a, b = self.states[j], self.states[j + 1]
            th = (t - ts[j]) / (ts[j + 1] - ts[j])
        out = {}
        vals = []
        for x in (xl, xr):
            za, pa = self._at(a, x, t)
            zb, pb = self._at(b, x, t)
            vals.append(((1 - th) * za + th * zb, (1 - th) * pa + th * pb))
        out["z"] = (vals[0][0], vals[1][0])
        out["phi"] = (vals[0][1], vals[1][1])
        return out


@dataclass
class SSOptions:
    forcing: bool = True
    cfl: float = 0.4
    constraint_tol: float = 1e-4
    recenter_factor: float = 10.0
    poisson_tol: float = 1e-12
    poisson_max_iter: int = 100
    # callable(t, x_left, x_right) -> {"phi": (l, r), "z": (l, r)} in lab coordinates
    boundary: BoundaryProvider | None = None
    recenter: bool = True


@dataclass
class EvolveLog:
    steps: int = 0
    clamp_events: int = 0
    recenter_events: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)


_GHOST = 3


def _pad_far(ys, W):
    # ghost cells continue W along the profile's far-field law
    dy = ys[1] - ys[0]
    k = np.arange(1, _GHOST + 1)
    left = _far_law(ys[0], W[0], ys[0] - k[::-1] * dy)
    right = _far_law(ys[-1], W[-1], ys[-1] + k * dy)
    return np.concatenate([left, W, right])


def _pad_const(f, lo, hi):
    return np.concatenate([np.full(_GHOST, lo), f, np.full(_GHOST, hi)])


def _upwind_padded(fp, speed, inv_h):
    n = speed.size
    sp = np.concatenate([np.full(_GHOST, speed[0]), speed, np.full(_GHOST, speed[-1])])
    out = upwind5(fp, sp, inv_h, np.empty(n + 2 * _GHOST))
    return out[_GHOST:_GHOST + n]


class RenormalizedEvolver:
    def __init__(self, ys: np.ndarray, closure: ClosureModel, opts: SSOptions | None = None):
        self.ys = ys
        self.closure = closure
        self.opts = opts or SSOptions()
        self.dy = float(ys[1] - ys[0])
        self.inv_dy = 1.0 / self.dy
        self.log = EvolveLog()
        self._edges = None
        self._cache = None

    def _boundary(self, state: SelfSimState) -> dict:
        m = state.modulation
        bnd = self.opts.boundary
        if bnd is None:
            if self._edges is None:
                self._edges = (float(state.Phi[0]), float(state.Phi[-1]))
            return {"phi": self._edges, "z": (float(state.Z[0]), float(state.Z[-1]))}
        key = (m.t, m.tau, m.xi)
        if self._cache is None or self._cache[0] != key:
            scale = m.d ** 1.5
            self._cache = (key, bnd(m.t, m.xi + self.ys[0] * scale, m.xi + self.ys[-1] * scale))
        return self._cache[1]

    def solve_phi(self, state: SelfSimState) -> np.ndarray:
        if not self.opts.forcing:
            return np.zeros_like(state.W)
        m = state.modulation
        hx = self.dy * m.d ** 1.5
        solver = HelmholtzSolver(self.ys.size, hx, "values")
        f = state.rho() - 1.0
        phi, _, _ = fixed_point(solver, f, self.opts.poisson_tol, self.opts.poisson_max_iter,
                                state.Phi, self._boundary(state)["phi"])
        return phi

    def rhs(self, state: SelfSimState, rates=None):
        """(W_s, Z_s, d(t, tau, kappa, xi)/ds) for the current fields."""
        cl = self.closure
        m = state.modulation
        if rates is None:
            rates = modulation_rates(state, self.opts.forcing)
        tau_dot, kappa_dot, xi_dot = rates
        if 1.0 - tau_dot < CLAMP_FLOOR:
            self.log.clamp_events += 1
        uw, uz, one = transport_speeds(state, rates)
        es = 1.0 / m.d
        es2 = math.sqrt(es)
        Wy = _upwind_padded(_pad_far(self.ys, state.W), uw, self.inv_dy)
        zl, zr = self._boundary(state)["z"]
        Zy = _upwind_padded(_pad_const(state.Z, zl, zr), uz, self.inv_dy)
        dW = 0.5 * state.W - uw * Wy - kappa_dot / (es2 * one)
        dZ = -uz * Zy
        if self.opts.forcing:
            Py = central_derivative(state.Phi, self.dy, 1)
            dW -= cl.q * es * Py / one
            dZ -= cl.q * es2 * Py / one
        dt_ds = 1.0 / (one * es)
        dmod = np.array([dt_ds, tau_dot * dt_ds, kappa_dot * dt_ds, xi_dot * dt_ds])
        return dW, dZ, dmod

    def max_ds(self, state: SelfSimState) -> float:
        uw, uz, _ = transport_speeds(state)
        smax = max(float(np.max(np.abs(uw))), float(np.max(np.abs(uz))), 1e-12)
        return self.opts.cfl * self.dy / smax

    def _stage(self, base: SelfSimState, W, Z, mvec) -> SelfSimState:
        m = ModulationState(*mvec)
        st = SelfSimState(self.ys, W, Z, base.Phi, m, self.closure, base.truncated, {})
        st.Phi = self.solve_phi(st)
        st.modulation = m.with_rates(modulation_rates(st, self.opts.forcing))
        return st

    def step(self, state: SelfSimState, ds: float) -> SelfSimState:
        m = state.modulation
        v0 = np.array([m.t, m.tau, m.kappa, m.xi])
        W0, Z0 = state.W, state.Z
        k1 = self.rhs(state, m.rates())
        s2 = self._stage(state, W0 + 0.5 * ds * k1[0], Z0 + 0.5 * ds * k1[1], v0 + 0.5 * ds * k1[2])
        k2 = self.rhs(s2, s2.modulation.rates())
        s3 = self._stage(state, W0 + 0.5 * ds * k2[0], Z0 + 0.5 * ds * k2[1], v0 + 0.5 * ds * k2[2])
        k3 = self.rhs(s3, s3.modulation.rates())
        s4 = self._stage(state, W0 + ds * k3[0], Z0 + ds * k3[1], v0 + ds * k3[2])
        k4 = self.rhs(s4, s4.modulation.rates())
        c = ds / 6.0
        W = W0 + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Z = Z0 + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        v = v0 + c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        new = self._stage(state, W, Z, v)
        self.log.steps += 1
        return new

    def maintain(self, state: SelfSimState) -> SelfSimState:
        res = constraint_residuals(state)
        self.log.residual_history.append((state.s, res))
        o = self.opts
        if o.recenter and max(abs(r) for r in res) > o.recenter_factor * o.constraint_tol:
            new, info = reframe(state)
            info["residuals"] = res
            self.log.recenter_events.append(info)
            new.Phi = self.solve_phi(new)
            new.modulation = new.modulation.with_rates(modulation_rates(new, o.forcing))
            return new
        return state


def evolve_renormalized(state: SelfSimState, ds: float, opts: SSOptions | None = None,
                        evolver: RenormalizedEvolver | None = None) -> SelfSimState:
    """Advance by ``ds`` in self-similar time with CFL-limited RK4 substeps.

    The step lands on the target in s measured from the stored modulation, so
    the realised increment may differ from ``ds`` by the drift of the frame.
    """
    ev = evolver or RenormalizedEvolver(state.ys, state.closure, opts)
    cur = state
    if ev.opts.forcing and not np.any(cur.Phi):
        cur = cur.copy()
        cur.Phi = ev.solve_phi(cur)
    if cur.modulation.rates() == (0.0, 0.0, 0.0):
        cur.modulation = cur.modulation.with_rates(modulation_rates(cur, ev.opts.forcing))
    s_end = cur.s + ds
    while cur.s < s_end - 1e-12:
        h = min(ev.max_ds(cur), s_end - cur.s)
        cur = ev.step(cur, h)
        cur = ev.maintain(cur)
    return cur


def selfsimilar_rhs(state: SelfSimState, rates=None, forcing: bool = True):
    """W_s and Z_s for the given state and rates (defaults to the consistent rates)."""
    ev = RenormalizedEvolver(state.ys, state.closure, SSOptions(forcing=forcing))
    dW, dZ, _ = ev.rhs(state, rates)
    return dW, dZ


def eq_3rd1_terms(state: SelfSimState, rates=None) -> dict:
    """Term-by-term evolution of the third derivative of W at y = 0 under the
    constraints W(0) = 0, W_y(0) = -1, W_yy(0) = 0."""
    cl = state.closure
    m = state.modulation
    tau_dot = (m.rates() if rates is None else rates)[0]
    one = max(1.0 - tau_dot, CLAMP_FLOOR)
    es = 1.0 / m.d
    es2 = math.sqrt(es)
    w = origin_derivs(state, "W", 4)
    z = origin_derivs(state, "Z", 3)
    p = origin_derivs(state, "Phi", 4) if any(np.ravel(state.Phi)) else np.zeros(5)
    sig0 = float(sigma(state, rates)[state.i0])
    r, q = cl.r, cl.q
    # damping from differentiating (W/one) W_y three times at the inflection point
    damping = -(4.0 - 4.0 / one + 3.0 * r * es2 * z[1] / one) * w[3]
    transport = -sig0 * w[4]
    forcing = -q * es * p[4] / one
    coupling = r * es2 * z[3] / one
    return {"damping": damping, "transport": transport, "forcing": forcing,
            "coupling": coupling, "total": damping + transport + forcing + coupling}


def canonical_profile_state(closure: ClosureModel, s: float, ys: np.ndarray | None = None,
                            kappa: float = 0.0) -> SelfSimState:
    """W = W_bar, Z = far field, Phi = 0 at self-similar time s (t = -e^{-s})."""
    ys = standard_y_grid() if ys is None else ys
    d = math.exp(-s)
    m = ModulationState(-d, 0.0, kappa, 0.0)
    z = np.full_like(ys, closure.far_field[1])
    return SelfSimState(ys, np.asarray(profile_value(ys)), z, np.zeros_like(ys), m, closure)
